use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_training, expand, kernel_matrix, KernelError, KernelParams, Scaler};

/// Closed-form KRR estimator `f(x) = k(x, X) alpha`, `alpha = (K + n lambda I)^-1 y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactKrrModel {
    /// Training inputs after scaling.
    pub training_points: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub params: KernelParams,
    pub scaler: Scaler,
}

pub fn fit_exact(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: KernelParams,
    standardize: bool,
) -> Result<ExactKrrModel, KernelError> {
    params.validate()?;
    check_training(x, y)?;
    let scaler = if standardize { Scaler::fit(x) } else { Scaler::identity(x.ncols()) };
    let points = scaler.transform(x)?;
    let n = points.nrows();
    let mut k = kernel_matrix(&points, &points, params.sigma);
    for i in 0..n {
        k[(i, i)] += n as f64 * params.lambda;
    }
    let chol = k
        .cholesky()
        .ok_or_else(|| KernelError::NumericalFailure("K + n*lambda*I is not positive definite".into()))?;
    let alpha = chol.solve(y);
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(KernelError::NumericalFailure("non-finite dual weights".into()));
    }
    Ok(ExactKrrModel { training_points: points, alpha, params, scaler })
}

impl ExactKrrModel {
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>, KernelError> {
        expand(&self.scaler, &self.training_points, &self.alpha, self.params.sigma, x_new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point() {
        let x = DMatrix::from_row_slice(1, 3, &[0.4, -2.0, 7.0]);
        let y = DVector::from_vec(vec![2.5]);
        let lambda = 0.3;
        let model = fit_exact(&x, &y, KernelParams::new(1.0, lambda).unwrap(), false).unwrap();
        assert!((model.alpha[0] - 2.5 / (1.0 + lambda)).abs() < 1e-15);
        let p = model.predict(&x).unwrap();
        assert!((p[0] - 2.5 / (1.0 + lambda)).abs() < 1e-15);
    }

    fn random(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)),
            DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)),
        )
    }

    #[test]
    fn heavy_regularization_shrinks_to_zero() {
        let (x, y) = random(4, 20, 3);
        let model = fit_exact(&x, &y, KernelParams::new(1.0, 1e6).unwrap(), true).unwrap();
        let p = model.predict(&x).unwrap();
        assert!(p.amax() <= 1e-3 * y.amax());
    }

    #[test]
    fn matches_dense_inverse() {
        let (x, y) = random(5, 5, 2);
        let params = KernelParams::new(0.9, 1e-2).unwrap();
        let model = fit_exact(&x, &y, params, false).unwrap();
        // independent route: explicit entries and an LU inverse
        let mut k = DMatrix::<f64>::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                let d2 = (x.row(i) - x.row(j)).norm_squared();
                k[(i, j)] = (-d2 / (2.0 * 0.81)).exp();
            }
        }
        let inv = (k + DMatrix::identity(5, 5) * (5.0 * 1e-2)).try_inverse().unwrap();
        let alpha = inv * &y;
        assert!((model.alpha - alpha).amax() < 1e-10);
    }

    #[test]
    fn interpolates_when_lambda_tiny() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, -1.0, 0.5, 2.0]);
        let model = fit_exact(&x, &y, KernelParams::new(0.5, 1e-12).unwrap(), false).unwrap();
        let p = model.predict(&x).unwrap();
        assert!((p - y).amax() < 1e-4);
    }

    #[test]
    fn empty_prediction_and_dimension_check() {
        let (x, y) = random(6, 6, 2);
        let model = fit_exact(&x, &y, KernelParams::new(1.0, 1e-3).unwrap(), true).unwrap();
        assert_eq!(model.predict(&DMatrix::zeros(0, 2)).unwrap().len(), 0);
        assert!(matches!(
            model.predict(&DMatrix::zeros(1, 3)),
            Err(KernelError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn translation_invariant() {
        let (x, y) = random(7, 15, 3);
        let (xt, _) = random(8, 6, 3);
        let shift = nalgebra::RowDVector::from_vec(vec![3.0, -10.0, 0.25]);
        let shifted = |m: &DMatrix<f64>| {
            let mut out = m.clone();
            for mut row in out.row_iter_mut() {
                row += &shift;
            }
            out
        };
        for standardize in [false, true] {
            let params = KernelParams::new(0.8, 1e-3).unwrap();
            let a = fit_exact(&x, &y, params, standardize).unwrap().predict(&xt).unwrap();
            let b = fit_exact(&shifted(&x), &y, params, standardize)
                .unwrap()
                .predict(&shifted(&xt))
                .unwrap();
            assert!((a - b).amax() < 1e-9);
        }
    }
}
