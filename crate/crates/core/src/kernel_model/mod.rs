//! Gaussian kernel ridge regression.
//!
//! Two solvers share the same kernel, scaler and prediction path:
//!
//! * [`fit_exact`] factorizes `K + n*lambda*I` directly. Cubic in `n`, kept as
//!   the reference estimator for small problems.
//! * [`fit_nystrom`] restricts the estimator to `m` randomly sampled centers
//!   and solves `(Knm' Knm + n*lambda*Kmm) w = Knm' y` with a Krylov iteration,
//!   preconditioned by Cholesky factors of `Kmm`. With `m = n` the two
//!   estimators coincide.

mod exact;
mod krylov;
mod nystrom;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exact::{fit_exact, ExactKrrModel};
pub use krylov::{solve_spd, CgOptions, KrylovMethod, SolveReport};
pub use nystrom::{default_centers, fit_nystrom, sample_centers, NystromModel, NystromProblem, NystromSystem};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set has {rows} rows but target has {targets}")]
    TargetLength { rows: usize, targets: usize },
    #[error("empty training set")]
    Empty,
    #[error("invalid kernel parameters: sigma={sigma}, lambda={lambda}")]
    InvalidParams { sigma: f64, lambda: f64 },
    #[error("requested {m} centers from {n} points")]
    MTooLarge { m: usize, n: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("solver stopped after {iterations} iterations at relative residual {residual:e}")]
    CgNotConverged { residual: f64, iterations: usize },
}

/// Kernel length-scale and ridge strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub sigma: f64,
    pub lambda: f64,
}

impl KernelParams {
    pub fn new(sigma: f64, lambda: f64) -> Result<Self, KernelError> {
        let p = KernelParams { sigma, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.sigma) && ok(self.lambda) {
            Ok(())
        } else {
            Err(KernelError::InvalidParams { sigma: self.sigma, lambda: self.lambda })
        }
    }
}

/// `exp(-||a - b||^2 / (2 sigma^2))`.
pub fn gaussian_kernel(a: &[f64], b: &[f64], sigma: f64) -> Result<f64, KernelError> {
    if a.len() != b.len() {
        return Err(KernelError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(KernelError::InvalidParams { sigma, lambda: f64::NAN });
    }
    Ok(gauss(a, b, 1.0 / (2.0 * sigma * sigma)))
}

#[inline]
fn gauss(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Kernel matrix between the rows of `a` and the rows of `b`
/// (`a.nrows() x b.nrows()`). Entries are computed independently, so the
/// result does not depend on the thread count.
pub fn kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "feature dimension mismatch");
    let gamma = 1.0 / (2.0 * sigma * sigma);
    // transposed copies make every point a contiguous column
    let at = a.transpose();
    let bt = b.transpose();
    let na = a.nrows();
    let mut out = DMatrix::<f64>::zeros(na, b.nrows());
    if na == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(na)
        .enumerate()
        .for_each(|(j, column)| {
            let bj = bt.column(j);
            let bj = bj.as_slice();
            for (i, entry) in column.iter_mut().enumerate() {
                *entry = gauss(at.column(i).as_slice(), bj, gamma);
            }
        });
    out
}

/// Per-feature affine standardization learned on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Scaler {
    pub fn identity(d: usize) -> Self {
        Scaler { means: vec![0.0; d], scales: vec![1.0; d] }
    }

    /// Zero mean, unit population variance; constant columns keep scale 1.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut scales = Vec::with_capacity(x.ncols());
        for column in x.column_iter() {
            let mean = column.sum() / n;
            let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            means.push(mean);
            scales.push(if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 });
        }
        Scaler { means, scales }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        if x.ncols() != self.dim() {
            return Err(KernelError::DimensionMismatch { expected: self.dim(), got: x.ncols() });
        }
        let mut out = x.clone();
        for (j, mut column) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.scales[j]);
            column.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }
}

fn check_training(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(), KernelError> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(KernelError::Empty);
    }
    if y.len() != x.nrows() {
        return Err(KernelError::TargetLength { rows: x.nrows(), targets: y.len() });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(KernelError::NumericalFailure("non-finite training data".into()));
    }
    Ok(())
}

/// `k(x_new, points) * coefficients` after scaling `x_new`.
fn expand(
    scaler: &Scaler,
    points: &DMatrix<f64>,
    coefficients: &DVector<f64>,
    sigma: f64,
    x_new: &DMatrix<f64>,
) -> Result<DVector<f64>, KernelError> {
    if x_new.ncols() != scaler.dim() {
        return Err(KernelError::DimensionMismatch { expected: scaler.dim(), got: x_new.ncols() });
    }
    if x_new.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let z = scaler.transform(x_new)?;
    let k = kernel_matrix(points, &z, sigma);
    Ok(k.tr_mul(coefficients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_examples() {
        assert_eq!(gaussian_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.7).unwrap(), 1.0);
        // ||a - b||^2 = 2 sigma^2
        let sigma = 1.3;
        let v = gaussian_kernel(&[0.0, 0.0], &[sigma, sigma], sigma).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        let v = gaussian_kernel(&[0.0], &[3.0], 1.0).unwrap();
        assert!((v - (-4.5f64).exp()).abs() < 1e-17);
        assert!(matches!(
            gaussian_kernel(&[0.0], &[1.0, 2.0], 1.0),
            Err(KernelError::DimensionMismatch { .. })
        ));
        assert!(gaussian_kernel(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn kernel_matrix_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(7, 3, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
        let k = kernel_matrix(&a, &b, 0.8);
        for i in 0..7 {
            for j in 0..5 {
                let ai: Vec<f64> = a.row(i).iter().copied().collect();
                let bj: Vec<f64> = b.row(j).iter().copied().collect();
                assert_eq!(k[(i, j)], gaussian_kernel(&ai, &bj, 0.8).unwrap());
            }
        }
    }

    #[test]
    fn scaler_standardizes() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
        let s = Scaler::fit(&x);
        let z = s.transform(&x).unwrap();
        assert!(z.column(0).sum().abs() < 1e-12);
        assert!((z.column(0).norm_squared() / 4.0 - 1.0).abs() < 1e-12);
        assert_eq!(s.scales[1], 1.0);
        assert!(z.column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::new(1.0, 1e-3).is_ok());
        assert!(KernelParams::new(0.0, 1e-3).is_err());
        assert!(KernelParams::new(1.0, -1.0).is_err());
        assert!(KernelParams::new(f64::NAN, 1.0).is_err());
    }
}
