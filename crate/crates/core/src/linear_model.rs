//! Linear least squares on lag matrices.
//!
//! Lag columns are strongly collinear (neighbouring hours), so the fit goes
//! through an orthogonal factorization: Householder QR of the centered design,
//! then an SVD of the small triangular factor. Zero singular directions are
//! dropped, which yields the minimum-norm solution when the design is rank
//! deficient.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("design has {rows} rows but target has {targets}")]
    TargetLength { rows: usize, targets: usize },
    #[error("empty design matrix")]
    Empty,
    #[error("ridge must be finite and non-negative, got {0}")]
    InvalidRidge(f64),
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
}

/// Ridge strength. `Fixed(r)` is the coefficient of `r * ||beta||^2` in the
/// mean-squared objective; `Auto` adds `1e-10 * trace(X'X) / d` to the Gram
/// diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub intercept: bool,
    pub ridge: Ridge,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig { intercept: true, ridge: Ridge::Auto }
    }
}

impl LinearConfig {
    /// Plain least squares: no intercept, no ridge.
    pub fn strict() -> Self {
        LinearConfig { intercept: false, ridge: Ridge::Fixed(0.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCoefficients {
    pub beta: Vec<f64>,
    pub intercept: f64,
}

/// Minimises `(1/n) ||X beta + c - y||^2 + ridge ||beta||^2` (with `c = 0`
/// unless the intercept is enabled; the intercept is never penalised).
pub fn fit_linear(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &LinearConfig,
) -> Result<LinearCoefficients, LinearError> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(LinearError::Empty);
    }
    if y.len() != n {
        return Err(LinearError::TargetLength { rows: n, targets: y.len() });
    }

    let (xc, yc, x_mean, y_mean) = if config.intercept {
        let x_mean = x.row_mean();
        let y_mean = y.mean();
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= &x_mean;
        }
        (xc, y.add_scalar(-y_mean), Some(x_mean), y_mean)
    } else {
        (x.clone(), y.clone(), None, 0.0)
    };

    let gram_ridge = match config.ridge {
        Ridge::Fixed(r) if r.is_finite() && r >= 0.0 => n as f64 * r,
        Ridge::Fixed(r) => return Err(LinearError::InvalidRidge(r)),
        Ridge::Auto => 1e-10 * xc.norm_squared() / d as f64,
    };

    let (factor, rhs) = if n >= d {
        let qr = xc.qr();
        let mut qty = yc.clone();
        qr.q_tr_mul(&mut qty);
        (qr.r(), qty.rows(0, d).into_owned())
    } else {
        (xc, yc)
    };

    let svd = SVD::try_new(factor.clone(), true, true, f64::EPSILON, 0)
        .ok_or(LinearError::NumericalFailure("SVD did not converge"))?;
    let u = svd.u.as_ref().ok_or(LinearError::NumericalFailure("missing U"))?;
    let v_t = svd.v_t.as_ref().ok_or(LinearError::NumericalFailure("missing V'"))?;
    let s_max = svd.singular_values.max();
    let cutoff = s_max * (n.max(d) as f64) * f64::EPSILON;

    let projected = u.tr_mul(&rhs);
    let mut scaled = projected.clone();
    for (i, s) in svd.singular_values.iter().enumerate() {
        scaled[i] = if *s <= cutoff {
            0.0
        } else {
            projected[i] * s / (s * s + gram_ridge)
        };
    }
    let beta = v_t.tr_mul(&scaled);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(LinearError::NumericalFailure("non-finite coefficients"));
    }

    let intercept = match x_mean {
        Some(m) => y_mean - (m * &beta)[0],
        None => 0.0,
    };
    Ok(LinearCoefficients { beta: beta.iter().copied().collect(), intercept })
}

/// `X_new * beta + intercept`.
pub fn predict_linear(model: &LinearCoefficients, x_new: &DMatrix<f64>) -> Result<DVector<f64>, LinearError> {
    if x_new.ncols() != model.beta.len() {
        return Err(LinearError::DimensionMismatch { expected: model.beta.len(), got: x_new.ncols() });
    }
    let beta = DVector::from_column_slice(&model.beta);
    Ok((x_new * beta).add_scalar(model.intercept))
}
