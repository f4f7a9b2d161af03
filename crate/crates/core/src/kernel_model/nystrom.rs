use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::krylov::{solve_spd, CgOptions, SolveReport};
use super::{check_training, expand, kernel_matrix, KernelError, KernelParams, Scaler};

/// `ceil(10 * sqrt(n))`, clamped to `n`.
pub fn default_centers(n: usize) -> usize {
    ((10.0 * (n as f64).sqrt()).ceil() as usize).clamp(1.min(n), n)
}

/// Draws `m` distinct row indices uniformly without replacement; the order of
/// the returned indices is the sampling order.
pub fn sample_centers(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<(Vec<usize>, DMatrix<f64>), KernelError> {
    let n = x.nrows();
    if m == 0 || m > n {
        return Err(KernelError::MTooLarge { m, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    let rows = x.select_rows(&idx);
    Ok((idx, rows))
}

/// Nyström KRR predictor `f(x) = k(x, centers) w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NystromModel {
    /// Centers after scaling.
    pub centers: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub params: KernelParams,
    pub scaler: Scaler,
    pub seed: u64,
    pub solve: SolveReport,
}

impl NystromModel {
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>, KernelError> {
        expand(&self.scaler, &self.centers, &self.weights, self.params.sigma, x_new)
    }

    /// `Err(CgNotConverged)` when the solve stopped on `max_iters`.
    pub fn ensure_converged(&self) -> Result<(), KernelError> {
        if self.solve.converged {
            Ok(())
        } else {
            Err(KernelError::CgNotConverged {
                residual: self.solve.final_residual(),
                iterations: self.solve.iterations,
            })
        }
    }
}

/// Training data with its scaler and sampled centers, independent of the
/// kernel parameters. Cross-validation reuses one problem across the grid.
#[derive(Debug, Clone)]
pub struct NystromProblem {
    pub scaler: Scaler,
    /// Scaled training inputs.
    pub points: DMatrix<f64>,
    pub center_indices: Vec<usize>,
    pub centers: DMatrix<f64>,
    pub seed: u64,
}

impl NystromProblem {
    pub fn new(x: &DMatrix<f64>, m: usize, seed: u64, standardize: bool) -> Result<Self, KernelError> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(KernelError::Empty);
        }
        let scaler = if standardize { Scaler::fit(x) } else { Scaler::identity(x.ncols()) };
        let points = scaler.transform(x)?;
        let (center_indices, centers) = sample_centers(&points, m, seed)?;
        Ok(NystromProblem { scaler, points, center_indices, centers, seed })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn m(&self) -> usize {
        self.centers.nrows()
    }

    /// Kernel blocks and the `Kmm` Cholesky factor for one length-scale.
    pub fn system(&self, sigma: f64) -> Result<NystromSystem, KernelError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(KernelError::InvalidParams { sigma, lambda: f64::NAN });
        }
        let kmn = kernel_matrix(&self.centers, &self.points, sigma);
        let kmm = kernel_matrix(&self.centers, &self.centers, sigma);
        let m = self.m();
        let mut jitter = 1e-9 * kmm.trace() / m as f64;
        let mut attempt = 0;
        let l = loop {
            let mut shifted = kmm.clone();
            for i in 0..m {
                shifted[(i, i)] += jitter;
            }
            match shifted.cholesky() {
                Some(c) => break c.unpack(),
                None if attempt < 8 => {
                    jitter *= 10.0;
                    attempt += 1;
                }
                None => return Err(KernelError::NumericalFailure("center kernel matrix is not positive definite".into())),
            }
        };
        // the transposed product goes through the blocked gemm path
        let ltl = l.transpose() * &l;
        Ok(NystromSystem { sigma, n: self.n(), kmn, kmm, l, ltl })
    }

    /// Kernel between the centers and new (unscaled) rows, `m x p`.
    pub fn cross_kernel(&self, x_new: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>, KernelError> {
        let z = self.scaler.transform(x_new)?;
        Ok(kernel_matrix(&self.centers, &z, sigma))
    }

    pub fn into_model(self, weights: DVector<f64>, params: KernelParams, solve: SolveReport) -> NystromModel {
        NystromModel { centers: self.centers, weights, params, scaler: self.scaler, seed: self.seed, solve }
    }
}

/// Per-`sigma` kernel blocks. `Kmm + jitter = L L'`.
#[derive(Debug, Clone)]
pub struct NystromSystem {
    pub sigma: f64,
    n: usize,
    kmn: DMatrix<f64>,
    kmm: DMatrix<f64>,
    l: DMatrix<f64>,
    ltl: DMatrix<f64>,
}

const COLUMN_BLOCK: usize = 512;

impl NystromSystem {
    /// `Kmn Kmn' v`, accumulated in fixed column blocks so the sum order does
    /// not depend on the thread count.
    fn gram_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = self.kmn.nrows();
        let v = v.as_slice();
        let partials: Vec<Vec<f64>> = self
            .kmn
            .as_slice()
            .par_chunks(m * COLUMN_BLOCK)
            .map(|block| {
                let mut acc = vec![0.0; m];
                for column in block.chunks_exact(m) {
                    let u: f64 = column.iter().zip(v).map(|(a, b)| a * b).sum();
                    for (a, c) in acc.iter_mut().zip(column) {
                        *a += u * c;
                    }
                }
                acc
            })
            .collect();
        let mut out = DVector::zeros(m);
        for p in partials {
            for (o, x) in out.iter_mut().zip(&p) {
                *o += x;
            }
        }
        out
    }

    /// Solves for the center weights of one target column.
    ///
    /// The Krylov iteration runs on `B' H B beta = B' Kmn y` with
    /// `H = Kmn Kmn' + n lambda Kmm` and `B = n^-1/2 T^-1 A^-1`, where
    /// `T = L'` and `A' A = T T' / m + lambda I`; then `w = B beta`.
    pub fn solve(
        &self,
        y: &DVector<f64>,
        lambda: f64,
        cg: &CgOptions,
    ) -> Result<(DVector<f64>, SolveReport), KernelError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(KernelError::InvalidParams { sigma: self.sigma, lambda });
        }
        if y.len() != self.n {
            return Err(KernelError::TargetLength { rows: self.n, targets: y.len() });
        }
        if !cg.is_valid() {
            return Err(KernelError::NumericalFailure(format!("invalid solver options {cg:?}")));
        }
        let m = self.kmm.nrows();
        let n = self.n as f64;
        let mut a = self.ltl.scale(1.0 / m as f64);
        for i in 0..m {
            a[(i, i)] += lambda;
        }
        let la = a
            .cholesky()
            .ok_or_else(|| KernelError::NumericalFailure("preconditioner factorization failed".into()))?
            .unpack();
        let inv_sqrt_n = 1.0 / n.sqrt();
        let l = &self.l;

        let precond = |v: &DVector<f64>| {
            let mut t = v.clone();
            la.tr_solve_lower_triangular_unchecked_mut(&mut t);
            l.tr_solve_lower_triangular_unchecked_mut(&mut t);
            t * inv_sqrt_n
        };
        let precond_t = |v: &DVector<f64>| {
            let mut t = v.clone();
            l.solve_lower_triangular_unchecked_mut(&mut t);
            la.solve_lower_triangular_unchecked_mut(&mut t);
            t * inv_sqrt_n
        };
        let hessian = |v: &DVector<f64>| {
            let mut out = self.gram_apply(v);
            out.gemv(n * lambda, &self.kmm, v, 1.0);
            out
        };

        let rhs = precond_t(&(&self.kmn * y));
        let (beta, report) = solve_spd(|v| precond_t(&hessian(&precond(v))), &rhs, cg);
        let weights = precond(&beta);
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(KernelError::NumericalFailure("non-finite center weights".into()));
        }
        Ok((weights, report))
    }
}

/// Fits Nyström KRR with `m` uniformly sampled centers.
///
/// Hitting `max_iters` is not an error here: the model is returned with
/// `solve.converged == false`, see [`NystromModel::ensure_converged`].
pub fn fit_nystrom(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: KernelParams,
    m: usize,
    cg: &CgOptions,
    seed: u64,
    standardize: bool,
) -> Result<NystromModel, KernelError> {
    params.validate()?;
    check_training(x, y)?;
    let problem = NystromProblem::new(x, m, seed, standardize)?;
    let system = problem.system(params.sigma)?;
    let (weights, report) = system.solve(y, params.lambda, cg)?;
    Ok(problem.into_model(weights, params, report))
}
