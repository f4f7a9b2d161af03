//! Krylov iterations for symmetric positive (semi-)definite systems.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Conjugate-direction variant.
///
/// `ConjugateResidual` minimises the residual norm over the Krylov space, so
/// the reported residuals never increase. `ConjugateGradient` minimises the
/// energy norm of the error and its residual may oscillate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KrylovMethod {
    #[default]
    ConjugateResidual,
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop once `||r|| / ||b|| < tolerance`.
    pub tolerance: f64,
    #[serde(default)]
    pub method: KrylovMethod,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { max_iters: 500, tolerance: 1e-7, method: KrylovMethod::default() }
    }
}

impl CgOptions {
    pub fn is_valid(&self) -> bool {
        self.max_iters >= 1 && self.tolerance.is_finite() && self.tolerance > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual after each iteration, starting with the initial 1.0.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Conjugate Residual gives up once the residual has fallen by less than
/// `STAGNATION_GAIN` over the last `STAGNATION_WINDOW` iterations: in finite
/// precision an ill-conditioned system reaches a residual floor, and further
/// iterations only burn time.
pub const STAGNATION_WINDOW: usize = 25;
pub const STAGNATION_GAIN: f64 = 1e-3;

/// Solves `A x = b` from `x = 0`, where `apply` computes `A v`.
pub fn solve_spd<F>(mut apply: F, b: &DVector<f64>, options: &CgOptions) -> (DVector<f64>, SolveReport)
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut x = DVector::zeros(b.len());
    let b_norm = b.norm();
    let mut report = SolveReport { iterations: 0, residuals: vec![1.0], converged: false };
    if b_norm == 0.0 {
        report.residuals = vec![0.0];
        report.converged = true;
        return (x, report);
    }
    match options.method {
        KrylovMethod::ConjugateResidual => conjugate_residual(&mut apply, b, b_norm, options, &mut x, &mut report),
        KrylovMethod::ConjugateGradient => conjugate_gradient(&mut apply, b, b_norm, options, &mut x, &mut report),
    }
    (x, report)
}

fn conjugate_residual<F>(
    apply: &mut F,
    b: &DVector<f64>,
    b_norm: f64,
    options: &CgOptions,
    x: &mut DVector<f64>,
    report: &mut SolveReport,
) where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut r = b.clone();
    let mut ar = apply(&r);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut r_ar = r.dot(&ar);
    while report.iterations < options.max_iters {
        let ap_ap = ap.dot(&ap);
        if ap_ap <= 0.0 || !ap_ap.is_finite() {
            break;
        }
        // exact line minimisation of ||r - alpha Ap|| keeps the norm monotone
        let alpha = r.dot(&ap) / ap_ap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        report.iterations += 1;
        let rel = r.norm() / b_norm;
        report.residuals.push(rel);
        if rel < options.tolerance {
            report.converged = true;
            return;
        }
        let k = report.iterations;
        if k >= STAGNATION_WINDOW && rel > (1.0 - STAGNATION_GAIN) * report.residuals[k - STAGNATION_WINDOW] {
            break;
        }
        ar = apply(&r);
        let r_ar_next = r.dot(&ar);
        if r_ar == 0.0 {
            break;
        }
        let beta = r_ar_next / r_ar;
        r_ar = r_ar_next;
        p.axpy(1.0, &r, beta);
        ap.axpy(1.0, &ar, beta);
    }
    report.converged = report.final_residual() < options.tolerance;
}

fn conjugate_gradient<F>(
    apply: &mut F,
    b: &DVector<f64>,
    b_norm: f64,
    options: &CgOptions,
    x: &mut DVector<f64>,
    report: &mut SolveReport,
) where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    while report.iterations < options.max_iters {
        let ap = apply(&p);
        let p_ap = p.dot(&ap);
        if p_ap <= 0.0 || !p_ap.is_finite() {
            break;
        }
        let alpha = rr / p_ap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        report.iterations += 1;
        let rr_next = r.dot(&r);
        let rel = rr_next.sqrt() / b_norm;
        report.residuals.push(rel);
        if rel < options.tolerance {
            report.converged = true;
            return;
        }
        p.axpy(1.0, &r, rr_next / rr);
        rr = rr_next;
    }
    report.converged = report.final_residual() < options.tolerance;
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(seed: u64, n: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        g.tr_mul(&g) + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn both_methods_solve() {
        let a = spd(1, 12);
        let b = DVector::from_fn(12, |i, _| i as f64 - 5.0);
        let exact = a.clone().cholesky().unwrap().solve(&b);
        for method in [KrylovMethod::ConjugateResidual, KrylovMethod::ConjugateGradient] {
            let opts = CgOptions { max_iters: 200, tolerance: 1e-12, method };
            let (x, rep) = solve_spd(|v| &a * v, &b, &opts);
            assert!(rep.converged, "{method:?}");
            assert!((x - &exact).amax() < 1e-8);
        }
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let a = spd(2, 4);
        let (x, rep) = solve_spd(|v| &a * v, &DVector::zeros(4), &CgOptions::default());
        assert_eq!(x, DVector::zeros(4));
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn reports_non_convergence() {
        let a = spd(3, 30);
        let b = DVector::from_element(30, 1.0);
        let opts = CgOptions { max_iters: 2, tolerance: 1e-14, method: KrylovMethod::ConjugateResidual };
        let (_, rep) = solve_spd(|v| &a * v, &b, &opts);
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 2);
    }

    #[test]
    fn residual_monotone_for_conjugate_residual() {
        for seed in 0..20 {
            let a = spd(seed, 25);
            let b = DVector::from_fn(25, |i, _| ((i * 7 + seed as usize) % 5) as f64 - 2.0);
            let opts = CgOptions { max_iters: 100, tolerance: 1e-12, method: KrylovMethod::ConjugateResidual };
            let (_, rep) = solve_spd(|v| &a * v, &b, &opts);
            assert!(rep.residuals.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {:?}", rep.residuals);
        }
    }

    #[test]
    fn unreachable_tolerance_stops_at_the_floor() {
        // Hilbert matrix: condition number around 1e16
        let a = DMatrix::from_fn(12, 12, |i, j| 1.0 / (i + j + 1) as f64);
        let b = DVector::from_element(12, 1.0);
        let opts = CgOptions { max_iters: 100_000, tolerance: 1e-15, method: KrylovMethod::ConjugateResidual };
        let (x, rep) = solve_spd(|v| &a * v, &b, &opts);
        assert!(!rep.converged);
        assert!(rep.iterations < 5_000, "{}", rep.iterations);
        assert!((&a * x - &b).norm() < 1e-6 * b.norm());
    }
}
