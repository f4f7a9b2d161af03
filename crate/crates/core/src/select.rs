//! Hyperparameter selection by blocked k-fold cross-validation.
//!
//! A coarse `(sigma, lambda)` grid is scored by mean out-of-fold R^2; a second
//! log-spaced grid is then laid over the coarse neighbours of the stage-one
//! optimum. Folds are contiguous chronological blocks: lag rows overlap in
//! time, so shuffled folds would put near-copies of validation rows in the
//! training fold.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel_model::{
    default_centers, fit_exact, CgOptions, KernelError, KernelParams, NystromProblem,
};
use crate::lagset::LagDataset;
use crate::numeric::{compensated_sum, logspace};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("{n} samples cannot be split into {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("true values have zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("every grid point failed")]
    AllPointsFailed(Vec<CvRow>),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Contiguous folds covering `0..n`; the first `n % k` folds get one extra row.
pub fn kfold_indices(n: usize, k: usize) -> Result<Vec<Range<usize>>, SelectError> {
    if k == 0 || n < k {
        return Err(SelectError::TooFewSamples { n, k });
    }
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64, SelectError> {
    if y_true.len() != y_pred.len() {
        return Err(SelectError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(SelectError::ZeroVariance);
    }
    let mean = compensated_sum(y_true.iter().copied()) / y_true.len() as f64;
    let ss_tot = compensated_sum(y_true.iter().map(|v| (v - mean) * (v - mean)));
    if ss_tot == 0.0 {
        return Err(SelectError::ZeroVariance);
    }
    let ss_res = compensated_sum(y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)));
    Ok(1.0 - ss_res / ss_tot)
}

/// Search axes, both ascending and positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub sigma: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Grid {
    pub fn new(sigma: Vec<f64>, lambda: Vec<f64>) -> Result<Self, SelectError> {
        let g = Grid { sigma, lambda };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SelectError> {
        for (name, axis) in [("sigma", &self.sigma), ("lambda", &self.lambda)] {
            if axis.is_empty() {
                return Err(SelectError::InvalidGrid(format!("{name} axis is empty")));
            }
            if axis.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(SelectError::InvalidGrid(format!("{name} values must be positive")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SelectError::InvalidGrid(format!("{name} values must be strictly ascending")));
            }
        }
        Ok(())
    }
}

impl Default for Grid {
    /// Sigma in standardized units; lambda from 1e-7 to 1e-1.
    fn default() -> Self {
        Grid {
            sigma: vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
            lambda: logspace(1e-7, 1e-1, 7),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSettings {
    pub folds: usize,
    /// Points per axis of the refined grid; 1 disables refinement.
    pub refine_factor: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings { folds: 5, refine_factor: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub sigma: f64,
    pub lambda: f64,
    /// Set when memory is searched as an outer axis.
    pub mu: Option<usize>,
    pub stage: u8,
    pub fold_r2: Vec<f64>,
    pub mean_r2: f64,
    /// `None` when every fold succeeded.
    pub failure: Option<String>,
}

impl CvRow {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }

    pub fn params(&self) -> KernelParams {
        KernelParams { sigma: self.sigma, lambda: self.lambda }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: KernelParams,
    pub best_mean_r2: f64,
    /// Stage in which `best` was scored.
    pub refinement_stage: u8,
    pub table: Vec<CvRow>,
}

/// Something that can be trained on one fold and scored on another.
///
/// One call covers one `sigma` and a list of `lambda`s so implementations can
/// reuse kernel evaluations across the regularization axis. The result holds,
/// per lambda, the `n_val x q` predictions.
pub trait CvFitter: Sync {
    fn fit_predict(
        &self,
        train_x: &DMatrix<f64>,
        train_y: &DMatrix<f64>,
        val_x: &DMatrix<f64>,
        sigma: f64,
        lambdas: &[f64],
    ) -> Vec<Result<DMatrix<f64>, KernelError>>;
}

/// Number of Nyström centers as a function of the training-set size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CenterPolicy {
    /// `ceil(10 sqrt(n))`.
    #[default]
    Auto,
    Fixed(usize),
}

impl CenterPolicy {
    pub fn centers(&self, n: usize) -> usize {
        match *self {
            CenterPolicy::Auto => default_centers(n),
            CenterPolicy::Fixed(m) => m.min(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NystromCvFitter {
    pub centers: CenterPolicy,
    pub cg: CgOptions,
    pub seed: u64,
    pub standardize: bool,
}

impl CvFitter for NystromCvFitter {
    fn fit_predict(
        &self,
        train_x: &DMatrix<f64>,
        train_y: &DMatrix<f64>,
        val_x: &DMatrix<f64>,
        sigma: f64,
        lambdas: &[f64],
    ) -> Vec<Result<DMatrix<f64>, KernelError>> {
        let prepared = NystromProblem::new(train_x, self.centers.centers(train_x.nrows()), self.seed, self.standardize)
            .and_then(|p| {
                let system = p.system(sigma)?;
                let cross = p.cross_kernel(val_x, sigma)?;
                Ok((system, cross))
            });
        let (system, cross) = match prepared {
            Ok(v) => v,
            Err(e) => return lambdas.iter().map(|_| Err(clone_error(&e))).collect(),
        };
        lambdas
            .iter()
            .map(|&lambda| {
                let mut pred = DMatrix::zeros(val_x.nrows(), train_y.ncols());
                for (q, column) in train_y.column_iter().enumerate() {
                    let (w, _) = system.solve(&column.into_owned(), lambda, &self.cg)?;
                    pred.set_column(q, &cross.tr_mul(&w));
                }
                Ok(pred)
            })
            .collect()
    }
}

/// Closed-form KRR; only sensible for small folds.
#[derive(Debug, Clone)]
pub struct ExactCvFitter {
    pub standardize: bool,
}

impl CvFitter for ExactCvFitter {
    fn fit_predict(
        &self,
        train_x: &DMatrix<f64>,
        train_y: &DMatrix<f64>,
        val_x: &DMatrix<f64>,
        sigma: f64,
        lambdas: &[f64],
    ) -> Vec<Result<DMatrix<f64>, KernelError>> {
        lambdas
            .iter()
            .map(|&lambda| {
                let params = KernelParams::new(sigma, lambda)?;
                let mut pred = DMatrix::zeros(val_x.nrows(), train_y.ncols());
                for (q, column) in train_y.column_iter().enumerate() {
                    let model = fit_exact(train_x, &column.into_owned(), params, self.standardize)?;
                    pred.set_column(q, &model.predict(val_x)?);
                }
                Ok(pred)
            })
            .collect()
    }
}

fn clone_error(e: &KernelError) -> KernelError {
    KernelError::NumericalFailure(e.to_string())
}

/// Mean over output columns of the per-column R^2.
fn multi_r2(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>) -> Result<f64, SelectError> {
    let mut total = 0.0;
    for q in 0..y_true.ncols() {
        let t: Vec<f64> = y_true.column(q).iter().copied().collect();
        let p: Vec<f64> = y_pred.column(q).iter().copied().collect();
        total += r2_score(&t, &p)?;
    }
    Ok(total / y_true.ncols() as f64)
}

fn complement(n: usize, fold: &Range<usize>) -> Vec<usize> {
    (0..fold.start).chain(fold.end..n).collect()
}

/// Scores every `(sigma, lambda)` in `points` (grouped by sigma).
fn evaluate_points(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    folds: &[Range<usize>],
    points: &[(f64, Vec<f64>)],
    fitter: &dyn CvFitter,
    stage: u8,
) -> Vec<CvRow> {
    let n = x.nrows();
    let jobs: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|f| (0..points.len()).map(move |s| (f, s)))
        .collect();
    let scored: Vec<Vec<Result<f64, String>>> = jobs
        .par_iter()
        .map(|&(f, s)| {
            let fold = &folds[f];
            let train_rows = complement(n, fold);
            let val_rows: Vec<usize> = fold.clone().collect();
            let (sigma, lambdas) = &points[s];
            let preds = fitter.fit_predict(
                &x.select_rows(&train_rows),
                &y.select_rows(&train_rows),
                &x.select_rows(&val_rows),
                *sigma,
                lambdas,
            );
            let y_val = y.select_rows(&val_rows);
            preds
                .into_iter()
                .map(|p| {
                    p.map_err(|e| e.to_string())
                        .and_then(|p| multi_r2(&y_val, &p).map_err(|e| e.to_string()))
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for (s, (sigma, lambdas)) in points.iter().enumerate() {
        for (l, &lambda) in lambdas.iter().enumerate() {
            let mut fold_r2 = Vec::with_capacity(folds.len());
            let mut failure = None;
            for f in 0..folds.len() {
                match &scored[f * points.len() + s][l] {
                    Ok(r2) => fold_r2.push(*r2),
                    Err(e) => {
                        fold_r2.push(f64::NAN);
                        failure.get_or_insert_with(|| format!("fold {f}: {e}"));
                    }
                }
            }
            let mean_r2 = if failure.is_none() {
                fold_r2.iter().sum::<f64>() / fold_r2.len() as f64
            } else {
                f64::NAN
            };
            rows.push(CvRow { sigma: *sigma, lambda, mu: None, stage, fold_r2, mean_r2, failure });
        }
    }
    rows
}

/// Higher score wins; ties go to larger lambda, then larger sigma.
fn better(a: &CvRow, b: &CvRow) -> bool {
    (a.mean_r2, a.lambda, a.sigma) > (b.mean_r2, b.lambda, b.sigma)
}

fn best_row(rows: &[CvRow]) -> Option<&CvRow> {
    rows.iter().filter(|r| r.ok() && r.mean_r2.is_finite()).fold(None, |acc, r| match acc {
        Some(b) if !better(r, b) => Some(b),
        _ => Some(r),
    })
}

fn refined_axis(axis: &[f64], value: f64, count: usize) -> Vec<f64> {
    let i = axis.iter().position(|v| *v == value).expect("optimum lies on the coarse axis");
    let lo = axis[i.saturating_sub(1)];
    let hi = axis[(i + 1).min(axis.len() - 1)];
    // 12 significant digits: 8 rather than 7.999999999999998 in reports
    let mut out: Vec<f64> = logspace(lo, hi, count)
        .into_iter()
        .map(|v| format!("{v:.11e}").parse().expect("formatted float parses"))
        .collect();
    out.push(value);
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    // keep coarse values bit-exact so they are recognised as already scored
    for v in &mut out {
        if let Some(c) = axis.iter().find(|c| (*v - **c).abs() <= 1e-12 * c.abs()) {
            *v = *c;
        }
    }
    out
}

fn group_by_sigma(pairs: Vec<(f64, f64)>) -> Vec<(f64, Vec<f64>)> {
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for (s, l) in pairs {
        match out.iter_mut().find(|(v, _)| *v == s) {
            Some((_, ls)) => ls.push(l),
            None => out.push((s, vec![l])),
        }
    }
    out
}

/// Two-stage grid search on a dataset's lag matrix and targets.
///
/// Failing points are recorded in the table and skipped. Multi-output targets
/// are scored by the mean of their per-column R^2, so both components share
/// one setting.
pub fn grid_search(
    dataset: &LagDataset,
    coarse: &Grid,
    fitter: &dyn CvFitter,
    settings: &CvSettings,
) -> Result<CvResult, SelectError> {
    grid_search_xy(&dataset.x, &dataset.y, coarse, fitter, settings)
}

pub fn grid_search_xy(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    coarse: &Grid,
    fitter: &dyn CvFitter,
    settings: &CvSettings,
) -> Result<CvResult, SelectError> {
    coarse.validate()?;
    let folds = kfold_indices(x.nrows(), settings.folds)?;
    let stage1_points = coarse.sigma.iter().map(|&s| (s, coarse.lambda.clone())).collect::<Vec<_>>();
    let mut table = evaluate_points(x, y, &folds, &stage1_points, fitter, 1);
    let Some(first) = best_row(&table).cloned() else {
        return Err(SelectError::AllPointsFailed(table));
    };

    if settings.refine_factor > 1 {
        let sigmas = refined_axis(&coarse.sigma, first.sigma, settings.refine_factor);
        let lambdas = refined_axis(&coarse.lambda, first.lambda, settings.refine_factor);
        let fresh: Vec<(f64, f64)> = sigmas
            .iter()
            .flat_map(|&s| lambdas.iter().map(move |&l| (s, l)))
            .filter(|&(s, l)| !table.iter().any(|r| r.sigma == s && r.lambda == l))
            .collect();
        if !fresh.is_empty() {
            let rows = evaluate_points(x, y, &folds, &group_by_sigma(fresh), fitter, 2);
            table.extend(rows);
        }
    }

    let best = best_row(&table).expect("stage one produced a valid row").clone();
    Ok(CvResult {
        best: best.params(),
        best_mean_r2: best.mean_r2,
        refinement_stage: best.stage,
        table,
    })
}

/// Mean out-of-fold R^2 of an arbitrary fit-and-predict closure, used where
/// there is no `(sigma, lambda)` grid (linear models).
pub fn cv_score<F>(x: &DMatrix<f64>, y: &DMatrix<f64>, folds: usize, fit_predict: F) -> Result<(f64, Vec<f64>), SelectError>
where
    F: Fn(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) -> Result<DMatrix<f64>, String> + Sync,
{
    let ranges = kfold_indices(x.nrows(), folds)?;
    let mut scores = Vec::with_capacity(ranges.len());
    for fold in &ranges {
        let train = complement(x.nrows(), fold);
        let val: Vec<usize> = fold.clone().collect();
        let pred = fit_predict(&x.select_rows(&train), &y.select_rows(&train), &x.select_rows(&val))
            .map_err(SelectError::InvalidGrid)?;
        scores.push(multi_r2(&y.select_rows(&val), &pred)?);
    }
    Ok((scores.iter().sum::<f64>() / scores.len() as f64, scores))
}

/// CV table as `sigma,lambda,mu,fold_0..fold_{k-1},mean_r2,status`.
pub fn write_cv_csv<W: Write>(rows: &[CvRow], folds: usize, writer: W) -> Result<(), SelectError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["sigma".to_string(), "lambda".into(), "mu".into()];
    header.extend((0..folds).map(|f| format!("fold_{f}")));
    header.extend(["mean_r2".to_string(), "status".into()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.sigma.to_string(), r.lambda.to_string(), r.mu.map(|m| m.to_string()).unwrap_or_default()];
        rec.extend((0..folds).map(|f| r.fold_r2.get(f).map(|v| v.to_string()).unwrap_or_default()));
        rec.push(r.mean_r2.to_string());
        rec.push(match &r.failure {
            None => "ok".into(),
            Some(e) => format!("failed: {e}"),
        });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Column view helper used by callers holding a single target.
pub fn as_column(y: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(y.len(), 1, y.as_slice())
}
