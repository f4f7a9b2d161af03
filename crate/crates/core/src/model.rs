//! Trained forecasters: one regressor per target column, hyperparameters
//! chosen by cross-validation, and a versioned JSON container.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel_model::{CgOptions, KernelError, KernelParams, NystromModel, NystromProblem};
use crate::lagset::{self, Design, DesignSpec, LagDataset, LagError};
use crate::linear_model::{fit_linear, predict_linear, LinearCoefficients, LinearConfig, LinearError};
use crate::select::{self, CenterPolicy, CvResult, CvRow, CvSettings, Grid, NystromCvFitter, SelectError};
use crate::series::WindSeries;

pub const MODEL_FORMAT: &str = "windcast-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Lag(#[from] LagError),
    #[error("model was trained for {expected}, got {got}")]
    SpecMismatch { expected: DesignSpec, got: DesignSpec },
    #[error("unsupported model file: {0}")]
    Format(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Krr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Linear, ModelKind::Krr];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Krr => "krr",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "krr" => Ok(ModelKind::Krr),
            other => Err(format!("unknown model `{other}` (expected linear or krr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrrConfig {
    pub grid: Grid,
    pub cv: CvSettings,
    pub centers: CenterPolicy,
    pub cg: CgOptions,
    pub standardize: bool,
    /// Skips cross-validation when set.
    pub params: Option<KernelParams>,
}

impl Default for KrrConfig {
    fn default() -> Self {
        KrrConfig {
            grid: Grid::default(),
            cv: CvSettings::default(),
            centers: CenterPolicy::Auto,
            cg: CgOptions::default(),
            standardize: true,
            params: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub linear: LinearConfig,
    #[serde(default)]
    pub krr: KrrConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn linear() -> Self {
        ModelConfig { kind: ModelKind::Linear, linear: LinearConfig::default(), krr: KrrConfig::default(), seed: 0 }
    }

    pub fn krr(krr: KrrConfig, seed: u64) -> Self {
        ModelConfig { kind: ModelKind::Krr, linear: LinearConfig::default(), krr, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "columns", rename_all = "lowercase")]
pub enum Regressor {
    Linear(Vec<LinearCoefficients>),
    Krr(Vec<NystromModel>),
}

/// Best point of a cross-validation run, without the full table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub best: KernelParams,
    pub mean_r2: f64,
    pub stage: u8,
    pub points: usize,
}

impl From<&CvResult> for CvSummary {
    fn from(r: &CvResult) -> Self {
        CvSummary { best: r.best, mean_r2: r.best_mean_r2, stage: r.refinement_stage, points: r.table.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub spec: DesignSpec,
    pub regressor: Regressor,
    pub n_train: usize,
    pub cv: Option<CvSummary>,
}

/// A fitted forecaster together with the CV table that chose it.
#[derive(Debug, Clone)]
pub struct Trained {
    pub forecaster: Forecaster,
    pub cv_table: Vec<CvRow>,
}

fn column(y: &DMatrix<f64>, q: usize) -> DVector<f64> {
    y.column(q).into_owned()
}

impl Forecaster {
    /// Fits on every row of `train`, running CV first for KRR without fixed params.
    pub fn fit(train: &LagDataset, config: &ModelConfig) -> Result<Trained, ModelError> {
        match config.kind {
            ModelKind::Linear => Ok(Trained { forecaster: Self::fit_linear(train, &config.linear)?, cv_table: Vec::new() }),
            ModelKind::Krr => {
                if let Some(params) = config.krr.params {
                    let forecaster = Self::fit_krr(train, &config.krr, params, config.seed, None)?;
                    return Ok(Trained { forecaster, cv_table: Vec::new() });
                }
                let cv = cross_validate_krr(train, &config.krr, config.seed)?;
                let forecaster = Self::fit_krr(train, &config.krr, cv.best, config.seed, Some(CvSummary::from(&cv)))?;
                Ok(Trained { forecaster, cv_table: cv.table })
            }
        }
    }

    pub fn fit_linear(train: &LagDataset, config: &LinearConfig) -> Result<Forecaster, ModelError> {
        let columns = (0..train.n_outputs())
            .map(|q| fit_linear(&train.x, &column(&train.y, q), config))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Forecaster { spec: train.spec, regressor: Regressor::Linear(columns), n_train: train.n_samples(), cv: None })
    }

    /// Nyström fit with given hyperparameters; all target columns share the
    /// sampled centers and kernel blocks.
    pub fn fit_krr(
        train: &LagDataset,
        config: &KrrConfig,
        params: KernelParams,
        seed: u64,
        cv: Option<CvSummary>,
    ) -> Result<Forecaster, ModelError> {
        params.validate()?;
        let problem = NystromProblem::new(&train.x, config.centers.centers(train.n_samples()), seed, config.standardize)?;
        let system = problem.system(params.sigma)?;
        let mut columns = Vec::with_capacity(train.n_outputs());
        for q in 0..train.n_outputs() {
            let (weights, report) = system.solve(&column(&train.y, q), params.lambda, &config.cg)?;
            columns.push(problem.clone().into_model(weights, params, report));
        }
        Ok(Forecaster { spec: train.spec, regressor: Regressor::Krr(columns), n_train: train.n_samples(), cv })
    }

    pub fn kernel_params(&self) -> Option<KernelParams> {
        match &self.regressor {
            Regressor::Krr(c) => c.first().map(|m| m.params),
            Regressor::Linear(_) => None,
        }
    }

    /// Raw regressor outputs, `n x q`.
    pub fn predict_raw(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
        let q = self.spec.design.outputs();
        let mut out = DMatrix::zeros(x.nrows(), q);
        for c in 0..q {
            let col = match &self.regressor {
                Regressor::Linear(cols) => predict_linear(&cols[c], x)?,
                Regressor::Krr(cols) => cols[c].predict(x)?,
            };
            out.set_column(c, &col);
        }
        Ok(out)
    }

    /// Speed forecasts; `zm-zm` outputs are recombined as `sqrt(z^2 + m^2)`.
    pub fn predict_speed(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, ModelError> {
        let raw = self.predict_raw(x)?;
        Ok(match self.spec.design {
            Design::Ss | Design::ZmS => raw.column(0).iter().copied().collect(),
            Design::ZmZm => raw.row_iter().map(|r| lagset::reconstruct_speed(r[0], r[1])).collect(),
        })
    }

    pub fn predict_dataset(&self, data: &LagDataset) -> Result<Vec<f64>, ModelError> {
        if data.spec != self.spec {
            return Err(ModelError::SpecMismatch { expected: self.spec, got: data.spec });
        }
        self.predict_speed(&data.x)
    }

    /// Predicts every valid anchor of `series`.
    pub fn predict_series(&self, series: &WindSeries) -> Result<(LagDataset, Vec<f64>), ModelError> {
        let data = lagset::build(series, self.spec)?;
        let pred = self.predict_dataset(&data)?;
        Ok((data, pred))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = ModelFile { format: MODEL_FORMAT.into(), version: MODEL_VERSION, forecaster: self.clone() };
        serde_json::to_writer(BufWriter::new(File::create(path)?), &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Forecaster, ModelError> {
        let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(ModelError::Format(format!("{} v{}", file.format, file.version)));
        }
        Ok(file.forecaster)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    forecaster: Forecaster,
}

pub fn cross_validate_krr(train: &LagDataset, config: &KrrConfig, seed: u64) -> Result<CvResult, SelectError> {
    let fitter = NystromCvFitter { centers: config.centers, cg: config.cg, seed, standardize: config.standardize };
    select::grid_search(train, &config.grid, &fitter, &config.cv)
}

/// Outcome of searching memory as an outer CV axis.
#[derive(Debug, Clone)]
pub struct MemoryChoice {
    pub memory: usize,
    pub mean_r2: f64,
    /// All CV rows, tagged with their memory.
    pub table: Vec<CvRow>,
}

/// Picks the memory with the best cross-validated R^2 on the training part
/// of `series`; ties go to the smaller memory. Memories whose dataset or
/// search fails are skipped.
pub fn select_memory(
    train_series: &WindSeries,
    design: Design,
    horizon: usize,
    memories: &[usize],
    config: &ModelConfig,
) -> Result<MemoryChoice, ModelError> {
    let mut best: Option<(usize, f64)> = None;
    let mut table = Vec::new();
    let mut last_error = None;
    for &mu in memories {
        let spec = DesignSpec::new(design, horizon, mu)?;
        let scored = lagset::build(train_series, spec).map_err(ModelError::from).and_then(|data| match config.kind {
            ModelKind::Krr => {
                let cv = cross_validate_krr(&data, &config.krr, config.seed)?;
                Ok((cv.best_mean_r2, cv.table))
            }
            ModelKind::Linear => {
                let lin = config.linear;
                let (score, folds) = select::cv_score(&data.x, &data.y, config.krr.cv.folds, |x, y, xv| {
                    let mut out = DMatrix::zeros(xv.nrows(), y.ncols());
                    for q in 0..y.ncols() {
                        let c = fit_linear(x, &column(y, q), &lin).map_err(|e| e.to_string())?;
                        out.set_column(q, &predict_linear(&c, xv).map_err(|e| e.to_string())?);
                    }
                    Ok(out)
                })?;
                let row = CvRow { sigma: f64::NAN, lambda: f64::NAN, mu: None, stage: 1, fold_r2: folds, mean_r2: score, failure: None };
                Ok((score, vec![row]))
            }
        });
        match scored {
            Ok((score, rows)) => {
                table.extend(rows.into_iter().map(|r| CvRow { mu: Some(mu), ..r }));
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((mu, score));
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    match best {
        Some((memory, mean_r2)) => Ok(MemoryChoice { memory, mean_r2, table }),
        None => Err(last_error.unwrap_or(ModelError::Select(SelectError::InvalidGrid("no memories given".into())))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::series::WindSample;

    fn series(seed: u64, len: usize) -> WindSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        let slots = (0..len)
            .map(|t| {
                let phase = std::f64::consts::TAU * t as f64 / 24.0;
                let z = 3.0 + phase.sin() + 0.3 * rng.gen_range(-1.0..1.0);
                let m = 1.0 + 0.5 * phase.cos() + 0.3 * rng.gen_range(-1.0..1.0);
                Some(WindSample::from_components(z, m))
            })
            .collect();
        WindSeries::new(start, slots).unwrap()
    }

    fn small_krr() -> KrrConfig {
        KrrConfig {
            grid: Grid::new(vec![1.0, 4.0], vec![1e-4, 1e-2]).unwrap(),
            cv: CvSettings { folds: 3, refine_factor: 1 },
            centers: CenterPolicy::Fixed(60),
            ..KrrConfig::default()
        }
    }

    #[test]
    fn model_file_round_trip() {
        let s = series(1, 300);
        let dir = tempfile::tempdir().unwrap();
        for design in Design::ALL {
            let data = lagset::build(&s, DesignSpec::new(design, 3, 6).unwrap()).unwrap();
            for config in [ModelConfig::linear(), ModelConfig::krr(small_krr(), 5)] {
                let trained = Forecaster::fit(&data, &config).unwrap();
                let path = dir.path().join("m.json");
                trained.forecaster.save(&path).unwrap();
                let loaded = Forecaster::load(&path).unwrap();
                let a = trained.forecaster.predict_dataset(&data).unwrap();
                let b = loaded.predict_dataset(&data).unwrap();
                assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= 1e-12), "{design} {:?}", config.kind);
            }
        }
    }

    #[test]
    fn zm_zm_predicts_non_negative_speed() {
        let s = series(2, 200);
        let data = lagset::build(&s, DesignSpec::new(Design::ZmZm, 1, 4).unwrap()).unwrap();
        let f = Forecaster::fit(&data, &ModelConfig::linear()).unwrap().forecaster;
        assert!(f.predict_dataset(&data).unwrap().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let s = series(3, 120);
        let a = lagset::build(&s, DesignSpec::new(Design::Ss, 1, 4).unwrap()).unwrap();
        let b = lagset::build(&s, DesignSpec::new(Design::Ss, 2, 4).unwrap()).unwrap();
        let f = Forecaster::fit(&a, &ModelConfig::linear()).unwrap().forecaster;
        assert!(matches!(f.predict_dataset(&b), Err(ModelError::SpecMismatch { .. })));
    }

    #[test]
    fn cv_chooses_a_grid_point() {
        let s = series(4, 250);
        let data = lagset::build(&s, DesignSpec::new(Design::Ss, 1, 6).unwrap()).unwrap();
        let trained = Forecaster::fit(&data, &ModelConfig::krr(small_krr(), 1)).unwrap();
        let p = trained.forecaster.kernel_params().unwrap();
        assert!([1.0, 4.0].contains(&p.sigma) && [1e-4, 1e-2].contains(&p.lambda));
        assert_eq!(trained.cv_table.len(), 4);
    }

    #[test]
    fn memory_search_prefers_a_full_day_on_diurnal_data() {
        let s = series(5, 600);
        let choice = select_memory(&s, Design::Ss, 6, &[1, 24], &ModelConfig::linear()).unwrap();
        assert_eq!(choice.memory, 24);
        assert_eq!(choice.table.len(), 2);
        assert!(choice.table.iter().all(|r| r.mu.is_some()));
    }
}
