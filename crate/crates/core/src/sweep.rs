//! The full design sweep: every (station, design, model, horizon, memory)
//! cell is trained on the data before the cutoff and scored after it.
//!
//! Within one station and horizon all cells are scored on the same target
//! instants (the intersection over designs and memories), so NRMSE
//! differences between cells compare like with like.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluate::{evaluation_fingerprint, gamma_rmse, nrmse, persistence_for_rows, rmse};
use crate::lagset::{self, Design, DesignSpec, LagDataset};
use crate::linear_model::LinearConfig;
use crate::model::{Forecaster, KrrConfig, ModelConfig, ModelKind};
use crate::select::{write_cv_csv, CvRow};
use crate::series::{self, WindSeries};

pub const DEFAULT_HORIZONS: [usize; 6] = [1, 3, 6, 12, 18, 24];
pub const DEFAULT_MEMORIES: [usize; 5] = [2, 6, 24, 48, 72];

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no successful cell at horizon {0}")]
    NoResults(usize),
    #[error("config error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub id: String,
    /// Hourly series CSV as written by `ingest`.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stations: Vec<StationSpec>,
    pub horizons: Vec<usize>,
    pub memories: Vec<usize>,
    pub designs: Vec<Design>,
    pub models: Vec<ModelKind>,
    /// First target instant of the test split.
    pub cutoff: Option<DateTime<Utc>>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub linear: LinearConfig,
    pub krr: KrrConfig,
    /// Maximum number of cells in flight; `None` uses every core.
    pub parallelism: Option<usize>,
    pub write_cv_reports: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            stations: Vec::new(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            memories: DEFAULT_MEMORIES.to_vec(),
            designs: Design::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            cutoff: None,
            seed: 0,
            output_dir: PathBuf::from("windcast-out"),
            linear: LinearConfig::default(),
            krr: KrrConfig::default(),
            parallelism: None,
            write_cv_reports: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, SweepError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, SweepError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, SweepError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn cutoff(&self) -> Result<DateTime<Utc>, SweepError> {
        self.cutoff.ok_or_else(|| SweepError::InvalidConfig("cutoff is required".into()))
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::InvalidConfig(m.into()));
        if self.stations.is_empty() {
            return bad("stations must not be empty");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be non-empty and positive");
        }
        if self.memories.is_empty() || self.memories.contains(&0) {
            return bad("memories must be non-empty and positive");
        }
        if self.designs.is_empty() || self.models.is_empty() {
            return bad("designs and models must not be empty");
        }
        if self.parallelism == Some(0) {
            return bad("parallelism must be at least 1");
        }
        let cutoff = self.cutoff()?;
        if series::floor_hour(cutoff) != cutoff {
            return bad("cutoff must fall on the hour");
        }
        let ids: BTreeSet<_> = self.stations.iter().map(|s| &s.id).collect();
        if ids.len() != self.stations.len() {
            return bad("station ids must be unique");
        }
        self.krr.grid.validate().map_err(|e| SweepError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// Identity of a sweep cell apart from the station and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellConfig {
    pub design: Design,
    pub model: ModelKind,
    pub memory: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub station: String,
    pub design: Design,
    pub model: ModelKind,
    pub horizon: usize,
    pub memory: usize,
    pub status: String,
    pub nrmse: Option<f64>,
    pub rmse: Option<f64>,
    pub gamma_rmse: Option<f64>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub cv_mean_r2: Option<f64>,
    pub evaluation_set: Option<String>,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(station: &str, cell: CellConfig, horizon: usize, error: String) -> Self {
        SweepRow {
            station: station.into(),
            design: cell.design,
            model: cell.model,
            horizon,
            memory: cell.memory,
            status: "failed".into(),
            nrmse: None,
            rmse: None,
            gamma_rmse: None,
            n_train: None,
            n_test: None,
            sigma: None,
            lambda: None,
            cv_mean_r2: None,
            evaluation_set: None,
            error: Some(error),
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn cell(&self) -> CellConfig {
        CellConfig { design: self.design, model: self.model, memory: self.memory }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalChoice {
    pub horizon: usize,
    pub config: CellConfig,
    /// Stations where `config` is locally best.
    pub frequency: usize,
    pub mean_nrmse: f64,
    pub deltas: Vec<GlobalDelta>,
}

/// NRMSE lost at one station by using the globally best configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalDelta {
    pub station: String,
    pub horizon: usize,
    pub local: CellConfig,
    pub local_nrmse: f64,
    pub global_nrmse: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Indices into `rows`, one per (station, horizon) with a successful cell.
    pub locally_best: Vec<usize>,
    pub globally_best: Vec<GlobalChoice>,
}

impl SweepResult {
    pub fn from_rows(rows: Vec<SweepRow>) -> Self {
        let locally_best = locally_best(&rows);
        let horizons: BTreeSet<usize> = rows.iter().map(|r| r.horizon).collect();
        let globally_best = horizons.into_iter().filter_map(|h| select_globally_best_rows(&rows, &locally_best, h).ok()).collect();
        SweepResult { rows, locally_best, globally_best }
    }

    pub fn failed_cells(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }
}

/// Deterministic per-cell seed.
pub fn cell_seed(seed: u64, station: &str, spec: DesignSpec, model: ModelKind) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(station.as_bytes());
    h.update([0]);
    h.update(spec.design.as_str().as_bytes());
    h.update([0]);
    h.update(model.as_str().as_bytes());
    h.update((spec.horizon as u64).to_le_bytes());
    h.update((spec.memory as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Per (station, horizon): the row with the lowest NRMSE; ties go to the earlier row.
pub fn locally_best(rows: &[SweepRow]) -> Vec<usize> {
    let mut best: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let Some(v) = r.nrmse.filter(|_| r.ok()) else { continue };
        let key = (r.station.clone(), r.horizon);
        match best.get(&key) {
            Some(&j) if rows[j].nrmse.expect("ok row") <= v => {}
            _ => {
                best.insert(key, i);
            }
        }
    }
    let mut idx: Vec<usize> = best.into_values().collect();
    idx.sort_unstable();
    idx
}

pub fn select_globally_best(sweep: &SweepResult, horizon: usize) -> Result<GlobalChoice, SweepError> {
    select_globally_best_rows(&sweep.rows, &sweep.locally_best, horizon)
}

/// Most frequent locally best configuration at `horizon`; ties go to the lower
/// mean NRMSE over stations, then to the smaller memory.
fn select_globally_best_rows(rows: &[SweepRow], local: &[usize], horizon: usize) -> Result<GlobalChoice, SweepError> {
    let winners: Vec<&SweepRow> = local.iter().map(|&i| &rows[i]).filter(|r| r.horizon == horizon).collect();
    if winners.is_empty() {
        return Err(SweepError::NoResults(horizon));
    }
    let mut freq: BTreeMap<CellConfig, usize> = BTreeMap::new();
    for r in &winners {
        *freq.entry(r.cell()).or_default() += 1;
    }
    let mean_nrmse = |c: CellConfig| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.horizon == horizon && r.ok() && r.cell() == c)
            .filter_map(|r| r.nrmse)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (config, frequency, mean) = freq
        .into_iter()
        .map(|(c, f)| (c, f, mean_nrmse(c)))
        .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.memory.cmp(&b.0.memory)))
        .expect("non-empty");
    let deltas = winners
        .iter()
        .map(|w| {
            let global = rows
                .iter()
                .find(|r| r.station == w.station && r.horizon == horizon && r.ok() && r.cell() == config)
                .and_then(|r| r.nrmse);
            let local_nrmse = w.nrmse.expect("ok row");
            GlobalDelta {
                station: w.station.clone(),
                horizon,
                local: w.cell(),
                local_nrmse,
                global_nrmse: global,
                delta: global.map(|g| g - local_nrmse),
            }
        })
        .collect();
    Ok(GlobalChoice { horizon, config, frequency, mean_nrmse: mean, deltas })
}

/// Axis along which [`delta_table`] compares cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareAxis {
    Memory,
    Design,
    Model,
}

impl std::str::FromStr for CompareAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "memory" => Ok(CompareAxis::Memory),
            "design" => Ok(CompareAxis::Design),
            "model" => Ok(CompareAxis::Model),
            other => Err(format!("unknown axis `{other}` (expected memory, design or model)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub station: String,
    pub horizon: usize,
    pub design: Design,
    pub model: ModelKind,
    pub memory: usize,
    pub reference: String,
    pub nrmse: f64,
    pub reference_nrmse: f64,
    pub delta_nrmse: f64,
    pub gamma_rmse: Option<f64>,
}

/// `NRMSE(cell) - NRMSE(reference)` for every successful cell, where the
/// reference differs from the cell only along `axis`. Pairs scored on
/// different evaluation sets are left out.
pub fn delta_table(rows: &[SweepRow], axis: CompareAxis, reference: &str) -> Result<Vec<DeltaRow>, SweepError> {
    let matches_ref = |r: &SweepRow| match axis {
        CompareAxis::Memory => r.memory.to_string() == reference,
        CompareAxis::Design => r.design.as_str() == reference,
        CompareAxis::Model => r.model.as_str() == reference,
    };
    let same_except_axis = |a: &SweepRow, b: &SweepRow| {
        a.station == b.station
            && a.horizon == b.horizon
            && (axis == CompareAxis::Memory || a.memory == b.memory)
            && (axis == CompareAxis::Design || a.design == b.design)
            && (axis == CompareAxis::Model || a.model == b.model)
    };
    if !rows.iter().any(&matches_ref) {
        return Err(SweepError::InvalidConfig(format!("no rows with reference {reference}")));
    }
    Ok(rows
        .iter()
        .filter(|r| r.ok())
        .filter_map(|r| {
            let base = rows.iter().find(|b| b.ok() && matches_ref(b) && same_except_axis(r, b))?;
            if base.evaluation_set != r.evaluation_set {
                return None;
            }
            let (v, b) = (r.nrmse?, base.nrmse?);
            Some(DeltaRow {
                station: r.station.clone(),
                horizon: r.horizon,
                design: r.design,
                model: r.model,
                memory: r.memory,
                reference: reference.to_string(),
                nrmse: v,
                reference_nrmse: b,
                delta_nrmse: v - b,
                gamma_rmse: r.gamma_rmse,
            })
        })
        .collect())
}

struct StationData {
    id: String,
    series: Result<WindSeries, String>,
}

fn load_station(spec: &StationSpec) -> StationData {
    let series = File::open(&spec.path)
        .map_err(|e| format!("{}: {e}", spec.path.display()))
        .and_then(|f| WindSeries::read_csv(BufReader::new(f)).map_err(|e| format!("{}: {e}", spec.path.display())));
    StationData { id: spec.id.clone(), series }
}

/// Targets of the test split shared by every buildable (design, memory).
fn common_targets(series: &WindSeries, designs: &[Design], memories: &[usize], horizon: usize, cutoff: DateTime<Utc>) -> Option<BTreeSet<DateTime<Utc>>> {
    let mut common: Option<BTreeSet<DateTime<Utc>>> = None;
    for &design in designs {
        for &memory in memories {
            let Ok(spec) = DesignSpec::new(design, horizon, memory) else { continue };
            let Ok(data) = lagset::build(series, spec) else { continue };
            let (_, test) = data.split_by_target(cutoff);
            let set: BTreeSet<_> = test.target_instants().into_iter().collect();
            common = Some(match common {
                None => set,
                Some(c) => c.intersection(&set).copied().collect(),
            });
        }
    }
    common
}

struct Job<'a> {
    station: &'a StationData,
    cell: CellConfig,
    horizon: usize,
    common: Option<&'a BTreeSet<DateTime<Utc>>>,
}

fn run_cell(job: &Job<'_>, config: &ExperimentConfig, cutoff: DateTime<Utc>) -> (SweepRow, Vec<CvRow>) {
    let Job { station, cell, horizon, common } = *job;
    let fail = |e: String| (SweepRow::failed(&station.id, cell, horizon, e), Vec::new());
    let series = match &station.series {
        Ok(s) => s,
        Err(e) => return fail(e.clone()),
    };
    let spec = match DesignSpec::new(cell.design, horizon, cell.memory) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    let data = match lagset::build(series, spec) {
        Ok(d) => d,
        Err(e) => return fail(e.to_string()),
    };
    let (train, test) = data.split_by_target(cutoff);
    let test = match common {
        Some(set) => {
            let keep: Vec<usize> = (0..test.n_samples()).filter(|&i| set.contains(&test.target_instant(i))).collect();
            test.select_rows(&keep)
        }
        None => test,
    };
    if train.n_samples() == 0 {
        return fail("no training rows before the cutoff".into());
    }
    if test.n_samples() == 0 {
        return fail("no test rows after the cutoff".into());
    }
    let model_config = ModelConfig {
        kind: cell.model,
        linear: config.linear,
        krr: config.krr.clone(),
        seed: cell_seed(config.seed, &station.id, spec, cell.model),
    };
    let trained = match Forecaster::fit(&train, &model_config) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string()),
    };
    match score(series, &trained.forecaster, &test) {
        Ok((n, r, g)) => {
            let params = trained.forecaster.kernel_params();
            let row = SweepRow {
                station: station.id.clone(),
                design: cell.design,
                model: cell.model,
                horizon,
                memory: cell.memory,
                status: "ok".into(),
                nrmse: Some(n),
                rmse: Some(r),
                gamma_rmse: g,
                n_train: Some(train.n_samples()),
                n_test: Some(test.n_samples()),
                sigma: params.map(|p| p.sigma),
                lambda: params.map(|p| p.lambda),
                cv_mean_r2: trained.forecaster.cv.map(|c| c.mean_r2),
                evaluation_set: Some(evaluation_fingerprint(&test.target_instants())),
                error: None,
            };
            (row, trained.cv_table)
        }
        Err(e) => fail(e),
    }
}

fn score(series: &WindSeries, model: &Forecaster, test: &LagDataset) -> Result<(f64, f64, Option<f64>), String> {
    let pred = model.predict_dataset(test).map_err(|e| e.to_string())?;
    let truth = &test.target_speed;
    let n = nrmse(truth, &pred).map_err(|e| e.to_string())?;
    let r = rmse(truth, &pred).map_err(|e| e.to_string())?;
    let persistence = persistence_for_rows(series, test);
    let g = rmse(truth, &persistence).ok().and_then(|p| gamma_rmse(r, p).ok());
    Ok((n, r, g))
}

/// Sweep over in-memory stations; failures are recorded per cell.
pub fn run_sweep_on(stations: &[(String, WindSeries)], config: &ExperimentConfig) -> Result<SweepResult, SweepError> {
    let data: Vec<StationData> = stations.iter().map(|(id, s)| StationData { id: id.clone(), series: Ok(s.clone()) }).collect();
    sweep_stations(&data, config).map(|(r, _)| r)
}

/// Loads the configured stations, runs every cell and writes the reports
/// into `output_dir`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult, SweepError> {
    config.validate()?;
    let data: Vec<StationData> = config.stations.iter().map(load_station).collect();
    let (result, cv_tables) = sweep_stations(&data, config)?;
    write_outputs(config, &result, &cv_tables)?;
    Ok(result)
}

fn sweep_stations(stations: &[StationData], config: &ExperimentConfig) -> Result<(SweepResult, Vec<Vec<CvRow>>), SweepError> {
    let cutoff = config.cutoff()?;
    let mut commons = BTreeMap::new();
    for (si, st) in stations.iter().enumerate() {
        if let Ok(series) = &st.series {
            for &h in &config.horizons {
                if let Some(c) = common_targets(series, &config.designs, &config.memories, h, cutoff) {
                    commons.insert((si, h), c);
                }
            }
        }
    }
    let mut jobs = Vec::new();
    for (si, station) in stations.iter().enumerate() {
        for &design in &config.designs {
            for &model in &config.models {
                for &horizon in &config.horizons {
                    for &memory in &config.memories {
                        jobs.push(Job { station, cell: CellConfig { design, model, memory }, horizon, common: commons.get(&(si, horizon)) });
                    }
                }
            }
        }
    }
    let run = || jobs.par_iter().map(|j| run_cell(j, config, cutoff)).collect::<Vec<_>>();
    let out = match config.parallelism {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SweepError::InvalidConfig(e.to_string()))?
            .install(run),
        None => run(),
    };
    let (rows, cv): (Vec<SweepRow>, Vec<Vec<CvRow>>) = out.into_iter().unzip();
    Ok((SweepResult::from_rows(rows), cv))
}

/// Sweep rows as CSV with the columns of [`SweepRow`] in declaration order.
pub fn write_rows_csv<W: Write, T: Serialize>(rows: &[T], writer: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<SweepRow>, SweepError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Serialize)]
struct FlatDelta<'a> {
    station: &'a str,
    horizon: usize,
    local_design: Design,
    local_model: ModelKind,
    local_memory: usize,
    global_design: Design,
    global_model: ModelKind,
    global_memory: usize,
    local_nrmse: f64,
    global_nrmse: Option<f64>,
    delta_nrmse: Option<f64>,
}

/// Globally best configurations and their per-station loss.
pub fn write_global_csv<W: Write>(choices: &[GlobalChoice], writer: W) -> Result<(), SweepError> {
    let flat: Vec<FlatDelta> = choices
        .iter()
        .flat_map(|c| {
            c.deltas.iter().map(move |d| FlatDelta {
                station: &d.station,
                horizon: c.horizon,
                local_design: d.local.design,
                local_model: d.local.model,
                local_memory: d.local.memory,
                global_design: c.config.design,
                global_model: c.config.model,
                global_memory: c.config.memory,
                local_nrmse: d.local_nrmse,
                global_nrmse: d.global_nrmse,
                delta_nrmse: d.delta,
            })
        })
        .collect();
    write_rows_csv(&flat, writer)
}

fn write_outputs(config: &ExperimentConfig, result: &SweepResult, cv: &[Vec<CvRow>]) -> Result<(), SweepError> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("resolved_config.toml"), config.to_toml()?)?;
    write_rows_csv(&result.rows, File::create(dir.join("sweep.csv"))?)?;
    serde_json::to_writer_pretty(File::create(dir.join("sweep.json"))?, result)?;
    let local: Vec<&SweepRow> = result.locally_best.iter().map(|&i| &result.rows[i]).collect();
    write_rows_csv(&local, File::create(dir.join("locally_best.csv"))?)?;
    write_global_csv(&result.globally_best, File::create(dir.join("globally_best.csv"))?)?;
    if config.write_cv_reports {
        let cv_dir = dir.join("cv");
        fs::create_dir_all(&cv_dir)?;
        for (row, table) in result.rows.iter().zip(cv) {
            if table.is_empty() {
                continue;
            }
            let name = format!("{}_{}_{}_h{}_mu{}.csv", row.station, row.design, row.model, row.horizon, row.memory);
            write_cv_csv(table, config.krr.cv.folds, File::create(cv_dir.join(name))?)
                .map_err(|e| SweepError::InvalidConfig(e.to_string()))?;
        }
    }
    Ok(())
}
