//! Chronological backtests with periodic retraining.
//!
//! Rows are lag-dataset rows ordered by target instant. The test range is
//! every row whose target is at or after the cutoff; it is cut into windows
//! of `retrain_period` rows, and the model for window `w` is trained only on
//! rows whose target precedes the first target of `w`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::{gamma_rmse, persistence_for_rows, rmse, MetricError, MetricReport};
use crate::kernel_model::KernelParams;
use crate::lagset::{self, DesignSpec, LagDataset, LagError};
use crate::model::{Forecaster, ModelConfig, ModelError, ModelKind};
use crate::series::WindSeries;

pub const DEFAULT_RETRAIN_PERIOD: usize = 168;
pub const SHORT_WINDOW: usize = 2232;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error(transparent)]
    Lag(#[from] LagError),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("no training rows before the cutoff (need at least {needed}, have {available})")]
    InsufficientHistory { available: usize, needed: usize },
    #[error("no rows with a target at or after the cutoff")]
    NoTestRows,
    #[error("fit for window {window} failed: {source}")]
    Fit {
        window: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// One model trained on all rows before the cutoff.
    Static,
    /// Retrained on the most recent `train_size` rows.
    Online,
    /// Retrained on every row to date.
    Incremental,
    /// `Online` with a short window.
    OnlineShort,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Static, PolicyKind::Online, PolicyKind::Incremental, PolicyKind::OnlineShort];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Static => "static",
            PolicyKind::Online => "online",
            PolicyKind::Incremental => "incremental",
            PolicyKind::OnlineShort => "online-short",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected static, online, incremental or online-short)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdatePolicy {
    pub kind: PolicyKind,
    /// Rows per training window; used by `Online` and `OnlineShort` only.
    pub train_size: Option<usize>,
    /// Predicted rows between retrains; ignored by `Static`.
    pub retrain_period: usize,
}

impl UpdatePolicy {
    pub fn fixed() -> Self {
        UpdatePolicy { kind: PolicyKind::Static, train_size: None, retrain_period: DEFAULT_RETRAIN_PERIOD }
    }

    pub fn online(train_size: usize) -> Self {
        UpdatePolicy { kind: PolicyKind::Online, train_size: Some(train_size), retrain_period: DEFAULT_RETRAIN_PERIOD }
    }

    pub fn incremental() -> Self {
        UpdatePolicy { kind: PolicyKind::Incremental, train_size: None, retrain_period: DEFAULT_RETRAIN_PERIOD }
    }

    pub fn online_short() -> Self {
        UpdatePolicy { kind: PolicyKind::OnlineShort, train_size: Some(SHORT_WINDOW), retrain_period: DEFAULT_RETRAIN_PERIOD }
    }

    /// Policy of `kind` with its default window; `Online` defaults to all history.
    pub fn of_kind(kind: PolicyKind) -> Self {
        match kind {
            PolicyKind::Static => Self::fixed(),
            PolicyKind::Online => UpdatePolicy { train_size: None, ..Self::online(0) },
            PolicyKind::Incremental => Self::incremental(),
            PolicyKind::OnlineShort => Self::online_short(),
        }
    }

    pub fn with_retrain_period(self, retrain_period: usize) -> Self {
        UpdatePolicy { retrain_period, ..self }
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.retrain_period == 0 {
            return Err(BacktestError::InvalidPolicy("retrain_period must be at least 1".into()));
        }
        if self.train_size == Some(0) {
            return Err(BacktestError::InvalidPolicy("train_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Training rows for a window whose first test row is `first`.
    fn training_rows(&self, first: usize) -> Range<usize> {
        match (self.kind, self.train_size) {
            (PolicyKind::Online | PolicyKind::OnlineShort, Some(n)) => first.saturating_sub(n)..first,
            _ => 0..first,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktestOptions {
    pub station_id: String,
    /// Re-run cross-validation in every window instead of freezing the
    /// hyperparameters chosen in the first one.
    pub reselect_each_window: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub target: DateTime<Utc>,
    pub y_true: f64,
    pub y_pred: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    /// Row ranges into the full lag dataset of the series.
    pub train_rows: Range<usize>,
    pub test_rows: Range<usize>,
    pub params: Option<KernelParams>,
}

impl WindowRecord {
    pub fn train_size(&self) -> usize {
        self.train_rows.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub policy: UpdatePolicy,
    pub model: ModelKind,
    pub predictions: Vec<Prediction>,
    pub metrics: MetricReport,
    pub gamma_rmse: Option<f64>,
    pub retrain_count: usize,
    pub windows: Vec<WindowRecord>,
}

impl BacktestReport {
    /// Predictions as `target,y_true,y_pred,window`.
    pub fn write_predictions_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["target", "y_true", "y_pred", "window"])?;
        for p in &self.predictions {
            w.write_record([
                crate::series::format_instant(p.target),
                p.y_true.to_string(),
                p.y_pred.to_string(),
                p.window.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_backtest(
    series: &WindSeries,
    spec: DesignSpec,
    model_config: &ModelConfig,
    policy: UpdatePolicy,
    cutoff: DateTime<Utc>,
) -> Result<BacktestReport, BacktestError> {
    run_backtest_with(series, spec, model_config, policy, cutoff, &BacktestOptions::default())
}

/// `(train_rows, test_rows)` of one window.
pub type WindowPlan = (Range<usize>, Range<usize>);

/// Window layout of a backtest.
pub fn plan_windows(data: &LagDataset, policy: &UpdatePolicy, cutoff: DateTime<Utc>) -> Result<Vec<WindowPlan>, BacktestError> {
    policy.validate()?;
    let first_test = data.partition_point_by_target(cutoff);
    let n = data.n_samples();
    if first_test == n {
        return Err(BacktestError::NoTestRows);
    }
    if first_test == 0 {
        return Err(BacktestError::InsufficientHistory { available: 0, needed: 1 });
    }
    if policy.kind == PolicyKind::Static {
        return Ok(vec![(0..first_test, first_test..n)]);
    }
    Ok((first_test..n)
        .step_by(policy.retrain_period)
        .map(|start| (policy.training_rows(start), start..(start + policy.retrain_period).min(n)))
        .collect())
}

pub fn run_backtest_with(
    series: &WindSeries,
    spec: DesignSpec,
    model_config: &ModelConfig,
    policy: UpdatePolicy,
    cutoff: DateTime<Utc>,
    options: &BacktestOptions,
) -> Result<BacktestReport, BacktestError> {
    let data = lagset::build(series, spec)?;
    let plan = plan_windows(&data, &policy, cutoff)?;

    let fit = |w: usize, config: &ModelConfig| -> Result<Forecaster, BacktestError> {
        let train = data.slice(plan[w].0.clone());
        Forecaster::fit(&train, config).map(|t| t.forecaster).map_err(|source| BacktestError::Fit { window: w, source })
    };

    let first = fit(0, model_config)?;
    let frozen = match (model_config.kind, first.kernel_params(), options.reselect_each_window) {
        (ModelKind::Krr, Some(params), false) => {
            let mut c = model_config.clone();
            c.krr.params = Some(params);
            c
        }
        _ => model_config.clone(),
    };
    let rest: Vec<Forecaster> = (1..plan.len()).into_par_iter().map(|w| fit(w, &frozen)).collect::<Result<_, _>>()?;

    let mut predictions = Vec::new();
    let mut windows = Vec::with_capacity(plan.len());
    for (w, model) in std::iter::once(&first).chain(&rest).enumerate() {
        let (train_rows, test_rows) = plan[w].clone();
        let test = data.slice(test_rows.clone());
        let pred = model.predict_dataset(&test).map_err(|source| BacktestError::Fit { window: w, source })?;
        for (i, y_pred) in pred.into_iter().enumerate() {
            predictions.push(Prediction { target: test.target_instant(i), y_true: test.target_speed[i], y_pred, window: w });
        }
        windows.push(WindowRecord { index: w, train_rows, test_rows, params: model.kernel_params() });
    }

    let targets: Vec<_> = predictions.iter().map(|p| p.target).collect();
    let y_true: Vec<f64> = predictions.iter().map(|p| p.y_true).collect();
    let y_pred: Vec<f64> = predictions.iter().map(|p| p.y_pred).collect();
    let metrics = MetricReport::compute(&options.station_id, spec, &targets, &y_true, &y_pred)?;
    let test_all = data.slice(plan[0].1.start..data.n_samples());
    let persistence = persistence_for_rows(series, &test_all);
    let gamma = gamma_rmse(metrics.rmse, rmse(&y_true, &persistence)?).ok();

    Ok(BacktestReport {
        policy,
        model: model_config.kind,
        predictions,
        metrics,
        gamma_rmse: gamma,
        retrain_count: windows.len(),
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagset::Design;
    use crate::series::WindSample;
    use chrono::TimeZone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(seed: u64, len: usize) -> WindSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
        let slots = (0..len)
            .map(|t| {
                if rng.gen_bool(0.03) {
                    return None;
                }
                let phase = std::f64::consts::TAU * t as f64 / 24.0;
                Some(WindSample::from_components(2.0 + phase.sin() + rng.gen_range(-0.5..0.5), 1.0 + rng.gen_range(-0.5..0.5)))
            })
            .collect();
        WindSeries::new(start, slots).unwrap()
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("weekly".parse::<PolicyKind>().is_err());
        assert!(UpdatePolicy::fixed().with_retrain_period(0).validate().is_err());
    }

    #[test]
    fn short_test_range_trains_once() {
        let s = series(1, 400);
        let spec = DesignSpec::new(Design::ZmS, 2, 6).unwrap();
        let cutoff = s.instant(350);
        let config = ModelConfig::linear();
        let mut reports = Vec::new();
        for kind in PolicyKind::ALL {
            let policy = UpdatePolicy::of_kind(kind).with_retrain_period(168);
            let r = run_backtest(&s, spec, &config, policy, cutoff).unwrap();
            assert_eq!(r.retrain_count, 1, "{kind}");
            reports.push(r);
        }
        let full = run_backtest(&s, spec, &config, UpdatePolicy::online(10_000), cutoff).unwrap();
        assert_eq!(reports[0].predictions, full.predictions);
    }

    #[test]
    fn retrain_count_and_sizes() {
        let s = series(2, 700);
        let spec = DesignSpec::new(Design::Ss, 1, 4).unwrap();
        let cutoff = s.instant(300);
        let data = lagset::build(&s, spec).unwrap();
        let n_test = data.n_samples() - data.partition_point_by_target(cutoff);
        let config = ModelConfig::linear();

        let inc = run_backtest(&s, spec, &config, UpdatePolicy::incremental().with_retrain_period(50), cutoff).unwrap();
        assert_eq!(inc.retrain_count, n_test.div_ceil(50));
        assert!(inc.windows.windows(2).all(|w| w[0].train_size() <= w[1].train_size()));

        let onl = run_backtest(&s, spec, &config, UpdatePolicy::online(120).with_retrain_period(50), cutoff).unwrap();
        assert_eq!(onl.retrain_count, n_test.div_ceil(50));
        assert!(onl.windows.iter().all(|w| w.train_size() == 120));

        let st = run_backtest(&s, spec, &config, UpdatePolicy::fixed(), cutoff).unwrap();
        assert_eq!(st.retrain_count, 1);
        assert_eq!(st.predictions.len(), n_test);
        assert!(st.predictions.windows(2).all(|p| p[0].target < p[1].target));
    }

    #[test]
    fn insufficient_history() {
        let s = series(3, 100);
        let spec = DesignSpec::new(Design::Ss, 1, 4).unwrap();
        let r = run_backtest(&s, spec, &ModelConfig::linear(), UpdatePolicy::fixed(), s.instant(0));
        assert!(matches!(r, Err(BacktestError::InsufficientHistory { .. })));
        let r = run_backtest(&s, spec, &ModelConfig::linear(), UpdatePolicy::fixed(), s.end() + chrono::Duration::hours(5));
        assert!(matches!(r, Err(BacktestError::NoTestRows)));
    }

    #[test]
    fn windows_match_independent_refits() {
        let s = series(4, 600);
        let spec = DesignSpec::new(Design::ZmZm, 3, 5).unwrap();
        let cutoff = s.instant(320);
        let config = ModelConfig::linear();
        for policy in [UpdatePolicy::online(150).with_retrain_period(40), UpdatePolicy::incremental().with_retrain_period(40)] {
            let report = run_backtest(&s, spec, &config, policy, cutoff).unwrap();
            let data = lagset::build(&s, spec).unwrap();
            for w in &report.windows {
                let model = Forecaster::fit(&data.slice(w.train_rows.clone()), &config).unwrap().forecaster;
                let expected = model.predict_dataset(&data.slice(w.test_rows.clone())).unwrap();
                let got: Vec<f64> = report.predictions.iter().filter(|p| p.window == w.index).map(|p| p.y_pred).collect();
                assert_eq!(got, expected);
            }
        }
    }
}
