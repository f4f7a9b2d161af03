//! Forecast error metrics and the persistence baseline.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lagset::{DesignSpec, LagDataset};
use crate::numeric::compensated_sum;
use crate::series::WindSeries;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} true values vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("no values to score")]
    Empty,
    #[error("all true values are zero")]
    ZeroDenominator,
    #[error("persistence RMSE is zero")]
    ZeroPersistence,
    #[error("no (t, t+h) pair without a gap")]
    NoValidPairs,
    #[error("reports were computed on different evaluation sets: {0}")]
    MismatchedEvaluationSets(String),
}

fn check(y_true: &[f64], y_pred: &[f64]) -> Result<(), MetricError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn squared_error(y_true: &[f64], y_pred: &[f64]) -> f64 {
    compensated_sum(y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)))
}

/// `sqrt(sum (s - s_hat)^2 / sum s^2)`.
pub fn nrmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    check(y_true, y_pred)?;
    let denom = compensated_sum(y_true.iter().map(|v| v * v));
    if denom == 0.0 {
        return Err(MetricError::ZeroDenominator);
    }
    Ok((squared_error(y_true, y_pred) / denom).sqrt())
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    check(y_true, y_pred)?;
    Ok((squared_error(y_true, y_pred) / y_true.len() as f64).sqrt())
}

/// Ratio of an algorithm's RMSE to the persistence RMSE; below 1 beats persistence.
pub fn gamma_rmse(rmse_alg: f64, rmse_persistence: f64) -> Result<f64, MetricError> {
    if rmse_persistence == 0.0 {
        return Err(MetricError::ZeroPersistence);
    }
    Ok(rmse_alg / rmse_persistence)
}

/// Aligned `(truth, forecast)` pairs of the persistence model.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistencePairs {
    pub targets: Vec<DateTime<Utc>>,
    pub y_true: Vec<f64>,
    pub y_pred: Vec<f64>,
}

/// Forecasts `s(t + h) = s(t)` wherever both slots are present.
pub fn persistence_forecast(series: &WindSeries, horizon: usize) -> Result<PersistencePairs, MetricError> {
    let slots = series.slots();
    let mut out = PersistencePairs { targets: Vec::new(), y_true: Vec::new(), y_pred: Vec::new() };
    if horizon == 0 {
        return Err(MetricError::NoValidPairs);
    }
    for t in 0..slots.len().saturating_sub(horizon) {
        if let (Some(now), Some(later)) = (&slots[t], &slots[t + horizon]) {
            out.targets.push(series.instant(t + horizon));
            out.y_true.push(later.s);
            out.y_pred.push(now.s);
        }
    }
    if out.y_true.is_empty() {
        return Err(MetricError::NoValidPairs);
    }
    Ok(out)
}

/// Persistence forecast for each row of `dataset`: the speed at its anchor.
/// Numerator and denominator of `gamma_rmse` then see the same instants.
pub fn persistence_for_rows(series: &WindSeries, dataset: &LagDataset) -> Vec<f64> {
    dataset
        .anchors
        .iter()
        .map(|&a| {
            let idx = series.index_of(a).expect("anchor on the series grid") as usize;
            series.get(idx).expect("anchor slot is present").s
        })
        .collect()
}

/// Short fingerprint of an ordered set of target instants.
pub fn evaluation_fingerprint(targets: &[DateTime<Utc>]) -> String {
    let mut hasher = Sha256::new();
    for t in targets {
        hasher.update(t.timestamp().to_le_bytes());
    }
    hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nrmse: f64,
    pub rmse: f64,
    pub n_predictions: usize,
    pub horizon_h: usize,
    pub design: DesignSpec,
    pub station_id: String,
    /// See [`evaluation_fingerprint`].
    pub evaluation_set: String,
}

impl MetricReport {
    pub fn compute(
        station_id: &str,
        design: DesignSpec,
        targets: &[DateTime<Utc>],
        y_true: &[f64],
        y_pred: &[f64],
    ) -> Result<Self, MetricError> {
        Ok(MetricReport {
            nrmse: nrmse(y_true, y_pred)?,
            rmse: rmse(y_true, y_pred)?,
            n_predictions: y_true.len(),
            horizon_h: design.horizon,
            design,
            station_id: station_id.to_string(),
            evaluation_set: evaluation_fingerprint(targets),
        })
    }
}

/// `a.nrmse - b.nrmse`; both reports must cover the same station, horizon and targets.
pub fn delta_nrmse(a: &MetricReport, b: &MetricReport) -> Result<f64, MetricError> {
    if a.station_id != b.station_id {
        return Err(MetricError::MismatchedEvaluationSets(format!(
            "stations {} vs {}",
            a.station_id, b.station_id
        )));
    }
    if a.horizon_h != b.horizon_h {
        return Err(MetricError::MismatchedEvaluationSets(format!(
            "horizons {} vs {}",
            a.horizon_h, b.horizon_h
        )));
    }
    if a.evaluation_set != b.evaluation_set || a.n_predictions != b.n_predictions {
        return Err(MetricError::MismatchedEvaluationSets("different target instants".into()));
    }
    Ok(a.nrmse - b.nrmse)
}
