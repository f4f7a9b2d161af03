//! Strength of the daily cycle, measured as the lag-24 h autocorrelation of
//! speed over short non-overlapping windows and averaged per calendar month.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::compensated_sum;
use crate::series::WindSeries;

pub const DEFAULT_WINDOW: usize = 120;
pub const DAY_LAG: usize = 24;
/// Windows with a larger share of missing slots are skipped.
pub const MAX_GAP_FRACTION: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum DiurnalError {
    #[error("lag {lag} must be smaller than the window ({window})")]
    InvalidLag { lag: usize, window: usize },
    #[error("series has no usable window")]
    SeriesTooShort,
    #[error("csv error: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowValue {
    pub start: DateTime<Utc>,
    pub value: f64,
    pub pairs: usize,
}

/// Lag-`lag` autocorrelation in consecutive windows of `window` hours.
///
/// Deviations are taken from the window mean and only pairs with both ends
/// inside the window and present contribute. The sum of lagged products is
/// normalised by the root of the two matching sums of squares, so the value
/// is a correlation coefficient: exactly 1 at lag 0 and bounded by 1.
/// Incomplete trailing windows, windows with too many gaps, and windows
/// without variance are skipped.
pub fn windowed_autocorrelation(series: &WindSeries, lag: usize, window: usize) -> Result<Vec<WindowValue>, DiurnalError> {
    if lag >= window {
        return Err(DiurnalError::InvalidLag { lag, window });
    }
    let speeds = series.speeds();
    let max_gaps = (MAX_GAP_FRACTION * window as f64).floor() as usize;
    let mut out = Vec::new();
    for (k, chunk) in speeds.chunks_exact(window).enumerate() {
        let valid: Vec<f64> = chunk.iter().flatten().copied().collect();
        if window - valid.len() > max_gaps {
            continue;
        }
        let mean = compensated_sum(valid.iter().copied()) / valid.len() as f64;
        let pairs: Vec<(f64, f64)> = (0..window - lag)
            .filter_map(|t| Some((chunk[t]? - mean, chunk[t + lag]? - mean)))
            .collect();
        let cross = compensated_sum(pairs.iter().map(|(a, b)| a * b));
        let lead = compensated_sum(pairs.iter().map(|(a, _)| a * a));
        let tail = compensated_sum(pairs.iter().map(|(_, b)| b * b));
        let denom = (lead * tail).sqrt();
        if pairs.is_empty() || denom.is_nan() || denom <= 0.0 {
            continue;
        }
        out.push(WindowValue {
            start: series.instant(k * window),
            value: (cross / denom).clamp(-1.0, 1.0),
            pairs: pairs.len(),
        });
    }
    if out.is_empty() {
        return Err(DiurnalError::SeriesTooShort);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiurnalRecord {
    /// `YYYY-MM` of the window starts.
    pub month: String,
    pub r_ss_24: f64,
    pub windows_used: usize,
}

/// Mean lag-24 h window correlation per calendar month of the window start.
pub fn monthly_diurnal_strength(series: &WindSeries) -> Result<Vec<DiurnalRecord>, DiurnalError> {
    monthly_strength(series, DAY_LAG, DEFAULT_WINDOW)
}

pub fn monthly_strength(series: &WindSeries, lag: usize, window: usize) -> Result<Vec<DiurnalRecord>, DiurnalError> {
    let mut months: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for w in windowed_autocorrelation(series, lag, window)? {
        months.entry(w.start.format("%Y-%m").to_string()).or_default().push(w.value);
    }
    Ok(months
        .into_iter()
        .map(|(month, values)| DiurnalRecord {
            month,
            r_ss_24: compensated_sum(values.iter().copied()) / values.len() as f64,
            windows_used: values.len(),
        })
        .collect())
}

/// `station,month,r_ss_24,windows_used`.
pub fn write_records_csv<W: Write>(station: &str, records: &[DiurnalRecord], writer: W) -> Result<(), DiurnalError> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| DiurnalError::Csv(e.to_string());
    w.write_record(["station", "month", "r_ss_24", "windows_used"]).map_err(err)?;
    for r in records {
        w.write_record([station, &r.month, &r.r_ss_24.to_string(), &r.windows_used.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| DiurnalError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2019, 5, 1, 0, 0, 0).unwrap()
    }

    fn from_values(values: &[f64]) -> WindSeries {
        WindSeries::from_speeds(t0(), &values.iter().map(|v| Some(*v)).collect::<Vec<_>>()).unwrap()
    }

    fn sinusoid(hours: usize) -> Vec<f64> {
        (0..hours).map(|t| 5.0 + 2.0 * (std::f64::consts::TAU * t as f64 / 24.0).sin()).collect()
    }

    #[test]
    fn lag_zero_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(4.0, 1.0).unwrap();
        let values: Vec<f64> = (0..600).map(|_| noise.sample(&mut rng)).collect();
        for w in windowed_autocorrelation(&from_values(&values), 0, 120).unwrap() {
            assert!((w.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_correlates_at_one_day() {
        let s = from_values(&sinusoid(31 * 24));
        let windows = windowed_autocorrelation(&s, 24, 120).unwrap();
        assert_eq!(windows.len(), 6);
        assert!(windows.iter().all(|w| w.value >= 0.99));
        let monthly = monthly_diurnal_strength(&s).unwrap();
        assert_eq!(monthly.len(), 1);
        assert_eq!(monthly[0].month, "2019-05");
        assert!((monthly[0].r_ss_24 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn white_noise_is_weak() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(5.0, 1.0).unwrap();
        let values: Vec<f64> = (0..120 * 60).map(|_| noise.sample(&mut rng)).collect();
        let w = windowed_autocorrelation(&from_values(&values), 24, 120).unwrap();
        let mean_abs = w.iter().map(|v| v.value.abs()).sum::<f64>() / w.len() as f64;
        assert!(mean_abs <= 0.25, "{mean_abs}");
    }

    #[test]
    fn gap_month_and_constant_series() {
        // 25 days of signal, 50 empty days covering June, 25 days of signal
        let mut values: Vec<Option<f64>> = sinusoid(600).into_iter().map(Some).collect();
        values.extend(std::iter::repeat_n(None, 1200));
        values.extend(sinusoid(600).into_iter().map(Some));
        let s = WindSeries::from_speeds(t0(), &values).unwrap();
        let months: Vec<String> = monthly_diurnal_strength(&s).unwrap().into_iter().map(|r| r.month).collect();
        assert_eq!(months, vec!["2019-05", "2019-07", "2019-08"]);

        let flat = from_values(&[3.0; 500]);
        assert_eq!(monthly_diurnal_strength(&flat), Err(DiurnalError::SeriesTooShort));
        assert_eq!(windowed_autocorrelation(&flat, 24, 24), Err(DiurnalError::InvalidLag { lag: 24, window: 24 }));
    }

    #[test]
    fn sparse_window_is_skipped() {
        let mut values: Vec<Option<f64>> = sinusoid(240).into_iter().map(Some).collect();
        for v in values.iter_mut().take(30) {
            *v = None;
        }
        let w = windowed_autocorrelation(&WindSeries::from_speeds(t0(), &values).unwrap(), 24, 120).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].start, t0() + chrono::Duration::hours(120));
    }

    proptest! {
        #[test]
        fn bounded_and_affine_invariant(seed in 0u64..1000, a in 0.1f64..10.0, b in 0.0f64..5.0, lag in 1usize..48) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 1.0).unwrap();
            let values: Vec<f64> = (0..480).map(|t| 6.0 + (t as f64 / 5.0).sin() + noise.sample(&mut rng)).collect();
            let base = windowed_autocorrelation(&from_values(&values), lag, 120).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| a * v + b).collect();
            let moved = windowed_autocorrelation(&from_values(&shifted), lag, 120).unwrap();
            prop_assert_eq!(base.len(), moved.len());
            for (u, v) in base.iter().zip(&moved) {
                prop_assert!(u.value.abs() <= 1.0 + 1e-9);
                prop_assert!((u.value - v.value).abs() <= 1e-9);
            }
        }
    }
}
