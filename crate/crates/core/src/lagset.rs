//! Lag-matrix construction for the three input/output designs.
//!
//! Row `t` of a dataset holds the `memory` most recent hours up to and
//! including the anchor `t`; its target is taken at exactly `t + horizon`.
//! A row is emitted only if every slot it touches is present.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{format_instant, WindSample, WindSeries, STEP_SECONDS};

#[derive(Debug, Error)]
pub enum LagError {
    #[error("horizon and memory must be at least 1 (got h={horizon}, mu={memory})")]
    InvalidSpec { horizon: usize, memory: usize },
    #[error("no valid samples for {0}")]
    NoValidSamples(DesignSpec),
    #[error("unknown design `{0}` (expected ss, zm-s or zm-zm)")]
    UnknownDesign(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which variables feed the model and which it predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Design {
    /// speed history -> speed
    #[serde(rename = "ss")]
    Ss,
    /// component history -> speed
    #[serde(rename = "zm-s")]
    ZmS,
    /// component history -> both components, speed reconstructed
    #[serde(rename = "zm-zm")]
    ZmZm,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::Ss, Design::ZmS, Design::ZmZm];

    /// Features per hour.
    pub fn inputs_per_step(self) -> usize {
        match self {
            Design::Ss => 1,
            Design::ZmS | Design::ZmZm => 2,
        }
    }

    pub fn outputs(self) -> usize {
        match self {
            Design::Ss | Design::ZmS => 1,
            Design::ZmZm => 2,
        }
    }

    pub fn needs_components(self) -> bool {
        self != Design::Ss
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Design::Ss => "ss",
            Design::ZmS => "zm-s",
            Design::ZmZm => "zm-zm",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Design {
    type Err = LagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ss" | "s-s" => Ok(Design::Ss),
            "zm-s" | "zms" | "zm_s" => Ok(Design::ZmS),
            "zm-zm" | "zmzm" | "zm_zm" => Ok(Design::ZmZm),
            _ => Err(LagError::UnknownDesign(s.to_string())),
        }
    }
}

/// A forecasting task: design, horizon (hours ahead) and memory (hours of input).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DesignSpec {
    pub design: Design,
    pub horizon: usize,
    pub memory: usize,
}

impl DesignSpec {
    pub fn new(design: Design, horizon: usize, memory: usize) -> Result<Self, LagError> {
        if horizon == 0 || memory == 0 {
            return Err(LagError::InvalidSpec { horizon, memory });
        }
        Ok(DesignSpec { design, horizon, memory })
    }

    pub fn n_features(&self) -> usize {
        self.memory * self.design.inputs_per_step()
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} h={} mu={}", self.design, self.horizon, self.memory)
    }
}

/// Supervised view of a series for one [`DesignSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct LagDataset {
    pub spec: DesignSpec,
    /// n x d, chronological; ZM inputs interleaved `(z, m)` per hour.
    pub x: DMatrix<f64>,
    /// n x q; speed for `ss`/`zm-s`, `(z, m)` for `zm-zm`.
    pub y: DMatrix<f64>,
    /// Observed speed at each target instant, whatever the design.
    pub target_speed: Vec<f64>,
    /// Anchor instants `t`.
    pub anchors: Vec<DateTime<Utc>>,
}

impl LagDataset {
    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.ncols()
    }

    pub fn target_instant(&self, row: usize) -> DateTime<Utc> {
        self.anchors[row] + Duration::seconds(STEP_SECONDS * self.spec.horizon as i64)
    }

    pub fn target_instants(&self) -> Vec<DateTime<Utc>> {
        (0..self.n_samples()).map(|r| self.target_instant(r)).collect()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> LagDataset {
        LagDataset {
            spec: self.spec,
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            target_speed: rows.iter().map(|&r| self.target_speed[r]).collect(),
            anchors: rows.iter().map(|&r| self.anchors[r]).collect(),
        }
    }

    /// Contiguous row range.
    pub fn slice(&self, range: std::ops::Range<usize>) -> LagDataset {
        let rows: Vec<usize> = range.collect();
        self.select_rows(&rows)
    }

    /// Rows whose target lies strictly before `cutoff`, and the rest. Training
    /// rows therefore never see a value at or after the cutoff; test rows may
    /// draw features from before it.
    pub fn split_by_target(&self, cutoff: DateTime<Utc>) -> (LagDataset, LagDataset) {
        let first_test = self.partition_point_by_target(cutoff);
        (self.slice(0..first_test), self.slice(first_test..self.n_samples()))
    }

    /// Number of leading rows whose target instant is before `instant`.
    pub fn partition_point_by_target(&self, instant: DateTime<Utc>) -> usize {
        let h = Duration::seconds(STEP_SECONDS * self.spec.horizon as i64);
        self.anchors.partition_point(|&a| a + h < instant)
    }

    /// Dumps `anchor, x_0..x_{d-1}, y_0[, y_1]`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LagError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["anchor".to_string()];
        header.extend((0..self.n_features()).map(|j| format!("x_{j}")));
        header.extend((0..self.n_outputs()).map(|j| format!("y_{j}")));
        w.write_record(&header)?;
        for r in 0..self.n_samples() {
            let mut rec = vec![format_instant(self.anchors[r])];
            rec.extend(self.x.row(r).iter().map(f64::to_string));
            rec.extend(self.y.row(r).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn usable(slot: &Option<WindSample>, design: Design) -> bool {
    match slot {
        None => false,
        Some(s) => !design.needs_components() || s.components.is_some(),
    }
}

/// Builds the lag dataset of `spec` over `series`.
///
/// A slot with no components counts as missing for `zm-*` designs.
pub fn build(series: &WindSeries, spec: DesignSpec) -> Result<LagDataset, LagError> {
    let DesignSpec { design, horizon, memory } = DesignSpec::new(spec.design, spec.horizon, spec.memory)?;
    let slots = series.slots();
    let len = slots.len();
    let ok: Vec<bool> = slots.iter().map(|s| usable(s, design)).collect();

    // run[i] = number of consecutive usable slots ending at i
    let mut run = vec![0usize; len];
    let mut current = 0;
    for i in 0..len {
        current = if ok[i] { current + 1 } else { 0 };
        run[i] = current;
    }

    let anchors: Vec<usize> = if len < memory + horizon {
        Vec::new()
    } else {
        (memory - 1..len - horizon)
            .filter(|&t| run[t] >= memory && ok[t + horizon])
            .collect()
    };
    if anchors.is_empty() {
        return Err(LagError::NoValidSamples(spec));
    }

    let n = anchors.len();
    let d = spec.n_features();
    let q = design.outputs();
    let mut x = DMatrix::<f64>::zeros(n, d);
    let mut y = DMatrix::<f64>::zeros(n, q);
    let mut target_speed = Vec::with_capacity(n);
    for (row, &t) in anchors.iter().enumerate() {
        for (lag, slot) in slots[t + 1 - memory..=t].iter().enumerate() {
            let s = slot.as_ref().expect("checked usable");
            match design {
                Design::Ss => x[(row, lag)] = s.s,
                Design::ZmS | Design::ZmZm => {
                    let c = s.components.expect("checked usable");
                    x[(row, 2 * lag)] = c.z;
                    x[(row, 2 * lag + 1)] = c.m;
                }
            }
        }
        let target = slots[t + horizon].as_ref().expect("checked usable");
        target_speed.push(target.s);
        match design {
            Design::Ss | Design::ZmS => y[(row, 0)] = target.s,
            Design::ZmZm => {
                let c = target.components.expect("checked usable");
                y[(row, 0)] = c.z;
                y[(row, 1)] = c.m;
            }
        }
    }
    Ok(LagDataset {
        spec,
        x,
        y,
        target_speed,
        anchors: anchors.iter().map(|&t| series.instant(t)).collect(),
    })
}

/// Speed from predicted components.
pub fn reconstruct_speed(z_hat: f64, m_hat: f64) -> f64 {
    z_hat.hypot(m_hat)
}
