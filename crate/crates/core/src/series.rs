//! Anemometer ingestion and the gap-aware hourly wind series.
//!
//! Raw observations (speed plus an optional meteorological bearing) are
//! decomposed into zonal/meridional components, vector-averaged over a
//! centered one-hour window and laid out on a uniform hourly grid. Hours
//! without data are kept as explicit gaps, never interpolated.

use std::io::{Read, Write};

use chrono::{DateTime, Duration, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Spacing of every [`WindSeries`] grid.
pub const STEP_SECONDS: i64 = 3600;

/// Relative tolerance of the `s = sqrt(z^2 + m^2)` identity.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),
    #[error("speed and direction out of domain: speed={speed}, direction={direction}")]
    DomainError { speed: f64, direction: f64 },
    #[error("no observations to resample")]
    EmptyInput,
    #[error("timestamps are not strictly increasing on the hourly grid at row {0}")]
    NonMonotonicTimestamps(usize),
    #[error("max_gap must be at least one hour, got {0} s")]
    InvalidMaxGap(i64),
    #[error("cutoff {0} is not aligned to the hourly grid")]
    UnalignedCutoff(DateTime<Utc>),
    #[error("cutoff {0} leaves one side of the split without data")]
    CutoffOutsideRange(DateTime<Utc>),
    #[error("series has no non-gap slot")]
    AllGaps,
    #[error("invalid wind sample: {0}")]
    InvalidSample(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One measurement as exported by the logger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    pub timestamp: DateTime<Utc>,
    /// m/s, never negative.
    pub speed: f64,
    /// Bearing the wind blows from, degrees clockwise from north, in `[0, 360)`.
    pub direction: Option<f64>,
}

/// Hourly wind state. Components are absent when the source had no direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindSample {
    pub s: f64,
    pub components: Option<Components>,
}

/// Zonal (toward east) and meridional (toward north) wind, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub z: f64,
    pub m: f64,
}

impl WindSample {
    pub fn from_components(z: f64, m: f64) -> Self {
        WindSample {
            s: z.hypot(m),
            components: Some(Components { z, m }),
        }
    }

    pub fn speed_only(s: f64) -> Result<Self, SeriesError> {
        if !(s.is_finite() && s >= 0.0) {
            return Err(SeriesError::InvalidSample(format!("speed {s}")));
        }
        Ok(WindSample { s, components: None })
    }

    /// Checks `s >= 0` and, when components are present, the norm identity.
    pub fn validate(&self) -> Result<(), SeriesError> {
        if !(self.s.is_finite() && self.s >= 0.0) {
            return Err(SeriesError::InvalidSample(format!("speed {}", self.s)));
        }
        if let Some(c) = self.components {
            let norm = c.z.hypot(c.m);
            if !c.z.is_finite() || !c.m.is_finite() {
                return Err(SeriesError::InvalidSample("non-finite component".into()));
            }
            if (norm - self.s).abs() > NORM_TOLERANCE * self.s.max(norm) + 1e-12 {
                return Err(SeriesError::InvalidSample(format!(
                    "speed {} differs from component norm {}",
                    self.s, norm
                )));
            }
        }
        Ok(())
    }
}

/// Maps a speed and meteorological bearing (direction the wind comes from)
/// to `(z, m)`. A wind from 270 degrees blows toward the east: `z > 0`.
pub fn decompose(speed: f64, direction: f64) -> Result<(f64, f64), SeriesError> {
    if !(speed.is_finite() && speed >= 0.0 && (0.0..360.0).contains(&direction)) {
        return Err(SeriesError::DomainError { speed, direction });
    }
    let theta = direction.to_radians();
    Ok((-speed * theta.sin(), -speed * theta.cos()))
}

/// Uniform hourly series with explicit gaps. Slot `i` sits at `start + i` hours.
#[derive(Debug, Clone, PartialEq)]
pub struct WindSeries {
    start: DateTime<Utc>,
    slots: Vec<Option<WindSample>>,
}

impl WindSeries {
    pub fn new(start: DateTime<Utc>, slots: Vec<Option<WindSample>>) -> Result<Self, SeriesError> {
        if !is_hour_aligned(start) {
            return Err(SeriesError::UnalignedCutoff(start));
        }
        if slots.iter().all(Option::is_none) {
            return Err(SeriesError::AllGaps);
        }
        for sample in slots.iter().flatten() {
            sample.validate()?;
        }
        Ok(WindSeries { start, slots })
    }

    /// Builds a speed-only series (no components), `None` marking a gap.
    pub fn from_speeds(start: DateTime<Utc>, speeds: &[Option<f64>]) -> Result<Self, SeriesError> {
        let slots = speeds
            .iter()
            .map(|s| s.map(WindSample::speed_only).transpose())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(start, slots)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn step(&self) -> Duration {
        Duration::seconds(STEP_SECONDS)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Option<WindSample>] {
        &self.slots
    }

    pub fn get(&self, index: usize) -> Option<&WindSample> {
        self.slots.get(index).and_then(Option::as_ref)
    }

    pub fn instant(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(STEP_SECONDS * index as i64)
    }

    /// Slot index of an instant, if it falls exactly on the grid (it may lie
    /// outside the series).
    pub fn index_of(&self, instant: DateTime<Utc>) -> Option<i64> {
        let secs = (instant - self.start).num_seconds();
        if secs.rem_euclid(STEP_SECONDS) != 0 || instant.timestamp_subsec_nanos() != 0 {
            return None;
        }
        Some(secs.div_euclid(STEP_SECONDS))
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.instant(self.slots.len())
    }

    pub fn valid_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Speeds with `None` for gaps.
    pub fn speeds(&self) -> Vec<Option<f64>> {
        self.slots.iter().map(|s| s.map(|w| w.s)).collect()
    }

    /// Splits into slots strictly before `cutoff` and the rest.
    pub fn split_at(&self, cutoff: DateTime<Utc>) -> Result<(WindSeries, WindSeries), SeriesError> {
        if !is_hour_aligned(cutoff) {
            return Err(SeriesError::UnalignedCutoff(cutoff));
        }
        let idx = self
            .index_of(cutoff)
            .ok_or(SeriesError::UnalignedCutoff(cutoff))?;
        if idx <= 0 || idx >= self.slots.len() as i64 {
            return Err(SeriesError::CutoffOutsideRange(cutoff));
        }
        let idx = idx as usize;
        let (left, right) = self.slots.split_at(idx);
        if left.iter().all(Option::is_none) || right.iter().all(Option::is_none) {
            return Err(SeriesError::CutoffOutsideRange(cutoff));
        }
        Ok((
            WindSeries { start: self.start, slots: left.to_vec() },
            WindSeries { start: cutoff, slots: right.to_vec() },
        ))
    }

    /// Appends `later`, which must start exactly where `self` ends.
    pub fn concat(&self, later: &WindSeries) -> Result<WindSeries, SeriesError> {
        if later.start != self.end() {
            return Err(SeriesError::NonMonotonicTimestamps(self.slots.len()));
        }
        let mut slots = self.slots.clone();
        slots.extend_from_slice(&later.slots);
        Ok(WindSeries { start: self.start, slots })
    }

    /// Writes the canonical `timestamp,s,z,m` form; gaps are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SeriesError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "s", "z", "m"])?;
        for (i, slot) in self.slots.iter().enumerate() {
            let ts = format_instant(self.instant(i));
            match slot {
                None => w.write_record([ts.as_str(), "", "", ""])?,
                Some(sample) => {
                    let (z, m) = match sample.components {
                        Some(c) => (c.z.to_string(), c.m.to_string()),
                        None => (String::new(), String::new()),
                    };
                    w.write_record([ts, sample.s.to_string(), z, m])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the canonical form written by [`WindSeries::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<WindSeries, SeriesError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SeriesError::MissingColumn(name.to_string()))
        };
        let (ct, cs, cz, cm) = (col("timestamp")?, col("s")?, col("z")?, col("m")?);
        let mut start = None;
        let mut slots = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let ts = parse_timestamp(record.get(ct).unwrap_or(""))
                .map_err(|e| SeriesError::InvalidSample(format!("row {row}: {e}")))?;
            let start = *start.get_or_insert(ts);
            if ts != start + Duration::seconds(STEP_SECONDS * slots.len() as i64) {
                return Err(SeriesError::NonMonotonicTimestamps(row));
            }
            let field = |c: usize| -> Result<Option<f64>, SeriesError> {
                let v = record.get(c).unwrap_or("");
                if v.is_empty() {
                    return Ok(None);
                }
                v.parse::<f64>()
                    .map(Some)
                    .map_err(|e| SeriesError::InvalidSample(format!("row {row}: {e}")))
            };
            let slot = match (field(cs)?, field(cz)?, field(cm)?) {
                (None, _, _) => None,
                (Some(s), Some(z), Some(m)) => {
                    Some(WindSample { s, components: Some(Components { z, m }) })
                }
                (Some(s), _, _) => Some(WindSample { s, components: None }),
            };
            slots.push(slot);
        }
        let start = start.ok_or(SeriesError::EmptyInput)?;
        WindSeries::new(start, slots)
    }
}

fn is_hour_aligned(t: DateTime<Utc>) -> bool {
    t.timestamp().rem_euclid(STEP_SECONDS) == 0 && t.timestamp_subsec_nanos() == 0
}

pub fn format_instant(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Accepts RFC 3339 or naive ISO-8601 (`T` or space separated, with or
/// without seconds); naive values are read as UTC.
pub fn parse_timestamp(text: &str) -> Result<DateTime<Utc>, String> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%d %H:%M"];
    for fmt in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("unrecognised timestamp `{text}`"))
}

/// Column names of a raw anemometer export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time: String,
    pub speed: String,
    pub direction: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            time: "timestamp".into(),
            speed: "speed".into(),
            direction: Some("direction".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowIssue {
    Malformed(String),
    NegativeSpeed(f64),
}

/// A rejected data row; `index` is 0-based over data rows (header excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub index: usize,
    pub issue: RowIssue,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub observations: Vec<RawObservation>,
    pub errors: Vec<RowError>,
}

/// Parses a raw export. Bad rows are listed in the report, never dropped
/// silently; missing schema columns abort.
pub fn parse_csv<R: Read>(source: R, schema: &CsvSchema) -> Result<ParseReport, SeriesError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SeriesError::MissingColumn(name.to_string()))
    };
    let time_col = find(&schema.time)?;
    let speed_col = find(&schema.speed)?;
    let dir_col = schema.direction.as_deref().map(find).transpose()?;

    let mut report = ParseReport::default();
    for (index, record) in reader.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(RowError { index, issue: RowIssue::Malformed(e.to_string()) });
                continue;
            }
        };
        match parse_row(&record, time_col, speed_col, dir_col) {
            Ok(obs) => report.observations.push(obs),
            Err(issue) => report.errors.push(RowError { index, issue }),
        }
    }
    Ok(report)
}

fn parse_row(
    record: &csv::StringRecord,
    time_col: usize,
    speed_col: usize,
    dir_col: Option<usize>,
) -> Result<RawObservation, RowIssue> {
    let get = |c: usize| record.get(c).ok_or_else(|| RowIssue::Malformed(format!("missing field {c}")));
    let timestamp = parse_timestamp(get(time_col)?).map_err(RowIssue::Malformed)?;
    let speed: f64 = get(speed_col)?
        .parse()
        .map_err(|e| RowIssue::Malformed(format!("speed: {e}")))?;
    if !speed.is_finite() {
        return Err(RowIssue::Malformed("non-finite speed".into()));
    }
    if speed < 0.0 {
        return Err(RowIssue::NegativeSpeed(speed));
    }
    let direction = match dir_col {
        None => None,
        Some(c) => {
            let text = get(c)?;
            if text.is_empty() {
                None
            } else {
                let d: f64 = text
                    .parse()
                    .map_err(|e| RowIssue::Malformed(format!("direction: {e}")))?;
                // 360 is a common logger spelling of north
                let d = if d == 360.0 { 0.0 } else { d };
                if !(0.0..360.0).contains(&d) {
                    return Err(RowIssue::Malformed(format!("direction {d} outside [0, 360)")));
                }
                Some(d)
            }
        }
    };
    Ok(RawObservation { timestamp, speed, direction })
}

/// Resamples raw observations to the hourly grid.
///
/// Slot `H` averages the observations in `[H - 30 min, H + 30 min)`. Components
/// are averaged first and the speed recomputed from the mean vector; if any
/// observation in the window has no direction the slot keeps only the scalar
/// mean speed. An empty window becomes a gap unless `max_gap` exceeds one hour,
/// in which case the window widens to `H +- max_gap / 2` before giving up.
/// Observations sharing a timestamp are merged into their mean first.
pub fn resample_hourly(obs: &[RawObservation], max_gap: Duration) -> Result<WindSeries, SeriesError> {
    if obs.is_empty() {
        return Err(SeriesError::EmptyInput);
    }
    if max_gap < Duration::seconds(STEP_SECONDS) {
        return Err(SeriesError::InvalidMaxGap(max_gap.num_seconds()));
    }
    let points = merge_duplicates(obs)?;

    let half = STEP_SECONDS / 2;
    let slot_of = |t: i64| (t + half).div_euclid(STEP_SECONDS);
    let first_slot = slot_of(points[0].t);
    let last_slot = slot_of(points[points.len() - 1].t);
    let wide_half = max_gap.num_seconds() / 2;

    let times: Vec<i64> = points.iter().map(|p| p.t).collect();
    let mut slots = Vec::with_capacity((last_slot - first_slot + 1) as usize);
    for slot in first_slot..=last_slot {
        let center = slot * STEP_SECONDS;
        let mut window = range_of(&times, center - half, center + half);
        if window.is_empty() && wide_half > half {
            window = range_of(&times, center - wide_half, center + wide_half);
        }
        slots.push(average(&points[window]));
    }
    let start = DateTime::<Utc>::from_timestamp(first_slot * STEP_SECONDS, 0)
        .ok_or(SeriesError::EmptyInput)?;
    WindSeries::new(start, slots)
}

#[derive(Debug, Clone, Copy)]
struct Point {
    t: i64,
    s: f64,
    zm: Option<(f64, f64)>,
}

fn merge_duplicates(obs: &[RawObservation]) -> Result<Vec<Point>, SeriesError> {
    let mut sorted: Vec<&RawObservation> = obs.iter().collect();
    sorted.sort_by_key(|o| o.timestamp);
    let mut points: Vec<Point> = Vec::with_capacity(sorted.len());
    let mut group: Vec<Point> = Vec::new();
    let flush = |group: &mut Vec<Point>, points: &mut Vec<Point>| {
        if let Some(p) = average(group) {
            points.push(Point {
                t: group[0].t,
                s: p.s,
                zm: p.components.map(|c| (c.z, c.m)),
            });
        }
        group.clear();
    };
    for o in sorted {
        let t = o.timestamp.timestamp();
        let zm = o.direction.map(|d| decompose(o.speed, d)).transpose()?;
        if let Some(last) = group.last() {
            if last.t != t {
                flush(&mut group, &mut points);
            }
        }
        group.push(Point { t, s: o.speed, zm });
    }
    flush(&mut group, &mut points);
    Ok(points)
}

fn range_of(times: &[i64], lo: i64, hi: i64) -> std::ops::Range<usize> {
    let a = times.partition_point(|&t| t < lo);
    let b = times.partition_point(|&t| t < hi);
    a..b
}

fn average(points: &[Point]) -> Option<WindSample> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    if points.iter().all(|p| p.zm.is_some()) {
        let (sz, sm) = points
            .iter()
            .filter_map(|p| p.zm)
            .fold((0.0, 0.0), |(a, b), (z, m)| (a + z, b + m));
        Some(WindSample::from_components(sz / n, sm / n))
    } else {
        let s = points.iter().map(|p| p.s).sum::<f64>() / n;
        Some(WindSample { s, components: None })
    }
}

/// Floors an instant to the start of its hour.
pub fn floor_hour(t: DateTime<Utc>) -> DateTime<Utc> {
    t.with_nanosecond(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_minute(0))
        .unwrap_or(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn parse_single_row() {
        let text = "timestamp,speed,direction\n2015-01-01T00:00,3.0,90\n";
        let report = parse_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert!(report.errors.is_empty());
        assert_eq!(report.observations.len(), 1);
        let o = report.observations[0];
        assert_eq!(o.timestamp, t0());
        assert_eq!(o.speed, 3.0);
        assert_eq!(o.direction, Some(90.0));
    }

    #[test]
    fn parse_empty_body() {
        let report = parse_csv("timestamp,speed,direction\n".as_bytes(), &CsvSchema::default()).unwrap();
        assert!(report.observations.is_empty());
        assert!(report.errors.is_empty());
    }

    #[test]
    fn parse_negative_speed_is_reported() {
        let text = "timestamp,speed,direction\n2015-01-01T00:00,1.0,0\n2015-01-01T01:00,-1.0,0\n";
        let report = parse_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(report.observations.len(), 1);
        assert_eq!(
            report.errors,
            vec![RowError { index: 1, issue: RowIssue::NegativeSpeed(-1.0) }]
        );
    }

    #[test]
    fn parse_missing_column() {
        let schema = CsvSchema { speed: "ws".into(), ..CsvSchema::default() };
        let err = parse_csv("timestamp,speed\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, SeriesError::MissingColumn(c) if c == "ws"));
    }

    #[test]
    fn parse_malformed_rows_are_collected() {
        let text = "timestamp,speed,direction\nyesterday,1,0\n2015-01-01T00:00,abc,0\n2015-01-01T00:00,1,400\n";
        let report = parse_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert!(report.observations.is_empty());
        assert_eq!(report.errors.iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(report.errors.iter().all(|e| matches!(e.issue, RowIssue::Malformed(_))));
    }

    #[test]
    fn decompose_axis_cases() {
        let (z, m) = decompose(1.0, 270.0).unwrap();
        assert!((z - 1.0).abs() < 1e-12 && m.abs() < 1e-12);
        assert_eq!(decompose(0.0, 123.0).unwrap(), (-0.0, -0.0));
        let (z, m) = decompose(2.0, 180.0).unwrap();
        assert!(z.abs() < 1e-12 && (m - 2.0).abs() < 1e-12);
    }

    #[test]
    fn decompose_rejects_out_of_domain() {
        assert!(decompose(-1.0, 0.0).is_err());
        assert!(decompose(1.0, 360.0).is_err());
        assert!(decompose(1.0, -0.5).is_err());
    }

    fn obs(t: DateTime<Utc>, speed: f64, direction: f64) -> RawObservation {
        RawObservation { timestamp: t, speed, direction: Some(direction) }
    }

    #[test]
    fn resample_constant_input() {
        let raw: Vec<_> = (0..60).map(|i| obs(t0() + Duration::minutes(10 * i), 5.0, 90.0)).collect();
        let series = resample_hourly(&raw, Duration::hours(1)).unwrap();
        let (z, m) = decompose(5.0, 90.0).unwrap();
        for slot in series.slots() {
            let c = slot.unwrap().components.unwrap();
            assert!((c.z - z).abs() < 1e-12 && (c.m - m).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_averages_components() {
        // z = 1..6 toward the east (bearing 270), all in the window centred on 12:00
        let base = Utc.with_ymd_and_hms(2015, 1, 1, 11, 35, 0).unwrap();
        let raw: Vec<_> = (1..=6).map(|k| obs(base + Duration::minutes(10 * (k - 1)), k as f64, 270.0)).collect();
        let series = resample_hourly(&raw, Duration::hours(1)).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series.start(), Utc.with_ymd_and_hms(2015, 1, 1, 12, 0, 0).unwrap());
        let s = series.get(0).unwrap();
        let c = s.components.unwrap();
        assert!((c.z - 3.5).abs() < 1e-12);
        assert!(c.m.abs() < 1e-12);
        assert!((s.s - 3.5).abs() < 1e-12);
    }

    #[test]
    fn resample_marks_holes_as_gaps() {
        let mut raw = vec![obs(t0(), 1.0, 0.0)];
        raw.push(obs(t0() + Duration::hours(4), 1.0, 0.0));
        let series = resample_hourly(&raw, Duration::hours(1)).unwrap();
        assert_eq!(series.len(), 5);
        assert_eq!(series.slots().iter().filter(|s| s.is_none()).count(), 3);
        assert!(series.slots()[1..4].iter().all(Option::is_none));
    }

    #[test]
    fn resample_wider_max_gap_bridges_short_holes() {
        let raw = vec![obs(t0(), 1.0, 0.0), obs(t0() + Duration::minutes(100), 1.0, 0.0)];
        let series = resample_hourly(&raw, Duration::hours(3)).unwrap();
        assert!(series.slots().iter().all(Option::is_some));
    }

    #[test]
    fn resample_merges_duplicates_before_averaging() {
        let raw = vec![
            obs(t0(), 2.0, 270.0),
            obs(t0(), 4.0, 270.0),
            obs(t0() + Duration::minutes(10), 6.0, 270.0),
        ];
        let series = resample_hourly(&raw, Duration::hours(1)).unwrap();
        // duplicates collapse to 3, then (3 + 6) / 2
        assert!((series.get(0).unwrap().s - 4.5).abs() < 1e-12);
    }

    #[test]
    fn resample_without_direction_keeps_scalar_speed() {
        let raw = vec![
            RawObservation { timestamp: t0(), speed: 2.0, direction: None },
            RawObservation { timestamp: t0() + Duration::minutes(10), speed: 4.0, direction: Some(0.0) },
        ];
        let series = resample_hourly(&raw, Duration::hours(1)).unwrap();
        let s = series.get(0).unwrap();
        assert_eq!(s.s, 3.0);
        assert!(s.components.is_none());
    }

    #[test]
    fn resample_empty_and_bad_gap() {
        assert!(matches!(resample_hourly(&[], Duration::hours(1)), Err(SeriesError::EmptyInput)));
        let raw = vec![obs(t0(), 1.0, 0.0)];
        assert!(matches!(
            resample_hourly(&raw, Duration::minutes(30)),
            Err(SeriesError::InvalidMaxGap(_))
        ));
    }

    fn ten_slot_series() -> WindSeries {
        let speeds: Vec<_> = (0..10).map(|i| Some(i as f64)).collect();
        WindSeries::from_speeds(t0(), &speeds).unwrap()
    }

    #[test]
    fn split_basic() {
        let series = ten_slot_series();
        let (a, b) = series.split_at(t0() + Duration::hours(7)).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(b.start(), t0() + Duration::hours(7));
        assert_eq!(b.get(0).unwrap().s, 7.0);
    }

    #[test]
    fn split_errors() {
        let series = ten_slot_series();
        assert!(matches!(series.split_at(t0()), Err(SeriesError::CutoffOutsideRange(_))));
        assert!(matches!(
            series.split_at(t0() + Duration::hours(10)),
            Err(SeriesError::CutoffOutsideRange(_))
        ));
        assert!(matches!(
            series.split_at(t0() + Duration::minutes(90)),
            Err(SeriesError::UnalignedCutoff(_))
        ));
    }

    #[test]
    fn canonical_csv_round_trip() {
        let slots = vec![
            Some(WindSample::from_components(1.5, -2.0)),
            None,
            Some(WindSample::speed_only(3.25).unwrap()),
        ];
        let series = WindSeries::new(t0(), slots).unwrap();
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,s,z,m\n"));
        assert!(text.contains("2015-01-01T01:00:00Z,,,\n"));
        let back = WindSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, series);
    }

    proptest! {
        #[test]
        fn decompose_preserves_norm(speed in 0.0f64..60.0, direction in 0.0f64..360.0) {
            let (z, m) = decompose(speed, direction).unwrap();
            prop_assert!((z.hypot(m) - speed).abs() <= 1e-9 * speed.max(1e-12));
        }

        #[test]
        fn resample_is_identity_on_hourly_data(
            comps in proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..40)
        ) {
            let raw: Vec<RawObservation> = comps
                .iter()
                .enumerate()
                .map(|(i, &(z, m))| {
                    let s = z.hypot(m);
                    let mut dir = (-z).atan2(-m).to_degrees();
                    if dir < 0.0 { dir += 360.0; }
                    if dir >= 360.0 { dir = 0.0; }
                    obs(t0() + Duration::hours(i as i64), s, dir)
                })
                .collect();
            let series = resample_hourly(&raw, Duration::hours(1)).unwrap();
            prop_assert_eq!(series.len(), comps.len());
            for (slot, &(z, m)) in series.slots().iter().zip(&comps) {
                let c = slot.unwrap().components.unwrap();
                prop_assert!((c.z - z).abs() < 1e-12 && (c.m - m).abs() < 1e-12);
            }
        }

        #[test]
        fn split_then_concat_reconstructs(
            mask in proptest::collection::vec(any::<bool>(), 2..50),
            cut in 1usize..49,
        ) {
            let speeds: Vec<Option<f64>> = mask.iter().enumerate()
                .map(|(i, &keep)| keep.then_some(i as f64)).collect();
            prop_assume!(cut < speeds.len());
            let Ok(series) = WindSeries::from_speeds(t0(), &speeds) else { return Ok(()); };
            match series.split_at(series.instant(cut)) {
                Ok((a, b)) => {
                    prop_assert_eq!(a.concat(&b).unwrap(), series.clone());
                    for i in 0..b.len() {
                        prop_assert_eq!(b.instant(i), series.instant(cut + i));
                    }
                }
                Err(SeriesError::CutoffOutsideRange(_)) => {
                    let left = speeds[..cut].iter().all(Option::is_none);
                    let right = speeds[cut..].iter().all(Option::is_none);
                    prop_assert!(left || right);
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
