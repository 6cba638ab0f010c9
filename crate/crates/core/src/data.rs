//! Hourly well records: CSV ingest, gap handling, min-max scaling and supervised windows.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InputWindow;
use crate::numerics::{Matrix, Vector};

/// Exact header of a well CSV file.
pub const CSV_HEADER: [&str; 4] = ["timestamp", "rainfall_mm", "tide_m", "gwl_m"];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:00:00Z").to_string()
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let naive = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map_err(|e| Error::Invalid(format!("bad timestamp {s:?}: {e}")))?;
    if naive.minute() != 0 || naive.second() != 0 {
        return Err(Error::Invalid(format!("timestamp {s:?} is not on the hour")));
    }
    Ok(naive.and_utc())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub timestamp: DateTime<Utc>,
    /// mm per hour
    pub rainfall: f64,
    /// metres relative to datum
    pub tide: f64,
    /// metres relative to datum
    pub gwl: f64,
}

impl Record {
    pub fn channel(&self, c: Channel) -> f64 {
        match c {
            Channel::Rainfall => self.rainfall,
            Channel::Tide => self.tide,
            Channel::Gwl => self.gwl,
        }
    }
}

/// Time-ordered hourly records of one well.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesFrame {
    pub well_id: String,
    rows: Vec<Record>,
}

impl TimeSeriesFrame {
    /// Sorts `rows` by time; rejects duplicate timestamps, negative rain and non-finite values.
    pub fn new(well_id: impl Into<String>, mut rows: Vec<Record>) -> Result<Self> {
        for r in &rows {
            check_record(r)?;
        }
        rows.sort_by_key(|r| r.timestamp);
        if let Some(w) = rows.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
            return Err(Error::Invalid(format!(
                "duplicate timestamp {}",
                format_timestamp(&w[0].timestamp)
            )));
        }
        Ok(TimeSeriesFrame {
            well_id: well_id.into(),
            rows,
        })
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rainfall(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rainfall).collect()
    }

    pub fn gwl(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gwl).collect()
    }

    /// True when consecutive rows are exactly one hour apart.
    pub fn is_contiguous(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].timestamp - w[0].timestamp == TimeDelta::hours(1))
    }

    /// Rows `[start, end)` as a new frame of the same well.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeriesFrame {
        TimeSeriesFrame {
            well_id: self.well_id.clone(),
            rows: self.rows[start..end].to_vec(),
        }
    }

    /// Writes the canonical CSV form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_err = |e: csv::Error| Error::Invalid(format!("csv write: {e}"));
        w.write_record(CSV_HEADER).map_err(to_err)?;
        for r in &self.rows {
            w.write_record([
                format_timestamp(&r.timestamp),
                r.rainfall.to_string(),
                r.tide.to_string(),
                r.gwl.to_string(),
            ])
            .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::Invalid(format!("csv write: {e}")))?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_record(r: &Record) -> Result<()> {
    if !(r.rainfall.is_finite() && r.tide.is_finite() && r.gwl.is_finite()) {
        return Err(Error::Invalid(format!(
            "non-finite value at {}",
            format_timestamp(&r.timestamp)
        )));
    }
    if r.rainfall < 0.0 {
        return Err(Error::Invalid(format!(
            "negative rainfall {} at {}",
            r.rainfall,
            format_timestamp(&r.timestamp)
        )));
    }
    Ok(())
}

/// Parses a well CSV. Line numbers in errors are 1-based and count the header.
pub fn ingest_csv<R: Read>(source: R, well_id: &str) -> Result<TimeSeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must be {:?}", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse { line, msg };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", rec.len())));
        }
        let timestamp = parse_timestamp(&rec[0]).map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            let v: f64 = rec[i]
                .parse()
                .map_err(|_| bad(format!("{} is not a number: {:?}", CSV_HEADER[i], &rec[i])))?;
            if !v.is_finite() {
                return Err(bad(format!("{} is not finite", CSV_HEADER[i])));
            }
            Ok(v)
        };
        let record = Record {
            timestamp,
            rainfall: num(1)?,
            tide: num(2)?,
            gwl: num(3)?,
        };
        if record.rainfall < 0.0 {
            return Err(bad(format!("negative rainfall {}", record.rainfall)));
        }
        if let Some(prev) = seen.insert(timestamp, line) {
            return Err(bad(format!(
                "duplicate timestamp {} (first seen on line {prev})",
                &rec[0]
            )));
        }
        rows.push(record);
    }
    TimeSeriesFrame::new(well_id, rows)
}

/// Reads a well CSV; the well id is the file stem.
pub fn ingest_csv_path(path: &Path) -> Result<TimeSeriesFrame> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let well_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ingest_csv(std::io::BufReader::new(file), &well_id)
}

/// Splits a frame into strictly hourly segments.
///
/// Runs of at most `max_fill` missing hours are filled by linear interpolation
/// between the neighbouring rows; longer gaps end a segment.
pub fn segment_gaps(frame: &TimeSeriesFrame, max_fill: usize) -> Vec<TimeSeriesFrame> {
    let mut segments = Vec::new();
    let mut current: Vec<Record> = Vec::new();
    for r in frame.rows() {
        if let Some(prev) = current.last().copied() {
            let missing = (r.timestamp - prev.timestamp).num_hours() - 1;
            if missing as usize > max_fill {
                segments.push(std::mem::take(&mut current));
            } else {
                let span = (missing + 1) as f64;
                for k in 1..=missing {
                    let a = k as f64 / span;
                    current.push(Record {
                        timestamp: prev.timestamp + TimeDelta::hours(k),
                        rainfall: prev.rainfall + a * (r.rainfall - prev.rainfall),
                        tide: prev.tide + a * (r.tide - prev.tide),
                        gwl: prev.gwl + a * (r.gwl - prev.gwl),
                    });
                }
            }
        }
        current.push(*r);
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
        .into_iter()
        .map(|rows| TimeSeriesFrame {
            well_id: frame.well_id.clone(),
            rows,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Rainfall,
    Tide,
    Gwl,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Rainfall, Channel::Tide, Channel::Gwl];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Rainfall => "rainfall",
            Channel::Tide => "tide",
            Channel::Gwl => "gwl",
        })
    }
}

/// Per-channel min-max scaling to `[0, 1]`, fitted on training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    /// rainfall, tide, gwl
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Normalizer {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for c in Channel::ALL {
            let i = c.index();
            if !(min[i].is_finite() && max[i].is_finite()) || max[i] <= min[i] {
                return Err(Error::Invalid(format!(
                    "{c} channel is constant or invalid on the training rows (min {}, max {})",
                    min[i], max[i]
                )));
            }
        }
        Ok(Normalizer { min, max })
    }

    pub fn apply(&self, c: Channel, x: f64) -> f64 {
        let i = c.index();
        (x - self.min[i]) / (self.max[i] - self.min[i])
    }

    pub fn invert(&self, c: Channel, y: f64) -> f64 {
        let i = c.index();
        self.min[i] + y * (self.max[i] - self.min[i])
    }
}

pub fn fit_normalizer(train_segments: &[TimeSeriesFrame]) -> Result<Normalizer> {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut n = 0usize;
    for r in train_segments.iter().flat_map(|s| s.rows()) {
        for c in Channel::ALL {
            let v = r.channel(c);
            min[c.index()] = min[c.index()].min(v);
            max[c.index()] = max[c.index()].max(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Invalid("no training rows to fit the normalizer".into()));
    }
    Normalizer::new(min, max)
}

/// Which training regime a dataset or model belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Continuous record, storm and non-storm hours alike.
    Full,
    /// Storm-event windows only.
    Storm,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Full => "full",
            Provenance::Storm => "storm",
        })
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Provenance::Full),
            "storm" => Ok(Provenance::Storm),
            other => Err(Error::Invalid(format!("unknown regime {other:?}"))),
        }
    }
}

/// Where a window came from: segment index and row offset of its first past row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowSource {
    pub segment: usize,
    pub offset: usize,
}

impl WindowSource {
    /// Row range of the target block, `[start, end)`.
    pub fn target_rows(&self, lookback: usize, horizon: usize) -> std::ops::Range<usize> {
        self.offset + lookback..self.offset + lookback + horizon
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: InputWindow,
    /// Normalised groundwater level over the horizon.
    pub target: Vector,
    pub source: WindowSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedDataset {
    pub samples: Vec<Sample>,
    pub lookback: usize,
    pub horizon: usize,
    pub normalizer: Normalizer,
    pub provenance: Provenance,
}

impl SupervisedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sources(&self) -> Vec<WindowSource> {
        self.samples.iter().map(|s| s.source).collect()
    }
}

/// Number of windows a gap-free segment of `len` rows yields.
pub fn window_count(len: usize, lookback: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(lookback + horizon)
}

/// One normalised window starting at row `offset` of `segment`.
///
/// Observed rain and tide over the horizon stand in for their forecasts.
pub fn make_window(
    segment: &TimeSeriesFrame,
    offset: usize,
    lookback: usize,
    horizon: usize,
    norm: &Normalizer,
) -> Result<(InputWindow, Vector)> {
    let rows = segment.rows();
    if offset + lookback + horizon > rows.len() {
        return Err(Error::Invalid(format!(
            "window at {offset} with {lookback}+{horizon} rows overruns segment of {}",
            rows.len()
        )));
    }
    let mut past = Vec::with_capacity(lookback * 3);
    for r in &rows[offset..offset + lookback] {
        past.extend([
            norm.apply(Channel::Rainfall, r.rainfall),
            norm.apply(Channel::Tide, r.tide),
            norm.apply(Channel::Gwl, r.gwl),
        ]);
    }
    let ahead = &rows[offset + lookback..offset + lookback + horizon];
    let mut future = Vec::with_capacity(horizon * 2);
    for r in ahead {
        future.extend([
            norm.apply(Channel::Rainfall, r.rainfall),
            norm.apply(Channel::Tide, r.tide),
        ]);
    }
    let target = ahead.iter().map(|r| norm.apply(Channel::Gwl, r.gwl)).collect();
    let window = InputWindow::new(
        Matrix::from_vec(lookback, 3, past)?,
        Matrix::from_vec(horizon, 2, future)?,
    )?;
    Ok((window, Vector(target)))
}

fn check_window_sizes(lookback: usize, horizon: usize) -> Result<()> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Invalid(format!(
            "lookback and horizon must be at least 1 (got {lookback}, {horizon})"
        )));
    }
    Ok(())
}

/// Every window of every segment, in segment then offset order.
pub fn build_windows(
    segments: &[TimeSeriesFrame],
    lookback: usize,
    horizon: usize,
    normalizer: &Normalizer,
) -> Result<SupervisedDataset> {
    build_windows_where(segments, lookback, horizon, normalizer, Provenance::Full, |_| true)
}

pub(crate) fn build_windows_where(
    segments: &[TimeSeriesFrame],
    lookback: usize,
    horizon: usize,
    normalizer: &Normalizer,
    provenance: Provenance,
    keep: impl Fn(WindowSource) -> bool,
) -> Result<SupervisedDataset> {
    check_window_sizes(lookback, horizon)?;
    let mut samples = Vec::new();
    for (si, seg) in segments.iter().enumerate() {
        for offset in 0..window_count(seg.len(), lookback, horizon) {
            let source = WindowSource { segment: si, offset };
            if !keep(source) {
                continue;
            }
            // Targets sit strictly after the past block.
            debug_assert!(source.target_rows(lookback, horizon).start >= offset + lookback);
            let (window, target) = make_window(seg, offset, lookback, horizon, normalizer)?;
            samples.push(Sample { window, target, source });
        }
    }
    Ok(SupervisedDataset {
        samples,
        lookback,
        horizon,
        normalizer: normalizer.clone(),
        provenance,
    })
}
