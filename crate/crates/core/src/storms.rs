//! Storm events in an hourly rainfall record, and the storm-only training set.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{
    build_windows_where, format_timestamp, Normalizer, Provenance, SupervisedDataset, TimeSeriesFrame, WindowSource,
};
use crate::error::{Error, Result};

/// Definition of a storm event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StormParams {
    /// An hour is wet when its rain exceeds this (mm/h).
    pub wet_threshold: f64,
    /// Wet runs separated by fewer dry hours than this belong to one event.
    pub dry_gap: usize,
    /// Events with less core rain than this (mm) are dropped.
    pub min_total_rain: f64,
    /// Hours of context kept before the first wet hour.
    pub lead_pad: usize,
    /// Hours of recession kept after the last wet hour.
    pub tail_pad: usize,
}

impl Default for StormParams {
    fn default() -> Self {
        StormParams {
            wet_threshold: 0.5,
            dry_gap: 12,
            min_total_rain: 5.0,
            lead_pad: 24,
            tail_pad: 72,
        }
    }
}

impl StormParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wet_threshold > 0.0 && self.wet_threshold.is_finite()) {
            return Err(Error::Config("wet_threshold must be positive".into()));
        }
        if !(self.min_total_rain >= 0.0) {
            return Err(Error::Config("min_total_rain must be non-negative".into()));
        }
        Ok(())
    }
}

/// A padded storm event inside one gap-free segment. Indices are inclusive row indices.
#[derive(Clone, Debug, PartialEq)]
pub struct StormEvent {
    pub segment_id: usize,
    pub start: usize,
    pub end: usize,
    /// First wet hour.
    pub core_start: usize,
    /// Last wet hour.
    pub core_end: usize,
    /// Rain over `core_start..=core_end`, mm.
    pub total_rain: f64,
    /// Largest hourly rain in the core, mm/h.
    pub peak_rain: f64,
}

impl StormEvent {
    pub fn padded_len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn core_len(&self) -> usize {
        self.core_end - self.core_start + 1
    }

    /// Whether rows `[range.start, range.end)` touch `[start, end]`.
    pub fn intersects(&self, range: &std::ops::Range<usize>) -> bool {
        range.start <= self.end && range.end > self.start
    }
}

pub fn wet_hours(rain: &[f64], threshold: f64) -> Vec<bool> {
    rain.iter().map(|&r| r > threshold).collect()
}

fn core_stats(rain: &[f64], core_start: usize, core_end: usize) -> (f64, f64) {
    let core = &rain[core_start..=core_end];
    (core.iter().sum(), core.iter().copied().fold(0.0, f64::max))
}

/// Scans one gap-free segment for storm events.
///
/// Wet-hour runs closer than `dry_gap` dry hours are merged, each candidate is
/// padded and clipped to the segment, candidates with too little rain are dropped,
/// and survivors whose padded ranges overlap are merged. The result is ordered and
/// pairwise disjoint.
pub fn detect_storms(segment: &TimeSeriesFrame, segment_id: usize, p: &StormParams) -> Vec<StormEvent> {
    let rain = segment.rainfall();
    let wet = wet_hours(&rain, p.wet_threshold);
    let n = rain.len();

    let mut cores: Vec<(usize, usize)> = Vec::new();
    let mut t = 0;
    while t < n {
        if !wet[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < n && wet[t] {
            t += 1;
        }
        let end = t - 1;
        match cores.last_mut() {
            Some(last) if start - last.1 - 1 < p.dry_gap => last.1 = end,
            _ => cores.push((start, end)),
        }
    }

    let mut events: Vec<StormEvent> = Vec::new();
    for (cs, ce) in cores {
        let (total, peak) = core_stats(&rain, cs, ce);
        if total < p.min_total_rain {
            continue;
        }
        let ev = StormEvent {
            segment_id,
            start: cs.saturating_sub(p.lead_pad),
            end: (ce + p.tail_pad).min(n - 1),
            core_start: cs,
            core_end: ce,
            total_rain: total,
            peak_rain: peak,
        };
        match events.last_mut() {
            Some(last) if ev.start <= last.end => {
                last.end = last.end.max(ev.end);
                last.core_end = ev.core_end;
                let (total, peak) = core_stats(&rain, last.core_start, last.core_end);
                last.total_rain = total;
                last.peak_rain = peak;
            }
            _ => events.push(ev),
        }
    }
    events
}

/// [`detect_storms`] over every segment, segment ids being positions in `segments`.
pub fn detect_storms_all(segments: &[TimeSeriesFrame], p: &StormParams) -> Vec<StormEvent> {
    segments
        .iter()
        .enumerate()
        .flat_map(|(i, s)| detect_storms(s, i, p))
        .collect()
}

/// Whether a window's target block touches any event of its segment.
pub fn targets_storm(source: WindowSource, lookback: usize, horizon: usize, events: &[StormEvent]) -> bool {
    let rows = source.target_rows(lookback, horizon);
    events
        .iter()
        .any(|e| e.segment_id == source.segment && e.intersects(&rows))
}

/// Windows of [`crate::data::build_windows`] whose target block intersects an event.
pub fn extract_storm_dataset(
    segments: &[TimeSeriesFrame],
    events: &[StormEvent],
    lookback: usize,
    horizon: usize,
    normalizer: &Normalizer,
) -> Result<SupervisedDataset> {
    build_windows_where(segments, lookback, horizon, normalizer, Provenance::Storm, |src| {
        targets_storm(src, lookback, horizon, events)
    })
}

/// `segment_id,start_iso,end_iso,core_start_iso,core_end_iso,total_rain_mm,peak_rain_mm`
pub fn write_events_csv<W: Write>(events: &[StormEvent], segments: &[TimeSeriesFrame], mut out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Invalid(format!("writing events: {e}"));
    writeln!(
        out,
        "segment_id,start_iso,end_iso,core_start_iso,core_end_iso,total_rain_mm,peak_rain_mm"
    )
    .map_err(io)?;
    for e in events {
        let seg = segments
            .get(e.segment_id)
            .ok_or_else(|| Error::Invalid(format!("event refers to missing segment {}", e.segment_id)))?;
        let ts = |i: usize| format_timestamp(&seg.rows()[i].timestamp);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.segment_id,
            ts(e.start),
            ts(e.end),
            ts(e.core_start),
            ts(e.core_end),
            e.total_rain,
            e.peak_rain
        )
        .map_err(io)?;
    }
    Ok(())
}
