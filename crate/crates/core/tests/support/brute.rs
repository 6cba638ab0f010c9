//! Brute-force enumerations used as oracles for windowing and storm extraction.

use gwlcast::data::TimeSeriesFrame;
use gwlcast::storms::StormParams;

/// Window start offsets found by trying every offset.
pub fn window_offsets(len: usize, lookback: usize, horizon: usize) -> Vec<usize> {
    (0..len).filter(|&o| o + lookback + horizon <= len).collect()
}

/// Hours covered by some padded storm, computed with a per-hour mask.
pub fn storm_mask(rain: &[f64], p: &StormParams) -> Vec<bool> {
    let n = rain.len();
    let wet: Vec<bool> = rain.iter().map(|&r| r > p.wet_threshold).collect();
    // Group wet hours: a new group starts when at least dry_gap dry hours precede it.
    let mut group = vec![usize::MAX; n];
    let mut current = 0usize;
    let mut last_wet: Option<usize> = None;
    for t in 0..n {
        if wet[t] {
            if let Some(prev) = last_wet {
                if t - prev - 1 >= p.dry_gap {
                    current += 1;
                }
            }
            group[t] = current;
            last_wet = Some(t);
        }
    }
    let mut mask = vec![false; n];
    if last_wet.is_none() {
        return mask;
    }
    for g in 0..=current {
        let hours: Vec<usize> = (0..n).filter(|&t| group[t] == g).collect();
        let (first, last) = (hours[0], *hours.last().unwrap());
        let total: f64 = rain[first..=last].iter().sum();
        if total < p.min_total_rain {
            continue;
        }
        let lo = first.saturating_sub(p.lead_pad);
        let hi = (last + p.tail_pad).min(n - 1);
        for m in &mut mask[lo..=hi] {
            *m = true;
        }
    }
    mask
}

/// Offsets of the windows whose target block contains a storm hour.
pub fn storm_window_offsets(seg: &TimeSeriesFrame, lookback: usize, horizon: usize, p: &StormParams) -> Vec<usize> {
    let mask = storm_mask(&seg.rainfall(), p);
    window_offsets(seg.len(), lookback, horizon)
        .into_iter()
        .filter(|&o| (o + lookback..o + lookback + horizon).any(|t| mask[t]))
        .collect()
}
