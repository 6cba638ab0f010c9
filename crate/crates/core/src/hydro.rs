//! Synthetic coastal well: clustered storms, harmonic tide and a linear groundwater reservoir.
//!
//! Storage follows `s[t+1] = a·s[t] + k·rain[t]` and the observed level is
//! `gwl[t] = base + s[t] + c·tide[t] + noise`. With `noise_std = 0` every series
//! has a closed form, which makes the generator usable as a test oracle.

use std::f64::consts::PI;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{parse_timestamp, Record, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::numerics::Prng;

/// Mean month length in hours.
pub const HOURS_PER_MONTH: f64 = 730.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TideConstituent {
    /// metres
    pub amplitude: f64,
    /// hours
    pub period: f64,
    /// radians
    pub phase: f64,
}

/// Poisson-cluster storm process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StormProcess {
    pub storms_per_month: f64,
    /// Mean storm duration, hours.
    pub mean_duration: f64,
    /// Mean storm intensity, mm/h.
    pub mean_intensity: f64,
}

impl Default for StormProcess {
    fn default() -> Self {
        StormProcess {
            storms_per_month: 4.0,
            mean_duration: 6.0,
            mean_intensity: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HydroConfig {
    pub well_id: String,
    pub n_hours: usize,
    /// First timestamp, `YYYY-MM-DDTHH:00:00Z`.
    pub start: String,
    /// metres
    pub base_gwl: f64,
    /// Per-hour storage retention `a`, in (0, 1).
    pub recession: f64,
    /// metres of storage per mm of rain
    pub recharge_coeff: f64,
    pub tidal_coeff: f64,
    pub tide: Vec<TideConstituent>,
    pub storms: StormProcess,
    /// Standard deviation of the observation noise, metres.
    pub noise_std: f64,
    /// Storage at the first hour, metres.
    pub initial_storage: f64,
    pub seed: u64,
}

impl Default for HydroConfig {
    fn default() -> Self {
        HydroConfig {
            well_id: "synthetic".into(),
            n_hours: 2 * 8760,
            start: "2010-01-01T00:00:00Z".into(),
            base_gwl: 0.8,
            recession: 0.97,
            recharge_coeff: 0.02,
            tidal_coeff: 0.3,
            tide: vec![
                TideConstituent {
                    amplitude: 0.5,
                    period: 12.42,
                    phase: 0.0,
                },
                TideConstituent {
                    amplitude: 0.15,
                    period: 25.82,
                    phase: 1.0,
                },
            ],
            storms: StormProcess::default(),
            noise_std: 0.01,
            initial_storage: 0.0,
            seed: 1,
        }
    }
}

impl HydroConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.recession > 0.0 && self.recession < 1.0) {
            return bad(format!("recession must lie in (0, 1), got {}", self.recession));
        }
        if self.tide.iter().any(|c| c.amplitude < 0.0 || !(c.period > 0.0)) {
            return bad("tide constituents need amplitude >= 0 and period > 0".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative".into());
        }
        let s = &self.storms;
        if !(s.storms_per_month >= 0.0) {
            return bad("storms_per_month must be non-negative".into());
        }
        if s.storms_per_month > 0.0 && !(s.mean_duration > 0.0 && s.mean_intensity > 0.0) {
            return bad("storm duration and intensity means must be positive".into());
        }
        if !(self.recharge_coeff >= 0.0) {
            return bad("recharge_coeff must be non-negative".into());
        }
        self.start_time()?;
        Ok(())
    }

    pub fn start_time(&self) -> Result<DateTime<Utc>> {
        parse_timestamp(&self.start).map_err(|e| Error::Config(e.to_string()))
    }

    /// Two years with rare, intense storms and weak tidal coupling, so that
    /// recharge dominates the level during events.
    pub fn rare_intense_storms(seed: u64) -> Self {
        HydroConfig {
            well_id: format!("storm{seed}"),
            n_hours: 2 * 8760,
            tidal_coeff: 0.1,
            storms: StormProcess {
                storms_per_month: 1.0,
                mean_duration: 6.0,
                mean_intensity: 10.0,
            },
            seed,
            ..HydroConfig::default()
        }
    }

    /// Largest tidal contribution to the level, metres.
    pub fn tidal_swing(&self) -> f64 {
        self.tidal_coeff.abs() * self.tide.iter().map(|c| c.amplitude).sum::<f64>()
    }

    /// RMSE of a forecaster that knows the noise-free level exactly.
    pub fn noise_floor(&self) -> f64 {
        self.noise_std
    }
}

pub fn gen_tide(t: f64, constituents: &[TideConstituent]) -> f64 {
    constituents
        .iter()
        .map(|c| c.amplitude * (2.0 * PI * t / c.period + c.phase).sin())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduledStorm {
    pub start: usize,
    pub duration: usize,
    /// mm/h, constant over the storm
    pub intensity: f64,
}

/// Storm arrivals over `n_hours`: exponential inter-arrival times, durations
/// (rounded up to whole hours) and intensities.
pub fn storm_schedule(cfg: &HydroConfig, prng: &mut Prng) -> Vec<ScheduledStorm> {
    let sp = &cfg.storms;
    let mut out = Vec::new();
    if sp.storms_per_month <= 0.0 {
        return out;
    }
    let mean_gap = HOURS_PER_MONTH / sp.storms_per_month;
    let mut t = prng.exponential(mean_gap);
    while t < cfg.n_hours as f64 {
        let duration = prng.exponential(sp.mean_duration).ceil().max(1.0) as usize;
        let intensity = prng.exponential(sp.mean_intensity);
        out.push(ScheduledStorm {
            start: t as usize,
            duration,
            intensity,
        });
        t += prng.exponential(mean_gap);
    }
    out
}

/// Hourly rainfall in mm/h. Overlapping storms add.
pub fn gen_rainfall(cfg: &HydroConfig, prng: &mut Prng) -> Vec<f64> {
    let mut rain = vec![0.0; cfg.n_hours];
    for s in storm_schedule(cfg, prng) {
        let end = (s.start + s.duration).min(cfg.n_hours);
        for r in &mut rain[s.start..end] {
            *r += s.intensity;
        }
    }
    rain
}

/// Reservoir storage series, starting from `initial_storage`.
pub fn simulate_storage(rain: &[f64], cfg: &HydroConfig) -> Vec<f64> {
    let mut s = cfg.initial_storage;
    rain.iter()
        .map(|&r| {
            let now = s;
            s = cfg.recession * s + cfg.recharge_coeff * r;
            now
        })
        .collect()
}

/// Mean over `events` (inclusive row ranges) of the storage rise within the
/// event, as a multiple of the tidal swing.
pub fn recharge_tide_ratio(rain: &[f64], cfg: &HydroConfig, events: &[(usize, usize)]) -> f64 {
    if events.is_empty() || cfg.tidal_swing() == 0.0 {
        return f64::INFINITY;
    }
    let storage = simulate_storage(rain, cfg);
    let total: f64 = events
        .iter()
        .map(|&(a, b)| {
            let peak = storage[a..=b].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            peak - storage[a]
        })
        .sum();
    total / events.len() as f64 / cfg.tidal_swing()
}

pub fn simulate_gwl(rain: &[f64], tide: &[f64], cfg: &HydroConfig, prng: &mut Prng) -> Result<Vec<f64>> {
    if rain.len() != tide.len() {
        return Err(Error::Shape(format!(
            "rain has {} hours, tide {}",
            rain.len(),
            tide.len()
        )));
    }
    Ok(simulate_storage(rain, cfg)
        .into_iter()
        .zip(tide)
        .map(|(s, &z)| cfg.base_gwl + s + cfg.tidal_coeff * z + prng.normal(0.0, cfg.noise_std))
        .collect())
}

/// Generates a complete synthetic well record from `cfg.seed`.
pub fn generate_frame(cfg: &HydroConfig) -> Result<TimeSeriesFrame> {
    cfg.validate()?;
    let mut prng = Prng::new(cfg.seed);
    let rain = gen_rainfall(cfg, &mut prng);
    let tide: Vec<f64> = (0..cfg.n_hours).map(|t| gen_tide(t as f64, &cfg.tide)).collect();
    let gwl = simulate_gwl(&rain, &tide, cfg, &mut prng)?;
    let t0 = cfg.start_time()?;
    let rows = (0..cfg.n_hours)
        .map(|t| Record {
            timestamp: t0 + TimeDelta::hours(t as i64),
            rainfall: rain[t],
            tide: tide[t],
            gwl: gwl[t],
        })
        .collect();
    TimeSeriesFrame::new(cfg.well_id.clone(), rows)
}
