//! Rolling forecasts over the test period, skill scores, and the FULL vs STORM comparison.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;

use chrono::{DateTime, Utc};
use rayon::prelude::*;

use crate::data::{format_timestamp, make_window, window_count, Channel, Normalizer, Provenance, WindowSource};
use crate::error::{Error, Result};
use crate::experiment::TestData;
use crate::forecaster::ForecastModel;
use crate::model::predict;
use crate::storms::{detect_storms_all, targets_storm, StormEvent, StormParams};

fn check_pairs(pred: &[f64], obs: &[f64]) -> Result<()> {
    if pred.len() != obs.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} observations",
            pred.len(),
            obs.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Invalid("no forecast pairs to score".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pairs(pred, obs)?;
    let sse: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pairs(pred, obs)?;
    let sae: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o).abs()).sum();
    Ok(sae / pred.len() as f64)
}

/// Nash–Sutcliffe efficiency. Undefined when the observations are constant.
pub fn nse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pairs(pred, obs)?;
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let var: f64 = obs.iter().map(|o| (o - mean) * (o - mean)).sum();
    if var == 0.0 {
        return Err(Error::Invalid("NSE is undefined for constant observations".into()));
    }
    let sse: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok(1.0 - sse / var)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the observations are constant.
    pub nse: Option<f64>,
}

impl Metrics {
    pub fn compute(pred: &[f64], obs: &[f64]) -> Result<Self> {
        Ok(Metrics {
            n: pred.len(),
            rmse: rmse(pred, obs)?,
            mae: mae(pred, obs)?,
            nse: nse(pred, obs).ok(),
        })
    }
}

/// Forecast issued at one origin. The origin is the last observed hour.
#[derive(Clone, Debug, PartialEq)]
pub struct OriginForecast {
    pub source: WindowSource,
    pub origin: DateTime<Utc>,
    /// Metres, one per horizon step.
    pub pred: Vec<f64>,
    pub obs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub well_id: String,
    pub provenance: Provenance,
    pub lookback: usize,
    pub horizon: usize,
    pub origins: Vec<OriginForecast>,
}

impl ForecastResult {
    fn pairs(&self, keep: &dyn Fn(&OriginForecast) -> bool, step: Option<usize>) -> (Vec<f64>, Vec<f64>) {
        let mut pred = Vec::new();
        let mut obs = Vec::new();
        for o in self.origins.iter().filter(|o| keep(o)) {
            match step {
                Some(k) => {
                    pred.push(o.pred[k]);
                    obs.push(o.obs[k]);
                }
                None => {
                    pred.extend(&o.pred);
                    obs.extend(&o.obs);
                }
            }
        }
        (pred, obs)
    }

    /// Scores over every step of the kept origins; `None` if nothing is kept.
    pub fn metrics_where(&self, keep: impl Fn(&OriginForecast) -> bool) -> Result<Option<Metrics>> {
        let (p, o) = self.pairs(&keep, None);
        if p.is_empty() {
            return Ok(None);
        }
        Metrics::compute(&p, &o).map(Some)
    }

    pub fn metrics(&self) -> Result<Metrics> {
        let (p, o) = self.pairs(&|_| true, None);
        Metrics::compute(&p, &o)
    }

    /// Metrics at horizon step `step` (1-based) over every origin.
    pub fn step_metrics(&self, step: usize) -> Result<Metrics> {
        if step == 0 || step > self.horizon {
            return Err(Error::Invalid(format!("step {step} outside 1..={}", self.horizon)));
        }
        let (p, o) = self.pairs(&|_| true, Some(step - 1));
        Metrics::compute(&p, &o)
    }

    /// RMSE per horizon step over the kept origins; empty if nothing is kept.
    pub fn step_rmse_where(&self, keep: impl Fn(&OriginForecast) -> bool) -> Vec<f64> {
        (0..self.horizon)
            .filter_map(|k| {
                let (p, o) = self.pairs(&keep, Some(k));
                rmse(&p, &o).ok()
            })
            .collect()
    }

    /// `origin_iso,step,pred_gwl_m,obs_gwl_m,provenance`
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "origin_iso,step,pred_gwl_m,obs_gwl_m,provenance")?;
        for o in &self.origins {
            let ts = format_timestamp(&o.origin);
            for (k, (p, y)) in o.pred.iter().zip(&o.obs).enumerate() {
                writeln!(out, "{ts},{},{p},{y},{}", k + 1, self.provenance)?;
            }
        }
        Ok(())
    }
}

/// Forecast from the window described by `source` within the test segments.
pub fn forecast_origin(
    model: &ForecastModel,
    segments: &[crate::data::TimeSeriesFrame],
    source: WindowSource,
) -> Result<OriginForecast> {
    let seg = segments
        .get(source.segment)
        .ok_or_else(|| Error::Invalid(format!("no test segment {}", source.segment)))?;
    let (lb, hz) = (model.lookback, model.horizon);
    let (window, _) = make_window(seg, source.offset, lb, hz, &model.normalizer)?;
    let scaled = predict(&window, &model.model)?;
    let rows = seg.rows();
    let pred = scaled
        .as_slice()
        .iter()
        .map(|&y| model.normalizer.invert(Channel::Gwl, y))
        .collect();
    let obs = rows[source.offset + lb..source.offset + lb + hz]
        .iter()
        .map(|r| r.gwl)
        .collect();
    Ok(OriginForecast {
        source,
        origin: rows[source.offset + lb - 1].timestamp,
        pred,
        obs,
    })
}

/// Every valid origin of the test segments, in time order.
pub fn origins(test: &TestData, lookback: usize, horizon: usize) -> Vec<WindowSource> {
    test.segments
        .iter()
        .enumerate()
        .flat_map(|(segment, s)| {
            (0..window_count(s.len(), lookback, horizon)).map(move |offset| WindowSource { segment, offset })
        })
        .collect()
}

/// Forecasts at every test origin, computed in parallel.
///
/// `normalizer` is the scaling fitted on the training rows of the same record;
/// a model trained under different scaling is rejected.
pub fn rolling_forecast(model: &ForecastModel, test: &TestData, normalizer: &Normalizer) -> Result<ForecastResult> {
    if &model.normalizer != normalizer {
        return Err(Error::Incompatible(
            "model normalizer does not match the training period of this record".into(),
        ));
    }
    let sources = origins(test, model.lookback, model.horizon);
    if sources.is_empty() {
        return Err(Error::Invalid(format!(
            "test segments too short for lookback {} + horizon {}",
            model.lookback, model.horizon
        )));
    }
    let origins = sources
        .par_iter()
        .map(|&s| forecast_origin(model, &test.segments, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForecastResult {
        well_id: model.well_id.clone(),
        provenance: model.provenance,
        lookback: model.lookback,
        horizon: model.horizon,
        origins,
    })
}

/// Which test origins a score covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    All,
    /// Origins whose target block touches a test-period storm event.
    StormPeriods,
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Subset::All => "all",
            Subset::StormPeriods => "storm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Winner {
    Model(Provenance),
    Tie,
    Empty,
}

impl std::fmt::Display for Winner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Winner::Model(p) => write!(f, "{p}"),
            Winner::Tie => f.write_str("tie"),
            Winner::Empty => f.write_str("empty"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Rmse,
    Mae,
    Nse,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Rmse, Metric::Mae, Metric::Nse];

    fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse_m",
            Metric::Mae => "mae_m",
            Metric::Nse => "nse",
        }
    }

    fn of(self, m: &Metrics) -> Option<f64> {
        match self {
            Metric::Rmse => Some(m.rmse),
            Metric::Mae => Some(m.mae),
            Metric::Nse => m.nse,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub full: ForecastResult,
    pub storm: ForecastResult,
    pub test_events: Vec<StormEvent>,
    /// Parallel to the origins of both forecasts.
    pub storm_mask: Vec<bool>,
    pub full_all: Metrics,
    pub storm_all: Metrics,
    pub full_storm: Option<Metrics>,
    pub storm_storm: Option<Metrics>,
}

pub fn compare_models(
    full: &ForecastModel,
    storm: &ForecastModel,
    test: &TestData,
    normalizer: &Normalizer,
    storms: &StormParams,
) -> Result<ComparisonReport> {
    if full.provenance != Provenance::Full || storm.provenance != Provenance::Storm {
        return Err(Error::Incompatible(format!(
            "expected a full and a storm model, got {} and {}",
            full.provenance, storm.provenance
        )));
    }
    full.check_compatible(storm)?;
    storms.validate()?;
    let f = rolling_forecast(full, test, normalizer)?;
    let s = rolling_forecast(storm, test, normalizer)?;
    let events = detect_storms_all(&test.segments, storms);
    let mask: Vec<bool> = f
        .origins
        .iter()
        .map(|o| targets_storm(o.source, f.lookback, f.horizon, &events))
        .collect();
    let flagged: HashSet<WindowSource> = f
        .origins
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(o, _)| o.source)
        .collect();
    let in_storm = |o: &OriginForecast| flagged.contains(&o.source);
    Ok(ComparisonReport {
        full_all: f.metrics()?,
        storm_all: s.metrics()?,
        full_storm: f.metrics_where(in_storm)?,
        storm_storm: s.metrics_where(in_storm)?,
        full: f,
        storm: s,
        test_events: events,
        storm_mask: mask,
    })
}

impl ComparisonReport {
    pub fn n_storm_origins(&self) -> usize {
        self.storm_mask.iter().filter(|&&m| m).count()
    }

    pub fn metrics(&self, subset: Subset, model: Provenance) -> Option<&Metrics> {
        match (subset, model) {
            (Subset::All, Provenance::Full) => Some(&self.full_all),
            (Subset::All, Provenance::Storm) => Some(&self.storm_all),
            (Subset::StormPeriods, Provenance::Full) => self.full_storm.as_ref(),
            (Subset::StormPeriods, Provenance::Storm) => self.storm_storm.as_ref(),
        }
    }

    pub fn winner(&self, subset: Subset, metric: Metric) -> Winner {
        let get = |p| self.metrics(subset, p).and_then(|m| metric.of(m));
        match (get(Provenance::Full), get(Provenance::Storm)) {
            (Some(a), Some(b)) if a == b => Winner::Tie,
            (Some(a), Some(b)) => {
                let full_better = match metric {
                    Metric::Nse => a > b,
                    _ => a < b,
                };
                Winner::Model(if full_better {
                    Provenance::Full
                } else {
                    Provenance::Storm
                })
            }
            _ => Winner::Empty,
        }
    }

    /// RMSE per horizon step; empty for a storm subset with no origins.
    pub fn step_rmse(&self, subset: Subset, model: Provenance) -> Vec<f64> {
        let fr = match model {
            Provenance::Full => &self.full,
            Provenance::Storm => &self.storm,
        };
        match subset {
            Subset::All => fr.step_rmse_where(|_| true),
            Subset::StormPeriods => {
                let flagged = self.storm_sources();
                fr.step_rmse_where(|o| flagged.contains(&o.source))
            }
        }
    }

    fn storm_sources(&self) -> HashSet<WindowSource> {
        self.full
            .origins
            .iter()
            .zip(&self.storm_mask)
            .filter(|(_, &m)| m)
            .map(|(o, _)| o.source)
            .collect()
    }

    /// `subset,metric,full,storm,winner`, with `empty` for missing cells.
    pub fn write_table_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "subset,metric,full,storm,winner")?;
        for subset in [Subset::All, Subset::StormPeriods] {
            for metric in Metric::ALL {
                let cell = |p| match self.metrics(subset, p) {
                    None => "empty".to_string(),
                    Some(m) => metric.of(m).map_or("undefined".into(), |v| v.to_string()),
                };
                writeln!(
                    out,
                    "{subset},{},{},{},{}",
                    metric.name(),
                    cell(Provenance::Full),
                    cell(Provenance::Storm),
                    self.winner(subset, metric)
                )?;
            }
        }
        Ok(())
    }

    /// `step,full_all_rmse_m,storm_all_rmse_m,full_storm_rmse_m,storm_storm_rmse_m`
    pub fn write_horizon_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "step,full_all_rmse_m,storm_all_rmse_m,full_storm_rmse_m,storm_storm_rmse_m"
        )?;
        let cols = [
            self.step_rmse(Subset::All, Provenance::Full),
            self.step_rmse(Subset::All, Provenance::Storm),
            self.step_rmse(Subset::StormPeriods, Provenance::Full),
            self.step_rmse(Subset::StormPeriods, Provenance::Storm),
        ];
        for k in 0..self.full.horizon {
            let cells: Vec<String> = cols
                .iter()
                .map(|c| c.get(k).map_or("empty".into(), |v| v.to_string()))
                .collect();
            writeln!(out, "{},{}", k + 1, cells.join(","))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "well: {}", self.full.well_id);
        let _ = writeln!(
            s,
            "lookback {} h, horizon {} h, {} test origins, {} test storm events, {} storm-period origins",
            self.full.lookback,
            self.full.horizon,
            self.full.origins.len(),
            self.test_events.len(),
            self.n_storm_origins()
        );
        for subset in [Subset::All, Subset::StormPeriods] {
            let _ = writeln!(s, "\n[{subset}]");
            for p in [Provenance::Full, Provenance::Storm] {
                match self.metrics(subset, p) {
                    None => {
                        let _ = writeln!(s, "  {p:<5}  empty");
                    }
                    Some(m) => {
                        let nse = m.nse.map_or("undefined".into(), |v| format!("{v:.4}"));
                        let _ = writeln!(
                            s,
                            "  {p:<5}  rmse {:.4} m  mae {:.4} m  nse {nse}  (n = {})",
                            m.rmse, m.mae, m.n
                        );
                    }
                }
            }
            let _ = writeln!(s, "  lower rmse: {}", self.winner(subset, Metric::Rmse));
        }
        s
    }
}
