//! Loss, Adam, chronological splitting and the early-stopped training loop.
//!
//! Nothing in here ever sees the test segment: [`chronological_split`] hands it
//! back to the caller and [`train_model`] only accepts training and validation data.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{SupervisedDataset, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::model::{model_backward, model_forward, mse_grad, predict, Gradients, ModelSizes, SequenceModel};
use crate::numerics::{Prng, Vector};

pub fn mse_loss(preds: &Vector, targets: &Vector) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Invalid("empty prediction vector".into()));
    }
    let sse: f64 = preds
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(sse / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 50,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            patience: 5,
            clip_norm: crate::model::DEFAULT_CLIP_NORM,
            seed: 42,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// First and second moment estimates, flattened in parameter traversal order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update of a flat parameter slice. `t` starts at 1.
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], cfg: &TrainConfig, t: u64) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

pub fn adam_step(
    params: &mut SequenceModel,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Invalid("Adam step index starts at 1".into()));
    }
    let n = params.num_params();
    if state.m.len() != n || state.v.len() != n || grads.as_tree().num_params() != n {
        return Err(Error::Shape(format!(
            "Adam state of {} entries for a model of {n} parameters",
            state.m.len()
        )));
    }
    let mut offset = 0;
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        let len = p.len();
        let range = offset..offset + len;
        adam_update(p, g, &mut state.m[range.clone()], &mut state.v[range], cfg, t);
        offset += len;
    }
    Ok(())
}

/// Chronological train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.70,
            val_frac: 0.15,
            test_frac: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config("split fractions must each lie in (0, 1)".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Splits into consecutive train, validation and test frames.
///
/// Train and validation sizes are `floor(frac · n)`; the test frame takes the remainder.
pub fn chronological_split(
    frame: &TimeSeriesFrame,
    spec: &SplitSpec,
) -> Result<(TimeSeriesFrame, TimeSeriesFrame, TimeSeriesFrame)> {
    spec.validate()?;
    let n = frame.len();
    if n < 10 {
        return Err(Error::Invalid(format!("frame of {n} rows is too short to split")));
    }
    // The epsilon keeps products like 0.15 · 100 = 14.999… from flooring down.
    let n_train = (spec.train_frac * n as f64 + 1e-9).floor() as usize;
    let n_val = (spec.val_frac * n as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Invalid(format!(
            "frame of {n} rows is too short for fractions {:?}",
            spec
        )));
    }
    Ok((
        frame.slice(0, n_train),
        frame.slice(n_train, n_train + n_val),
        frame.slice(n_train + n_val, n),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch - 1]
    }

    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }

    /// `epoch,train_loss,val_loss`, one row per completed epoch.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss")?;
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            writeln!(out, "{},{},{}", i + 1, t, v)?;
        }
        Ok(())
    }
}

/// Per-epoch progress passed to the observer of [`train_model_with`].
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

/// Mean window loss of `model` over `data`.
pub fn dataset_loss(model: &SequenceModel, data: &SupervisedDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    let mut total = 0.0;
    for s in &data.samples {
        total += mse_loss(&predict(&s.window, model)?, &s.target)?;
    }
    Ok(total / data.len() as f64)
}

pub fn train_model(
    sizes: ModelSizes,
    train_set: &SupervisedDataset,
    val_set: &SupervisedDataset,
    cfg: &TrainConfig,
) -> Result<(SequenceModel, TrainReport)> {
    train_model_with(sizes, train_set, val_set, cfg, |_| {})
}

/// [`train_model`] with a callback after every epoch.
pub fn train_model_with(
    sizes: ModelSizes,
    train_set: &SupervisedDataset,
    val_set: &SupervisedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(SequenceModel, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Invalid(format!(
            "training needs non-empty datasets (train {}, validation {})",
            train_set.len(),
            val_set.len()
        )));
    }
    if train_set.normalizer != val_set.normalizer
        || train_set.lookback != val_set.lookback
        || train_set.horizon != val_set.horizon
    {
        return Err(Error::Invalid(
            "training and validation sets were built with different normalizers or window sizes".into(),
        ));
    }

    let mut prng = Prng::new(cfg.seed);
    let mut model = SequenceModel::new(sizes, &mut prng)?;
    let mut adam = AdamState::zeros(model.num_params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step: u64 = 0;

    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = (f64::INFINITY, model.clone());
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle_each_epoch {
            prng.shuffle(&mut order);
        }
        let mut total = 0.0;
        for &i in &order {
            let s = &train_set.samples[i];
            let (preds, tape) = model_forward(&s.window, &model)?;
            let loss = mse_loss(&preds, &s.target)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, sample: i });
            }
            total += loss;
            let grads = model_backward(&tape, &mse_grad(&preds, &s.target), &model, cfg.clip_norm)?;
            if !grads.is_finite() {
                return Err(Error::Diverged { epoch, sample: i });
            }
            step += 1;
            adam_step(&mut model, &grads, &mut adam, cfg, step)?;
        }
        let train_loss = total / train_set.len() as f64;

        let mut val_total = 0.0;
        for (i, s) in val_set.samples.iter().enumerate() {
            let loss = mse_loss(&predict(&s.window, &model)?, &s.target)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, sample: i });
            }
            val_total += loss;
        }
        let val_loss = val_total / val_set.len() as f64;

        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        let improved = val_loss < best.0;
        if improved {
            best = (val_loss, model.clone());
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        on_epoch(&EpochStats {
            epoch,
            train_loss,
            val_loss,
            improved,
        });
        if stale >= cfg.patience {
            report.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    Ok((best.1, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Normalizer, Provenance, Record, Sample, WindowSource};
    use crate::model::{InputWindow, ModelKind};
    use crate::numerics::Matrix;
    use chrono::{TimeDelta, TimeZone, Utc};

    #[test]
    fn mse_values() {
        let a = Vector(vec![1.0, -2.0, 0.5]);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(
            mse_loss(&Vector(vec![0.0, 0.0]), &Vector(vec![3.0, 4.0])).unwrap(),
            12.5
        );
        let shifted = Vector(a.0.iter().map(|v| v + 0.5).collect());
        assert!((mse_loss(&shifted, &a).unwrap() - 0.25).abs() < 1e-15);
        assert!(mse_loss(&a, &Vector(vec![1.0])).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.3, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 1..=5 {
            adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, &cfg, t);
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let cfg = TrainConfig::default();
        for g in [0.37, -2.5, 1e-3] {
            let mut p = [0.0];
            let (mut m, mut v) = ([0.0], [0.0]);
            adam_update(&mut p, &[g], &mut m, &mut v, &cfg, 1);
            let expected = -cfg.learning_rate * g / (g.abs() + cfg.adam_eps);
            assert!((p[0] - expected).abs() < 1e-18);
            assert!((p[0].abs() - cfg.learning_rate).abs() < 1e-7);
        }
    }

    fn frame(n: i64) -> TimeSeriesFrame {
        let t0 = Utc.with_ymd_and_hms(2011, 3, 1, 0, 0, 0).unwrap();
        let rows = (0..n)
            .map(|h| Record {
                timestamp: t0 + TimeDelta::hours(h),
                rainfall: 0.0,
                tide: 0.0,
                gwl: h as f64,
            })
            .collect();
        TimeSeriesFrame::new("w", rows).unwrap()
    }

    #[test]
    fn split_exact_fractions() {
        let (a, b, c) = chronological_split(&frame(100), &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 15, 15));
        assert!(a.rows().last().unwrap().timestamp < b.rows()[0].timestamp);
        assert!(b.rows().last().unwrap().timestamp < c.rows()[0].timestamp);
    }

    #[test]
    fn split_floor_then_remainder() {
        let (a, b, c) = chronological_split(&frame(10), &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
    }

    #[test]
    fn split_rejects_short_frames_and_bad_fractions() {
        assert!(chronological_split(&frame(9), &SplitSpec::default()).is_err());
        let bad = SplitSpec {
            train_frac: 0.8,
            val_frac: 0.15,
            test_frac: 0.15,
        };
        assert!(chronological_split(&frame(100), &bad).is_err());
    }

    fn constant_set(n: usize, target: f64, prov: Provenance) -> SupervisedDataset {
        let mut prng = Prng::new(77);
        let samples = (0..n)
            .map(|i| {
                let past = (0..12).map(|_| prng.unit()).collect();
                let future = (0..4).map(|_| prng.unit()).collect();
                Sample {
                    window: InputWindow::new(
                        Matrix::from_vec(4, 3, past).unwrap(),
                        Matrix::from_vec(2, 2, future).unwrap(),
                    )
                    .unwrap(),
                    target: Vector(vec![target; 2]),
                    source: WindowSource { segment: 0, offset: i },
                }
            })
            .collect();
        SupervisedDataset {
            samples,
            lookback: 4,
            horizon: 2,
            normalizer: Normalizer::new([0.0; 3], [1.0; 3]).unwrap(),
            provenance: prov,
        }
    }

    fn small_rnn() -> ModelSizes {
        ModelSizes {
            kind: ModelKind::Rnn,
            hidden_size: 4,
            layers: 1,
        }
    }

    #[test]
    fn early_stopping_on_worsening_validation() {
        // Training pulls predictions towards +1 while validation wants -1.
        let train = constant_set(40, 1.0, Provenance::Full);
        let val = constant_set(10, -1.0, Provenance::Full);
        let cfg = TrainConfig {
            patience: 1,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (_, report) = train_model(small_rnn(), &train, &val, &cfg).unwrap();
        assert_eq!(report.epochs(), 2);
        assert_eq!(report.best_epoch, 1);
        assert!(report.stopped_early);
        assert!(report.val_loss[1] > report.val_loss[0]);
    }

    #[test]
    fn returns_best_parameters_and_is_deterministic() {
        let train = constant_set(30, 0.4, Provenance::Full);
        let val = constant_set(8, 0.4, Provenance::Full);
        let cfg = TrainConfig {
            max_epochs: 6,
            ..TrainConfig::default()
        };
        let (m1, r1) = train_model(small_rnn(), &train, &val, &cfg).unwrap();
        let (m2, r2) = train_model(small_rnn(), &train, &val, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        let replay = dataset_loss(&m1, &val).unwrap();
        assert!((replay - r1.best_val_loss()).abs() <= 1e-12);
    }

    #[test]
    fn rejects_mismatched_sets() {
        let train = constant_set(5, 0.4, Provenance::Full);
        let mut val = constant_set(5, 0.4, Provenance::Full);
        val.normalizer = Normalizer::new([0.0; 3], [2.0; 3]).unwrap();
        assert!(train_model(small_rnn(), &train, &val, &TrainConfig::default()).is_err());
        let empty = SupervisedDataset {
            samples: vec![],
            ..train.clone()
        };
        assert!(train_model(small_rnn(), &empty, &train, &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_names_epoch() {
        let train = constant_set(5, 0.4, Provenance::Full);
        let val = constant_set(5, 0.4, Provenance::Full);
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            ..TrainConfig::default()
        };
        match train_model(small_rnn(), &train, &val, &cfg) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.adam_beta1 = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.patience = 0;
        assert!(c.validate().is_err());
    }
}
