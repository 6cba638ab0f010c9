//! Seeded gradient-check sweeps over small random forecasters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{gradient_check, gradient_check_mutated, InputWindow, ModelKind, ModelSizes, SequenceModel};
use crate::numerics::{Matrix, Prng, Vector};

pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seeds: u64,
    pub hidden_size: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub eps: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seeds: 20,
            hidden_size: 4,
            lookback: 6,
            horizon: 3,
            eps: 1e-6,
        }
    }
}

/// A forecaster with weights uniform on `[-1, 1]` and biases at their
/// initial values, a window with inputs in `[0, 1)`, and a target in `[0, 1)`.
pub fn instance(
    kind: ModelKind,
    hidden: usize,
    lookback: usize,
    horizon: usize,
    seed: u64,
) -> Result<(SequenceModel, InputWindow, Vector)> {
    let mut prng = Prng::new(seed);
    let sizes = ModelSizes {
        kind,
        hidden_size: hidden,
        layers: if kind == ModelKind::Rnn { 1 } else { 2 },
    };
    let mut m = SequenceModel::new(sizes, &mut prng)?;
    let n = m.tensors().len();
    for (i, t) in m.tensors_mut().into_iter().enumerate() {
        let is_bias = if i < n - 2 { i % 3 == 2 } else { i == n - 1 };
        if !is_bias {
            t.iter_mut().for_each(|v| *v = prng.uniform(-1.0, 1.0));
        }
    }
    let past = (0..lookback * 3).map(|_| prng.unit()).collect();
    let future = (0..horizon * 2).map(|_| prng.unit()).collect();
    let w = InputWindow::new(
        Matrix::from_vec(lookback, 3, past)?,
        Matrix::from_vec(horizon, 2, future)?,
    )?;
    let target = Vector((0..horizon).map(|_| prng.unit()).collect());
    Ok((m, w, target))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOutcome {
    pub kind: ModelKind,
    pub seed: u64,
    pub max_rel_error: f64,
}

/// Checks RNN and LSTM instances for seeds `1..=cfg.seeds`.
pub fn sweep(cfg: &GradcheckConfig, mutate: bool) -> Result<Vec<CheckOutcome>> {
    if cfg.seeds == 0 || cfg.hidden_size == 0 || cfg.lookback == 0 || cfg.horizon == 0 {
        return Err(Error::Config("gradcheck sizes and seed count must be positive".into()));
    }
    let mut out = Vec::new();
    for kind in [ModelKind::Rnn, ModelKind::Lstm] {
        for seed in 1..=cfg.seeds {
            let (m, w, y) = instance(kind, cfg.hidden_size, cfg.lookback, cfg.horizon, seed)?;
            let err = if mutate {
                gradient_check_mutated(&m, &w, &y, cfg.eps)?
            } else {
                gradient_check(&m, &w, &y, cfg.eps)?
            };
            out.push(CheckOutcome {
                kind,
                seed,
                max_rel_error: err,
            });
        }
    }
    Ok(out)
}

/// Worst error of a sweep, or [`Error::GradientCheck`] if it reaches the tolerance.
pub fn verdict(outcomes: &[CheckOutcome]) -> Result<f64> {
    let worst = outcomes.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    if worst < TOLERANCE {
        Ok(worst)
    } else {
        Err(Error::GradientCheck {
            worst,
            tolerance: TOLERANCE,
        })
    }
}
