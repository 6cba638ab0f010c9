//! Test-only oracles and instance generators shared by the integration suites.
#![allow(dead_code)]

pub mod brute;
pub mod scalar;

use gwlcast::model::{InputWindow, ModelKind, ModelSizes, SequenceModel};
use gwlcast::numerics::{Matrix, Prng, Vector};

/// Small random forecaster: every weight uniform on `[-1, 1]`, biases at their
/// training initialisation (zero, forget gates 1).
///
/// Training-scale weights leave many recurrent gradients near 1e-8, below the
/// round-off floor of a central difference at eps = 1e-6.
pub fn random_model(kind: ModelKind, hidden: usize, prng: &mut Prng) -> SequenceModel {
    let sizes = ModelSizes {
        kind,
        hidden_size: hidden,
        layers: if kind == ModelKind::Rnn { 1 } else { 2 },
    };
    let mut m = SequenceModel::new(sizes, prng).unwrap();
    let n = m.tensors().len();
    for (i, t) in m.tensors_mut().into_iter().enumerate() {
        // Tensors come in (w_x, w_h, b) triples, then head_w, head_b.
        let is_bias = if i < n - 2 { i % 3 == 2 } else { i == n - 1 };
        if !is_bias {
            for v in t.iter_mut() {
                *v = prng.uniform(-1.0, 1.0);
            }
        }
    }
    m
}

pub fn random_window(prng: &mut Prng, lookback: usize, horizon: usize) -> InputWindow {
    let past = (0..lookback * 3).map(|_| prng.unit()).collect();
    let future = (0..horizon * 2).map(|_| prng.unit()).collect();
    InputWindow::new(
        Matrix::from_vec(lookback, 3, past).unwrap(),
        Matrix::from_vec(horizon, 2, future).unwrap(),
    )
    .unwrap()
}

pub fn random_target(prng: &mut Prng, horizon: usize) -> Vector {
    Vector((0..horizon).map(|_| prng.unit()).collect())
}

/// Hourly frame from rain values, with a smooth tide and level so that no channel is constant.
pub fn frame_from_rain(well: &str, rain: &[f64]) -> gwlcast::data::TimeSeriesFrame {
    use chrono::{TimeDelta, TimeZone, Utc};
    let t0 = Utc.with_ymd_and_hms(2015, 3, 1, 0, 0, 0).unwrap();
    let rows = rain
        .iter()
        .enumerate()
        .map(|(i, &r)| gwlcast::data::Record {
            timestamp: t0 + TimeDelta::hours(i as i64),
            rainfall: r,
            tide: (i as f64 * 0.5).sin(),
            gwl: 1.0 + 0.1 * (i as f64 * 0.05).cos(),
        })
        .collect();
    gwlcast::data::TimeSeriesFrame::new(well, rows).unwrap()
}

/// Sparse random rain: mostly dry, occasional bursts.
pub fn random_rain(prng: &mut Prng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match prng.below(10) {
            0 => prng.uniform(0.0, 6.0),
            1 => prng.uniform(0.0, 0.6),
            _ => 0.0,
        })
        .collect()
}
