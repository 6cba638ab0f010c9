//! Scalar reference forward pass: plain nested loops, time-major, textbook formulas.

use gwlcast::model::{CellParams, GateParams, InputWindow, SequenceModel};
use gwlcast::numerics::Matrix;

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn affine(w_x: &Matrix, w_h: &Matrix, b: &[f64], x: &[f64], h: &[f64], row: usize) -> f64 {
    let mut z = b[row];
    for j in 0..x.len() {
        z += w_x[(row, j)] * x[j];
    }
    for j in 0..h.len() {
        z += w_h[(row, j)] * h[j];
    }
    z
}

fn gate(g: &GateParams, x: &[f64], h: &[f64], row: usize) -> f64 {
    affine(&g.w_x, &g.w_h, g.b.as_slice(), x, h, row)
}

/// Input of unrolled step `t`: past rows, then (rain, tide, 0) over the horizon.
fn input_at(w: &InputWindow, t: usize) -> Vec<f64> {
    let lb = w.past.rows();
    if t < lb {
        (0..3).map(|c| w.past[(t, c)]).collect()
    } else {
        vec![w.future[(t - lb, 0)], w.future[(t - lb, 1)], 0.0]
    }
}

pub fn forward(w: &InputWindow, m: &SequenceModel) -> Vec<f64> {
    let hs = m.hidden_size();
    let layers = m.layers();
    let lb = w.past.rows();
    let hz = w.future.rows();
    let mut h = vec![vec![0.0; hs]; layers.len()];
    let mut c = vec![vec![0.0; hs]; layers.len()];
    let mut out = Vec::new();
    for t in 0..lb + hz {
        let mut x = input_at(w, t);
        for (l, cell) in layers.iter().enumerate() {
            let mut h_new = vec![0.0; hs];
            match cell {
                CellParams::Rnn(p) => {
                    for k in 0..hs {
                        h_new[k] = affine(&p.w_x, &p.w_h, p.b.as_slice(), &x, &h[l], k).tanh();
                    }
                }
                CellParams::Lstm(p) => {
                    for k in 0..hs {
                        let i = logistic(gate(&p.input, &x, &h[l], k));
                        let f = logistic(gate(&p.forget, &x, &h[l], k));
                        let o = logistic(gate(&p.output, &x, &h[l], k));
                        let g = gate(&p.candidate, &x, &h[l], k).tanh();
                        c[l][k] = f * c[l][k] + i * g;
                        h_new[k] = o * c[l][k].tanh();
                    }
                }
            }
            h[l] = h_new;
            x = h[l].clone();
        }
        if t >= lb {
            let top = &h[layers.len() - 1];
            let mut y = m.head_b()[0];
            for k in 0..hs {
                y += m.head_w()[(0, k)] * top[k];
            }
            out.push(y);
        }
    }
    out
}
