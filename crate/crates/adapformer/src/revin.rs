//! Reversible per-window normalization.
//!
//! Each lookback window is shifted and scaled per channel before entering the
//! model; forecasts are mapped back with the *same* window statistics. This is
//! plain tensor math with no trainable pieces — the window statistics enter
//! the loss only as constants.

use crate::numkit::Tensor;

/// Std floor so constant channels normalize to zeros instead of blowing up.
pub const REVIN_EPS: f64 = 1e-5;

/// Per-channel window statistics captured by `normalize`.
#[derive(Clone, Debug, PartialEq)]
pub struct RevinState {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Normalize a rows-by-channels window per channel (population std, floored).
pub fn normalize(x: &Tensor) -> (Tensor, RevinState) {
    let (rows, n) = x.dims2();
    assert!(rows > 0, "cannot normalize an empty window");
    let mut mean = vec![0.0; n];
    let mut std = vec![0.0; n];
    for r in 0..rows {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += x.at2(r, c);
        }
    }
    for m in mean.iter_mut() {
        *m /= rows as f64;
    }
    for r in 0..rows {
        for c in 0..n {
            let d = x.at2(r, c) - mean[c];
            std[c] += d * d;
        }
    }
    for s in std.iter_mut() {
        *s = (*s / rows as f64).sqrt().max(REVIN_EPS);
    }
    let state = RevinState { mean, std };
    (normalize_with(&state, x), state)
}

/// Normalize another block (e.g. the horizon) with previously captured stats.
pub fn normalize_with(state: &RevinState, x: &Tensor) -> Tensor {
    let (rows, n) = x.dims2();
    assert_eq!(n, state.mean.len(), "channel count mismatch");
    let mut out = x.clone();
    for r in 0..rows {
        for c in 0..n {
            out.set2(r, c, (x.at2(r, c) - state.mean[c]) / state.std[c]);
        }
    }
    out
}

/// Undo `normalize_with`: scale by the window std and add the mean back.
pub fn denormalize(state: &RevinState, y_norm: &Tensor) -> Tensor {
    let (rows, n) = y_norm.dims2();
    assert_eq!(n, state.mean.len(), "channel count mismatch");
    let mut out = y_norm.clone();
    for r in 0..rows {
        for c in 0..n {
            out.set2(r, c, y_norm.at2(r, c) * state.std[c] + state.mean[c]);
        }
    }
    out
}
