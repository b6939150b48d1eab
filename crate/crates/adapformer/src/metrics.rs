//! Forecast quality measures and streaming accumulation over a split.

use crate::dataio::Standardizer;
use crate::numkit::Tensor;
use crate::{Error, Result};

fn check_shapes(y_hat: &Tensor, y: &Tensor) -> Result<()> {
    if y_hat.shape() != y.shape() {
        return Err(Error::Metric(format!(
            "shape mismatch: forecast {:?} vs truth {:?}",
            y_hat.shape(),
            y.shape()
        )));
    }
    if y.is_empty() {
        return Err(Error::Metric("empty inputs".into()));
    }
    Ok(())
}

/// Mean squared error over all entries.
pub fn mse(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    check_shapes(y_hat, y)?;
    let s: f64 = y_hat
        .data()
        .iter()
        .zip(y.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / y.len() as f64)
}

/// Mean absolute error over all entries.
pub fn mae(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    check_shapes(y_hat, y)?;
    let s: f64 = y_hat
        .data()
        .iter()
        .zip(y.data().iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(s / y.len() as f64)
}

/// Coefficient of determination against the global mean of the truth.
/// A constant truth has no variance to explain and is reported as an error.
pub fn r2(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    check_shapes(y_hat, y)?;
    let n = y.len() as f64;
    let mean = y.data().iter().sum::<f64>() / n;
    let ss_tot: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Metric(
            "truth is constant; r2 is undefined".into(),
        ));
    }
    let ss_res: f64 = y_hat
        .data()
        .iter()
        .zip(y.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Final metrics for one split/seed, on both the standardized scale the model
/// trains in and the original data scale.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mse: f64,
    pub mae: f64,
    pub r2: f64,
    pub mse_raw: f64,
    pub mae_raw: f64,
    pub n_samples: usize,
    pub horizon: usize,
    pub dataset: String,
    pub seed: u64,
}

impl EvalReport {
    /// Stable key/value listing for reports and CSV headers.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("mse".into(), format!("{:.9}", self.mse)),
            ("mae".into(), format!("{:.9}", self.mae)),
            ("r2".into(), format!("{:.9}", self.r2)),
            ("mse_raw".into(), format!("{:.9}", self.mse_raw)),
            ("mae_raw".into(), format!("{:.9}", self.mae_raw)),
            ("n_samples".into(), self.n_samples.to_string()),
            ("horizon".into(), self.horizon.to_string()),
            ("dataset".into(), self.dataset.clone()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// Streaming accumulator: feed one window at a time, finalize once.
pub struct MetricAccum {
    dataset: String,
    horizon: usize,
    seed: u64,
    n: usize,
    sse: f64,
    sae: f64,
    sum_y: f64,
    sumsq_y: f64,
    sse_raw: f64,
    sae_raw: f64,
    windows: usize,
}

impl MetricAccum {
    pub fn new(dataset: &str, horizon: usize, seed: u64) -> Self {
        MetricAccum {
            dataset: dataset.to_string(),
            horizon,
            seed,
            n: 0,
            sse: 0.0,
            sae: 0.0,
            sum_y: 0.0,
            sumsq_y: 0.0,
            sse_raw: 0.0,
            sae_raw: 0.0,
            windows: 0,
        }
    }

    /// Add one standardized-scale forecast/truth pair (rows are time steps);
    /// the standardizer maps both back for the raw-scale tallies.
    pub fn add(&mut self, y_hat: &Tensor, y: &Tensor, standardizer: &Standardizer) -> Result<()> {
        check_shapes(y_hat, y)?;
        let (rows, cols) = y.dims2();
        if cols != standardizer.channels() {
            return Err(Error::Metric(format!(
                "channel mismatch: data has {cols}, standardizer has {}",
                standardizer.channels()
            )));
        }
        for r in 0..rows {
            for c in 0..cols {
                let (p, t) = (y_hat.at2(r, c), y.at2(r, c));
                self.sse += (p - t) * (p - t);
                self.sae += (p - t).abs();
                self.sum_y += t;
                self.sumsq_y += t * t;
                let (pr, tr) = (standardizer.invert(c, p), standardizer.invert(c, t));
                self.sse_raw += (pr - tr) * (pr - tr);
                self.sae_raw += (pr - tr).abs();
            }
        }
        self.n += rows * cols;
        self.windows += 1;
        Ok(())
    }

    pub fn finalize(self) -> Result<EvalReport> {
        if self.n == 0 {
            return Err(Error::Metric("no samples accumulated".into()));
        }
        let n = self.n as f64;
        let ss_tot = self.sumsq_y - self.sum_y * self.sum_y / n;
        if ss_tot <= 0.0 {
            return Err(Error::Metric(
                "truth is constant; r2 is undefined".into(),
            ));
        }
        Ok(EvalReport {
            mse: self.sse / n,
            mae: self.sae / n,
            r2: 1.0 - self.sse / ss_tot,
            mse_raw: self.sse_raw / n,
            mae_raw: self.sae_raw / n,
            n_samples: self.windows,
            horizon: self.horizon,
            dataset: self.dataset,
            seed: self.seed,
        })
    }
}
