//! Synthetic series with known channel structure, for experiments and tests.

use crate::dataio::RawSeries;
use crate::numkit::{Tensor, Xoshiro256pp};

/// Channels come in pairs driven by a shared sinusoid latent: channels 2p and
/// 2p+1 both observe latent p plus independent Gaussian noise. Each pair gets
/// its own period, phase and amplitude, so cross-pair correlation stays low
/// while within-pair correlation stays high.
pub fn correlated_pairs(rows: usize, pairs: usize, noise_sd: f64, seed: u64) -> RawSeries {
    assert!(rows > 0 && pairs > 0, "need at least one row and one pair");
    let mut rng = Xoshiro256pp::seed_from(seed, 0);
    let n = 2 * pairs;

    let mut periods = Vec::with_capacity(pairs);
    let mut phases = Vec::with_capacity(pairs);
    let mut amps = Vec::with_capacity(pairs);
    for p in 0..pairs {
        // spread the periods out so different pairs stay near-orthogonal
        periods.push(18.0 + 13.0 * p as f64 + rng.uniform(0.0, 4.0));
        phases.push(rng.uniform(0.0, std::f64::consts::TAU));
        amps.push(rng.uniform(0.8, 1.2));
    }

    let mut values = Tensor::zeros(&[rows, n]);
    for t in 0..rows {
        for p in 0..pairs {
            let latent =
                amps[p] * (std::f64::consts::TAU * t as f64 / periods[p] + phases[p]).sin();
            for member in 0..2 {
                let v = latent + rng.normal(0.0, noise_sd);
                values.set2(t, 2 * p + member, v);
            }
        }
    }

    RawSeries {
        values,
        channel_names: (0..n).map(|c| format!("c{c}")).collect(),
        timestamps: None,
    }
}

/// Index of the channel sharing a latent with `channel`.
pub fn partner_of(channel: usize) -> usize {
    channel ^ 1
}
