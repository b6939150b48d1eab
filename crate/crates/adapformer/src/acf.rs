//! Forecast heads.
//!
//! The adaptive head predicts each channel from a small group: the channel
//! itself plus its strongest partners under the similarity matrix. Group
//! selection reads similarity *values* only — no gradient flows through the
//! choice. Three reference heads bracket it: `Ci` (each channel alone), `Cd`
//! (all channels jointly through one flattened affine map), and `Mlp` (one
//! shared per-channel head, ignoring similarity).

use std::fmt;
use std::str::FromStr;

use crate::numkit::{Tape, Tensor, Var, Xoshiro256pp};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorMode {
    /// Group of k channels chosen per target from the similarity matrix.
    Acf,
    /// Channel-independent: every channel forecast from its own token only.
    Ci,
    /// Channel-dependent: one joint map over all tokens at once.
    Cd,
    /// One shared skip-connected head applied to every token separately.
    Mlp,
}

impl FromStr for PredictorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "acf" => Ok(PredictorMode::Acf),
            "ci" => Ok(PredictorMode::Ci),
            "cd" => Ok(PredictorMode::Cd),
            "mlp" => Ok(PredictorMode::Mlp),
            other => Err(Error::Config(format!(
                "unknown predictor '{other}' (expected acf, ci, cd or mlp)"
            ))),
        }
    }
}

impl fmt::Display for PredictorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorMode::Acf => "acf",
            PredictorMode::Ci => "ci",
            PredictorMode::Cd => "cd",
            PredictorMode::Mlp => "mlp",
        })
    }
}

/// Group for channel `i`: `i` first, then the k-1 largest entries of row `i`
/// excluding `i` itself; ties break toward the lower channel index.
pub fn select_channels(w_dec: &Tensor, i: usize, k: usize) -> Vec<usize> {
    let (n, m) = w_dec.dims2();
    assert_eq!(n, m, "similarity matrix must be square");
    assert!(i < n, "channel {i} out of range {n}");
    assert!(k >= 1 && k <= n, "group size {k} out of range 1..={n}");
    let row = w_dec.row(i);
    let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let cmp = |&a: &usize, &b: &usize| {
        row[b]
            .partial_cmp(&row[a])
            .expect("similarity entries must be comparable")
            .then(a.cmp(&b))
    };
    // partial selection: only the k-1 winners need ordering
    let take = k - 1;
    if take > 0 && take < others.len() {
        others.select_nth_unstable_by(take - 1, cmp);
    }
    others[..take].sort_by(cmp);
    let mut group = Vec::with_capacity(k);
    group.push(i);
    group.extend(others.into_iter().take(take));
    group
}

/// Parameters of one skip-connected head.
///
/// Grouped heads mix across the k gathered rows (`wa` is k x k, `ba` has one
/// entry per row); the shared `Mlp` head mixes within a token (`wa` is D x D,
/// `ba` has one entry per feature).
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub wa: Tensor,
    pub ba: Tensor,
    pub wb: Tensor,
    pub bb: Tensor,
}

pub struct HeadVars {
    pub wa: Var,
    pub ba: Var,
    pub wb: Var,
    pub bb: Var,
}

impl HeadParams {
    /// Head for a k-row group feeding a horizon-length readout.
    pub fn init_grouped(k: usize, d_model: usize, horizon: usize, rng: &mut Xoshiro256pp) -> Self {
        let kb = 1.0 / (k as f64).sqrt();
        let db = 1.0 / (d_model as f64).sqrt();
        let mut wa = Tensor::zeros(&[k, k]);
        rng.fill_uniform(wa.data_mut(), -kb, kb);
        let mut wb = Tensor::zeros(&[horizon, d_model]);
        rng.fill_uniform(wb.data_mut(), -db, db);
        HeadParams {
            wa,
            ba: Tensor::zeros(&[k]),
            wb,
            bb: Tensor::zeros(&[horizon]),
        }
    }

    /// Shared per-token head (the similarity-blind baseline).
    pub fn init_shared(d_model: usize, horizon: usize, rng: &mut Xoshiro256pp) -> Self {
        let db = 1.0 / (d_model as f64).sqrt();
        let mut wa = Tensor::zeros(&[d_model, d_model]);
        rng.fill_uniform(wa.data_mut(), -db, db);
        let mut wb = Tensor::zeros(&[horizon, d_model]);
        rng.fill_uniform(wb.data_mut(), -db, db);
        HeadParams {
            wa,
            ba: Tensor::zeros(&[d_model]),
            wb,
            bb: Tensor::zeros(&[horizon]),
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> HeadVars {
        HeadVars {
            wa: tape.param(self.wa.clone()),
            ba: tape.param(self.ba.clone()),
            wb: tape.param(self.wb.clone()),
            bb: tape.param(self.bb.clone()),
        }
    }
}

/// One grouped forecast: mix the gathered rows, keep the target row.
///
/// z = H_C + relu(W_a H_C + b_a), then the first row of z W_b^T + b_b.
pub fn predict_one(tape: &mut Tape, head: &HeadVars, h_group: Var) -> Var {
    let mixed = tape.matmul(head.wa, h_group);
    let mixed = tape.add_row_bias(mixed, head.ba);
    let act = tape.relu(mixed);
    let z = tape.add(h_group, act);
    let y = tape.matmul_nt(z, head.wb);
    let y = tape.add_bias(y, head.bb);
    tape.slice_rows(y, 0, 1)
}

/// Shared head applied to all tokens at once: z = H + relu(H W_a^T + b_a),
/// then z W_b^T + b_b.
pub fn predict_shared(tape: &mut Tape, head: &HeadVars, h: Var) -> Var {
    let lin = tape.matmul_nt(h, head.wa);
    let lin = tape.add_bias(lin, head.ba);
    let act = tape.relu(lin);
    let z = tape.add(h, act);
    let y = tape.matmul_nt(z, head.wb);
    tape.add_bias(y, head.bb)
}

/// Joint head: flatten all tokens, one affine map, reshape to N x horizon.
pub fn predict_joint(tape: &mut Tape, w: Var, b: Var, h: Var, horizon: usize) -> Var {
    let (n, d) = tape.value(h).dims2();
    let flat = tape.reshape(h, &[1, n * d]);
    let y = tape.matmul_nt(flat, w);
    let y = tape.add_bias(y, b);
    tape.reshape(y, &[n, horizon])
}

/// Full trainable predictor: per-channel (or shared) grouped heads, or the
/// single joint map.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictorParams {
    Heads(Vec<HeadParams>),
    Joint { w: Tensor, b: Tensor },
}

pub enum PredictorVars {
    Heads(Vec<HeadVars>),
    Joint { w: Var, b: Var },
}

impl PredictorParams {
    pub fn stage(&self, tape: &mut Tape) -> PredictorVars {
        match self {
            PredictorParams::Heads(heads) => {
                PredictorVars::Heads(heads.iter().map(|h| h.stage(tape)).collect())
            }
            PredictorParams::Joint { w, b } => PredictorVars::Joint {
                w: tape.param(w.clone()),
                b: tape.param(b.clone()),
            },
        }
    }
}

/// Grouped forecast over every channel; `w_dec` supplies the group of each
/// target and is read as plain values, outside the gradient path.
pub fn forecast_grouped(
    tape: &mut Tape,
    heads: &[HeadVars],
    h: Var,
    w_dec: &Tensor,
    k: usize,
) -> Var {
    let (n, _) = tape.value(h).dims2();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let group = select_channels(w_dec, i, k);
        let gathered = tape.gather_rows(h, &group);
        let head = if heads.len() == 1 { &heads[0] } else { &heads[i] };
        rows.push(predict_one(tape, head, gathered));
    }
    tape.concat_rows(&rows)
}
