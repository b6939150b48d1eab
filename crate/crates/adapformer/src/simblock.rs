//! Channel-similarity block.
//!
//! From a normalized lookback window it forms the channel Gram matrix, passes
//! it through a small learned residual, and row-softmaxes the result into a
//! stochastic similarity matrix. The same matrix is both supervised against
//! the horizon's Gram (auxiliary loss) and used to pick predictor groups.

use crate::numkit::{matmul_tn, Tape, Tensor, Var, Xoshiro256pp};

/// Learned residual on the Gram logits: one square map plus a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct SimblockParams {
    pub w: Tensor,
    pub b: Tensor,
}

pub struct SimblockVars {
    pub w: Var,
    pub b: Var,
}

impl SimblockParams {
    pub fn init(channels: usize, rng: &mut Xoshiro256pp) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        let mut w = Tensor::zeros(&[channels, channels]);
        rng.fill_uniform(w.data_mut(), -bound, bound);
        SimblockParams { w, b: Tensor::zeros(&[channels]) }
    }

    pub fn stage(&self, tape: &mut Tape) -> SimblockVars {
        SimblockVars {
            w: tape.param(self.w.clone()),
            b: tape.param(self.b.clone()),
        }
    }
}

/// Channel Gram matrix X^T X of a rows-by-channels block.
pub fn gram(x: &Tensor) -> Tensor {
    matmul_tn(x, x)
}

/// softmax_rows(W + relu(W W_lin^T + b)).
pub fn forward(tape: &mut Tape, w_gram: Var, vars: &SimblockVars) -> Var {
    let lin = tape.matmul_nt(w_gram, vars.w);
    let lin = tape.add_bias(lin, vars.b);
    let res = tape.relu(lin);
    let logits = tape.add(w_gram, res);
    tape.softmax_rows(logits)
}

/// Sum of squared entry differences between the two matrices.
pub fn aux_loss(tape: &mut Tape, w_dec: Var, w_y: Var) -> Var {
    let d = tape.sub(w_y, w_dec);
    let sq = tape.mul(d, d);
    tape.sum_all(sq)
}
