//! Channel-token encoder.
//!
//! Each channel's lookback becomes one token: a shared affine map takes the
//! N x T transposed window to N x D. An optional low-rank enhancer nudges the
//! tokens (it starts as the identity because its up-projection is zero), and a
//! stack of pre-norm attention/FFN layers mixes information across channels.

use crate::acf::PredictorMode;
use crate::numkit::{Tape, Tensor, Var, Xoshiro256pp};
use crate::{Error, Result};

/// Architecture hyperparameters; `validate` enforces the legal ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub rank: usize,
    pub k: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub dropout: f64,
    pub use_ace: bool,
    pub use_aux: bool,
    pub predictor: PredictorMode,
    pub share_predictor: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.channels < 1 {
            return fail("channels must be at least 1".into());
        }
        if self.lookback < 1 || self.horizon < 1 {
            return fail("lookback and horizon must be at least 1".into());
        }
        if self.d_model < 2 {
            return fail(format!("d_model {} must be at least 2", self.d_model));
        }
        if self.rank < 1 || self.rank > self.d_model {
            return fail(format!(
                "rank {} must lie in 1..={}",
                self.rank, self.d_model
            ));
        }
        if self.k < 1 || self.k > self.channels {
            return fail(format!(
                "k {} must lie in 1..={} (channel count)",
                self.k, self.channels
            ));
        }
        if self.heads < 1 || self.d_model % self.heads != 0 {
            return fail(format!(
                "heads {} must divide d_model {}",
                self.heads, self.d_model
            ));
        }
        if self.layers < 1 {
            return fail("layers must be at least 1".into());
        }
        if self.ffn < 1 {
            return fail("ffn width must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must lie in [0,1)", self.dropout));
        }
        Ok(())
    }

    /// Group size the predictor actually uses.
    pub fn effective_k(&self) -> usize {
        match self.predictor {
            PredictorMode::Ci => 1,
            PredictorMode::Cd => self.channels,
            PredictorMode::Acf | PredictorMode::Mlp => self.k,
        }
    }
}

fn uniform_init(rng: &mut Xoshiro256pp, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    rng.fill_uniform(t.data_mut(), -bound, bound);
    t
}

/// Shared channel embedding: one affine map applied to every channel row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams {
    pub w: Tensor,
    pub b: Tensor,
}

pub struct EmbeddingVars {
    pub w: Var,
    pub b: Var,
}

impl EmbeddingParams {
    pub fn init(cfg: &ModelConfig, rng: &mut Xoshiro256pp) -> Self {
        EmbeddingParams {
            w: uniform_init(rng, &[cfg.d_model, cfg.lookback], cfg.lookback),
            b: Tensor::zeros(&[cfg.d_model]),
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> EmbeddingVars {
        EmbeddingVars {
            w: tape.param(self.w.clone()),
            b: tape.param(self.b.clone()),
        }
    }
}

/// tokens = x_t W^T + b, rows are channels.
pub fn embed(tape: &mut Tape, vars: &EmbeddingVars, x_t: Var) -> Var {
    let lin = tape.matmul_nt(x_t, vars.w);
    tape.add_bias(lin, vars.b)
}

/// Low-rank channel enhancer. `up` starts at zero, so a fresh enhancer is an
/// exact identity and training opens it up gradually.
#[derive(Clone, Debug, PartialEq)]
pub struct AceParams {
    pub down: Tensor,
    pub up: Tensor,
}

pub struct AceVars {
    pub down: Var,
    pub up: Var,
}

impl AceParams {
    pub fn init(cfg: &ModelConfig, rng: &mut Xoshiro256pp) -> Self {
        AceParams {
            down: uniform_init(rng, &[cfg.rank, cfg.d_model], cfg.d_model),
            up: Tensor::zeros(&[cfg.d_model, cfg.rank]),
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> AceVars {
        AceVars {
            down: tape.param(self.down.clone()),
            up: tape.param(self.up.clone()),
        }
    }
}

/// tokens + tokens down^T up^T — a residual bottleneck with no bias and no
/// nonlinearity, shared across channels.
pub fn ace(tape: &mut Tape, vars: &AceVars, tokens: Var) -> Var {
    let low = tape.matmul_nt(tokens, vars.down);
    let delta = tape.matmul_nt(low, vars.up);
    tape.add(tokens, delta)
}

/// One pre-norm encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
}

pub struct LayerVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

impl EncoderLayerParams {
    pub fn init(cfg: &ModelConfig, rng: &mut Xoshiro256pp) -> Self {
        let d = cfg.d_model;
        EncoderLayerParams {
            wq: uniform_init(rng, &[d, d], d),
            wk: uniform_init(rng, &[d, d], d),
            wv: uniform_init(rng, &[d, d], d),
            wo: uniform_init(rng, &[d, d], d),
            ffn_w1: uniform_init(rng, &[cfg.ffn, d], d),
            ffn_b1: Tensor::zeros(&[cfg.ffn]),
            ffn_w2: uniform_init(rng, &[d, cfg.ffn], cfg.ffn),
            ffn_b2: Tensor::zeros(&[d]),
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            wq: tape.param(self.wq.clone()),
            wk: tape.param(self.wk.clone()),
            wv: tape.param(self.wv.clone()),
            wo: tape.param(self.wo.clone()),
            ffn_w1: tape.param(self.ffn_w1.clone()),
            ffn_b1: tape.param(self.ffn_b1.clone()),
            ffn_w2: tape.param(self.ffn_w2.clone()),
            ffn_b2: tape.param(self.ffn_b2.clone()),
        }
    }
}

/// Multi-head self-attention over channel tokens (no projection biases).
/// Also returns each head's attention rows for inspection.
pub fn attention(tape: &mut Tape, lv: &LayerVars, u: Var, heads: usize) -> (Var, Vec<Var>) {
    let (_, d) = tape.value(u).dims2();
    assert_eq!(d % heads, 0, "head count must divide the model width");
    let dh = d / heads;
    let q = tape.matmul_nt(u, lv.wq);
    let k = tape.matmul_nt(u, lv.wk);
    let v = tape.matmul_nt(u, lv.wv);
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh),
                tape.slice_cols(k, h * dh, dh),
                tape.slice_cols(v, h * dh, dh),
            )
        };
        let scores = tape.matmul_nt(qh, kh);
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let p = tape.softmax_rows(scaled);
        probs.push(p);
        outs.push(tape.matmul(p, vh));
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    (tape.matmul_nt(cat, lv.wo), probs)
}

/// x + Drop(Att(Norm(x))), then x' + Drop(FFN(Norm(x'))).
pub fn encoder_layer(
    tape: &mut Tape,
    lv: &LayerVars,
    x: Var,
    heads: usize,
    dropout: f64,
    rng: &mut Xoshiro256pp,
) -> (Var, Vec<Var>) {
    let u = tape.instance_norm_rows(x);
    let (att, probs) = attention(tape, lv, u, heads);
    let att = tape.dropout(att, dropout, rng);
    let x1 = tape.add(x, att);

    let u2 = tape.instance_norm_rows(x1);
    let h = tape.matmul_nt(u2, lv.ffn_w1);
    let h = tape.add_bias(h, lv.ffn_b1);
    let h = tape.relu(h);
    let h = tape.matmul_nt(h, lv.ffn_w2);
    let h = tape.add_bias(h, lv.ffn_b2);
    let h = tape.dropout(h, dropout, rng);
    (tape.add(x1, h), probs)
}

pub struct EncoderVars {
    pub embed: EmbeddingVars,
    pub ace: Option<AceVars>,
    pub layers: Vec<LayerVars>,
}

/// Full path from a transposed normalized window (N x T) to channel tokens
/// (N x D). Attention rows from every layer come back for diagnostics.
pub fn encode(
    tape: &mut Tape,
    vars: &EncoderVars,
    cfg: &ModelConfig,
    x_t: Var,
    rng: &mut Xoshiro256pp,
) -> (Var, Vec<Var>) {
    let mut tokens = embed(tape, &vars.embed, x_t);
    if let Some(av) = &vars.ace {
        tokens = ace(tape, av, tokens);
    }
    let mut all_probs = Vec::new();
    for lv in &vars.layers {
        let (next, probs) = encoder_layer(tape, lv, tokens, cfg.heads, cfg.dropout, rng);
        tokens = next;
        all_probs.extend(probs);
    }
    (tokens, all_probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(n: usize, d: usize, heads: usize) -> ModelConfig {
        ModelConfig {
            channels: n,
            lookback: 6,
            horizon: 3,
            d_model: d,
            rank: 2.min(d),
            k: 1,
            heads,
            layers: 1,
            ffn: 2 * d,
            dropout: 0.0,
            use_ace: true,
            use_aux: true,
            predictor: PredictorMode::Acf,
            share_predictor: false,
        }
    }

    fn rand(rng: &mut Xoshiro256pp, shape: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(shape);
        rng.fill_uniform(t.data_mut(), -1.0, 1.0);
        t
    }

    #[test]
    fn validate_rejects_bad_ranges() {
        let good = tiny_cfg(4, 8, 2);
        assert!(good.validate().is_ok());
        let mut c = good.clone();
        c.heads = 3;
        assert!(c.validate().is_err(), "heads must divide d_model");
        let mut c = good.clone();
        c.rank = 9;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.k = 5;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = good;
        c.layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_embedding_gives_zero_tokens() {
        let cfg = tiny_cfg(3, 4, 1);
        let mut tape = Tape::new(false);
        let vars = EmbeddingVars {
            w: tape.param(Tensor::zeros(&[4, 6])),
            b: tape.param(Tensor::zeros(&[4])),
        };
        let x = tape.constant(Tensor::from_vec(vec![1.0; 18], &[3, 6]));
        let tok = embed(&mut tape, &vars, x);
        assert_eq!(tape.value(tok).shape(), &[3, 4]);
        assert!(tape.value(tok).data().iter().all(|&v| v == 0.0));
        let _ = cfg;
    }

    #[test]
    fn embedding_matches_affine_oracle() {
        let mut rng = Xoshiro256pp::seed_from(7, 0);
        let w = rand(&mut rng, &[4, 6]);
        let b = rand(&mut rng, &[4]);
        let x = rand(&mut rng, &[3, 6]);
        let mut tape = Tape::new(false);
        let vars = EmbeddingVars {
            w: tape.param(w.clone()),
            b: tape.param(b.clone()),
        };
        let xv = tape.constant(x.clone());
        let tok = embed(&mut tape, &vars, xv);
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 =
                    (0..6).map(|t| x.at2(i, t) * w.at2(j, t)).sum::<f64>() + b.data()[j];
                assert!((tape.value(tok).at2(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_channel_embeds_to_one_token() {
        let mut rng = Xoshiro256pp::seed_from(8, 0);
        let mut tape = Tape::new(false);
        let vars = EmbeddingVars {
            w: tape.param(rand(&mut rng, &[5, 6])),
            b: tape.param(rand(&mut rng, &[5])),
        };
        let x = tape.constant(rand(&mut rng, &[1, 6]));
        let tok = embed(&mut tape, &vars, x);
        assert_eq!(tape.value(tok).shape(), &[1, 5]);
    }

    #[test]
    fn fresh_enhancer_is_exactly_identity() {
        let cfg = tiny_cfg(3, 4, 1);
        let mut rng = Xoshiro256pp::seed_from(9, 0);
        let params = AceParams::init(&cfg, &mut rng);
        assert!(params.up.data().iter().all(|&v| v == 0.0));
        let mut tape = Tape::new(false);
        let vars = params.stage(&mut tape);
        let tok = tape.constant(rand(&mut rng, &[3, 4]));
        let out = ace(&mut tape, &vars, tok);
        assert_eq!(tape.value(out), tape.value(tok), "bitwise identity");
    }

    #[test]
    fn identity_factorization_doubles_tokens() {
        // With rank == width and up = down = I, the residual equals the input.
        let d = 3;
        let mut eye = Tensor::zeros(&[d, d]);
        for i in 0..d {
            eye.set2(i, i, 1.0);
        }
        let mut tape = Tape::new(false);
        let vars = AceVars {
            down: tape.param(eye.clone()),
            up: tape.param(eye),
        };
        let tok = tape.constant(Tensor::from_vec(
            vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0],
            &[2, 3],
        ));
        let out = ace(&mut tape, &vars, tok);
        for (o, t) in tape.value(out).data().iter().zip(
            [1.0, -2.0, 0.5, 3.0, 0.0, -1.0].iter(),
        ) {
            assert!((o - 2.0 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn enhancer_matches_low_rank_oracle() {
        let mut rng = Xoshiro256pp::seed_from(10, 0);
        let (n, d, r) = (3, 4, 2);
        let down = rand(&mut rng, &[r, d]);
        let up = rand(&mut rng, &[d, r]);
        let tok = rand(&mut rng, &[n, d]);
        let mut tape = Tape::new(false);
        let vars = AceVars {
            down: tape.param(down.clone()),
            up: tape.param(up.clone()),
        };
        let tv = tape.constant(tok.clone());
        let out = ace(&mut tape, &vars, tv);
        for i in 0..n {
            for j in 0..d {
                let mut want = tok.at2(i, j);
                for a in 0..r {
                    let low: f64 = (0..d).map(|c| tok.at2(i, c) * down.at2(a, c)).sum();
                    want += low * up.at2(j, a);
                }
                assert!((tape.value(out).at2(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_attention_is_a_point_mass() {
        let cfg = tiny_cfg(1, 4, 2);
        let mut rng = Xoshiro256pp::seed_from(12, 0);
        let params = EncoderLayerParams::init(&cfg, &mut rng);
        let mut tape = Tape::new(false);
        let lv = params.stage(&mut tape);
        let u = tape.constant(rand(&mut rng, &[1, 4]));
        let (_, probs) = attention(&mut tape, &lv, u, 2);
        for p in probs {
            assert_eq!(tape.value(p).shape(), &[1, 1]);
            assert_eq!(tape.value(p).item(), 1.0);
        }
    }

    #[test]
    fn zero_weight_layer_is_identity() {
        let zero = |shape: &[usize]| Tensor::zeros(shape);
        let mut tape = Tape::new(false);
        let lv = LayerVars {
            wq: tape.param(zero(&[4, 4])),
            wk: tape.param(zero(&[4, 4])),
            wv: tape.param(zero(&[4, 4])),
            wo: tape.param(zero(&[4, 4])),
            ffn_w1: tape.param(zero(&[8, 4])),
            ffn_b1: tape.param(zero(&[8])),
            ffn_w2: tape.param(zero(&[4, 8])),
            ffn_b2: tape.param(zero(&[4])),
        };
        let mut rng = Xoshiro256pp::seed_from(13, 0);
        let x = tape.constant(rand(&mut rng, &[3, 4]));
        let (out, _) = encoder_layer(&mut tape, &lv, x, 2, 0.0, &mut rng);
        assert_eq!(tape.value(out), tape.value(x));
    }

    #[test]
    fn layer_commutes_with_channel_permutation() {
        let cfg = tiny_cfg(4, 8, 2);
        let mut rng = Xoshiro256pp::seed_from(14, 0);
        let params = EncoderLayerParams::init(&cfg, &mut rng);
        let x = rand(&mut rng, &[4, 8]);
        let perm = [2usize, 0, 3, 1];
        let mut xp = Tensor::zeros(&[4, 8]);
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..8 {
                xp.set2(dst, j, x.at2(src, j));
            }
        }

        let run = |input: &Tensor| -> Tensor {
            let mut tape = Tape::new(false);
            let lv = params.stage(&mut tape);
            let xv = tape.constant(input.clone());
            let mut rng2 = Xoshiro256pp::seed_from(0, 0);
            let (out, _) = encoder_layer(&mut tape, &lv, xv, 2, 0.0, &mut rng2);
            tape.value(out).clone()
        };

        let base = run(&x);
        let permuted = run(&xp);
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..8 {
                assert!((permuted.at2(dst, j) - base.at2(src, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_channel_layer_matches_hand_oracle() {
        // h=1, N=2, D=2: replicate the whole layer with straight loops.
        let mut rng = Xoshiro256pp::seed_from(15, 0);
        let shapes: Vec<Tensor> = (0..4).map(|_| rand(&mut rng, &[2, 2])).collect();
        let w1 = rand(&mut rng, &[4, 2]);
        let b1 = rand(&mut rng, &[4]);
        let w2 = rand(&mut rng, &[2, 4]);
        let b2 = rand(&mut rng, &[2]);
        let x = rand(&mut rng, &[2, 2]);

        let mut tape = Tape::new(false);
        let lv = LayerVars {
            wq: tape.param(shapes[0].clone()),
            wk: tape.param(shapes[1].clone()),
            wv: tape.param(shapes[2].clone()),
            wo: tape.param(shapes[3].clone()),
            ffn_w1: tape.param(w1.clone()),
            ffn_b1: tape.param(b1.clone()),
            ffn_w2: tape.param(w2.clone()),
            ffn_b2: tape.param(b2.clone()),
        };
        let xv = tape.constant(x.clone());
        let (out, _) = encoder_layer(&mut tape, &lv, xv, 1, 0.0, &mut rng);

        // oracle
        let norm_rows = |m: &Tensor| -> Tensor {
            let (rows, cols) = m.dims2();
            let mut o = m.clone();
            for i in 0..rows {
                let row = m.row(i);
                let mu = row.iter().sum::<f64>() / cols as f64;
                let sd =
                    (row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64).sqrt();
                let s = sd.max(1e-5);
                for j in 0..cols {
                    o.set2(i, j, (m.at2(i, j) - mu) / s);
                }
            }
            o
        };
        let affine_nt = |a: &Tensor, w: &Tensor, b: Option<&Tensor>| -> Tensor {
            let (m, inner) = a.dims2();
            let (out_dim, _) = w.dims2();
            let mut o = Tensor::zeros(&[m, out_dim]);
            for i in 0..m {
                for j in 0..out_dim {
                    let mut acc: f64 = (0..inner).map(|t| a.at2(i, t) * w.at2(j, t)).sum();
                    if let Some(b) = b {
                        acc += b.data()[j];
                    }
                    o.set2(i, j, acc);
                }
            }
            o
        };
        let u = norm_rows(&x);
        let q = affine_nt(&u, &shapes[0], None);
        let k = affine_nt(&u, &shapes[1], None);
        let v = affine_nt(&u, &shapes[2], None);
        let mut att = Tensor::zeros(&[2, 2]);
        for i in 0..2 {
            let s0 = (q.at2(i, 0) * k.at2(0, 0) + q.at2(i, 1) * k.at2(0, 1)) / 2f64.sqrt();
            let s1 = (q.at2(i, 0) * k.at2(1, 0) + q.at2(i, 1) * k.at2(1, 1)) / 2f64.sqrt();
            let mx = s0.max(s1);
            let (e0, e1) = ((s0 - mx).exp(), (s1 - mx).exp());
            let z = e0 + e1;
            let (p0, p1) = (e0 / z, e1 / z);
            for j in 0..2 {
                att.set2(i, j, p0 * v.at2(0, j) + p1 * v.at2(1, j));
            }
        }
        let att_o = affine_nt(&att, &shapes[3], None);
        let mut x1 = x.clone();
        x1.add_scaled(&att_o, 1.0);
        let u2 = norm_rows(&x1);
        let mut hidden = affine_nt(&u2, &w1, Some(&b1));
        for v in hidden.data_mut() {
            *v = v.max(0.0);
        }
        let ffn = affine_nt(&hidden, &w2, Some(&b2));
        let mut want = x1.clone();
        want.add_scaled(&ffn, 1.0);

        for (got, exp) in tape.value(out).data().iter().zip(want.data().iter()) {
            assert!((got - exp).abs() < 1e-10, "{got} vs {exp}");
        }
    }

    #[test]
    fn constant_bias_embedding_passes_through_zero_layers() {
        // Zero embedding weights and a constant bias make every token equal
        // the bias; a zero-weight layer then leaves them untouched.
        let mut tape = Tape::new(false);
        let b = Tensor::from_vec(vec![0.3, -1.2, 0.7, 2.0], &[4]);
        let vars = EncoderVars {
            embed: EmbeddingVars {
                w: tape.param(Tensor::zeros(&[4, 6])),
                b: tape.param(b.clone()),
            },
            ace: None,
            layers: vec![LayerVars {
                wq: tape.param(Tensor::zeros(&[4, 4])),
                wk: tape.param(Tensor::zeros(&[4, 4])),
                wv: tape.param(Tensor::zeros(&[4, 4])),
                wo: tape.param(Tensor::zeros(&[4, 4])),
                ffn_w1: tape.param(Tensor::zeros(&[8, 4])),
                ffn_b1: tape.param(Tensor::zeros(&[8])),
                ffn_w2: tape.param(Tensor::zeros(&[4, 8])),
                ffn_b2: tape.param(Tensor::zeros(&[4])),
            }],
        };
        let cfg = ModelConfig { heads: 2, ..tiny_cfg(3, 4, 2) };
        let mut rng = Xoshiro256pp::seed_from(0, 0);
        let x = tape.constant(Tensor::from_vec(vec![0.5; 18], &[3, 6]));
        let (h, _) = encode(&mut tape, &vars, &cfg, x, &mut rng);
        for i in 0..3 {
            assert_eq!(tape.value(h).row(i), b.data());
        }
    }

    #[test]
    fn encode_shapes_and_ace_toggle() {
        let cfg = tiny_cfg(4, 8, 2);
        let mut rng = Xoshiro256pp::seed_from(21, 0);
        let embed_p = EmbeddingParams::init(&cfg, &mut rng);
        let ace_p = AceParams::init(&cfg, &mut rng);
        let layer_p = EncoderLayerParams::init(&cfg, &mut rng);
        let x = rand(&mut rng, &[4, 6]);

        let run = |with_ace: bool| -> Tensor {
            let mut tape = Tape::new(false);
            let vars = EncoderVars {
                embed: embed_p.stage(&mut tape),
                ace: with_ace.then(|| ace_p.stage(&mut tape)),
                layers: vec![layer_p.stage(&mut tape)],
            };
            let xv = tape.constant(x.clone());
            let mut r = Xoshiro256pp::seed_from(0, 0);
            let (h, probs) = encode(&mut tape, &vars, &cfg, xv, &mut r);
            assert_eq!(tape.value(h).shape(), &[4, 8]);
            assert_eq!(probs.len(), cfg.heads * cfg.layers);
            tape.value(h).clone()
        };

        // `up` is zero-initialized, so enabling the enhancer changes nothing.
        assert_eq!(run(true), run(false));
    }
}
