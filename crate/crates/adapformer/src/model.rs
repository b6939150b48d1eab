//! Whole-model assembly.
//!
//! Owns the parameter lifecycle (init, canonical ordering, staging onto a
//! tape) and the window-level forward pass from a raw lookback block to a
//! normalized forecast plus loss terms.

use crate::acf::{self, HeadParams, PredictorMode, PredictorParams, PredictorVars};
use crate::encoder::{
    self, AceParams, EmbeddingParams, EncoderLayerParams, EncoderVars, ModelConfig,
};
use crate::numkit::{Tape, Tensor, Var, Xoshiro256pp};
use crate::revin::{self, RevinState};
use crate::simblock::{self, SimblockParams};

/// Distinct RNG streams per parameter group, so toggling one component never
/// shifts another component's initial weights.
pub mod streams {
    pub const EMBED: u64 = 1;
    pub const ACE: u64 = 2;
    pub const SIM: u64 = 3;
    pub const PREDICTOR: u64 = 4;
    pub const LAYER_BASE: u64 = 16;
    pub const SHUFFLE_BASE: u64 = 1 << 20;
    pub const DROPOUT_BASE: u64 = 1 << 21;
}

/// Every trainable tensor in the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embed: EmbeddingParams,
    pub ace: Option<AceParams>,
    pub layers: Vec<EncoderLayerParams>,
    pub sim: SimblockParams,
    pub predictor: PredictorParams,
}

pub struct ModelVars {
    pub encoder: EncoderVars,
    pub sim: crate::simblock::SimblockVars,
    pub predictor: PredictorVars,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let stream = |s: u64| Xoshiro256pp::seed_from(seed, s);
        let embed = EmbeddingParams::init(cfg, &mut stream(streams::EMBED));
        let ace = cfg.use_ace.then(|| AceParams::init(cfg, &mut stream(streams::ACE)));
        let layers = (0..cfg.layers)
            .map(|j| EncoderLayerParams::init(cfg, &mut stream(streams::LAYER_BASE + j as u64)))
            .collect();
        let sim = SimblockParams::init(cfg.channels, &mut stream(streams::SIM));
        let mut prng = stream(streams::PREDICTOR);
        let predictor = match cfg.predictor {
            PredictorMode::Acf | PredictorMode::Ci => {
                let k = cfg.effective_k();
                let count = if cfg.share_predictor { 1 } else { cfg.channels };
                PredictorParams::Heads(
                    (0..count)
                        .map(|_| HeadParams::init_grouped(k, cfg.d_model, cfg.horizon, &mut prng))
                        .collect(),
                )
            }
            PredictorMode::Mlp => PredictorParams::Heads(vec![HeadParams::init_shared(
                cfg.d_model,
                cfg.horizon,
                &mut prng,
            )]),
            PredictorMode::Cd => {
                let rows = cfg.channels * cfg.horizon;
                let cols = cfg.channels * cfg.d_model;
                let bound = 1.0 / (cols as f64).sqrt();
                let mut w = Tensor::zeros(&[rows, cols]);
                prng.fill_uniform(w.data_mut(), -bound, bound);
                PredictorParams::Joint { w, b: Tensor::zeros(&[rows]) }
            }
        };
        ModelParams { embed, ace, layers, sim, predictor }
    }

    /// Canonical (name, tensor) listing; the staging order matches exactly.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed.w".into(), &self.embed.w),
            ("embed.b".into(), &self.embed.b),
        ];
        if let Some(a) = &self.ace {
            out.push(("ace.down".into(), &a.down));
            out.push(("ace.up".into(), &a.up));
        }
        for (j, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{j}.wq"), &l.wq));
            out.push((format!("layer{j}.wk"), &l.wk));
            out.push((format!("layer{j}.wv"), &l.wv));
            out.push((format!("layer{j}.wo"), &l.wo));
            out.push((format!("layer{j}.ffn_w1"), &l.ffn_w1));
            out.push((format!("layer{j}.ffn_b1"), &l.ffn_b1));
            out.push((format!("layer{j}.ffn_w2"), &l.ffn_w2));
            out.push((format!("layer{j}.ffn_b2"), &l.ffn_b2));
        }
        out.push(("sim.w".into(), &self.sim.w));
        out.push(("sim.b".into(), &self.sim.b));
        match &self.predictor {
            PredictorParams::Heads(heads) => {
                for (i, h) in heads.iter().enumerate() {
                    out.push((format!("head{i}.wa"), &h.wa));
                    out.push((format!("head{i}.ba"), &h.ba));
                    out.push((format!("head{i}.wb"), &h.wb));
                    out.push((format!("head{i}.bb"), &h.bb));
                }
            }
            PredictorParams::Joint { w, b } => {
                out.push(("joint.w".into(), w));
                out.push(("joint.b".into(), b));
            }
        }
        out
    }

    /// Mutable view in the same canonical order, for the optimizer.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embed.w, &mut self.embed.b];
        if let Some(a) = &mut self.ace {
            out.push(&mut a.down);
            out.push(&mut a.up);
        }
        for l in &mut self.layers {
            out.push(&mut l.wq);
            out.push(&mut l.wk);
            out.push(&mut l.wv);
            out.push(&mut l.wo);
            out.push(&mut l.ffn_w1);
            out.push(&mut l.ffn_b1);
            out.push(&mut l.ffn_w2);
            out.push(&mut l.ffn_b2);
        }
        out.push(&mut self.sim.w);
        out.push(&mut self.sim.b);
        match &mut self.predictor {
            PredictorParams::Heads(heads) => {
                for h in heads {
                    out.push(&mut h.wa);
                    out.push(&mut h.ba);
                    out.push(&mut h.wb);
                    out.push(&mut h.bb);
                }
            }
            PredictorParams::Joint { w, b } => {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    /// Put every parameter on the tape; the flat list mirrors
    /// `named_tensors` order and is what gradient collection indexes.
    pub fn stage(&self, tape: &mut Tape) -> (ModelVars, Vec<Var>) {
        let embed = self.embed.stage(tape);
        let ace = self.ace.as_ref().map(|a| a.stage(tape));
        let layers: Vec<encoder::LayerVars> = self.layers.iter().map(|l| l.stage(tape)).collect();
        let sim = self.sim.stage(tape);
        let predictor = self.predictor.stage(tape);

        let mut flat = vec![embed.w, embed.b];
        if let Some(a) = &ace {
            flat.push(a.down);
            flat.push(a.up);
        }
        for l in &layers {
            flat.extend([l.wq, l.wk, l.wv, l.wo, l.ffn_w1, l.ffn_b1, l.ffn_w2, l.ffn_b2]);
        }
        flat.push(sim.w);
        flat.push(sim.b);
        match &predictor {
            PredictorVars::Heads(heads) => {
                for h in heads {
                    flat.extend([h.wa, h.ba, h.wb, h.bb]);
                }
            }
            PredictorVars::Joint { w, b } => {
                flat.push(*w);
                flat.push(*b);
            }
        }
        (
            ModelVars { encoder: EncoderVars { embed, ace, layers }, sim, predictor },
            flat,
        )
    }
}

fn needs_w_dec(cfg: &ModelConfig) -> bool {
    cfg.use_aux || cfg.predictor == PredictorMode::Acf
}

/// Everything the forward pass produces for one window.
pub struct ModelOutput {
    /// Normalized forecast, channels by horizon.
    pub y_hat_norm: Var,
    /// Similarity matrix, when the configuration computes one.
    pub w_dec: Option<Var>,
    /// Attention rows per layer and head, for inspection.
    pub attn: Vec<Var>,
    /// Window statistics for mapping forecasts back.
    pub revin: RevinState,
    /// The normalized lookback block (rows are time), for the aux target.
    pub x_norm: Tensor,
}

/// Run one lookback block (rows are time steps) through the full model.
pub fn forward(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    x: &Tensor,
    rng: &mut Xoshiro256pp,
) -> ModelOutput {
    let (rows, n) = x.dims2();
    assert_eq!(rows, cfg.lookback, "window length mismatch");
    assert_eq!(n, cfg.channels, "channel count mismatch");

    let (x_norm, revin) = revin::normalize(x);
    let x_t = tape.constant(x_norm.transpose2());
    let (h, attn) = encoder::encode(tape, &vars.encoder, cfg, x_t, rng);

    let w_dec = needs_w_dec(cfg).then(|| {
        let wg = tape.constant(simblock::gram(&x_norm));
        simblock::forward(tape, wg, &vars.sim)
    });

    let y_hat_norm = match cfg.predictor {
        PredictorMode::Acf | PredictorMode::Ci => {
            let PredictorVars::Heads(heads) = &vars.predictor else {
                panic!("grouped predictor expects head parameters");
            };
            let k = cfg.effective_k();
            // selection reads similarity values only; k = 1 needs none
            let sim_values = match &w_dec {
                Some(wd) => tape.value(*wd).clone(),
                None => Tensor::zeros(&[n, n]),
            };
            acf::forecast_grouped(tape, heads, h, &sim_values, k)
        }
        PredictorMode::Mlp => {
            let PredictorVars::Heads(heads) = &vars.predictor else {
                panic!("shared predictor expects head parameters");
            };
            acf::predict_shared(tape, &heads[0], h)
        }
        PredictorMode::Cd => {
            let PredictorVars::Joint { w, b } = &vars.predictor else {
                panic!("joint predictor expects a joint map");
            };
            acf::predict_joint(tape, *w, *b, h, cfg.horizon)
        }
    };

    ModelOutput { y_hat_norm, w_dec, attn, revin, x_norm }
}

pub struct LossTerms {
    pub mse: Var,
    pub aux: Option<Var>,
}

/// Forecast error on the input scale, plus the similarity term when the
/// configuration trains one.
pub fn loss_terms(
    tape: &mut Tape,
    cfg: &ModelConfig,
    out: &ModelOutput,
    y: &Tensor,
) -> LossTerms {
    let (rows, n) = y.dims2();
    assert_eq!(rows, cfg.horizon, "horizon length mismatch");
    assert_eq!(n, cfg.channels, "channel count mismatch");

    let y_norm = revin::normalize_with(&out.revin, y);
    // The forecast is judged on the scale the window came in on: the
    // normalized prediction is mapped back with the window statistics
    // (constants, so gradients just pick up the per-channel scale). Scoring
    // in the normalized frame instead would let a near-constant window
    // inflate its targets by 1/std and drown out every other sample.
    let (n_ch, hor) = (cfg.channels, cfg.horizon);
    let mut scale = Tensor::zeros(&[n_ch, hor]);
    let mut shift = Tensor::zeros(&[n_ch, hor]);
    for c in 0..n_ch {
        for t in 0..hor {
            scale.set2(c, t, out.revin.std[c]);
            shift.set2(c, t, out.revin.mean[c]);
        }
    }
    let scale = tape.constant(scale);
    let shift = tape.constant(shift);
    let scaled = tape.mul(out.y_hat_norm, scale);
    let pred = tape.add(scaled, shift);
    let target = tape.constant(y.transpose2());
    let diff = tape.sub(pred, target);
    let sq = tape.mul(diff, diff);
    let mse = tape.mean_all(sq);

    let aux = match (&out.w_dec, cfg.use_aux) {
        (Some(wd), true) => {
            let wy = tape.constant(simblock::gram(&y_norm));
            Some(simblock::aux_loss(tape, *wd, wy))
        }
        _ => None,
    };
    LossTerms { mse, aux }
}

/// Inference: forecast one window back on the input scale (rows are time).
/// Also returns the similarity matrix when one was computed.
pub fn predict(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    x: &Tensor,
    rng: &mut Xoshiro256pp,
) -> (Tensor, Option<Tensor>) {
    let out = forward(tape, vars, cfg, x, rng);
    let y_norm_t = tape.value(out.y_hat_norm).transpose2();
    let y = revin::denormalize(&out.revin, &y_norm_t);
    let w_dec = out.w_dec.map(|w| tape.value(w).clone());
    (y, w_dec)
}
