//! Optimization loop, evaluation, multi-seed runs and checkpointing.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::dataio::{Dataset, SplitSpec, Window};
use crate::encoder::ModelConfig;
use crate::metrics::{EvalReport, MetricAccum};
use crate::model::{self, streams, ModelParams};
use crate::numkit::{AdamState, Tape, Tensor, Var, Xoshiro256pp};
use crate::{Error, Result};

/// Training aborts when the loss leaves this range; by then the run is junk.
///
/// The ceiling has to sit far above anything reachable on real data: a
/// near-constant lookback window pins the RevIN scale at its floor, the
/// normalized target Gram squares the blowup, and the similarity penalty
/// squares it again, so legitimate batches can post losses around 1e25.
/// Genuine optimizer blowups overshoot this by dozens of orders.
const DIVERGENCE_CEILING: f64 = 1e30;

/// How the similarity term is weighted into the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxScale {
    /// Divide by sqrt of the matrix entry count (i.e. by the channel count).
    SqrtCard,
    /// Add the raw sum of squares.
    Raw,
}

impl FromStr for AuxScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sqrt" => Ok(AuxScale::SqrtCard),
            "raw" => Ok(AuxScale::Raw),
            other => Err(Error::Config(format!(
                "unknown aux scaling '{other}' (expected sqrt or raw)"
            ))),
        }
    }
}

impl fmt::Display for AuxScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxScale::SqrtCard => "sqrt",
            AuxScale::Raw => "raw",
        })
    }
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub aux_scale: AuxScale,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            clip_norm: None,
            aux_scale: AuxScale::SqrtCard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max epochs must be at least 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// total = mse + scaled similarity term (when present).
pub fn combine_losses(
    tape: &mut Tape,
    mse: Var,
    aux: Option<Var>,
    channels: usize,
    scale: AuxScale,
) -> Var {
    match aux {
        None => mse,
        Some(a) => {
            let term = match scale {
                AuxScale::SqrtCard => tape.scale(a, 1.0 / channels as f64),
                AuxScale::Raw => a,
            };
            tape.add(mse, term)
        }
    }
}

/// Per-epoch record kept in the fit history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub sim_grad_norm: f64,
}

/// Outcome of `fit`: the best-validation snapshot plus the full history.
pub struct FitResult {
    pub params: ModelParams,
    pub adam: AdamState,
    pub best_epoch: usize,
    pub best_val: f64,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

pub struct BatchStats {
    pub mean_loss: f64,
    pub sim_grad_norm: f64,
}

fn sim_indices(params: &ModelParams) -> Vec<usize> {
    params
        .named_tensors()
        .iter()
        .enumerate()
        .filter(|(_, (name, _))| name.starts_with("sim."))
        .map(|(i, _)| i)
        .collect()
}

fn grad_norm(acc: &[Option<Tensor>], indices: &[usize]) -> f64 {
    indices
        .iter()
        .filter_map(|&i| acc[i].as_ref())
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn clip_gradients(acc: &mut [Option<Tensor>], max_norm: f64) {
    let total: f64 = acc
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in acc.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }
}

/// One optimizer update from a batch of (lookback, horizon) sample pairs.
pub fn batch_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    samples: &[(Tensor, Tensor)],
    lr: f64,
    drop_rng: &mut Xoshiro256pp,
) -> Result<BatchStats> {
    assert!(!samples.is_empty(), "empty batch");
    let mut tape = Tape::new(true);
    let (vars, flat) = params.stage(&mut tape);
    let mark = tape.mark();
    let mut acc: Vec<Option<Tensor>> = (0..flat.len()).map(|_| None).collect();
    let mut loss_sum = 0.0;

    for (x, y) in samples {
        let out = model::forward(&mut tape, &vars, mcfg, x, drop_rng);
        let terms = model::loss_terms(&mut tape, mcfg, &out, y);
        let total = combine_losses(&mut tape, terms.mse, terms.aux, mcfg.channels, tcfg.aux_scale);
        let lv = tape.value(total).item();
        if !lv.is_finite() || lv > DIVERGENCE_CEILING {
            return Err(Error::Numeric(format!("training diverged: loss {lv}")));
        }
        loss_sum += lv;
        let grads = tape.backward(total);
        for (slot, var) in acc.iter_mut().zip(flat.iter()) {
            if let Some(g) = grads.get(*var) {
                match slot {
                    Some(t) => t.add_scaled(g, 1.0),
                    None => *slot = Some(g.clone()),
                }
            }
        }
        tape.truncate(mark);
    }

    let inv = 1.0 / samples.len() as f64;
    for g in acc.iter_mut().flatten() {
        g.scale_in_place(inv);
    }
    if let Some(c) = tcfg.clip_norm {
        clip_gradients(&mut acc, c);
    }
    let sim_grad_norm = grad_norm(&acc, &sim_indices(params));
    let mut refs = params.tensors_mut();
    adam.step(&mut refs, &acc, lr);
    Ok(BatchStats { mean_loss: loss_sum / samples.len() as f64, sim_grad_norm })
}

/// Mean total loss over the given windows with dropout off.
pub fn mean_total_loss(
    params: &ModelParams,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &Dataset,
    windows: &[Window],
) -> Result<f64> {
    assert!(!windows.is_empty(), "no windows to score");
    let mut tape = Tape::new(false);
    let (vars, _) = params.stage(&mut tape);
    let mark = tape.mark();
    let mut rng = Xoshiro256pp::seed_from(0, 0); // dropout is off; never consumed
    let mut sum = 0.0;
    for w in windows {
        let (x, y) = data.sample(*w);
        let out = model::forward(&mut tape, &vars, mcfg, &x, &mut rng);
        let terms = model::loss_terms(&mut tape, mcfg, &out, &y);
        let total = combine_losses(&mut tape, terms.mse, terms.aux, mcfg.channels, tcfg.aux_scale);
        sum += tape.value(total).item();
        tape.truncate(mark);
    }
    Ok(sum / windows.len() as f64)
}

struct Snapshot {
    params: ModelParams,
    adam: AdamState,
    epoch: usize,
    val: f64,
}

fn check_compat(mcfg: &ModelConfig, data: &Dataset) -> Result<()> {
    if data.channels() != mcfg.channels {
        return Err(Error::Config(format!(
            "model expects {} channels, dataset '{}' has {}",
            mcfg.channels,
            data.name,
            data.channels()
        )));
    }
    if data.lookback != mcfg.lookback || data.horizon != mcfg.horizon {
        return Err(Error::Config(format!(
            "model window {}x{} does not match dataset windows {}x{}",
            mcfg.lookback, mcfg.horizon, data.lookback, data.horizon
        )));
    }
    Ok(())
}

/// Train with per-epoch shuffling, halving the learning rate after every
/// epoch, and early stopping after `patience` consecutive epochs without a
/// validation improvement. Returns the best-validation snapshot.
pub fn fit(mcfg: &ModelConfig, tcfg: &TrainConfig, data: &Dataset) -> Result<FitResult> {
    mcfg.validate()?;
    tcfg.validate()?;
    check_compat(mcfg, data)?;
    if data.train_windows.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }

    let mut params = ModelParams::init(mcfg, tcfg.seed);
    let mut adam = {
        let named = params.named_tensors();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::new(&refs)
    };

    if data.val_windows.is_empty() {
        return Err(Error::Load(
            "validation split has no windows; early stopping needs a validation set".into(),
        ));
    }
    let val_windows: &[Window] = &data.val_windows;

    let mut history = Vec::new();
    let mut best: Option<Snapshot> = None;
    let mut bad_streak = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=tcfg.max_epochs {
        let lr = tcfg.lr / 2f64.powi(epoch as i32 - 1);
        let mut order: Vec<usize> = (0..data.train_windows.len()).collect();
        Xoshiro256pp::seed_from(tcfg.seed, streams::SHUFFLE_BASE + epoch as u64)
            .shuffle(&mut order);
        let mut drop_rng =
            Xoshiro256pp::seed_from(tcfg.seed, streams::DROPOUT_BASE + epoch as u64);

        let mut loss_sum = 0.0;
        let mut sim_norm_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            let samples: Vec<(Tensor, Tensor)> = chunk
                .iter()
                .map(|&wi| data.sample(data.train_windows[wi]))
                .collect();
            let stats =
                batch_step(&mut params, &mut adam, mcfg, tcfg, &samples, lr, &mut drop_rng)?;
            loss_sum += stats.mean_loss * samples.len() as f64;
            sim_norm_sum += stats.sim_grad_norm;
            batches += 1;
        }
        let train_loss = loss_sum / data.train_windows.len() as f64;
        let val_loss = mean_total_loss(&params, mcfg, tcfg, data, val_windows)?;
        if !val_loss.is_finite() || val_loss > DIVERGENCE_CEILING {
            return Err(Error::Numeric(format!(
                "validation loss diverged at epoch {epoch}: {val_loss}"
            )));
        }
        let sim_grad_norm = sim_norm_sum / batches as f64;
        history.push(EpochStats { epoch, lr, train_loss, val_loss, sim_grad_norm });
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train {train_loss:.6} val {val_loss:.6}"
        );

        let improved = best.as_ref().map_or(true, |b| val_loss < b.val);
        if improved {
            best = Some(Snapshot {
                params: params.clone(),
                adam: adam.clone(),
                epoch,
                val: val_loss,
            });
            bad_streak = 0;
        } else {
            bad_streak += 1;
            if bad_streak >= tcfg.patience {
                stopped_early = true;
                log::info!("stopping early after {bad_streak} stale epochs");
                break;
            }
        }
    }

    let best = best.expect("at least one epoch runs");
    Ok(FitResult {
        params: best.params,
        adam: best.adam,
        best_epoch: best.epoch,
        best_val: best.val,
        history,
        stopped_early,
    })
}

/// Which windows to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Forecast every window of a split and report metrics on both scales.
pub fn evaluate(
    params: &ModelParams,
    mcfg: &ModelConfig,
    data: &Dataset,
    split: Split,
    seed: u64,
) -> Result<EvalReport> {
    check_compat(mcfg, data)?;
    let windows = match split {
        Split::Train => &data.train_windows,
        Split::Val => &data.val_windows,
        Split::Test => &data.test_windows,
    };
    if windows.is_empty() {
        return Err(Error::Metric(format!("no windows to evaluate in {split:?} split")));
    }
    let mut acc = MetricAccum::new(&data.name, data.horizon, seed);
    let mut tape = Tape::new(false);
    let (vars, _) = params.stage(&mut tape);
    let mark = tape.mark();
    let mut rng = Xoshiro256pp::seed_from(0, 0);
    for w in windows {
        let (x, y) = data.sample(*w);
        let (y_hat, _) = model::predict(&mut tape, &vars, mcfg, &x, &mut rng);
        acc.add(&y_hat, &y, &data.standardizer)?;
        tape.truncate(mark);
    }
    acc.finalize()
}

/// One seed's outcome inside a multi-seed run.
pub struct SeedRun {
    pub seed: u64,
    pub report: EvalReport,
    pub best_epoch: usize,
    pub best_val: f64,
}

pub struct SeedSummary {
    pub runs: Vec<SeedRun>,
    pub mean_mse: f64,
    pub std_mse: f64,
}

/// Train and test once per seed, sequentially, and summarize the spread
/// (population standard deviation).
pub fn run_seeds(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
) -> Result<SeedSummary> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..tcfg.clone() };
        let fitted = fit(mcfg, &cfg, data)?;
        let report = evaluate(&fitted.params, mcfg, data, Split::Test, seed)?;
        log::info!("seed {seed}: test mse {:.6}", report.mse);
        runs.push(SeedRun {
            seed,
            report,
            best_epoch: fitted.best_epoch,
            best_val: fitted.best_val,
        });
    }
    let n = runs.len() as f64;
    let mean_mse = runs.iter().map(|r| r.report.mse).sum::<f64>() / n;
    // identical runs must report zero spread; the accumulated mean can be a
    // rounding step away from the shared value, so short-circuit that case
    let std_mse = if runs.iter().all(|r| r.report.mse == runs[0].report.mse) {
        0.0
    } else {
        (runs
            .iter()
            .map(|r| (r.report.mse - mean_mse) * (r.report.mse - mean_mse))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    Ok(SeedSummary { runs, mean_mse, std_mse })
}

// --- checkpointing ---------------------------------------------------------

const MAGIC: &[u8; 8] = b"ADPFCKP1";
const VERSION: u32 = 1;

/// Everything needed to resume or re-evaluate a trained model.
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub dataset: String,
    pub params: ModelParams,
    pub adam: AdamState,
    pub best_epoch: usize,
    pub best_val: f64,
}

fn w_u8(w: &mut impl Write, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

fn w_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_str(w: &mut impl Write, s: &str) -> Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn w_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w_u8(w, t.shape().len() as u8)?;
    for &d in t.shape() {
        w_u64(w, d as u64)?;
    }
    for &v in t.data() {
        w_f64(w, v)?;
    }
    Ok(())
}

fn r_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn r_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn r_str(r: &mut impl Read) -> Result<String> {
    let len = r_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Load("checkpoint string is implausibly long".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Load("checkpoint string is not utf-8".into()))
}

fn r_tensor(r: &mut impl Read) -> Result<Tensor> {
    let ndim = r_u8(r)? as usize;
    if ndim == 0 || ndim > 4 {
        return Err(Error::Load(format!("bad tensor rank {ndim} in checkpoint")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r_u64(r)? as usize);
    }
    let len: usize = shape.iter().product();
    if len > 1 << 28 {
        return Err(Error::Load("checkpoint tensor is implausibly large".into()));
    }
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(r_f64(r)?);
    }
    Ok(Tensor::from_vec(data, &shape))
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        w_u32(&mut w, VERSION)?;

        let m = &self.model;
        for v in [
            m.channels, m.lookback, m.horizon, m.d_model, m.rank, m.k, m.heads, m.layers, m.ffn,
        ] {
            w_u64(&mut w, v as u64)?;
        }
        w_f64(&mut w, m.dropout)?;
        w_u8(&mut w, m.use_ace as u8)?;
        w_u8(&mut w, m.use_aux as u8)?;
        w_str(&mut w, &m.predictor.to_string())?;
        w_u8(&mut w, m.share_predictor as u8)?;

        let t = &self.train;
        w_f64(&mut w, t.lr)?;
        w_u64(&mut w, t.batch_size as u64)?;
        w_u64(&mut w, t.max_epochs as u64)?;
        w_u64(&mut w, t.patience as u64)?;
        w_u64(&mut w, t.seed)?;
        w_u8(&mut w, t.clip_norm.is_some() as u8)?;
        w_f64(&mut w, t.clip_norm.unwrap_or(0.0))?;
        w_str(&mut w, &t.aux_scale.to_string())?;

        w_f64(&mut w, self.split.train)?;
        w_f64(&mut w, self.split.val)?;
        w_f64(&mut w, self.split.test)?;
        w_str(&mut w, &self.dataset)?;

        let named = self.params.named_tensors();
        w_u32(&mut w, named.len() as u32)?;
        for (name, tensor) in &named {
            w_str(&mut w, name)?;
            w_tensor(&mut w, tensor)?;
        }

        let (m1, m2, steps) = self.adam.buffers();
        if m1.len() != named.len() {
            return Err(Error::Config(
                "optimizer state does not match the parameter list".into(),
            ));
        }
        for t in m1 {
            w_tensor(&mut w, t)?;
        }
        for t in m2 {
            w_tensor(&mut w, t)?;
        }
        w_u64(&mut w, steps)?;
        w_u64(&mut w, self.best_epoch as u64)?;
        w_f64(&mut w, self.best_val)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path)
            .map_err(|e| Error::Load(format!("cannot open {}: {e}", path.display())))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Load(format!(
                "{} is not a checkpoint file",
                path.display()
            )));
        }
        let version = r_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Load(format!("unsupported checkpoint version {version}")));
        }

        let mut dims = [0usize; 9];
        for d in dims.iter_mut() {
            *d = r_u64(&mut r)? as usize;
        }
        let dropout = r_f64(&mut r)?;
        let use_ace = r_u8(&mut r)? != 0;
        let use_aux = r_u8(&mut r)? != 0;
        let predictor = r_str(&mut r)?.parse()?;
        let share_predictor = r_u8(&mut r)? != 0;
        let model = ModelConfig {
            channels: dims[0],
            lookback: dims[1],
            horizon: dims[2],
            d_model: dims[3],
            rank: dims[4],
            k: dims[5],
            heads: dims[6],
            layers: dims[7],
            ffn: dims[8],
            dropout,
            use_ace,
            use_aux,
            predictor,
            share_predictor,
        };
        model.validate()?;

        let lr = r_f64(&mut r)?;
        let batch_size = r_u64(&mut r)? as usize;
        let max_epochs = r_u64(&mut r)? as usize;
        let patience = r_u64(&mut r)? as usize;
        let seed = r_u64(&mut r)?;
        let has_clip = r_u8(&mut r)? != 0;
        let clip = r_f64(&mut r)?;
        let aux_scale = r_str(&mut r)?.parse()?;
        let train = TrainConfig {
            lr,
            batch_size,
            max_epochs,
            patience,
            seed,
            clip_norm: has_clip.then_some(clip),
            aux_scale,
        };

        let split = SplitSpec::new(r_f64(&mut r)?, r_f64(&mut r)?, r_f64(&mut r)?)?;
        let dataset = r_str(&mut r)?;

        let count = r_u32(&mut r)? as usize;
        let mut entries: HashMap<String, Tensor> = HashMap::with_capacity(count);
        for _ in 0..count {
            let name = r_str(&mut r)?;
            let tensor = r_tensor(&mut r)?;
            if entries.insert(name.clone(), tensor).is_some() {
                return Err(Error::Load(format!("duplicate tensor '{name}' in checkpoint")));
            }
        }
        let mut params = ModelParams::init(&model, 0);
        let names: Vec<String> =
            params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        if names.len() != count {
            return Err(Error::Load(format!(
                "checkpoint has {count} tensors, model needs {}",
                names.len()
            )));
        }
        {
            let mut slots = params.tensors_mut();
            for (i, name) in names.iter().enumerate() {
                let tensor = entries
                    .remove(name)
                    .ok_or_else(|| Error::Load(format!("checkpoint is missing '{name}'")))?;
                if tensor.shape() != slots[i].shape() {
                    return Err(Error::Load(format!(
                        "tensor '{name}' has shape {:?}, expected {:?}",
                        tensor.shape(),
                        slots[i].shape()
                    )));
                }
                *slots[i] = tensor;
            }
        }

        let mut m1 = Vec::with_capacity(count);
        for _ in 0..count {
            m1.push(r_tensor(&mut r)?);
        }
        let mut m2 = Vec::with_capacity(count);
        for _ in 0..count {
            m2.push(r_tensor(&mut r)?);
        }
        let steps = r_u64(&mut r)?;
        let adam = AdamState::restore(m1, m2, steps);

        let best_epoch = r_u64(&mut r)? as usize;
        let best_val = r_f64(&mut r)?;

        Ok(Checkpoint {
            model,
            train,
            split,
            dataset,
            params,
            adam,
            best_epoch,
            best_val,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acf::PredictorMode;
    use crate::dataio::RawSeries;
    use crate::synthetic;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            channels: 4,
            lookback: 8,
            horizon: 4,
            d_model: 8,
            rank: 2,
            k: 2,
            heads: 2,
            layers: 1,
            ffn: 16,
            dropout: 0.0,
            use_ace: true,
            use_aux: true,
            predictor: PredictorMode::Acf,
            share_predictor: false,
        }
    }

    fn tiny_data(rows: usize) -> Dataset {
        let series = synthetic::correlated_pairs(rows, 2, 0.1, 3);
        Dataset::prepare(&series, "toy", &SplitSpec::default(), 8, 4).unwrap()
    }

    #[test]
    fn combine_scales_the_similarity_term() {
        let mut tape = Tape::new(false);
        let mse = tape.constant(Tensor::scalar(1.0));
        let aux = tape.constant(Tensor::scalar(4.0));
        let total = combine_losses(&mut tape, mse, Some(aux), 2, AuxScale::SqrtCard);
        assert_eq!(tape.value(total).item(), 3.0);
        let raw = combine_losses(&mut tape, mse, Some(aux), 2, AuxScale::Raw);
        assert_eq!(tape.value(raw).item(), 5.0);
        let none = combine_losses(&mut tape, mse, None, 2, AuxScale::SqrtCard);
        assert_eq!(tape.value(none).item(), 1.0);
    }

    #[test]
    fn perfect_forecast_costs_nothing() {
        let mut tape = Tape::new(false);
        let zero = tape.constant(Tensor::scalar(0.0));
        let total = combine_losses(&mut tape, zero, None, 4, AuxScale::SqrtCard);
        assert_eq!(tape.value(total).item(), 0.0);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
        assert!(
            TrainConfig { clip_norm: Some(-1.0), ..Default::default() }.validate().is_err()
        );
        assert!("sqrt".parse::<AuxScale>().unwrap() == AuxScale::SqrtCard);
        assert!("raw".parse::<AuxScale>().unwrap() == AuxScale::Raw);
        assert!("x".parse::<AuxScale>().is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_the_model_and_stops_early() {
        let mcfg = tiny_model();
        let data = tiny_data(120);
        let tcfg = TrainConfig {
            lr: 0.0,
            max_epochs: 10,
            patience: 3,
            seed: 4,
            ..Default::default()
        };
        let fitted = fit(&mcfg, &tcfg, &data).unwrap();
        // identical validation loss every epoch: first epoch is best, then
        // three stale epochs trip the early stop
        assert_eq!(fitted.best_epoch, 1);
        assert_eq!(fitted.history.len(), 4);
        assert!(fitted.stopped_early);
        assert_eq!(fitted.params, ModelParams::init(&mcfg, 4));
        let vals: Vec<f64> = fitted.history.iter().map(|h| h.val_loss).collect();
        assert!(vals.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn learning_rate_halves_each_epoch() {
        let mcfg = tiny_model();
        let data = tiny_data(120);
        let tcfg = TrainConfig {
            lr: 1e-3,
            max_epochs: 3,
            patience: 10,
            seed: 5,
            ..Default::default()
        };
        let fitted = fit(&mcfg, &tcfg, &data).unwrap();
        let lrs: Vec<f64> = fitted.history.iter().map(|h| h.lr).collect();
        assert_eq!(lrs, vec![1e-3, 5e-4, 2.5e-4]);
    }

    #[test]
    fn best_snapshot_never_loses_to_any_epoch() {
        let mcfg = tiny_model();
        let data = tiny_data(140);
        let tcfg = TrainConfig { max_epochs: 5, seed: 6, ..Default::default() };
        let fitted = fit(&mcfg, &tcfg, &data).unwrap();
        for h in &fitted.history {
            assert!(fitted.best_val <= h.val_loss + 1e-15);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let mcfg = tiny_model();
        let data = tiny_data(120);
        let tcfg = TrainConfig { max_epochs: 2, seed: 7, ..Default::default() };
        let a = fit(&mcfg, &tcfg, &data).unwrap();
        let b = fit(&mcfg, &tcfg, &data).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        let ra = evaluate(&a.params, &mcfg, &data, Split::Test, 7).unwrap();
        let rb = evaluate(&b.params, &mcfg, &data, Split::Test, 7).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn repeated_seed_has_exactly_zero_spread() {
        let mcfg = tiny_model();
        let data = tiny_data(120);
        let tcfg = TrainConfig { max_epochs: 1, ..Default::default() };
        let summary = run_seeds(&mcfg, &tcfg, &data, &[9, 9]).unwrap();
        assert_eq!(summary.std_mse, 0.0);
        assert_eq!(summary.runs[0].report.mse, summary.runs[1].report.mse);
    }

    #[test]
    fn divergence_is_reported_as_a_numeric_error() {
        let mcfg = tiny_model();
        let data = tiny_data(120);
        let tcfg = TrainConfig {
            lr: 1e9,
            max_epochs: 4,
            seed: 8,
            ..Default::default()
        };
        match fit(&mcfg, &tcfg, &data) {
            Err(Error::Numeric(_)) => {}
            Err(other) => panic!("expected a numeric failure, got {other}"),
            Ok(_) => panic!("expected a numeric failure, got success"),
        }
    }

    #[test]
    fn an_empty_validation_split_is_rejected() {
        let mcfg = tiny_model();
        let series = synthetic::correlated_pairs(120, 2, 0.1, 3);
        // 6 validation rows cannot hold an 8+4 window
        let spec = SplitSpec { train: 0.8, val: 0.05, test: 0.15 };
        let data = Dataset::prepare(&series, "toy", &spec, 8, 4).unwrap();
        assert!(data.val_windows.is_empty());
        let tcfg = TrainConfig { max_epochs: 1, seed: 1, ..Default::default() };
        match fit(&mcfg, &tcfg, &data) {
            Err(Error::Load(msg)) => assert!(msg.contains("validation"), "{msg}"),
            Err(other) => panic!("expected a data error, got {other}"),
            Ok(_) => panic!("expected a data error, got success"),
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_for_bit() {
        let mcfg = tiny_model();
        let data = tiny_data(120);
        let tcfg = TrainConfig { max_epochs: 2, seed: 10, ..Default::default() };
        let fitted = fit(&mcfg, &tcfg, &data).unwrap();
        let ckpt = Checkpoint {
            model: mcfg.clone(),
            train: tcfg.clone(),
            split: SplitSpec::default(),
            dataset: data.name.clone(),
            params: fitted.params.clone(),
            adam: fitted.adam.clone(),
            best_epoch: fitted.best_epoch,
            best_val: fitted.best_val,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model, mcfg);
        assert_eq!(back.train, tcfg);
        assert_eq!(back.dataset, "toy");
        assert_eq!(back.params, fitted.params);
        assert_eq!(back.best_epoch, fitted.best_epoch);
        assert_eq!(back.best_val.to_bits(), fitted.best_val.to_bits());
        let (m_a, v_a, t_a) = fitted.adam.buffers();
        let (m_b, v_b, t_b) = back.adam.buffers();
        assert_eq!(m_a, m_b);
        assert_eq!(v_a, v_b);
        assert_eq!(t_a, t_b);

        let before = evaluate(&fitted.params, &mcfg, &data, Split::Test, 10).unwrap();
        let after = evaluate(&back.params, &back.model, &data, Split::Test, 10).unwrap();
        assert_eq!(before.mse.to_bits(), after.mse.to_bits());
    }

    #[test]
    fn junk_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        match Checkpoint::load(&path) {
            Err(Error::Load(msg)) => assert!(msg.contains("not a checkpoint"), "{msg}"),
            Err(other) => panic!("expected a load error, got {other}"),
            Ok(_) => panic!("expected a load error, got success"),
        }
    }

    #[test]
    fn no_aux_training_never_touches_similarity_weights() {
        let mut mcfg = tiny_model();
        mcfg.use_aux = false;
        let data = tiny_data(120);
        let tcfg = TrainConfig { max_epochs: 2, seed: 11, ..Default::default() };
        let fitted = fit(&mcfg, &tcfg, &data).unwrap();
        for h in &fitted.history {
            assert_eq!(h.sim_grad_norm, 0.0);
        }
        let init = ModelParams::init(&mcfg, 11);
        assert_eq!(fitted.params.sim, init.sim, "similarity block stays at init");
        assert_ne!(fitted.params.embed, init.embed, "the rest of the model trains");
    }

    #[test]
    fn window_sampler_feeds_contiguous_blocks_to_fit() {
        // fit should reject mismatched datasets outright
        let mcfg = tiny_model();
        let series = RawSeries {
            values: Tensor::from_vec(vec![0.0; 300], &[100, 3]),
            channel_names: vec!["a".into(), "b".into(), "c".into()],
            timestamps: None,
        };
        let data = Dataset::prepare(&series, "bad", &SplitSpec::default(), 8, 4).unwrap();
        assert!(matches!(
            fit(&mcfg, &TrainConfig::default(), &data),
            Err(Error::Config(_))
        ));
    }
}
