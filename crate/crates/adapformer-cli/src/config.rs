//! Config resolution: defaults < config file < command-line flags.

use std::path::{Path, PathBuf};

use adapformer::acf::PredictorMode;
use adapformer::dataio::SplitSpec;
use adapformer::encoder::ModelConfig;
use adapformer::training::{AuxScale, TrainConfig};
use adapformer::{Error, Result};
use clap::Args;
use serde::Deserialize;

/// Knobs shared by every verb. Everything is optional here; `resolve` fills
/// the gaps from the config file and the defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// TOML config file; flags given on the command line win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV (header row, optional leading timestamp column).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Directory that per-run output directories are created under.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run label; defaults to the dataset file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long = "d-model")]
    pub d_model: Option<usize>,
    /// Width of the channel enhancer bottleneck.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Channels per predictor group (target + k-1 partners).
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "max-epochs")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train this many consecutive seeds starting at --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Global gradient-norm ceiling (off unless given).
    #[arg(long = "clip-norm")]
    pub clip_norm: Option<f64>,
    /// Similarity-loss weighting: sqrt or raw.
    #[arg(long = "aux-scale")]
    pub aux_scale: Option<String>,
    /// Forecast head: acf, ci, cd or mlp.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Disable the channel enhancer.
    #[arg(long)]
    pub no_ace: bool,
    /// Replace the grouped forecaster with the shared per-channel head.
    #[arg(long, conflicts_with = "predictor")]
    pub no_acf: bool,
    /// Drop the similarity loss term.
    #[arg(long)]
    pub no_aux: bool,
    /// One grouped head shared by all channels instead of one per channel.
    #[arg(long)]
    pub share_predictor: bool,
    #[arg(long = "train-ratio")]
    pub train_ratio: Option<f64>,
    #[arg(long = "val-ratio")]
    pub val_ratio: Option<f64>,
    #[arg(long = "test-ratio")]
    pub test_ratio: Option<f64>,
    /// Validate and print the resolved configuration, then exit.
    #[arg(long)]
    pub dry_run: bool,
}

/// Config file schema; keys mirror the resolved RunConfig fields.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    name: Option<String>,
    lookback: Option<usize>,
    horizon: Option<usize>,
    d_model: Option<usize>,
    rank: Option<usize>,
    topk: Option<usize>,
    heads: Option<usize>,
    layers: Option<usize>,
    ffn: Option<usize>,
    dropout: Option<f64>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    seed: Option<u64>,
    seeds: Option<usize>,
    clip_norm: Option<f64>,
    aux_scale: Option<String>,
    predictor: Option<String>,
    use_ace: Option<bool>,
    use_aux: Option<bool>,
    share_predictor: Option<bool>,
    train_ratio: Option<f64>,
    val_ratio: Option<f64>,
    test_ratio: Option<f64>,
}

/// Fully resolved run settings. The channel count still comes from the data,
/// so the model config is materialized per dataset via `model_for`.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub name: String,
    pub out: PathBuf,
    pub split: SplitSpec,
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
    pub train: TrainConfig,
    pub seeds: usize,
    pub dry_run: bool,
}

fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
}

/// Merge flags over file values over defaults, then fail fast on anything
/// that can be checked before touching the data.
pub fn resolve(args: &CommonArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => load_file(path)?,
        None => FileConfig::default(),
    };

    let dataset = args
        .dataset
        .clone()
        .or(file.dataset)
        .ok_or_else(|| Error::Config("a dataset path is required (--dataset or config file)".into()))?;
    if !dataset.exists() {
        return Err(Error::Config(format!(
            "dataset file {} does not exist",
            dataset.display()
        )));
    }
    let name = args.name.clone().or(file.name).unwrap_or_else(|| {
        dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    });

    let predictor = if args.no_acf {
        PredictorMode::Mlp
    } else {
        match args.predictor.as_deref().or(file.predictor.as_deref()) {
            Some(s) => s.parse()?,
            None => PredictorMode::Acf,
        }
    };
    let aux_scale = match args.aux_scale.as_deref().or(file.aux_scale.as_deref()) {
        Some(s) => s.parse()?,
        None => AuxScale::SqrtCard,
    };

    let split = SplitSpec::new(
        args.train_ratio.or(file.train_ratio).unwrap_or(0.7),
        args.val_ratio.or(file.val_ratio).unwrap_or(0.15),
        args.test_ratio.or(file.test_ratio).unwrap_or(0.15),
    )?;

    let train = TrainConfig {
        lr: args.lr.or(file.lr).unwrap_or(1e-3),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(32),
        max_epochs: args.max_epochs.or(file.max_epochs).unwrap_or(20),
        patience: args.patience.or(file.patience).unwrap_or(3),
        seed: args.seed.or(file.seed).unwrap_or(0),
        clip_norm: args.clip_norm.or(file.clip_norm),
        aux_scale,
    };
    train.validate()?;

    let rc = RunConfig {
        dataset,
        name,
        out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
        split,
        lookback: args.lookback.or(file.lookback).unwrap_or(96),
        horizon: args.horizon.or(file.horizon).unwrap_or(96),
        d_model: args.d_model.or(file.d_model).unwrap_or(128),
        rank: args.rank.or(file.rank).unwrap_or(64),
        k: args.topk.or(file.topk).unwrap_or(2),
        heads: args.heads.or(file.heads).unwrap_or(8),
        layers: args.layers.or(file.layers).unwrap_or(2),
        ffn: args.ffn.or(file.ffn).unwrap_or(2048),
        dropout: args.dropout.or(file.dropout).unwrap_or(0.1),
        use_ace: !args.no_ace && file.use_ace.unwrap_or(true),
        use_aux: !args.no_aux && file.use_aux.unwrap_or(true),
        predictor,
        share_predictor: args.share_predictor || file.share_predictor.unwrap_or(false),
        train,
        seeds: args.seeds.or(file.seeds).unwrap_or(1),
        dry_run: args.dry_run,
    };

    // channel-independent checks; k vs N waits for the data
    if rc.lookback < 1 || rc.horizon < 1 {
        return Err(Error::Config("lookback and horizon must be at least 1".into()));
    }
    if rc.seeds < 1 {
        return Err(Error::Config("seed count must be at least 1".into()));
    }
    let probe = rc.model_for(rc.k.max(1));
    probe.validate()?;
    Ok(rc)
}

impl RunConfig {
    /// Materialize the architecture for a dataset with `channels` variates.
    pub fn model_for(&self, channels: usize) -> ModelConfig {
        ModelConfig {
            channels,
            lookback: self.lookback,
            horizon: self.horizon,
            d_model: self.d_model,
            rank: self.rank,
            k: self.k,
            heads: self.heads,
            layers: self.layers,
            ffn: self.ffn,
            dropout: self.dropout,
            use_ace: self.use_ace,
            use_aux: self.use_aux,
            predictor: self.predictor,
            share_predictor: self.share_predictor,
        }
    }

    /// Per-run output directory: {out}/{name}_h{horizon}_s{seed}{suffix}.
    pub fn run_dir(&self, suffix: &str) -> PathBuf {
        self.out.join(format!(
            "{}_h{}_s{}{}",
            self.name, self.horizon, self.train.seed, suffix
        ))
    }

    /// Stable key/value listing for config.txt and --dry-run output.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let t = &self.train;
        vec![
            ("dataset".into(), self.dataset.display().to_string()),
            ("name".into(), self.name.clone()),
            ("out".into(), self.out.display().to_string()),
            ("lookback".into(), self.lookback.to_string()),
            ("horizon".into(), self.horizon.to_string()),
            ("d_model".into(), self.d_model.to_string()),
            ("rank".into(), self.rank.to_string()),
            ("topk".into(), self.k.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("layers".into(), self.layers.to_string()),
            ("ffn".into(), self.ffn.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("use_ace".into(), self.use_ace.to_string()),
            ("use_aux".into(), self.use_aux.to_string()),
            ("predictor".into(), self.predictor.to_string()),
            ("share_predictor".into(), self.share_predictor.to_string()),
            ("lr".into(), t.lr.to_string()),
            ("batch_size".into(), t.batch_size.to_string()),
            ("max_epochs".into(), t.max_epochs.to_string()),
            ("patience".into(), t.patience.to_string()),
            ("seed".into(), t.seed.to_string()),
            ("seeds".into(), self.seeds.to_string()),
            (
                "clip_norm".into(),
                t.clip_norm.map_or("off".into(), |c| c.to_string()),
            ),
            ("aux_scale".into(), t.aux_scale.to_string()),
            ("train_ratio".into(), self.split.train.to_string()),
            ("val_ratio".into(), self.split.val.to_string()),
            ("test_ratio".into(), self.split.test.to_string()),
        ]
    }
}
