//! The verbs behind the binary: train, eval, forecast, ablate, sweep.

use std::fs;
use std::path::Path;

use adapformer::acf::PredictorMode;
use adapformer::dataio::{load_csv, Dataset, Window};
use adapformer::encoder::ModelConfig;
use adapformer::metrics::EvalReport;
use adapformer::model::{self, ModelParams};
use adapformer::numkit::{Tape, Xoshiro256pp};
use adapformer::training::{evaluate, fit, Checkpoint, EpochStats, Split, TrainConfig};
use adapformer::{Error, Result};

use crate::config::RunConfig;

fn print_kv(kv: &[(String, String)]) {
    for (k, v) in kv {
        println!("{k}={v}");
    }
}

fn write_kv(path: &Path, kv: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in kv {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut text = String::from("epoch,lr,train_loss,val_loss,sim_grad_norm\n");
    for e in history {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.lr, e.train_loss, e.val_loss, e.sim_grad_norm
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!(
            "unknown split '{other}' (expected train, val or test)"
        ))),
    }
}

fn split_windows(data: &Dataset, split: Split) -> &[Window] {
    match split {
        Split::Train => &data.train_windows,
        Split::Val => &data.val_windows,
        Split::Test => &data.test_windows,
    }
}

fn load_prepared(rc: &RunConfig) -> Result<(Dataset, ModelConfig)> {
    let series = load_csv(&rc.dataset)?;
    let data = Dataset::prepare(&series, &rc.name, &rc.split, rc.lookback, rc.horizon)?;
    let mcfg = rc.model_for(data.channels());
    mcfg.validate()?;
    Ok((data, mcfg))
}

/// One row per (window, horizon step, channel), forecasts and truth mapped
/// back to the original data scale.
fn write_predictions(
    path: &Path,
    params: &ModelParams,
    mcfg: &ModelConfig,
    data: &Dataset,
    split: Split,
) -> Result<()> {
    let mut tape = Tape::new(false);
    let (vars, _) = params.stage(&mut tape);
    let base = tape.mark();
    let mut rng = Xoshiro256pp::seed_from(0, 0);
    let mut text = String::from("window,t,channel,truth,prediction\n");
    for (wi, w) in split_windows(data, split).iter().enumerate() {
        tape.truncate(base);
        let (x, _) = data.sample(*w);
        let (y_hat, _) = model::predict(&mut tape, &vars, mcfg, &x, &mut rng);
        for step in 0..mcfg.horizon {
            let t = w.start + mcfg.lookback + step;
            for c in 0..data.channels() {
                let truth = data.standardizer.invert(c, data.values.at2(t, c));
                let pred = data.standardizer.invert(c, y_hat.at2(step, c));
                text.push_str(&format!(
                    "{wi},{t},{},{truth},{pred}\n",
                    data.channel_names[c]
                ));
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Plot-friendly view: windows strided by the horizon so every timestamp
/// carries exactly one prediction.
fn write_plot_data(
    path: &Path,
    params: &ModelParams,
    mcfg: &ModelConfig,
    data: &Dataset,
    split: Split,
) -> Result<()> {
    let mut tape = Tape::new(false);
    let (vars, _) = params.stage(&mut tape);
    let base = tape.mark();
    let mut rng = Xoshiro256pp::seed_from(0, 0);
    let mut text = String::from("t,channel,truth,prediction\n");
    for w in split_windows(data, split).iter().step_by(mcfg.horizon) {
        tape.truncate(base);
        let (x, _) = data.sample(*w);
        let (y_hat, _) = model::predict(&mut tape, &vars, mcfg, &x, &mut rng);
        for step in 0..mcfg.horizon {
            let t = w.start + mcfg.lookback + step;
            for c in 0..data.channels() {
                let truth = data.standardizer.invert(c, data.values.at2(t, c));
                let pred = data.standardizer.invert(c, y_hat.at2(step, c));
                text.push_str(&format!("{t},{},{truth},{pred}\n", data.channel_names[c]));
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn fit_and_score(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &Dataset,
) -> Result<(adapformer::training::FitResult, EvalReport)> {
    let fitted = fit(mcfg, tcfg, data)?;
    let report = evaluate(&fitted.params, mcfg, data, Split::Test, tcfg.seed)?;
    Ok((fitted, report))
}

pub fn cmd_train(rc: &RunConfig) -> Result<()> {
    if rc.dry_run {
        print_kv(&rc.to_kv());
        println!("dry_run=ok");
        return Ok(());
    }
    let (data, mcfg) = load_prepared(rc)?;
    let dir = rc.run_dir("");
    fs::create_dir_all(&dir)?;
    write_kv(&dir.join("config.txt"), &rc.to_kv())?;

    if rc.seeds == 1 {
        let tcfg = rc.train.clone();
        let (fitted, report) = fit_and_score(&mcfg, &tcfg, &data)?;
        write_history(&dir.join("history.csv"), &fitted.history)?;
        write_kv(&dir.join("report.txt"), &report.to_kv())?;
        write_predictions(&dir.join("predictions.csv"), &fitted.params, &mcfg, &data, Split::Test)?;
        log::info!(
            "best epoch {} (val {:.6}), stopped_early={}",
            fitted.best_epoch,
            fitted.best_val,
            fitted.stopped_early
        );
        let ckpt = Checkpoint {
            model: mcfg.clone(),
            train: tcfg,
            split: rc.split,
            dataset: data.name.clone(),
            params: fitted.params,
            adam: fitted.adam,
            best_epoch: fitted.best_epoch,
            best_val: fitted.best_val,
        };
        ckpt.save(&dir.join("checkpoint.bin"))?;
        print_kv(&report.to_kv());
    } else {
        let mut rows = String::from("seed,mse,mae,r2,mse_raw,mae_raw,best_epoch,best_val\n");
        let mut mses = Vec::with_capacity(rc.seeds);
        for i in 0..rc.seeds as u64 {
            let tcfg = TrainConfig { seed: rc.train.seed + i, ..rc.train.clone() };
            let (fitted, report) = fit_and_score(&mcfg, &tcfg, &data)?;
            rows.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                tcfg.seed,
                report.mse,
                report.mae,
                report.r2,
                report.mse_raw,
                report.mae_raw,
                fitted.best_epoch,
                fitted.best_val
            ));
            log::info!("seed {}: test mse {:.6}", tcfg.seed, report.mse);
            if i == 0 {
                write_history(&dir.join("history.csv"), &fitted.history)?;
                write_kv(&dir.join("report.txt"), &report.to_kv())?;
                write_predictions(
                    &dir.join("predictions.csv"),
                    &fitted.params,
                    &mcfg,
                    &data,
                    Split::Test,
                )?;
                let ckpt = Checkpoint {
                    model: mcfg.clone(),
                    train: tcfg.clone(),
                    split: rc.split,
                    dataset: data.name.clone(),
                    params: fitted.params,
                    adam: fitted.adam,
                    best_epoch: fitted.best_epoch,
                    best_val: fitted.best_val,
                };
                ckpt.save(&dir.join("checkpoint.bin"))?;
            }
            mses.push(report.mse);
        }
        fs::write(dir.join("seeds.csv"), rows)?;
        let mean = mses.iter().sum::<f64>() / mses.len() as f64;
        let var = mses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / mses.len() as f64;
        println!("seeds={}", rc.seeds);
        println!("mean_mse={mean}");
        println!("std_mse={}", var.sqrt());
    }
    println!("run_dir={}", dir.display());
    Ok(())
}

fn load_for_checkpoint(ckpt_path: &Path, dataset: &Path) -> Result<(Checkpoint, Dataset)> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    if !dataset.exists() {
        return Err(Error::Config(format!(
            "dataset file {} does not exist",
            dataset.display()
        )));
    }
    let series = load_csv(dataset)?;
    if series.channels() != ckpt.model.channels {
        return Err(Error::Config(format!(
            "checkpoint expects {} channels but {} has {}",
            ckpt.model.channels,
            dataset.display(),
            series.channels()
        )));
    }
    let name = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into());
    let data = Dataset::prepare(&series, &name, &ckpt.split, ckpt.model.lookback, ckpt.model.horizon)?;
    Ok((ckpt, data))
}

pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    split_name: &str,
    out: Option<&Path>,
) -> Result<()> {
    let split = parse_split(split_name)?;
    let (ckpt, data) = load_for_checkpoint(checkpoint, dataset)?;
    let report = evaluate(&ckpt.params, &ckpt.model, &data, split, ckpt.train.seed)?;
    print_kv(&report.to_kv());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_kv(&dir.join("report.txt"), &report.to_kv())?;
    }
    Ok(())
}

pub fn cmd_forecast(
    checkpoint: &Path,
    dataset: &Path,
    split_name: &str,
    out: &Path,
    plot: bool,
) -> Result<()> {
    let split = parse_split(split_name)?;
    let (ckpt, data) = load_for_checkpoint(checkpoint, dataset)?;
    fs::create_dir_all(out)?;
    let report = evaluate(&ckpt.params, &ckpt.model, &data, split, ckpt.train.seed)?;
    write_kv(&out.join("report.txt"), &report.to_kv())?;
    write_predictions(&out.join("predictions.csv"), &ckpt.params, &ckpt.model, &data, split)?;
    if plot {
        write_plot_data(&out.join("plot_data.csv"), &ckpt.params, &ckpt.model, &data, split)?;
    }
    print_kv(&report.to_kv());
    println!("windows={}", split_windows(&data, split).len());
    println!("out_dir={}", out.display());
    Ok(())
}

/// Component knockouts trained under one shared seed. `full` pins the
/// reference configuration; every other variant flips exactly one choice.
pub fn cmd_ablate(rc: &RunConfig) -> Result<()> {
    if rc.dry_run {
        print_kv(&rc.to_kv());
        println!("dry_run=ok");
        return Ok(());
    }
    let (data, base) = load_prepared(rc)?;
    let full = ModelConfig {
        use_ace: true,
        use_aux: true,
        predictor: PredictorMode::Acf,
        ..base
    };
    let variants = [
        ("full", full.clone()),
        ("no_ace", ModelConfig { use_ace: false, ..full.clone() }),
        ("no_acf", ModelConfig { predictor: PredictorMode::Mlp, ..full.clone() }),
        ("no_aux", ModelConfig { use_aux: false, ..full.clone() }),
        ("ci", ModelConfig { predictor: PredictorMode::Ci, ..full.clone() }),
        ("cd", ModelConfig { predictor: PredictorMode::Cd, ..full.clone() }),
    ];
    for (name, cfg) in &variants {
        cfg.validate()
            .map_err(|e| Error::Config(format!("variant {name}: {e}")))?;
    }

    let dir = rc.run_dir("_ablate");
    fs::create_dir_all(&dir)?;
    write_kv(&dir.join("config.txt"), &rc.to_kv())?;

    let mut rows =
        String::from("variant,mse,mae,r2,mse_raw,mae_raw,best_epoch,best_val,sim_grad_norm\n");
    println!(
        "{:<8} {:>12} {:>12} {:>10} {:>14}",
        "variant", "mse", "mae", "best_epoch", "sim_grad_norm"
    );
    for (name, cfg) in &variants {
        let (fitted, report) = fit_and_score(cfg, &rc.train, &data)?;
        let sim_grad = fitted.history.last().map_or(0.0, |e| e.sim_grad_norm);
        rows.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{sim_grad}\n",
            report.mse, report.mae, report.r2, report.mse_raw, report.mae_raw,
            fitted.best_epoch, fitted.best_val
        ));
        println!(
            "{name:<8} {:>12.6} {:>12.6} {:>10} {sim_grad:>14.6e}",
            report.mse, report.mae, fitted.best_epoch
        );
        if *name == "no_aux" {
            log::info!("variant no_aux leaves the similarity weights untrained (gradient norm {sim_grad})");
        }
    }
    fs::write(dir.join("ablation.csv"), rows)?;
    println!("run_dir={}", dir.display());
    Ok(())
}

/// Cartesian grid over learning rate, model width, enhancer rank and group
/// size; every combination trains from the same seed.
pub fn cmd_sweep(
    rc: &RunConfig,
    lrs: &[f64],
    ds: &[usize],
    ranks: &[usize],
    ks: &[usize],
) -> Result<()> {
    if rc.dry_run {
        print_kv(&rc.to_kv());
        println!("dry_run=ok");
        return Ok(());
    }
    let lrs = if lrs.is_empty() { vec![rc.train.lr] } else { lrs.to_vec() };
    let ds = if ds.is_empty() { vec![rc.d_model] } else { ds.to_vec() };
    let ranks = if ranks.is_empty() { vec![rc.rank] } else { ranks.to_vec() };
    let ks = if ks.is_empty() { vec![rc.k] } else { ks.to_vec() };

    let (data, base) = load_prepared(rc)?;
    let mut combos = Vec::new();
    for &lr in &lrs {
        for &d in &ds {
            for &r in &ranks {
                for &k in &ks {
                    let mcfg = ModelConfig { d_model: d, rank: r, k, ..base.clone() };
                    mcfg.validate().map_err(|e| {
                        Error::Config(format!("combo lr={lr} d_model={d} rank={r} topk={k}: {e}"))
                    })?;
                    let tcfg = TrainConfig { lr, ..rc.train.clone() };
                    tcfg.validate()?;
                    combos.push((lr, d, r, k, mcfg, tcfg));
                }
            }
        }
    }

    let dir = rc.run_dir("_sweep");
    fs::create_dir_all(&dir)?;
    write_kv(&dir.join("config.txt"), &rc.to_kv())?;

    let mut rows = String::from("lr,d_model,rank,topk,mse,mae,r2,mse_raw,mae_raw,best_epoch\n");
    for (lr, d, r, k, mcfg, tcfg) in &combos {
        let (fitted, report) = fit_and_score(mcfg, tcfg, &data)?;
        rows.push_str(&format!(
            "{lr},{d},{r},{k},{},{},{},{},{},{}\n",
            report.mse, report.mae, report.r2, report.mse_raw, report.mae_raw,
            fitted.best_epoch
        ));
        println!(
            "lr={lr} d_model={d} rank={r} topk={k} mse={:.6} mae={:.6}",
            report.mse, report.mae
        );
    }
    fs::write(dir.join("sweep.csv"), rows)?;
    println!("rows={}", combos.len());
    println!("run_dir={}", dir.display());
    Ok(())
}
