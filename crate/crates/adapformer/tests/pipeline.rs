//! Cross-module checks: the full training loop wired together on small data.

use adapformer::acf::PredictorMode;
use adapformer::dataio::Dataset;
use adapformer::encoder::ModelConfig;
use adapformer::model::{self, ModelParams};
use adapformer::numkit::{AdamState, Tape, Tensor, Xoshiro256pp};
use adapformer::synthetic::correlated_pairs;
use adapformer::training::{batch_step, fit, Split, TrainConfig};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        channels: 4,
        lookback: 16,
        horizon: 4,
        d_model: 16,
        rank: 2,
        k: 2,
        heads: 2,
        layers: 1,
        ffn: 32,
        dropout: 0.0,
        use_ace: true,
        use_aux: false,
        predictor: PredictorMode::Acf,
        share_predictor: false,
    }
}

fn wave_sample(cfg: &ModelConfig, seed: u64) -> (Tensor, Tensor) {
    let mut rng = Xoshiro256pp::seed_from(seed, 99);
    let mut x = Tensor::zeros(&[cfg.lookback, cfg.channels]);
    let mut y = Tensor::zeros(&[cfg.horizon, cfg.channels]);
    for c in 0..cfg.channels {
        let period = 6.0 + 2.0 * c as f64;
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        for t in 0..cfg.lookback {
            x.set2(t, c, (phase + t as f64 / period).sin());
        }
        for t in 0..cfg.horizon {
            y.set2(t, c, (phase + (cfg.lookback + t) as f64 / period).sin());
        }
    }
    (x, y)
}

/// A model with more parameters than data points must be able to pin a single
/// window almost exactly; anything else means gradients are wrong somewhere.
#[test]
fn the_model_overfits_one_window() {
    let cfg = tiny_config();
    let tcfg = TrainConfig::default();
    let mut params = ModelParams::init(&cfg, 7);
    let mut adam = {
        let named = params.named_tensors();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::new(&refs)
    };
    let mut drop_rng = Xoshiro256pp::seed_from(7, 1);
    let sample = [wave_sample(&cfg, 3)];

    let mut losses = Vec::with_capacity(500);
    for _ in 0..500 {
        let stats = batch_step(&mut params, &mut adam, &cfg, &tcfg, &sample, 1e-3, &mut drop_rng)
            .expect("step succeeds");
        losses.push(stats.mean_loss);
    }
    let drops = losses.windows(2).take(50).filter(|w| w[1] < w[0]).count();
    assert!(drops >= 45, "loss should fall in nearly every early step: {drops}/50");
    // Adam wiggles once the loss is tiny, so the long tail is judged on
    // order-of-magnitude milestones instead of step-wise decrease.
    for pair in [0usize, 50, 100, 200, 400].windows(2) {
        assert!(
            losses[pair[1]] < losses[pair[0]] / 2.0,
            "no progress between steps {} and {}: {} -> {}",
            pair[0],
            pair[1],
            losses[pair[0]],
            losses[pair[1]]
        );
    }
    let last = *losses.last().unwrap();
    assert!(last < 1e-6, "final loss {last}");
}

/// With one channel per group the grouped forecaster reads only the target
/// row, so the channel-independent mode must be the same computation.
#[test]
fn ci_mode_equals_a_one_channel_group() {
    let mut acf1 = tiny_config();
    acf1.k = 1;
    let mut ci = tiny_config();
    ci.predictor = PredictorMode::Ci;

    let (x, _) = wave_sample(&acf1, 11);
    let mut outs = Vec::new();
    for cfg in [&acf1, &ci] {
        let params = ModelParams::init(cfg, 21);
        let mut tape = Tape::new(false);
        let (vars, _) = params.stage(&mut tape);
        let mut rng = Xoshiro256pp::seed_from(0, 0);
        let (y_hat, _) = model::predict(&mut tape, &vars, cfg, &x, &mut rng);
        outs.push(y_hat);
    }
    assert_eq!(outs[0].data(), outs[1].data(), "identical forecasts bit for bit");
}

/// Three epochs on structured data should beat the untrained model and the
/// recorded history should reflect the halving schedule.
#[test]
fn fitting_structured_data_improves_the_fit() {
    let series = correlated_pairs(360, 2, 0.1, 5);
    let data = Dataset::prepare(&series, "pairs", &Default::default(), 16, 4).unwrap();
    let mcfg = ModelConfig {
        channels: data.channels(),
        lookback: 16,
        horizon: 4,
        d_model: 16,
        rank: 4,
        k: 2,
        heads: 2,
        layers: 1,
        ffn: 32,
        dropout: 0.0,
        use_ace: true,
        use_aux: true,
        predictor: PredictorMode::Acf,
        share_predictor: false,
    };
    let tcfg = TrainConfig {
        lr: 1e-3,
        batch_size: 16,
        max_epochs: 3,
        patience: 3,
        seed: 2,
        clip_norm: None,
        ..Default::default()
    };
    let fitted = fit(&mcfg, &tcfg, &data).unwrap();
    assert_eq!(fitted.history.len(), 3);
    assert!(fitted.history[1].lr == tcfg.lr / 2.0 && fitted.history[2].lr == tcfg.lr / 4.0);
    let first = fitted.history.first().unwrap().train_loss;
    let last = fitted.history.last().unwrap().train_loss;
    assert!(last < first, "training loss {first} -> {last}");

    let report =
        adapformer::training::evaluate(&fitted.params, &mcfg, &data, Split::Test, 2).unwrap();
    assert!(report.mse.is_finite() && report.mse > 0.0);
    assert_eq!(report.horizon, 4);
}
