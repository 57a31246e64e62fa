//! Built-in correctness checks: operator and composed-model gradient
//! checks, and AUC / pAUC against a direct pairwise sum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::checks::{check_operator, Operator, CHECK_H, CHECK_PROBES};
use crate::autodiff::{gradient_check, GradCheckReport, Mode, Tensor};
use crate::error::Result;
use crate::evaluator::{auc, pauc};
use crate::model::{build, AeConfig, LossWeights, ModelFamily, ModelGraph};
use crate::trainer::{batch_loss, Sample};

/// Largest relative error accepted by the gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const METRIC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub worst: f64,
    pub runs: usize,
    pub passed: bool,
}

/// Small conv autoencoder used for composed checks.
pub fn tiny_config(family: ModelFamily) -> AeConfig {
    AeConfig {
        family,
        input_bins: 8,
        frames_per_segment: 8,
        hop_frames: 4,
        encoder_filters: vec![2, 3, 4],
        bottleneck_dim: 4,
        n_classes: (family == ModelFamily::SemiSupervised).then_some(3),
        loss_weights: if family == ModelFamily::SemiSupervised {
            LossWeights { alpha: 0.6, beta: 0.4 }
        } else {
            LossWeights::UNSUPERVISED
        },
        ..AeConfig::default()
    }
}

fn set_params(model: &mut ModelGraph, flat: &[f64]) {
    let mut off = 0;
    for p in model.params_mut() {
        let n = p.len();
        p.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

/// Gradient of the full training loss (train-mode BN) with respect to every
/// trainable parameter of a small model.
pub fn check_composed(family: ModelFamily, seed: u64) -> Result<GradCheckReport> {
    let cfg = tiny_config(family);
    let mut model = build(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let samples: Vec<Sample> = (0..3)
        .map(|i| Sample {
            input: Tensor::randn(&cfg.sample_shape(), &mut rng),
            class: cfg.n_classes.map(|k| i % k),
        })
        .collect();
    let idx = [0, 1, 2];
    let weights = cfg.loss_weights;
    model.zero_grad();
    batch_loss(&mut model, &samples, &idx, weights, Mode::Train)?;
    let point: Vec<f64> = model
        .params_mut()
        .iter()
        .flat_map(|p| p.data().to_vec())
        .collect();
    let analytic: Vec<f64> = model
        .params_mut()
        .iter()
        .flat_map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    let mut probe = model.clone();
    let mut eval = |p: &[f64]| {
        set_params(&mut probe, p);
        probe.zero_grad();
        let l = batch_loss(&mut probe, &samples, &idx, weights, Mode::Train).expect("shapes");
        (l.total, probe.branch_signature())
    };
    Ok(gradient_check(&mut eval, &point, &analytic, CHECK_H, CHECK_PROBES, &mut rng))
}

fn summarize(name: &str, errors: impl IntoIterator<Item = Result<f64>>) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for e in errors {
        worst = worst.max(e?);
        runs += 1;
    }
    Ok(CheckOutcome {
        name: name.to_owned(),
        worst,
        runs,
        passed: worst < GRAD_TOLERANCE,
    })
}

/// Every operator and both conv model families over `seeds` seeds.
pub fn gradient_suite(seeds: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for op in Operator::ALL {
        out.push(summarize(
            op.name(),
            (0..seeds).map(|s| check_operator(op, s).map(|r| r.max_rel_error)),
        )?);
    }
    for (name, fam) in [
        ("autoencoder", ModelFamily::Unsupervised),
        ("autoencoder+head", ModelFamily::SemiSupervised),
    ] {
        out.push(summarize(
            name,
            (0..seeds).map(|s| check_composed(fam, s).map(|r| r.max_rel_error)),
        )?);
    }
    Ok(out)
}

fn heaviside(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn pairwise_auc(neg: &[f64], pos: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in pos {
        for &n in neg {
            s += heaviside(a - n);
        }
    }
    s / (neg.len() * pos.len()) as f64
}

fn pairwise_pauc(neg: &[f64], pos: &[f64], p: f64) -> f64 {
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (p * neg.len() as f64 + 1e-9).floor() as usize;
    pairwise_auc(&sorted[..k], pos)
}

/// Randomized comparison of the fast metrics with direct double sums,
/// including ties. Returns the largest absolute difference.
pub fn metric_suite(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let nn = rng.gen_range(10..=50);
        let np = rng.gen_range(1..=50);
        let levels = rng.gen_range(2..20);
        let mut draw = |shift: f64| (rng.gen_range(0..levels) as f64 + shift) / levels as f64;
        let neg: Vec<f64> = (0..nn).map(|_| draw(0.0)).collect();
        let pos: Vec<f64> = (0..np).map(|_| draw(0.5 * (np % 2) as f64)).collect();
        worst = worst.max((auc(&neg, &pos)? - pairwise_auc(&neg, &pos)).abs());
        for p in [0.1, 0.25, 1.0] {
            worst = worst.max((pauc(&neg, &pos, p)? - pairwise_pauc(&neg, &pos, p)).abs());
        }
    }
    Ok(worst)
}
