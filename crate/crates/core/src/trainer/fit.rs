use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::checkpoint::Dtype;
use crate::autodiff::{mse_loss, softmax_cce_loss, Mode, Tensor};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{AeConfig, LossWeights, ModelGraph};
use crate::rng::substream;
use crate::trainer::adam::{adam_step, AdamState};
use crate::trainer::config::TrainConfig;
use crate::trainer::history::{EpochRecord, StopReason, TrainHistory};
use crate::trainer::schedule::{EarlyStopper, PlateauScheduler};

/// One training example: a single model input (no batch axis) and, for the
/// semi-supervised model, its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub class: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochLosses {
    pub total: f64,
    pub mse: f64,
    pub cce: f64,
}

/// What the epoch loop needs from a concrete training setup.
pub trait EpochRunner {
    /// Runs one epoch of updates at `lr`; returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64>;
    fn validate(&mut self) -> Result<EpochLosses>;
    /// Called whenever `epoch` has the best validation loss so far.
    fn on_best(&mut self, epoch: usize) -> Result<()>;
}

/// Epoch loop with plateau decay and early stopping on the validation loss.
pub fn run_schedule<R: EpochRunner>(
    runner: &mut R,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    let mut sched = PlateauScheduler::new(cfg.lr_initial, cfg.lr_factor, cfg.lr_patience);
    let mut stopper = EarlyStopper::new(cfg.stop_patience);
    let mut records = Vec::new();
    let mut lr_drops = Vec::new();
    let mut best = (0, f64::INFINITY);
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr;
        let train_loss = runner.train_epoch(epoch, lr)?;
        let val = runner.validate()?;
        if !val.total.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.total,
            mse: val.mse,
            cce: val.cce,
            lr,
        };
        progress(&rec);
        records.push(rec);
        if val.total < best.1 {
            best = (epoch, val.total);
            runner.on_best(epoch)?;
        }
        if sched.observe(val.total) {
            lr_drops.push(epoch);
        }
        if stopper.observe(val.total) {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok(TrainHistory {
        records,
        best_epoch: best.0,
        stop_reason,
        lr_drops,
    })
}

/// Splits `n` shuffled items into batches of `size`. A trailing batch of one
/// item is merged into its predecessor since batch statistics need two.
pub fn make_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().map(Vec::len) == Some(1) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

fn stack(samples: &[Sample], idx: &[usize]) -> Result<(Tensor, Option<Vec<usize>>)> {
    let x = Tensor::stack(&idx.iter().map(|&i| &samples[i].input).collect::<Vec<_>>())?;
    let labels: Option<Vec<usize>> = idx.iter().map(|&i| samples[i].class).collect();
    Ok((x, labels))
}

/// Loss of one batch; in training mode also backpropagates and leaves the
/// gradients on the model.
pub fn batch_loss(
    model: &mut ModelGraph,
    samples: &[Sample],
    idx: &[usize],
    weights: LossWeights,
    mode: Mode,
) -> Result<EpochLosses> {
    let (x, labels) = stack(samples, idx)?;
    let fwd = model.forward(&x, mode)?;
    let (mse, mut g_recon) = mse_loss(&fwd.reconstruction, &x)?;
    let (cce, g_logits) = match (&fwd.logits, labels) {
        (Some(logits), Some(labels)) => {
            let (l, mut g) = softmax_cce_loss(logits, &labels)?;
            g.data_mut().iter_mut().for_each(|v| *v *= weights.beta);
            (l, Some(g))
        }
        (Some(_), None) => {
            return Err(Error::Training("semi-supervised model needs labeled samples".into()))
        }
        (None, _) => (0.0, None),
    };
    let total = weights.combine(mse, cce);
    if mode == Mode::Train {
        g_recon.data_mut().iter_mut().for_each(|v| *v *= weights.alpha);
        model.backward(g_recon, g_logits)?;
    }
    Ok(EpochLosses { total, mse, cce })
}

/// Mean losses over `samples` in inference mode.
pub fn evaluate_losses(
    model: &mut ModelGraph,
    samples: &[Sample],
    weights: LossWeights,
    batch_size: usize,
) -> Result<EpochLosses> {
    if samples.is_empty() {
        return Err(Error::Training("empty evaluation set".into()));
    }
    let order: Vec<usize> = (0..samples.len()).collect();
    let mut acc = EpochLosses::default();
    for b in order.chunks(batch_size.max(1)) {
        let l = batch_loss(model, samples, b, weights, Mode::Inference)?;
        let w = b.len() as f64;
        acc.mse += l.mse * w;
        acc.cce += l.cce * w;
    }
    let n = samples.len() as f64;
    acc.mse /= n;
    acc.cce /= n;
    acc.total = weights.combine(acc.mse, acc.cce);
    model.clear_cache();
    Ok(acc)
}

fn quantize_model(model: &mut ModelGraph, dtype: Dtype) {
    if dtype == Dtype::F64 {
        return;
    }
    for p in model.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = dtype.quantize(*v));
    }
}

/// Mini-batch Adam on a model with in-memory validation.
pub struct ModelRunner<'a> {
    pub model: ModelGraph,
    pub best: Option<ModelGraph>,
    train: &'a [Sample],
    val: &'a [Sample],
    cfg: TrainConfig,
    adam: AdamState,
    shuffle: ChaCha8Rng,
    out_dir: Option<PathBuf>,
}

impl<'a> ModelRunner<'a> {
    pub fn new(
        mut model: ModelGraph,
        train: &'a [Sample],
        val: &'a [Sample],
        cfg: &TrainConfig,
        out_dir: Option<&Path>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.loss_weights != model.config.loss_weights {
            return Err(Error::config(format!(
                "train loss weights {:?} differ from model loss weights {:?}",
                cfg.loss_weights, model.config.loss_weights
            )));
        }
        if train.len() < 2 || val.is_empty() {
            return Err(Error::Training(format!(
                "need at least 2 training and 1 validation samples, got {} and {}",
                train.len(),
                val.len()
            )));
        }
        let shape = model.sample_shape();
        if let Some(s) = train.iter().chain(val).find(|s| s.input.shape() != shape) {
            return Err(Error::shape(format!(
                "sample shape {:?} does not match model input {:?}",
                s.input.shape(),
                shape
            )));
        }
        if model.head.is_some() && train.iter().chain(val).any(|s| s.class.is_none()) {
            return Err(Error::Training("semi-supervised model needs labeled samples".into()));
        }
        quantize_model(&mut model, cfg.param_dtype);
        let adam = AdamState::new(&model.params_mut());
        Ok(ModelRunner {
            model,
            best: None,
            train,
            val,
            cfg: cfg.clone(),
            adam,
            shuffle: substream(cfg.seed, "shuffle"),
            out_dir: out_dir.map(Path::to_path_buf),
        })
    }
}

impl EpochRunner for ModelRunner<'_> {
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut sum = 0.0;
        for (bi, batch) in make_batches(&order, self.cfg.batch_size).iter().enumerate() {
            self.model.zero_grad();
            let l = batch_loss(
                &mut self.model,
                self.train,
                batch,
                self.cfg.loss_weights,
                Mode::Train,
            )?;
            if !l.total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss in epoch {epoch}, batch {bi}"
                )));
            }
            adam_step(
                &mut self.model.params_mut(),
                &mut self.adam,
                lr,
                &self.cfg.adam,
                self.cfg.param_dtype,
            )
            .map_err(|e| Error::Training(format!("epoch {epoch}, batch {bi}: {e}")))?;
            sum += l.total * batch.len() as f64;
        }
        self.model.clear_cache();
        Ok(sum / self.train.len() as f64)
    }

    fn validate(&mut self) -> Result<EpochLosses> {
        evaluate_losses(
            &mut self.model,
            self.val,
            self.cfg.loss_weights,
            self.cfg.batch_size,
        )
    }

    fn on_best(&mut self, _epoch: usize) -> Result<()> {
        if let Some(dir) = &self.out_dir {
            self.model.save(&dir.join(BEST_CKPT), self.cfg.param_dtype)?;
        }
        self.best = Some(self.model.clone());
        Ok(())
    }
}

pub const BEST_CKPT: &str = "best.ckpt";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const HISTORY_CSV: &str = "history.csv";
pub const CONFIG_TOML: &str = "config.toml";

#[derive(Serialize)]
struct RunDoc<'a> {
    model: &'a AeConfig,
    train: &'a TrainConfig,
}

/// Trains until early stop or `max_epochs` and returns the best-validation
/// parameters. With `out_dir`, writes the config, best and final
/// checkpoints and the history CSV there.
pub fn train(
    model: ModelGraph,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    progress: impl FnMut(&EpochRecord),
) -> Result<(ModelGraph, TrainHistory)> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let doc = toml::to_string(&RunDoc {
            model: &model.config,
            train: cfg,
        })
        .map_err(|e| Error::config(e.to_string()))?;
        write_atomic(&dir.join(CONFIG_TOML), doc.as_bytes())?;
    }
    let mut runner = ModelRunner::new(model, train, val, cfg, out_dir)?;
    let history = run_schedule(&mut runner, cfg, progress)?;
    if let Some(dir) = out_dir {
        runner.model.save(&dir.join(FINAL_CKPT), cfg.param_dtype)?;
        history.save_csv(&dir.join(HISTORY_CSV))?;
    }
    let best = runner.best.take().expect("at least one epoch ran");
    Ok((best, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitReport {
    pub steps: usize,
    pub final_mse: f64,
    pub trace: Vec<f64>,
}

/// Repeated Adam steps on one fixed batch until its training-mode MSE drops
/// below `target` or `max_steps` is reached.
pub fn overfit(
    model: &mut ModelGraph,
    batch: &[Sample],
    cfg: &TrainConfig,
    max_steps: usize,
    target: f64,
) -> Result<OverfitReport> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut adam = AdamState::new(&model.params_mut());
    let mut trace = Vec::new();
    for step in 1..=max_steps {
        model.zero_grad();
        let l = batch_loss(model, batch, &idx, cfg.loss_weights, Mode::Train)?;
        if !l.mse.is_finite() {
            return Err(Error::Training(format!("non-finite loss at step {step}")));
        }
        trace.push(l.mse);
        if l.mse < target {
            model.clear_cache();
            return Ok(OverfitReport {
                steps: step - 1,
                final_mse: l.mse,
                trace,
            });
        }
        adam_step(
            &mut model.params_mut(),
            &mut adam,
            cfg.lr_initial,
            &cfg.adam,
            cfg.param_dtype,
        )?;
    }
    model.zero_grad();
    let l = batch_loss(model, batch, &idx, cfg.loss_weights, Mode::Train)?;
    model.clear_cache();
    trace.push(l.mse);
    Ok(OverfitReport {
        steps: max_steps,
        final_mse: l.mse,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build, ModelFamily};
    use rand::SeedableRng;

    fn tiny(family: ModelFamily) -> AeConfig {
        AeConfig {
            family,
            input_bins: 8,
            frames_per_segment: 8,
            hop_frames: 4,
            encoder_filters: vec![2, 2, 2],
            bottleneck_dim: 4,
            n_classes: (family == ModelFamily::SemiSupervised).then_some(3),
            ..AeConfig::default()
        }
    }

    fn data(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Sample {
                input: Tensor::randn(&[1, 8, 8], &mut rng),
                class: Some(i % 3),
            })
            .collect()
    }

    struct Scripted {
        losses: Vec<f64>,
        i: usize,
        bests: Vec<usize>,
    }

    impl EpochRunner for Scripted {
        fn train_epoch(&mut self, _: usize, _: f64) -> Result<f64> {
            Ok(0.0)
        }
        fn validate(&mut self) -> Result<EpochLosses> {
            let l = self.losses[self.i.min(self.losses.len() - 1)];
            self.i += 1;
            Ok(EpochLosses {
                total: l,
                mse: l,
                cce: 0.0,
            })
        }
        fn on_best(&mut self, e: usize) -> Result<()> {
            self.bests.push(e);
            Ok(())
        }
    }

    #[test]
    fn flat_validation_schedule() {
        let mut r = Scripted {
            losses: vec![1.0],
            i: 0,
            bests: vec![],
        };
        let h = run_schedule(&mut r, &TrainConfig::default(), |_| {}).unwrap();
        assert_eq!(h.records.len(), 51);
        assert_eq!(h.stop_reason, StopReason::EarlyStop);
        assert_eq!(h.lr_drops, vec![21, 41]);
        assert_eq!(h.records[21].lr, 1e-3 * 0.75);
        assert_eq!(h.best_epoch, 1);
        assert_eq!(r.bests, vec![1]);
    }

    #[test]
    fn improving_runs_to_max_epochs() {
        let mut r = Scripted {
            losses: (0..500).map(|i| 1.0 / (1 + i) as f64).collect(),
            i: 0,
            bests: vec![],
        };
        let h = run_schedule(&mut r, &TrainConfig::default(), |_| {}).unwrap();
        assert_eq!(h.records.len(), 500);
        assert_eq!(h.stop_reason, StopReason::MaxEpochs);
        assert!(h.lr_drops.is_empty());
        assert_eq!(h.best_epoch, 500);
    }

    #[test]
    fn batches_keep_partial_but_merge_singletons() {
        let order: Vec<usize> = (0..70).collect();
        let sizes: Vec<usize> = make_batches(&order, 32).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 32, 6]);
        let order: Vec<usize> = (0..65).collect();
        let sizes: Vec<usize> = make_batches(&order, 32).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 33]);
    }

    fn quick_cfg(weights: LossWeights) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            lr_patience: 1,
            stop_patience: 2,
            loss_weights: weights,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn restores_best_and_is_reproducible() {
        let (tr, va) = (data(10, 1), data(4, 2));
        let cfg = quick_cfg(LossWeights::UNSUPERVISED);
        let m = build(&tiny(ModelFamily::Unsupervised), 3).unwrap();
        let (mut best, h) = train(m.clone(), &tr, &va, &cfg, None, |_| {}).unwrap();
        let again = evaluate_losses(&mut best, &va, cfg.loss_weights, 4).unwrap();
        assert!((again.total - h.best().val_loss).abs() < 1e-9);
        let (best2, h2) = train(m, &tr, &va, &cfg, None, |_| {}).unwrap();
        assert_eq!(h, h2);
        for ((_, a), (_, b)) in best.named_state().iter().zip(best2.named_state()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn degenerate_weights_match_unsupervised() {
        let (tr, va) = (data(10, 1), data(4, 2));
        let u = build(&tiny(ModelFamily::Unsupervised), 3).unwrap();
        let mut sc = tiny(ModelFamily::SemiSupervised);
        sc.loss_weights = LossWeights::UNSUPERVISED;
        let s = build(&sc, 3).unwrap();
        let (_, hu) = train(u, &tr, &va, &quick_cfg(LossWeights::UNSUPERVISED), None, |_| {}).unwrap();
        let (_, hs) = train(s, &tr, &va, &quick_cfg(LossWeights::UNSUPERVISED), None, |_| {}).unwrap();
        for (a, b) in hu.records.iter().zip(&hs.records) {
            assert!((a.train_loss - b.train_loss).abs() < 1e-9);
            assert!((a.val_loss - b.val_loss).abs() < 1e-9);
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        let (tr, va) = (data(10, 1), data(4, 2));
        let w = LossWeights::new(0.7, 0.3).unwrap();
        let mut sc = tiny(ModelFamily::SemiSupervised);
        sc.loss_weights = w;
        let (_, h) = train(build(&sc, 0).unwrap(), &tr, &va, &quick_cfg(w), None, |_| {}).unwrap();
        for r in &h.records {
            assert!((r.val_loss - (0.7 * r.mse + 0.3 * r.cce)).abs() < 1e-12);
            assert!(r.cce > 0.0);
        }
    }

    #[test]
    fn writes_run_directory() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, va) = (data(6, 1), data(2, 2));
        let cfg = quick_cfg(LossWeights::UNSUPERVISED);
        let m = build(&tiny(ModelFamily::Unsupervised), 3).unwrap();
        let (best, h) = train(m, &tr, &va, &cfg, Some(dir.path()), |_| {}).unwrap();
        for f in [BEST_CKPT, FINAL_CKPT, HISTORY_CSV, CONFIG_TOML] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let loaded = ModelGraph::load(&dir.path().join(BEST_CKPT)).unwrap();
        for ((_, a), (_, b)) in loaded.named_state().iter().zip(best.named_state()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(
            TrainHistory::read_records(&dir.path().join(HISTORY_CSV)).unwrap(),
            h.records
        );
    }

    #[test]
    fn rejects_unlabeled_semisupervised_and_shape_mismatch() {
        let mut tr = data(6, 1);
        let va = data(2, 2);
        let w = LossWeights::new(0.5, 0.5).unwrap();
        let mut sc = tiny(ModelFamily::SemiSupervised);
        sc.loss_weights = w;
        tr[0].class = None;
        assert!(train(build(&sc, 0).unwrap(), &tr, &va, &quick_cfg(w), None, |_| {}).is_err());
        let mut bad = data(6, 1);
        bad[0].input = Tensor::zeros(&[1, 8, 16]);
        let m = build(&tiny(ModelFamily::Unsupervised), 0).unwrap();
        let cfg = quick_cfg(LossWeights::UNSUPERVISED);
        assert!(matches!(
            train(m, &bad, &va, &cfg, None, |_| {}),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn overfit_small_batch() {
        let mut m = build(&tiny(ModelFamily::Unsupervised), 0).unwrap();
        let batch = data(4, 5);
        let cfg = TrainConfig {
            lr_initial: 1e-2,
            ..TrainConfig::default()
        };
        let r = overfit(&mut m, &batch, &cfg, 400, 1e-9).unwrap();
        assert!(r.final_mse < 0.75 * r.trace[0], "{} vs {}", r.final_mse, r.trace[0]);
    }
}
