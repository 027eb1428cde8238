//! L1/Adam training loop, PSNR evaluation and their building blocks.

pub mod adam;
pub mod augment;
pub mod dataset;
pub mod loss;
pub mod psnr;
pub mod schedule;
pub mod sink;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use self::adam::{AdamConfig, AdamState};
pub use self::augment::{augment, Dihedral};
pub use self::dataset::PairSet;
pub use self::loss::l1_loss;
pub use self::psnr::{format_db, psnr_rgb};
pub use self::schedule::LrSchedule;
pub use self::sink::{CsvSink, MemorySink, MetricRow, MetricSink, NullSink};

use crate::data::{bicubic_upsample, ImageBuf};
use crate::error::{Error, ErrorCategory, Result};
use crate::graph::Graph;
use crate::layers::Normalization;
use crate::network::Model;
use crate::nnops::BnMode;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_halving_period: u64,
    pub batch_size: usize,
    /// HR-side patch edge.
    pub patch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub augment: bool,
    /// Validation (and snapshot) cadence in steps.
    pub val_every: u64,
    /// Border pixels excluded from validation PSNR.
    pub shave: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            lr_halving_period: 200_000,
            batch_size: 16,
            patch_size: 96,
            max_steps: 1000,
            seed: 0,
            adam: AdamConfig::default(),
            augment: true,
            val_every: 1000,
            shave: 0,
        }
    }
}

impl TrainConfig {
    /// Largest stable starting rate per normalization: `1e-3` with weight
    /// norm, `1e-4` otherwise.
    pub fn default_lr(norm: Normalization) -> f64 {
        match norm {
            Normalization::WeightNorm => 1e-3,
            _ => 1e-4,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.lr0, self.lr_halving_period)
    }

    pub fn validate(&self, scale: usize) -> Result<()> {
        self.adam.validate()?;
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr0
            )));
        }
        if self.batch_size == 0
            || self.max_steps == 0
            || self.val_every == 0
            || self.lr_halving_period == 0
        {
            return Err(Error::Config(
                "batch_size, max_steps, val_every and lr_halving_period must be positive".into(),
            ));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(scale) {
            return Err(Error::Config(format!(
                "patch_size {} is not a positive multiple of scale {scale}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient stopped the run at `step`; the model
    /// was restored to the last snapshot.
    Diverged {
        step: u64,
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub status: TrainStatus,
    /// Training L1 of each completed step.
    pub losses: Vec<f64>,
    /// `(step, mean validation PSNR)` after each validation.
    pub validations: Vec<(u64, f64)>,
    /// Step of the parameters currently held by the model.
    pub model_step: u64,
}

impl TrainReport {
    pub fn diverged(&self) -> bool {
        matches!(self.status, TrainStatus::Diverged { .. })
    }
}

/// Exponential moving average with smoothing `2 / (window + 1)`.
pub fn ema(values: &[f64], window: usize) -> Vec<f64> {
    let alpha = 2.0 / (window as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(a) => a + alpha * (v - a),
        };
        acc = Some(next);
        out.push(next);
    }
    out
}

/// Forward, L1, backward and one Adam update on one batch. Returns the loss.
pub fn train_step(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    lr_batch: &Tensor<f32>,
    hr_batch: &Tensor<f32>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(lr_batch.clone());
    let y = g.constant(hr_batch.clone());
    let pred = model.forward(&mut g, x, BnMode::Train)?;
    let loss = l1_loss(&mut g, pred, y)?;
    let value = g.value(loss).item()? as f64;
    g.backward(loss)?;
    model.params.zero_grad();
    model.params.collect_grads(&g);
    adam.step(&mut model.params, lr, cfg)?;
    Ok(value)
}

/// Super-resolves one LR image in inference mode.
pub fn super_resolve(model: &mut Model<f32>, lr: &ImageBuf) -> Result<ImageBuf> {
    let out = model.predict(&lr.to_tensor())?;
    ImageBuf::from_tensor(&out, 0)
}

/// Model PSNR per `(hr, lr)` pair.
pub fn evaluate_psnr(
    model: &mut Model<f32>,
    pairs: &[(ImageBuf, ImageBuf)],
    shave: usize,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|(hr, lr)| psnr_rgb(&super_resolve(model, lr)?, hr, shave))
        .collect()
}

/// Bicubic-upsampling PSNR per `(hr, lr)` pair.
pub fn bicubic_psnr(
    pairs: &[(ImageBuf, ImageBuf)],
    scale: usize,
    shave: usize,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|(hr, lr)| psnr_rgb(&bicubic_upsample(lr, scale)?, hr, shave))
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs the full loop. `on_snapshot` receives the model after every
/// validation and may persist it.
pub fn train(
    model: &mut Model<f32>,
    data: &PairSet,
    val: &[(ImageBuf, ImageBuf)],
    cfg: &TrainConfig,
    sink: &dyn MetricSink,
    on_snapshot: &mut dyn FnMut(&Model<f32>, u64) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate(model.spec.scale)?;
    if data.scale != model.spec.scale {
        return Err(Error::Config(format!(
            "dataset scale {} does not match network scale {}",
            data.scale, model.spec.scale
        )));
    }
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.params);
    let mut last_good = model.clone();
    let mut report = TrainReport {
        status: TrainStatus::Completed,
        losses: Vec::with_capacity(cfg.max_steps as usize),
        validations: Vec::new(),
        model_step: 0,
    };
    for step in 1..=cfg.max_steps {
        let lr = schedule.lr(step - 1);
        let (x, y) = data.sample(&mut rng, cfg.batch_size, cfg.patch_size, cfg.augment)?;
        let loss = match train_step(model, &mut adam, &x, &y, lr, &cfg.adam) {
            Ok(l) if l.is_finite() => l,
            Ok(l) => return Ok(diverge(model, last_good, report, step, format!("loss {l}"))),
            Err(e) if e.category() == ErrorCategory::Numerical => {
                return Ok(diverge(model, last_good, report, step, e.to_string()));
            }
            Err(e) => return Err(e),
        };
        report.losses.push(loss);
        let mut row = MetricRow {
            step,
            lr,
            train_l1: loss,
            val_psnr: None,
        };
        if step % cfg.val_every == 0 || step == cfg.max_steps {
            if !val.is_empty() {
                let psnr = mean(&evaluate_psnr(model, val, cfg.shave)?);
                report.validations.push((step, psnr));
                row.val_psnr = Some(psnr);
            }
            last_good = model.clone();
            report.model_step = step;
            on_snapshot(model, step)?;
        }
        sink.record(&row)?;
        if step % 100 == 0 {
            log::debug!("step {step} lr {lr:.2e} l1 {loss:.4}");
        }
    }
    Ok(report)
}

fn diverge(
    model: &mut Model<f32>,
    last_good: Model<f32>,
    mut report: TrainReport,
    step: u64,
    reason: String,
) -> TrainReport {
    log::warn!(
        "training diverged at step {step}: {reason}; restoring step {}",
        report.model_step
    );
    *model = last_good;
    report.status = TrainStatus::Diverged { step, reason };
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockSpec;
    use crate::data::bicubic_downsample;
    use crate::data::synth::synth_scene;
    use crate::network::NetSpec;

    fn tiny(norm: Normalization) -> Model<f32> {
        let spec = NetSpec::wdsr(2, 1, BlockSpec::wdsr_a(4, 2).with_normalization(norm))
            .with_rgb_mean([120.0, 118.0, 110.0]);
        Model::from_seed(spec, 3).unwrap()
    }

    fn corpus(n: usize) -> Vec<(ImageBuf, ImageBuf)> {
        (0..n)
            .map(|i| {
                let hr = synth_scene(32, 32, 40 + i as u64);
                let lr = bicubic_downsample(&hr, 2).unwrap();
                (hr, lr)
            })
            .collect()
    }

    fn cfg(steps: u64) -> TrainConfig {
        TrainConfig {
            lr0: 1e-3,
            batch_size: 2,
            patch_size: 16,
            max_steps: steps,
            val_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ema_smooths() {
        assert_eq!(ema(&[1.0, 1.0, 1.0], 5), vec![1.0; 3]);
        let e = ema(&[0.0, 3.0], 2);
        assert!((e[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let pairs = corpus(2);
        let set = PairSet::new(&pairs, 2).unwrap();
        let run = || {
            let mut m = tiny(Normalization::WeightNorm);
            let r = train(
                &mut m,
                &set,
                &pairs[..1],
                &cfg(20),
                &NullSink,
                &mut |_, _| Ok(()),
            )
            .unwrap();
            (r, m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(a.validations.len(), 2);
    }

    #[test]
    fn step_touches_exactly_the_parameters_with_gradient() {
        let pairs = corpus(1);
        let set = PairSet::new(&pairs, 2).unwrap();
        let mut m = tiny(Normalization::Plain);
        let mut adam = AdamState::new(&m.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = set.sample(&mut rng, 2, 16, false).unwrap();
        let before = m.params.clone();
        train_step(&mut m, &mut adam, &x, &y, 1e-3, &AdamConfig::default()).unwrap();
        for ((_, old), (_, new)) in before.iter().zip(m.params.iter()) {
            let grad = new.grad.as_ref().unwrap();
            for ((a, b), g) in old
                .value
                .data()
                .iter()
                .zip(new.value.data())
                .zip(grad.data())
            {
                assert_eq!(*g == 0.0, a == b, "{}", new.name);
            }
        }
    }

    #[test]
    fn validation_leaves_running_stats_untouched() {
        let pairs = corpus(2);
        let set = PairSet::new(&pairs, 2).unwrap();
        let mut m = tiny(Normalization::BatchNorm);
        train(&mut m, &set, &[], &cfg(3), &NullSink, &mut |_, _| Ok(())).unwrap();
        let running = |m: &Model<f32>| -> Vec<_> {
            m.bn_states()
                .into_iter()
                .map(|(_, s)| (s.running_mean.clone(), s.running_var.clone()))
                .collect()
        };
        let stats = running(&m);
        assert!(stats.iter().all(|(a, b)| a.is_some() && b.is_some()));
        let first = evaluate_psnr(&mut m, &pairs, 0).unwrap();
        let again = evaluate_psnr(&mut m, &pairs, 0).unwrap();
        assert_eq!(stats, running(&m));
        assert_eq!(first, again);
    }

    #[test]
    fn divergence_restores_last_snapshot() {
        let pairs = corpus(1);
        let set = PairSet::new(&pairs, 2).unwrap();
        let mut m = tiny(Normalization::Plain);
        let mut c = cfg(40);
        c.lr0 = 1e30;
        let mut snaps = Vec::new();
        let r = train(&mut m, &set, &[], &c, &NullSink, &mut |m, s| {
            snaps.push((s, m.clone()));
            Ok(())
        })
        .unwrap();
        assert!(r.diverged());
        match snaps.last() {
            Some((step, snap)) => {
                assert_eq!(*step, r.model_step);
                assert_eq!(&m, snap);
            }
            None => assert_eq!(m, tiny(Normalization::Plain)),
        }
        assert!(m.params.iter().all(|(_, p)| p.value.is_finite()));
    }
}
