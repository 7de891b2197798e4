//! Deep-supervision loss, Adam, and the toy training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad_check, GradCheckOptions, GradCheckReport, Graph, ParamStore, Var};
use crate::data::dataset::{augment, synth_dataset, Augment, Sample};
use crate::error::{Error, Result};
use crate::model::{CorrNet, CorrNetConfig, SaliencyOutputs, INIT_STD};
use crate::tensor::ops::{resize_bilinear, NormMode};
use crate::tensor::{Scalar, Tensor};

/// Σ over the four maps of BCE + soft-IoU, each map bilinearly resized to the
/// ground truth first.
pub fn total_loss<T: Scalar>(g: &mut Graph<'_, T>, maps: &[Var], gt: &Tensor<T>) -> Result<Var> {
    let [_, _, h, w] = gt.dims4()?;
    let mut total: Option<Var> = None;
    for &s in maps {
        let up = g.resize(s, h, w)?;
        let bce = g.bce(up, gt)?;
        let iou = g.iou(up, gt)?;
        let term = g.add(bce, iou)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("total_loss needs at least one map".into()))
}

pub fn outputs_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    out: &SaliencyOutputs,
    gt: &Tensor<T>,
) -> Result<Var> {
    total_loss(g, &out.maps(), gt)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>) -> Self {
        let zeros = || {
            store
                .params()
                .iter()
                .map(|p| vec![0f32; p.value.numel()])
                .collect()
        };
        Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<f32>, lr: f64) -> Result<()> {
        if self.m.len() != store.params().len() {
            return Err(Error::InvalidArgument(
                "optimizer state does not match the store".into(),
            ));
        }
        if store.params().iter().any(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite { op: "adam_step" });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = p.grad.data().to_vec();
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs after which the learning rate is divided by `lr_drop_factor`.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub input_size: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lr_drop_epoch: 30,
            lr_drop_factor: 10.0,
            batch_size: 4,
            epochs: 20,
            seed: 0,
            input_size: 64,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr_drop_factor > 0.0) {
            return Err(Error::Config("lr_drop_factor must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch > self.lr_drop_epoch {
            self.lr / self.lr_drop_factor
        } else {
            self.lr
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Held-out MAE of S1, S2, S3, S4.
    pub mae: [f64; 4],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,loss,mae_s1,mae_s2,mae_s3,mae_s4")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                e.epoch, e.loss, e.mae[0], e.mae[1], e.mae[2], e.mae[3]
            )?;
        }
        Ok(())
    }
}

pub const MIN_TRAIN_SAMPLES: usize = 20;

/// Stacks samples into an image batch and a mask batch.
pub fn batch(samples: &[Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let imgs: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let masks: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok((Tensor::stack_batch(&imgs)?, Tensor::stack_batch(&masks)?))
}

/// MAE of each map (finest first) against the masks, after bilinear resizing
/// to mask resolution; averaged over samples.
pub fn evaluate_mae(model: &CorrNet, samples: &[Sample], batch_size: usize) -> Result<[f64; 4]> {
    let mut sums = [0f64; 4];
    for chunk in samples.chunks(batch_size.max(1)) {
        let (x, gt) = batch(chunk)?;
        let pred = model.predict(&x)?;
        let [n, _, h, w] = gt.dims4()?;
        for (k, map) in pred.maps.iter().enumerate() {
            let up = resize_bilinear(map, h, w)?;
            let plane = h * w;
            for b in 0..n {
                let s = &up.data()[b * plane..(b + 1) * plane];
                let g = &gt.data()[b * plane..(b + 1) * plane];
                let e: f64 = s
                    .iter()
                    .zip(g)
                    .map(|(&a, &b)| (a as f64 - b as f64).abs())
                    .sum();
                sums[k] += e / plane as f64;
            }
        }
    }
    Ok(sums.map(|s| s / samples.len() as f64))
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut CorrNet,
    opt: &mut Adam,
    x: &Tensor<f32>,
    gt: &Tensor<f32>,
    lr: f64,
) -> Result<f64> {
    let (loss, grads, updates) = {
        let mut g = Graph::new(&model.store, NormMode::Train);
        let xv = g.input(x.clone());
        let out = model.forward(&mut g, xv)?;
        let l = outputs_loss(&mut g, &out, gt)?;
        let loss = g.value(l).item()? as f64;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let grads = g.backward(l)?;
        (loss, grads, g.take_buffer_updates())
    };
    model.store.apply_buffer_updates(updates);
    model.store.accumulate(&grads);
    opt.step(&mut model.store, lr)?;
    Ok(loss)
}

/// Synthetic train/held-out split: `n_train + n_holdout` samples from one
/// seeded generator, the first `n_train` for training.
pub fn toy_data(
    n_train: usize,
    n_holdout: usize,
    size: usize,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut all = synth_dataset(n_train + n_holdout, size, seed)?;
    let holdout = all.split_off(n_train);
    Ok((all, holdout))
}

/// Redraws conv and fully connected weights as N(0, 2/fan_in) and biases as
/// N(0, 0.1²), leaving normalization and correlation parameters alone.
/// Single-channel outputs keep std [`INIT_STD`] so the saliency logits stay
/// far from sigmoid saturation.
pub fn he_rescale(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.params_mut() {
        let shape = p.value.shape().to_vec();
        let std = if p.name.ends_with(".weight") && shape.len() == 4 && shape[0] == 1 {
            INIT_STD
        } else if p.name.ends_with(".weight") && shape.len() == 4 {
            (2.0 / (shape[1] * shape[2] * shape[3]) as f64).sqrt()
        } else if p.name.ends_with(".weight") && shape.len() == 2 && !p.name.contains("correlation")
        {
            (2.0 / shape[1] as f64).sqrt()
        } else if p.name.ends_with(".bias") {
            0.1
        } else {
            continue;
        };
        for v in p.value.data_mut() {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Central-difference check of the full deep-supervision loss in 64-bit
/// arithmetic, on a synthetic batch of `size`×`size` images in train mode,
/// with weights redrawn by [`he_rescale`].
pub fn model_grad_check(
    config: &CorrNetConfig,
    size: usize,
    batch_size: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let seed = opts.seed;
    let config = CorrNetConfig {
        input_size: size,
        ..config.clone()
    };
    let model = CorrNet::new(&config, seed)?;
    let data = synth_dataset(batch_size, size, seed)?;
    let (x, gt) = batch(&data)?;
    let (x, gt) = (x.cast::<f64>(), gt.cast::<f64>());
    let mut store = model.store.cast::<f64>();
    he_rescale(&mut store, seed);
    grad_check(&mut store, NormMode::Train, opts, |g| {
        let xv = g.input(x.clone());
        let out = model.forward(g, xv)?;
        outputs_loss(g, &out, &gt)
    })
}

/// Trains in place with online augmentation and a seeded sample order.
/// `on_epoch` sees each record as soon as it is complete.
pub fn train_toy(
    model: &mut CorrNet,
    train: &[Sample],
    holdout: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    if train.len() < MIN_TRAIN_SAMPLES {
        return Err(Error::Dataset(format!(
            "toy training needs at least {MIN_TRAIN_SAMPLES} samples, got {}",
            train.len()
        )));
    }
    if holdout.is_empty() {
        return Err(Error::Dataset("held-out set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut opt = Adam::new(&model.store);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let samples = idx
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(
                            &train[i],
                            Augment::ALL[rng.random_range(0..Augment::ALL.len())],
                        )
                    } else {
                        Ok(train[i].clone())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let (x, gt) = batch(&samples)?;
            let loss = train_step(model, &mut opt, &x, &gt, lr)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss;
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            lr,
            loss: total / batches as f64,
            mae: evaluate_mae(model, holdout, 10)?,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}
