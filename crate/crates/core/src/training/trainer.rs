use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::network::{Network, ENCODER_PREFIX};
use crate::nn::{update_running_stats, Mode, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::data::{augment, random_crop, standardize, Sample, CROP_ALPHA, CROP_MAX_ITER};
use super::infer::{argmax, predict_logits};
use super::loss::{total_loss, AUX_WEIGHT, IGNORE_INDEX};
use super::metrics::{ConfusionMatrix, Metrics};
use super::optim::{cosine_lr, AdamW, OptimState};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Random crop applied before augmentation; `None` trains on whole images.
    pub crop: Option<(usize, usize)>,
    pub crop_alpha: f64,
    pub crop_max_iter: usize,
    pub augment: bool,
    pub lr_decoder: f64,
    pub lr_encoder: f64,
    pub lr_min: f64,
    pub aux_weight: f64,
    pub optimizer: AdamW,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            crop: None,
            crop_alpha: CROP_ALPHA,
            crop_max_iter: CROP_MAX_ITER,
            augment: true,
            lr_decoder: 9e-3,
            lr_encoder: 6e-4,
            lr_min: 0.0,
            aux_weight: AUX_WEIGHT,
            optimizer: AdamW::default(),
            mean: super::data::IMAGENET_MEAN.to_vec(),
            std: super::data::IMAGENET_STD.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.crop_alpha > 0.0 && self.crop_alpha <= 1.0) {
            return Err(Error::Config(format!("crop_alpha must lie in (0, 1], got {}", self.crop_alpha)));
        }
        for (name, v) in [("lr_decoder", self.lr_decoder), ("lr_encoder", self.lr_encoder), ("lr_min", self.lr_min)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scores after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss over the epoch's steps; `None` for the baseline row.
    pub train_loss: Option<f64>,
    pub lr_decoder: f64,
    pub val: Metrics,
}

/// One step's scalars.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub ce: f64,
    pub dice: f64,
    pub aux: f64,
}

pub struct Trainer<'a> {
    pub net: &'a Network,
    pub cfg: TrainConfig,
    pub store: ParamStore<f32>,
    pub state: OptimState,
    total_steps: usize,
}

/// Stack samples into a standardized `[B, C, H, W]` batch and its labels.
pub fn collate(samples: &[Sample], mean: &[f64], std: &[f64]) -> Result<(Tensor<f32>, Vec<u32>)> {
    let first = samples.first().ok_or_else(|| Error::invalid("collate", "empty batch"))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.image.numel());
    let mut labels = Vec::with_capacity(samples.len() * first.mask.len());
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(Error::shape("collate", format!("sample {:?} in a batch of {shape:?}", s.image.shape())));
        }
        data.extend_from_slice(s.image.data());
        labels.extend_from_slice(&s.mask);
    }
    let x = Tensor::new(&[samples.len(), shape[0], shape[1], shape[2]], data)?;
    Ok((standardize(&x, mean, std)?, labels))
}

/// Confusion-matrix scores of the network over `samples`.
pub fn evaluate(net: &Network, store: &ParamStore<f32>, samples: &[Sample], cfg: &TrainConfig) -> Result<Metrics> {
    let mut cm = ConfusionMatrix::new(net.cfg.num_classes);
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let (x, labels) = collate(chunk, &cfg.mean, &cfg.std)?;
        let logits = predict_logits(net, store, &x)?;
        cm.update(&argmax(&logits), &labels, IGNORE_INDEX)?;
    }
    cm.finalize()
}

impl<'a> Trainer<'a> {
    pub fn new(net: &'a Network, store: ParamStore<f32>, cfg: TrainConfig, train_len: usize) -> Result<Self> {
        cfg.validate()?;
        let total_steps = cfg.epochs * cfg.steps_per_epoch(train_len);
        Ok(Trainer { net, cfg, store, state: OptimState::new(), total_steps })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    fn lrs(&self) -> (f64, f64) {
        let t = self.state.step as usize;
        let c = &self.cfg;
        (cosine_lr(t, self.total_steps, c.lr_decoder, c.lr_min), cosine_lr(t, self.total_steps, c.lr_encoder, c.lr_min))
    }

    /// The sample as seen at `epoch`: cropped and augmented from a stream
    /// keyed by (seed, epoch, index) only.
    pub fn prepare(&self, sample: &Sample, epoch: usize, index: usize) -> Result<Sample> {
        let mut rng = Rng::new(self.cfg.seed).fork_named("samples").fork(epoch as u64).fork(index as u64);
        let mut s = match self.cfg.crop {
            Some(size) => random_crop(sample, size, self.cfg.crop_alpha, self.cfg.crop_max_iter, IGNORE_INDEX, &mut rng)?.sample,
            None => sample.clone(),
        };
        if self.cfg.augment {
            s = augment(&s, &mut rng)?;
        }
        Ok(s)
    }

    /// Sample order for `epoch`.
    pub fn order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        Rng::new(self.cfg.seed).fork_named("order").fork(epoch as u64).shuffle(&mut idx);
        idx
    }

    /// One optimizer step on a batch.
    pub fn step(&mut self, batch: &[Sample]) -> Result<StepLoss> {
        let (x, labels) = collate(batch, &self.cfg.mean, &self.cfg.std)?;
        let step_no = self.state.step + 1;
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &self.store, Mode::Train, true);
        let xv = s.constant(x);
        let out = self.net.forward(&mut s, xv)?;
        let parts = total_loss(&mut s, out.logits, &out.aux, &labels, IGNORE_INDEX, self.cfg.aux_weight, Mode::Train)?;
        let v = |s: &Session<'_, f32>, x| s.value(x).item() as f64;
        let loss = StepLoss {
            total: v(&s, parts.total),
            ce: v(&s, parts.ce),
            dice: v(&s, parts.dice),
            aux: parts.aux.map_or(0.0, |a| v(&s, a)),
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("loss {} at training step {step_no}", loss.total)));
        }
        let mut grads = s.backward(parts.total)?;
        let named: Vec<(String, Tensor<f32>)> = s
            .bindings()
            .filter_map(|(n, var)| grads.take(var).map(|t| (n.to_string(), t)))
            .collect();
        let stats = std::mem::take(&mut s.norm_stats);
        drop(s);
        let (lr_dec, lr_enc) = self.lrs();
        self.cfg.optimizer.step(&mut self.store, &named, &mut self.state, |n| {
            if n.starts_with(ENCODER_PREFIX) {
                lr_enc
            } else {
                lr_dec
            }
        })?;
        update_running_stats(&mut self.store, &stats)?;
        Ok(loss)
    }

    /// Trains one epoch and returns the mean total loss.
    pub fn epoch(&mut self, train: &[Sample], epoch: usize) -> Result<f64> {
        let order = self.order(epoch, train.len());
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = chunk.iter().map(|&i| self.prepare(&train[i], epoch, i)).collect::<Result<Vec<_>>>()?;
            sum += self.step(&batch)?.total;
            steps += 1;
        }
        Ok(if steps == 0 { 0.0 } else { sum / steps as f64 })
    }

    /// Baseline evaluation (epoch 0) followed by `cfg.epochs` epochs, each
    /// reported through `on_epoch` as soon as it finishes.
    pub fn fit(&mut self, train: &[Sample], val: &[Sample], mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        let base = EpochLog { epoch: 0, train_loss: None, lr_decoder: self.lrs().0, val: evaluate(self.net, &self.store, val, &self.cfg)? };
        on_epoch(&base);
        logs.push(base);
        for e in 1..=self.cfg.epochs {
            let lr = self.lrs().0;
            let loss = self.epoch(train, e)?;
            let log = EpochLog { epoch: e, train_loss: Some(loss), lr_decoder: lr, val: evaluate(self.net, &self.store, val, &self.cfg)? };
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}
