//! Training: loss, optimizer, clipping and the epoch loop with checkpoints.

pub mod loss;
pub mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{dice_ce_loss, LossOptions};
pub use optim::{adam_step, clip_grad_norm, AdamConfig, AdamState, Grads};

use crate::blocks::{Ctx, Mode};
use crate::error::{Error, Result};
use crate::network::{Model, Variant};
use crate::pipeline::{one_hot, random_crop, Volume};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Defaults to 1e-4 for LKA variants and 2e-4 for the plain U-Net.
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    /// Defaults to 1.0 for LKA variants and 12.0 for the plain U-Net.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub crop_size: [usize; 3],
    pub flips: bool,
    pub include_background: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: None,
            batch_size: 2,
            epochs: 1,
            max_steps: None,
            clip_norm: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            crop_size: [32, 32, 32],
            flips: true,
            include_background: true,
        }
    }
}

impl TrainConfig {
    pub fn lr_for(&self, v: Variant) -> f64 {
        self.lr.unwrap_or(if v == Variant::PlainUnet { 2e-4 } else { 1e-4 })
    }

    pub fn clip_for(&self, v: Variant) -> f64 {
        self.clip_norm.unwrap_or(if v == Variant::PlainUnet { 12.0 } else { 1.0 })
    }

    /// Fills variant-dependent defaults.
    pub fn resolved(&self, v: Variant) -> TrainConfig {
        TrainConfig { lr: Some(self.lr_for(v)), clip_norm: Some(self.clip_for(v)), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.crop_size.contains(&0) {
            return Err(Error::Config("batch_size and crop_size must be positive".into()));
        }
        if self.lr.is_some_and(|l| !(l >= 0.0)) {
            return Err(Error::Config("lr must be ≥ 0".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// A prepared training case: model-input channels and integer labels.
#[derive(Clone, Debug)]
pub struct Case {
    pub image: Volume,
    pub labels: Volume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub skipped: bool,
}

pub fn write_loss_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "step,epoch,loss,grad_norm").map_err(io)?;
    for r in records {
        writeln!(f, "{},{},{},{}", r.step, r.epoch, r.loss, r.grad_norm).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Means of consecutive non-overlapping windows; a trailing partial window
/// is dropped.
pub fn block_means(values: &[f64], window: usize) -> Vec<f64> {
    values.chunks_exact(window.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stacks crops of the selected cases into `N, C, D, H, W` input and one-hot
/// target tensors.
pub fn make_batch<F: Real>(
    cases: &[Case],
    indices: &[usize],
    num_classes: usize,
    crop: [usize; 3],
    flips: bool,
    seed: u64,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let channels = cases[indices[0]].image.channels;
    for (j, &i) in indices.iter().enumerate() {
        let c = &cases[i];
        if c.image.channels != channels {
            return Err(Error::shape("all cases must have the same channel count"));
        }
        let (img, lab) = random_crop(&c.image, &c.labels, crop, mix(seed, j as u64), flips)?;
        xs.extend(img.data.iter().map(|&v| F::lit(v as f64)));
        ys.extend(one_hot(&lab, num_classes)?.data.iter().map(|&v| F::lit(v as f64)));
    }
    let n = indices.len();
    let x = Tensor::from_vec(vec![n, channels, crop[0], crop[1], crop[2]], xs)?;
    let y = Tensor::from_vec(vec![n, num_classes, crop[0], crop[1], crop[2]], ys)?;
    Ok((x, y))
}

/// Model plus optimizer state and progress counters.
pub struct Trainer<F: Real> {
    pub model: Model<F>,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps (including skipped ones).
    pub step: usize,
    pub history: Vec<StepRecord>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Writes `epoch_NNN.ckpt` and `last.ckpt` here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl<F: Real> Trainer<F> {
    pub fn new(model: Model<F>, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let config = config.resolved(model.config().variant);
        Ok(Trainer { model, adam: AdamState::default(), config, epoch: 0, step: 0, history: Vec::new() })
    }

    /// Continues from a checkpoint written by [`Trainer::save`]. The stored
    /// training configuration is used unless `config` is given; the epoch
    /// budget can always be raised.
    pub fn resume(path: &Path, config: Option<&TrainConfig>) -> Result<Self> {
        let (model, meta, rest) = Model::<F>::load(path)?;
        let stored: TrainConfig = serde_json::from_value(meta["train"].clone())
            .map_err(|e| Error::format(path, format!("missing training state: {e}")))?;
        let step = meta["step"].as_u64().ok_or_else(|| Error::format(path, "missing step"))?;
        let epoch = meta["epoch"].as_u64().ok_or_else(|| Error::format(path, "missing epoch"))? as usize;
        let cfg = config.cloned().unwrap_or(stored);
        cfg.validate()?;
        let history: Vec<StepRecord> = serde_json::from_value(meta["history"].clone()).unwrap_or_default();
        Ok(Trainer {
            config: cfg.resolved(model.config().variant),
            model,
            adam: AdamState::from_blobs(meta["adam_step"].as_u64().unwrap_or(0), &rest),
            epoch,
            step: step as usize,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "step": self.step,
            "epoch": self.epoch,
            "adam_step": self.adam.step,
            "train": self.config,
            "history": self.history,
        });
        self.model.save(path, meta, self.adam.to_blobs())
    }

    fn done(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.step >= m)
    }

    /// One forward/backward/clip/Adam update on a batch.
    pub fn train_step(&mut self, x: &Tensor<F>, y: &Tensor<F>) -> Result<StepRecord> {
        let variant = self.model.config().variant;
        let opts = LossOptions { include_background: self.config.include_background, ..Default::default() };
        let (loss_value, mut grads, bn) = {
            let mut ctx = Ctx::new(&self.model.params, Mode::Train, true);
            let out = self.model.arch.forward(&mut ctx, x)?;
            let loss = dice_ce_loss(&out.logits, y, opts)
                .map_err(|e| Error::NonFinite(format!("step {}: {e}", self.step)))?;
            let v = loss.item().as_f64();
            loss.backward()?;
            (v, ctx.take_grads(), ctx.take_bn_updates())
        };
        let mut record = StepRecord { step: self.step, epoch: self.epoch, loss: loss_value, grad_norm: f64::NAN, skipped: false };
        match clip_grad_norm(&mut grads, self.config.clip_for(variant)) {
            Ok(norm) => {
                record.grad_norm = norm;
                self.model.params.batch_norms.extend(bn);
                let cfg = AdamConfig { lr: self.config.lr_for(variant), beta1: self.config.beta1, beta2: self.config.beta2, eps: self.config.eps };
                adam_step(&mut self.model.params, &grads, &mut self.adam, &cfg)?;
            }
            Err(Error::NonFinite(_)) => record.skipped = true,
            Err(e) => return Err(e),
        }
        self.step += 1;
        self.history.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs (or until `max_steps`). `on_step` sees every
    /// step record as it is produced.
    pub fn run(&mut self, data: &[Case], opts: &TrainOptions, mut on_step: impl FnMut(&StepRecord)) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Empty("training set is empty".into()));
        }
        let k = self.model.config().num_classes;
        while self.epoch < self.config.epochs && !self.done() {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.config.seed, self.epoch as u64)));
            for batch in order.chunks(self.config.batch_size) {
                if self.done() {
                    break;
                }
                let bseed = mix(self.config.seed ^ 0x5eed, self.step as u64);
                let (x, y) = make_batch::<F>(data, batch, k, self.config.crop_size, self.config.flips, bseed)?;
                let rec = self.train_step(&x, &y)?;
                on_step(&rec);
            }
            self.epoch += 1;
            if let Some(dir) = &opts.checkpoint_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                self.save(&dir.join(format!("epoch_{:03}.ckpt", self.epoch)))?;
                self.save(&dir.join("last.ckpt"))?;
            }
        }
        Ok(())
    }
}

/// Trains a model from scratch and returns it with its loss history.
pub fn train<F: Real>(model: Model<F>, data: &[Case], config: &TrainConfig) -> Result<(Model<F>, Vec<StepRecord>)> {
    let mut t = Trainer::new(model, config)?;
    t.run(data, &TrainOptions::default(), |_| {})?;
    Ok((t.model, t.history))
}
