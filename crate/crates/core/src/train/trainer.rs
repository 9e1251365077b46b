//! The epoch loop: shuffled mini-batches, on-the-fly augmentation, focal
//! loss, momentum SGD under a cosine schedule, and early stopping on a
//! stratified validation carve-out.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::RngCore;

use super::focal::{default_alpha, focal_loss};
use super::optim::{cosine_lr, sgd_step, OptimizerState};
use crate::data::{stratified_partition, AugmentConfig, Prepared, PreprocessConfig, Preprocessor, HU_WINDOW};
use crate::error::{Error, Result};
use crate::model::parse_value;
use crate::model::{Mode, ModelConfig, ModelParams, Network};
use crate::rng;
use crate::tensor::Tensor;

// stream tags
const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;
const DROPOUT: u64 = 3;
const CARVE_OUT: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub momentum: f64,
    pub lr_init: f64,
    pub gamma: f64,
    /// Per-class weights; `None` means `1 − class frequency` on the data
    /// handed to [`train`].
    pub alpha: Option<Vec<f64>>,
    pub seed: u64,
    pub validation_fraction: f64,
    pub augmentation: AugmentConfig,
    /// Re-clip window applied after augmentation.
    pub hu_window: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 300,
            patience: 50,
            momentum: 0.9,
            lr_init: 3e-5,
            gamma: 2.0,
            alpha: None,
            seed: 0,
            validation_fraction: 0.1,
            augmentation: AugmentConfig::default(),
            hu_window: HU_WINDOW,
        }
    }
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let mut violated = Vec::new();
        if self.batch_size == 0 {
            violated.push("batch_size must be at least 1".to_string());
        }
        if self.max_epochs == 0 {
            violated.push("max_epochs must be at least 1".to_string());
        }
        if !(self.gamma >= 0.0) {
            violated.push(format!("gamma {} must be non-negative", self.gamma));
        }
        if let Some(a) = &self.alpha {
            if a.len() != num_classes {
                violated.push(format!("alpha has {} entries for {num_classes} classes", a.len()));
            }
            if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
                violated.push("alpha entries must lie in [0, 1]".to_string());
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            violated.push(format!(
                "validation_fraction {} outside (0, 0.5)",
                self.validation_fraction
            ));
        }
        if !(self.lr_init >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            violated.push("lr_init must be non-negative and momentum in [0, 1)".to_string());
        }
        if violated.is_empty() {
            Ok(())
        } else {
            Err(Error::config(violated.join("; ")))
        }
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let a = &self.augmentation;
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("momentum", format!("{:?}", self.momentum)),
            ("lr_init", format!("{:?}", self.lr_init)),
            ("gamma", format!("{:?}", self.gamma)),
            ("alpha", self.alpha.as_deref().map_or("auto".to_string(), join_f64)),
            ("seed", self.seed.to_string()),
            ("validation_fraction", format!("{:?}", self.validation_fraction)),
            ("augment", a.enabled.to_string()),
            ("flip_prob", format!("{:?}", a.flip_prob)),
            ("rotation_prob", format!("{:?}", a.rotation_prob)),
            ("max_rotation_deg", format!("{:?}", a.max_rotation_deg)),
            ("elastic_prob", format!("{:?}", a.elastic_prob)),
            ("elastic_sigma", format!("{:?}", a.elastic_sigma)),
            ("elastic_magnitude", format!("{:?}", a.elastic_magnitude)),
            ("noise_sigma", format!("{:?}", a.noise_sigma)),
        ]
    }

    /// Applies one `key=value` setting; `Ok(false)` for foreign keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let a = &mut self.augmentation;
        match key {
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "lr_init" => self.lr_init = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "alpha" => {
                self.alpha = match value.trim() {
                    "auto" => None,
                    list => Some(list.split(',').map(|v| parse_value(key, v)).collect::<Result<_>>()?),
                }
            }
            "seed" => self.seed = parse_value(key, value)?,
            "validation_fraction" => self.validation_fraction = parse_value(key, value)?,
            "augment" => a.enabled = parse_value(key, value)?,
            "flip_prob" => a.flip_prob = parse_value(key, value)?,
            "rotation_prob" => a.rotation_prob = parse_value(key, value)?,
            "max_rotation_deg" => a.max_rotation_deg = parse_value(key, value)?,
            "elastic_prob" => a.elastic_prob = parse_value(key, value)?,
            "elastic_sigma" => a.elastic_sigma = parse_value(key, value)?,
            "elastic_magnitude" => a.elastic_magnitude = parse_value(key, value)?,
            "noise_sigma" => a.noise_sigma = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// One training example. `image` is the output of
/// [`Preprocessor::prepare`]; augmentation and standardization happen per
/// epoch inside [`train`].
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Option<Prepared>,
    pub meta: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Target probabilities that hit the log clamp, summed over all batches.
    pub floor_events: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.records {
            writeln!(out, "{},{:?},{:?},{:?}", r.epoch, r.train_loss, r.val_loss, r.lr).unwrap();
        }
        out
    }
}

/// Assembles `N×1×D×H×W` image and `N×V` metadata tensors.
pub fn batch_tensors(images: &[Tensor], metas: &[&[f64]]) -> Result<(Option<Tensor>, Tensor)> {
    let image = if images.is_empty() {
        None
    } else {
        let refs: Vec<&Tensor> = images.iter().collect();
        Some(Tensor::stack(&refs)?)
    };
    let v = metas.first().map_or(0, |m| m.len());
    let mut data = Vec::with_capacity(metas.len() * v);
    for m in metas {
        if m.len() != v {
            return Err(Error::shape(format!(
                "metadata rows of width {} and {v} in one batch",
                m.len()
            )));
        }
        data.extend_from_slice(m);
    }
    Ok((image, Tensor::new(&[metas.len(), v], data)?))
}

struct Loop<'a> {
    net: Network,
    pre: Preprocessor,
    samples: &'a [Sample],
    cfg: &'a TrainConfig,
    alpha: Vec<f64>,
    uses_image: bool,
}

impl<'a> Loop<'a> {
    fn new(samples: &'a [Sample], cfg: &'a TrainConfig, model_cfg: &ModelConfig, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != model_cfg.num_classes {
            return Err(Error::config(format!(
                "{} alpha weights for {} classes",
                alpha.len(),
                model_cfg.num_classes
            )));
        }
        Ok(Loop {
            net: Network::new(model_cfg.clone())?,
            pre: Preprocessor::new(PreprocessConfig {
                hu_window: cfg.hu_window,
                ..Default::default()
            }),
            samples,
            cfg,
            alpha,
            uses_image: model_cfg.mode != Mode::MetadataOnly,
        })
    }

    /// Sample-weighted mean loss over `indices` in evaluation mode;
    /// `images` are the standardized volumes in the same order.
    fn mean_loss(&self, params: &ModelParams, indices: &[usize], images: &[Tensor]) -> Result<f64> {
        const CHUNK: usize = 16;
        let mut total = 0.0;
        for (k, chunk) in indices.chunks(CHUNK).enumerate() {
            let imgs = if self.uses_image {
                images[k * CHUNK..k * CHUNK + chunk.len()].to_vec()
            } else {
                Vec::new()
            };
            let (loss, _, _) = self.batch(params, chunk, imgs, None)?;
            total += loss * chunk.len() as f64;
        }
        Ok(total / indices.len() as f64)
    }

    fn image(&self, idx: usize, epoch: Option<usize>) -> Result<Tensor> {
        let prepared = self.samples[idx]
            .image
            .as_ref()
            .ok_or_else(|| Error::config(format!("sample {idx} has no image")))?;
        let (t, _) = match epoch {
            Some(e) if self.cfg.augmentation.enabled => {
                let mut r = rng::stream(self.cfg.seed, &[AUGMENT, e as u64, idx as u64]);
                self.pre.finish(prepared, Some((&self.cfg.augmentation, &mut r)))?
            }
            _ => self.pre.finish::<rng::Rng>(prepared, None)?,
        };
        Ok(t)
    }

    /// Batch loss, plus gradients when `training` carries (epoch, batch).
    fn batch(
        &self,
        params: &ModelParams,
        idx: &[usize],
        images: Vec<Tensor>,
        training: Option<(usize, usize)>,
    ) -> Result<(f64, Option<ModelParams>, usize)> {
        let metas: Vec<&[f64]> = idx.iter().map(|&i| self.samples[i].meta.as_slice()).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| self.samples[i].label).collect();
        let (image, meta) = batch_tensors(&images, &metas)?;
        let mut drop_rng = match training {
            Some((epoch, b)) => rng::stream(self.cfg.seed, &[DROPOUT, epoch as u64, b as u64]),
            None => rng::seeded(0),
        };
        let pass = self
            .net
            .forward(params, image.as_ref(), &meta, training.is_some(), &mut drop_rng)?;
        let out = focal_loss(&pass.probs, &labels, &self.alpha, self.cfg.gamma)?;
        let grads = match training {
            Some(_) => Some(self.net.backward(params, &pass, &out.grad_logits)?),
            None => None,
        };
        Ok((out.loss, grads, out.floor_events))
    }
}

/// Indices of the training part and the stratified validation carve-out.
pub fn carve_out(labels: &[usize], num_classes: usize, cfg: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.len() < 2 {
        return Err(Error::config(format!(
            "need at least 2 samples to train, got {}",
            labels.len()
        )));
    }
    let seed = rng::stream(cfg.seed, &[CARVE_OUT]).next_u64();
    let keep = stratified_partition(labels, num_classes, 1.0 - cfg.validation_fraction, seed)?;
    let train_idx: Vec<usize> = (0..labels.len()).filter(|&i| keep[i]).collect();
    let val_idx: Vec<usize> = (0..labels.len()).filter(|&i| !keep[i]).collect();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::config("training or validation split is empty"));
    }
    Ok((train_idx, val_idx))
}

/// Configured class weights, or `1 − frequency` over `labels`.
pub fn resolve_alpha(cfg: &TrainConfig, labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    match &cfg.alpha {
        Some(a) => Ok(a.clone()),
        None => {
            let mut counts = vec![0; num_classes];
            for &y in labels {
                if y >= num_classes {
                    return Err(Error::param(format!(
                        "label {y} out of range for {num_classes} classes"
                    )));
                }
                counts[y] += 1;
            }
            default_alpha(&counts)
        }
    }
}

/// True once `patience` epochs have passed without a new best.
pub fn patience_exhausted(epoch: usize, best_epoch: usize, patience: usize) -> bool {
    epoch - best_epoch >= patience
}

/// Mean focal loss of `params` over `indices`, in evaluation mode.
pub fn evaluate_loss(
    params: &ModelParams,
    samples: &[Sample],
    indices: &[usize],
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<f64> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let lp = Loop::new(
        samples,
        train_cfg,
        model_cfg,
        resolve_alpha(train_cfg, &labels, model_cfg.num_classes)?,
    )?;
    let images: Vec<Tensor> = if lp.uses_image {
        indices.iter().map(|&i| lp.image(i, None)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    lp.mean_loss(params, indices, &images)
}

/// Trains from `init` and returns the parameters of the epoch with the
/// lowest validation loss, plus the per-epoch history.
pub fn train(
    init: ModelParams,
    samples: &[Sample],
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<(ModelParams, History)> {
    train_cfg.validate(model_cfg.num_classes)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let (train_idx, val_idx) = carve_out(&labels, model_cfg.num_classes, train_cfg)?;
    let alpha = resolve_alpha(train_cfg, &labels, model_cfg.num_classes)?;
    let lp = Loop::new(samples, train_cfg, model_cfg, alpha)?;
    // validation inputs never change, so standardize them once
    let val_images: Vec<Tensor> = if lp.uses_image {
        val_idx.iter().map(|&i| lp.image(i, None)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let cached_train: Option<Vec<Tensor>> = (lp.uses_image && !train_cfg.augmentation.enabled)
        .then(|| train_idx.iter().map(|&i| lp.image(i, None)).collect::<Result<_>>())
        .transpose()?;
    let position: std::collections::HashMap<usize, usize> =
        train_idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();

    let mut params = init;
    let mut state = OptimizerState::new(&params);
    let mut history = History {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    for epoch in 1..=train_cfg.max_epochs {
        let lr = cosine_lr(epoch - 1, train_cfg.lr_init, train_cfg.max_epochs)?;
        state.epoch = epoch;
        let mut order = train_idx.clone();
        order.shuffle(&mut rng::stream(train_cfg.seed, &[SHUFFLE, epoch as u64]));

        let mut train_total = 0.0;
        for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let images = if !lp.uses_image {
                Vec::new()
            } else if let Some(cache) = &cached_train {
                chunk.iter().map(|i| cache[position[i]].clone()).collect()
            } else {
                chunk.iter().map(|&i| lp.image(i, Some(epoch))).collect::<Result<_>>()?
            };
            let (loss, grads, floors) = lp.batch(&params, chunk, images, Some((epoch, b)))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    layer: "loss".into(),
                });
            }
            history.floor_events += floors;
            train_total += loss * chunk.len() as f64;
            sgd_step(
                &mut params,
                &grads.expect("training batch has gradients"),
                &mut state,
                lr,
                train_cfg.momentum,
            )?;
        }

        let val_loss = lp.mean_loss(&params, &val_idx, &val_images)?;
        let record = EpochRecord {
            epoch,
            train_loss: train_total / train_idx.len() as f64,
            val_loss,
            lr,
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} lr {:.3e}",
            record.train_loss,
            record.val_loss,
            lr
        );
        if !record.val_loss.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                layer: "validation loss".into(),
            });
        }
        history.records.push(record);
        if record.val_loss < history.best_val_loss {
            history.best_val_loss = record.val_loss;
            history.best_epoch = epoch;
            best = params.clone();
        } else if patience_exhausted(epoch, history.best_epoch, train_cfg.patience) {
            history.stopped_early = true;
            break;
        }
    }
    Ok((best, history))
}
