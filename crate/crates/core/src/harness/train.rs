//! Mini-batch SGD with momentum and a step-decayed learning rate.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Bound;
use crate::network::{HeadKind, HeadVars, Model};
use crate::scene::PointCloud;
use crate::tensor::{Tape, Tensor, TensorError, Var};

use super::metrics::{evaluate, scene_class, Metrics};
use super::scenes::BACKGROUND_LABEL;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Learning rate is multiplied by `lr_decay` every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub weight_decay: f64,
    /// Weight of the objectness term of the weak-center loss.
    pub objectness_weight: f64,
    pub smooth_l1_beta: f64,
    /// Seed of the epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 0.05,
            momentum: 0.9,
            lr_decay: 0.5,
            lr_step: 10,
            grad_clip: 5.0,
            weight_decay: 0.0,
            objectness_weight: 1.0,
            smooth_l1_beta: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay must lie in (0, 1]");
        }
        if self.lr_step == 0 {
            return fail("lr_step must be >= 1");
        }
        if !(self.grad_clip >= 0.0 && self.weight_decay >= 0.0 && self.objectness_weight >= 0.0) {
            return fail("grad_clip, weight_decay and objectness_weight must be >= 0");
        }
        if !(self.smooth_l1_beta > 0.0) {
            return fail("smooth_l1_beta must be positive");
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_step) as i32)
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("grad_clip".into(), self.grad_clip.to_string());
        m.insert("lr".into(), self.lr.to_string());
        m.insert("lr_decay".into(), self.lr_decay.to_string());
        m.insert("lr_step".into(), self.lr_step.to_string());
        m.insert("momentum".into(), self.momentum.to_string());
        m.insert("objectness_weight".into(), self.objectness_weight.to_string());
        m.insert("smooth_l1_beta".into(), self.smooth_l1_beta.to_string());
        m.insert("train_seed".into(), self.seed.to_string());
        m.insert("weight_decay".into(), self.weight_decay.to_string());
        m
    }

    /// Reads known keys, keeping defaults for the rest.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn p<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`{k}`: cannot parse `{v}`")))
        }
        let mut c = Self::default();
        for (k, v) in kv {
            match k.as_str() {
                "batch_size" => c.batch_size = p(k, v)?,
                "epochs" => c.epochs = p(k, v)?,
                "grad_clip" => c.grad_clip = p(k, v)?,
                "lr" => c.lr = p(k, v)?,
                "lr_decay" => c.lr_decay = p(k, v)?,
                "lr_step" => c.lr_step = p(k, v)?,
                "momentum" => c.momentum = p(k, v)?,
                "objectness_weight" => c.objectness_weight = p(k, v)?,
                "smooth_l1_beta" => c.smooth_l1_beta = p(k, v)?,
                "train_seed" => c.seed = p(k, v)?,
                "weight_decay" => c.weight_decay = p(k, v)?,
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: BTreeMap<String, String>,
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean training loss of each epoch, measured while training.
    pub epoch_losses: Vec<f64>,
    pub train_metrics: Metrics,
    pub wall_time_secs: f64,
    pub seed: u64,
}

/// Objectness targets: 1 for object points, from point labels when present,
/// otherwise from box containment.
pub fn objectness_targets(cloud: &PointCloud, indices: &[usize]) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let inside = match &cloud.point_labels {
                Some(l) => l[i] != BACKGROUND_LABEL,
                None => cloud.objects.iter().any(|o| o.contains(&cloud.positions[i], 0.0)),
            };
            f64::from(u8::from(inside))
        })
        .collect()
}

/// Records the forward pass and scalar loss of one scene.
pub fn scene_loss(model: &Model, tape: &mut Tape, bound: &Bound, cloud: &PointCloud, cfg: &TrainConfig) -> Result<Var> {
    let trace = model.forward_tape(tape, bound, cloud)?;
    Ok(match trace.head {
        HeadVars::Classification { logits } => tape.cross_entropy(logits, &[scene_class(cloud)?])?,
        HeadVars::Segmentation { logits } => {
            let labels = cloud
                .point_labels
                .as_ref()
                .ok_or_else(|| Error::Data("segmentation scene has no point labels".into()))?;
            let targets: Vec<usize> = trace.output_indices.iter().map(|&i| labels[i]).collect();
            tape.cross_entropy(logits, &targets)?
        }
        HeadVars::WeakCenter {
            objectness, center, ..
        } => {
            let label = cloud
                .objects
                .first()
                .ok_or_else(|| Error::Data("weak-center scene has no objects".into()))?
                .weak_label;
            let reg = tape.smooth_l1(center, &label, cfg.smooth_l1_beta)?;
            let targets = objectness_targets(cloud, &trace.output_indices);
            let obj = tape.bce_with_logits(objectness, &targets)?;
            let obj = tape.scale(obj, cfg.objectness_weight)?;
            tape.add(reg, obj)?
        }
    })
}

fn loss_value(model: &Model, cloud: &PointCloud, cfg: &TrainConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, false);
    let loss = scene_loss(model, &mut tape, &bound, cloud, cfg)?;
    Ok(tape.value(loss).item())
}

/// Mean loss over a dataset without updating anything.
pub fn dataset_loss(model: &Model, dataset: &[PointCloud], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for cloud in dataset {
        total += loss_value(model, cloud, cfg)?;
    }
    Ok(total / dataset.len().max(1) as f64)
}

/// Loss and parameter gradients of one scene.
pub fn scene_gradients(model: &Model, cloud: &PointCloud, cfg: &TrainConfig) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, true);
    let loss = scene_loss(model, &mut tape, &bound, cloud, cfg)?;
    tape.backward(loss)?;
    Ok((tape.value(loss).item(), bound.grads(&tape)))
}

/// SGD-with-momentum state.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(model: &Model) -> Self {
        Self {
            velocity: model.params().tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
        }
    }

    /// `v = momentum * v + g + wd * p; p -= lr * v` after optional clipping.
    pub fn step(&mut self, model: &mut Model, grads: &mut [Tensor], lr: f64, cfg: &TrainConfig) {
        if cfg.grad_clip > 0.0 {
            let norm = grads
                .iter()
                .flat_map(|g| g.data())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                for g in grads.iter_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        let params = model.params_mut().tensors_mut();
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads.iter()) {
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = cfg.momentum * *vi + gi + cfg.weight_decay * *pi;
                *pi -= lr * *vi;
            }
        }
    }
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::Diverged { epoch, loss: f64::NAN },
        other => other,
    }
}

/// Trains `model` in place.
///
/// On a non-finite loss or activation the parameters are restored to the
/// state at the start of the failing epoch and [`Error::Diverged`] is
/// returned.
pub fn train(model: &mut Model, dataset: &[PointCloud], cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    check_compatible(model, dataset)?;
    let start = Instant::now();
    let initial_loss = dataset_loss(model, dataset, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut sgd = Sgd::new(model);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let snapshot = model.params().clone();
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let result: Result<()> = (|| {
            for batch in order.chunks(cfg.batch_size) {
                let mut acc: Option<Vec<Tensor>> = None;
                for &i in batch {
                    let (loss, grads) = scene_gradients(model, &dataset[i], cfg)?;
                    if !loss.is_finite() {
                        return Err(Error::Diverged { epoch, loss });
                    }
                    total += loss;
                    match &mut acc {
                        None => acc = Some(grads),
                        Some(a) => {
                            for (a, g) in a.iter_mut().zip(&grads) {
                                a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                            }
                        }
                    }
                }
                let mut grads = acc.expect("batches are nonempty");
                let inv = 1.0 / batch.len() as f64;
                for g in &mut grads {
                    g.data_mut().iter_mut().for_each(|v| *v *= inv);
                }
                sgd.step(model, &mut grads, lr, cfg);
                if model.params().tensors().iter().any(|t| !t.is_finite()) {
                    return Err(Error::Diverged { epoch, loss: f64::NAN });
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            *model.params_mut() = snapshot;
            return Err(diverged(e, epoch));
        }
        epoch_losses.push(total / dataset.len() as f64);
    }

    let mut config = model.config().to_kv();
    config.extend(cfg.to_kv());
    Ok(RunReport {
        config,
        initial_loss,
        epoch_losses,
        train_metrics: evaluate(model, dataset)?,
        wall_time_secs: start.elapsed().as_secs_f64(),
        seed: model.config().seed,
    })
}

/// Whether the head of `model` supports training on `dataset`.
pub fn check_compatible(model: &Model, dataset: &[PointCloud]) -> Result<()> {
    for cloud in dataset {
        match model.config().head {
            HeadKind::Classification | HeadKind::WeakCenter if cloud.objects.is_empty() => {
                return Err(Error::Data("scene without objects".into()))
            }
            HeadKind::Segmentation if cloud.point_labels.is_none() => {
                return Err(Error::Data("scene without point labels".into()))
            }
            _ => {}
        }
    }
    Ok(())
}
