//! Minibatch SGD with momentum over [`crate::scorer`] networks.
//!
//! The loop is deliberately deterministic: parameter initialisation and the
//! per-epoch shuffle derive from the run seed through fixed streams, batches
//! are visited in shuffle order, and all reductions run in index order, so
//! two runs with the same configuration produce bit-identical histories.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use crate::data::{BucketThresholds, Dataset};
use crate::error::{Error, Result};
use crate::losses::{class_centroids, LossSpec, ObjectiveParts};
use crate::metrics::{self, Report};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scorer::{
    self, prototype_head_from_centroids, ScorerGradients, ScorerParams,
};

/// Stream id for parameter initialisation under the run seed.
const INIT_STREAM: u64 = 1;
/// Stream id base for per-epoch shuffles; epoch `e` uses `SHUFFLE_STREAM + e`.
const SHUFFLE_STREAM: u64 = 0x100;

/// Smoothing factor for the running class centroids in prototype-head mode:
/// `ema <- 0.9 ema + 0.1 batch_mean` once a class has been seen.
pub const PROTOTYPE_EMA_DECAY: f64 = 0.9;

/// Learning-rate schedules, all epoch-granular.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// `base * (1 + cos(pi * epoch / epochs)) / 2`.
    Cosine,
    /// Linear ramp to `base` over the warmup epochs, then a multiplicative
    /// `decay_factor` at each listed epoch.
    WarmupStep {
        warmup_epochs: usize,
        decay_epochs: Vec<usize>,
        decay_factor: f64,
    },
}

/// Where the classification head comes from during training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadMode {
    /// Head weights and biases receive gradient updates like any layer.
    Learned,
    /// Head recomputed from EMA class centroids before every forward pass;
    /// gradients flow only into the hidden layers.
    Prototype { v_sq: f64 },
}

/// Everything the training loop needs besides the data and architecture.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Classical (non-Nesterov) momentum coefficient.
    pub momentum: f64,
    /// Folded into the gradient as `g + weight_decay * theta`.
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub loss: LossSpec,
    pub head_mode: HeadMode,
}

impl TrainConfig {
    /// Desk-scale defaults around the given loss; every field is meant to be
    /// overridden as needed.
    pub fn with_loss(loss: LossSpec) -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::Constant,
            seed: 0,
            loss,
            head_mode: HeadMode::Learned,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid("weight decay must be finite and non-negative".to_string()));
        }
        if let Schedule::WarmupStep { decay_factor, .. } = self.schedule {
            if !(decay_factor > 0.0 && decay_factor <= 1.0) {
                return Err(Error::invalid(format!(
                    "decay factor {decay_factor} outside (0, 1]"
                )));
            }
        }
        if let HeadMode::Prototype { v_sq } = self.head_mode {
            if !(v_sq > 0.0) || !v_sq.is_finite() {
                return Err(Error::invalid(format!("prototype v_sq {v_sq} must be positive")));
            }
        }
        self.loss.validate()
    }
}

/// Learning rate for a given epoch. All schedules are epoch-granular, so the
/// within-epoch `step` does not move the rate; it is accepted so call sites
/// read naturally inside the batch loop.
pub fn lr_at(config: &TrainConfig, epoch: usize, _step: usize) -> f64 {
    let base = config.base_lr;
    match &config.schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            let progress = epoch as f64 / config.epochs.max(1) as f64;
            base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
        Schedule::WarmupStep { warmup_epochs, decay_epochs, decay_factor } => {
            if epoch < *warmup_epochs {
                base * (epoch + 1) as f64 / *warmup_epochs as f64
            } else {
                let decays = decay_epochs.iter().filter(|&&e| e <= epoch).count();
                base * decay_factor.powi(decays as i32)
            }
        }
    }
}

/// One SGD-with-momentum update over the flattened parameter vector:
/// `v <- momentum * v + (g + weight_decay * theta)`, `theta <- theta - lr * v`.
pub fn sgd_momentum_step(
    params: &mut ScorerParams,
    grads: &ScorerGradients,
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let g = grads.flatten();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".to_string()));
    }
    let mut theta = params.flatten();
    if g.len() != theta.len() || velocity.len() != theta.len() {
        return Err(Error::dim(format!(
            "{} params vs {} gradients vs {} velocity entries",
            theta.len(),
            g.len(),
            velocity.len()
        )));
    }
    for i in 0..theta.len() {
        velocity[i] = momentum * velocity[i] + (g[i] + weight_decay * theta[i]);
        theta[i] -= lr * velocity[i];
    }
    params.assign_flat(&theta)
}

/// The visit order of training samples in the given epoch. Exposed so that
/// reference loops in tests can replay the exact trajectory.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(derive_seed(seed, SHUFFLE_STREAM + epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// The parameters a run starts from, derived from the run seed.
pub fn initial_params(config: &TrainConfig, arch: &[usize]) -> Result<ScorerParams> {
    scorer::init_params(arch, derive_seed(config.seed, INIT_STREAM))
}

/// Per-epoch training and evaluation snapshot.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean objective over the epoch's batches.
    pub train_objective: f64,
    pub train_parts: ObjectiveParts,
    pub eval_accuracy: f64,
    pub eval_balanced_accuracy: f64,
    /// Mean over classes of the embedding trace variance on the eval split.
    pub eval_mean_trace_variance: f64,
}

/// Final parameters, the epoch history, and a full report on the eval split.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ScorerParams,
    pub history: Vec<EpochRecord>,
    pub report: Report,
}

/// Running class centroids for prototype-head mode.
struct EmaCentroids {
    centroids: Array2<f64>,
    seen: Vec<bool>,
}

impl EmaCentroids {
    fn new(num_classes: usize, dim: usize) -> Self {
        EmaCentroids { centroids: Array2::zeros((num_classes, dim)), seen: vec![false; num_classes] }
    }

    fn update(&mut self, embeddings: &Array2<f64>, labels: &[usize]) -> Result<()> {
        let (batch, counts) = class_centroids(embeddings, labels, self.seen.len())?;
        for y in 0..self.seen.len() {
            if counts[y] == 0 {
                continue;
            }
            if self.seen[y] {
                let mut row = self.centroids.row_mut(y);
                for j in 0..row.len() {
                    row[j] = PROTOTYPE_EMA_DECAY * row[j]
                        + (1.0 - PROTOTYPE_EMA_DECAY) * batch[[y, j]];
                }
            } else {
                self.centroids.row_mut(y).assign(&batch.row(y));
                self.seen[y] = true;
            }
        }
        Ok(())
    }

    fn install_head(&self, params: &mut ScorerParams, v_sq: f64) -> Result<()> {
        let (w, b) = prototype_head_from_centroids(&self.centroids, v_sq)?;
        params.head_weight = w;
        params.head_bias = b;
        Ok(())
    }
}

fn as_divergence(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(detail) => Error::Diverged { epoch, detail },
        other => other,
    }
}

/// Trains on `train` and snapshots metrics on `eval` after every epoch.
///
/// Deterministic given the configuration: identical runs produce identical
/// histories bit for bit. A non-finite loss or gradient aborts with
/// [`Error::Diverged`] naming the epoch.
pub fn train_with_eval(
    train: &Dataset,
    eval: &Dataset,
    arch: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if train.num_classes != config.loss.num_classes() {
        return Err(Error::invalid(format!(
            "dataset has {} classes, loss spec {}",
            train.num_classes,
            config.loss.num_classes()
        )));
    }
    if eval.num_classes != train.num_classes {
        return Err(Error::invalid("train and eval class counts differ".to_string()));
    }
    if arch.first() != Some(&train.dim()) {
        return Err(Error::dim(format!(
            "architecture expects input {:?}, dataset provides {}",
            arch.first(),
            train.dim()
        )));
    }
    if arch.last() != Some(&train.num_classes) {
        return Err(Error::dim(format!(
            "architecture ends at {:?} classes, dataset has {}",
            arch.last(),
            train.num_classes
        )));
    }

    let mut params = initial_params(config, arch)?;
    let mut velocity = vec![0.0; params.num_params()];
    let mut ema = EmaCentroids::new(train.num_classes, params.embedding_dim());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, epoch, train.len());
        let mut value_sum = 0.0;
        let mut parts_sum = ObjectiveParts::default();
        let mut samples = 0usize;
        for (step, batch_indices) in order.chunks(config.batch_size).enumerate() {
            let lr = lr_at(config, epoch, step);
            let batch = train.subset(batch_indices);
            if let HeadMode::Prototype { v_sq } = config.head_mode {
                ema.install_head(&mut params, v_sq)?;
            }
            let mut bp = scorer::backward(&params, &batch.features, &batch.labels, &config.loss)
                .map_err(as_divergence(epoch))?;
            if let HeadMode::Prototype { .. } = config.head_mode {
                bp.grads.head_weight.fill(0.0);
                bp.grads.head_bias.fill(0.0);
            }
            sgd_momentum_step(
                &mut params,
                &bp.grads,
                &mut velocity,
                lr,
                config.momentum,
                config.weight_decay,
            )
            .map_err(as_divergence(epoch))?;
            if let HeadMode::Prototype { .. } = config.head_mode {
                ema.update(&bp.forward.embeddings, &batch.labels)?;
            }
            let weight = batch.len() as f64;
            value_sum += bp.value * weight;
            parts_sum.margin_ce += bp.parts.margin_ce * weight;
            parts_sum.pull += bp.parts.pull * weight;
            parts_sum.push += bp.parts.push * weight;
            parts_sum.center += bp.parts.center * weight;
            samples += batch.len();
        }
        if let HeadMode::Prototype { v_sq } = config.head_mode {
            ema.install_head(&mut params, v_sq)?;
        }
        let nf = samples as f64;
        let fwd = scorer::forward(&params, &eval.features)?;
        let preds = metrics::predictions(&fwd.logits);
        let eval_accuracy = metrics::accuracy(&preds, &eval.labels)?;
        let eval_balanced_accuracy =
            1.0 - metrics::balanced_error(&preds, &eval.labels, eval.num_classes)?;
        let (trace, _) =
            metrics::class_variance(&fwd.embeddings, &eval.labels, eval.num_classes)?;
        let eval_mean_trace_variance = trace.iter().sum::<f64>() / trace.len() as f64;
        history.push(EpochRecord {
            epoch,
            lr: lr_at(config, epoch, 0),
            train_objective: value_sum / nf,
            train_parts: ObjectiveParts {
                margin_ce: parts_sum.margin_ce / nf,
                pull: parts_sum.pull / nf,
                push: parts_sum.push / nf,
                center: parts_sum.center / nf,
            },
            eval_accuracy,
            eval_balanced_accuracy,
            eval_mean_trace_variance,
        });
    }

    if let HeadMode::Prototype { v_sq } = config.head_mode {
        if config.epochs > 0 {
            ema.install_head(&mut params, v_sq)?;
        }
    }
    let fwd = scorer::forward(&params, &eval.features)?;
    let report = metrics::build_report(
        &fwd.logits,
        &fwd.embeddings,
        &eval.labels,
        eval.num_classes,
        &train.class_counts(),
        BucketThresholds::default(),
    )?;
    Ok(TrainOutcome { params, history, report })
}

/// [`train_with_eval`] with the training split doubling as the eval split.
pub fn train(dataset: &Dataset, arch: &[usize], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_eval(dataset, dataset, arch, config)
}

/// Manifest entry for one tensor in a checkpoint.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the flat buffer, counted in 8-byte values.
    pub offset: usize,
    pub len: usize,
}

/// Writes `checkpoint.bin` (all tensors back to back, little-endian f64)
/// and `checkpoint.json` (the manifest) into `dir`.
pub fn save_checkpoint(params: &ScorerParams, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    let mut buffer: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, shape, values) in params.named_tensors() {
        manifest.push(TensorMeta { name, shape, offset, len: values.len() });
        offset += values.len();
        for v in values {
            buffer.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut bin = std::fs::File::create(dir.join("checkpoint.bin"))?;
    bin.write_all(&buffer)?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Malformed(format!("manifest encoding: {e}")))?;
    std::fs::write(dir.join("checkpoint.json"), json)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<ScorerParams> {
    let manifest_text = std::fs::read_to_string(dir.join("checkpoint.json"))?;
    let manifest: Vec<TensorMeta> = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::Malformed(format!("manifest decoding: {e}")))?;
    let mut bin = Vec::new();
    std::fs::File::open(dir.join("checkpoint.bin"))?.read_to_end(&mut bin)?;
    if bin.len() % 8 != 0 {
        return Err(Error::Malformed("checkpoint buffer is not 8-byte aligned".to_string()));
    }
    let values: Vec<f64> = bin
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let tensor = |meta: &TensorMeta| -> Result<Vec<f64>> {
        let end = meta.offset.checked_add(meta.len);
        match end {
            Some(end) if end <= values.len() => Ok(values[meta.offset..end].to_vec()),
            _ => Err(Error::Malformed(format!("tensor {} overruns the buffer", meta.name))),
        }
    };

    let mut hidden = Vec::new();
    let mut head_weight: Option<Array2<f64>> = None;
    let mut head_bias: Option<Array1<f64>> = None;
    let mut pending_weight: Option<Array2<f64>> = None;
    for meta in &manifest {
        let data = tensor(meta)?;
        let expected: usize = meta.shape.iter().product();
        if expected != meta.len {
            return Err(Error::Malformed(format!(
                "tensor {} declares shape {:?} but {} values",
                meta.name, meta.shape, meta.len
            )));
        }
        if meta.name == "head.weight" {
            let [r, c] = meta.shape[..] else {
                return Err(Error::Malformed("head.weight must be rank 2".to_string()));
            };
            head_weight = Some(
                Array2::from_shape_vec((r, c), data)
                    .map_err(|e| Error::Malformed(e.to_string()))?,
            );
        } else if meta.name == "head.bias" {
            head_bias = Some(Array1::from_vec(data));
        } else if meta.name.ends_with(".weight") {
            let [r, c] = meta.shape[..] else {
                return Err(Error::Malformed(format!("{} must be rank 2", meta.name)));
            };
            pending_weight = Some(
                Array2::from_shape_vec((r, c), data)
                    .map_err(|e| Error::Malformed(e.to_string()))?,
            );
        } else if meta.name.ends_with(".bias") {
            let weight = pending_weight.take().ok_or_else(|| {
                Error::Malformed(format!("{} appears before its weight", meta.name))
            })?;
            hidden.push(crate::scorer::DenseLayer { weight, bias: Array1::from_vec(data) });
        } else {
            return Err(Error::Malformed(format!("unrecognised tensor {}", meta.name)));
        }
    }
    match (head_weight, head_bias) {
        (Some(head_weight), Some(head_bias)) => {
            Ok(ScorerParams { hidden, head_weight, head_bias })
        }
        _ => Err(Error::Malformed("checkpoint is missing the head tensors".to_string())),
    }
}
