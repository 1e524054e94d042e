//! Mini-batch training with Adam, plateau learning-rate decay, early stopping
//! and best-checkpoint selection.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind, CheckpointMeta, FORMAT_VERSION,
};

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{
    bottomup_loss, decode_bottomup, decode_topdown, default_bottomup_spec, default_topdown_spec,
    fit_standardizer, topdown_loss, BottomUpModel, LossConfig, Model, ModelKind, Standardizer,
    TopDownModel,
};
use crate::oracle::{Association, LabeledInstance};
use crate::rng::{self, TAG_DROPOUT, TAG_SHUFFLE, TAG_SPLIT};
use crate::snn::{self, adam_step, init_weights, AdamState, Gradients, Mode, NetworkSpec, Weights};

/// Minimum decrease in validation loss that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 10,
            min_lr: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub plateau: PlateauConfig,
    pub early_stop_patience: usize,
    pub split_ratio: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Overrides the default architecture for the chosen model kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_max: 200,
            batch_size: 32,
            lr0: 1e-3,
            plateau: PlateauConfig::default(),
            early_stop_patience: 25,
            split_ratio: 0.8,
            seed: 0,
            loss: LossConfig::default(),
            network: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config("split_ratio must be in (0,1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) {
            return Err(Error::Config("plateau.factor must be in (0,1)".into()));
        }
        if !(p.min_lr.is_finite() && p.min_lr >= 0.0) {
            return Err(Error::Config("plateau.min_lr must be finite and >= 0".into()));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::Config("lr0 must be finite and > 0".into()));
        }
        if !(self.loss.penalty_weight.is_finite() && self.loss.penalty_weight >= 0.0) {
            return Err(Error::Config("loss.penalty_weight must be finite and >= 0".into()));
        }
        if let Some(spec) = &self.network {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,val_accuracy,lr")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.lr
            )?;
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `floor(ratio·len)` go to training.
pub fn split_dataset(
    data: &[LabeledInstance],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<LabeledInstance>, Vec<LabeledInstance>)> {
    if data.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 instances to split, got {}",
            data.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config("split ratio must be in (0,1)".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[TAG_SPLIT]));
    let cut = (ratio * data.len() as f64).floor() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

/// Reduce-on-plateau state machine over validation losses.
#[derive(Debug, Clone)]
pub struct Plateau {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    stale: usize,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig, lr: f64) -> Self {
        Self {
            cfg,
            lr,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's validation loss and returns the learning rate for
    /// the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - MIN_IMPROVEMENT {
            self.best = val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Replays a validation-loss history through [`Plateau`] starting from `lr`.
pub fn reduce_lr_on_plateau(val_losses: &[f64], cfg: &PlateauConfig, lr: f64) -> f64 {
    let mut p = Plateau::new(cfg.clone(), lr);
    for &v in val_losses {
        p.observe(v);
    }
    p.lr()
}

#[derive(Debug, Clone)]
enum Target {
    Joint(Association),
    Single(usize),
}

#[derive(Debug, Clone)]
struct Sample {
    input: Vec<f64>,
    target: Target,
}

struct Task {
    kind: ModelKind,
    spec: NetworkSpec,
    n_tx: usize,
    penalty_weight: f64,
    limit: usize,
}

impl Task {
    fn loss(&self, logits: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
        match target {
            Target::Joint(a) => topdown_loss(logits, self.n_tx, a, self.penalty_weight, self.limit),
            Target::Single(t) => bottomup_loss(logits, *t),
        }
    }

    /// (correct receiver decisions, receiver decisions)
    fn hits(&self, logits: &[f64], target: &Target) -> (usize, usize) {
        match target {
            Target::Joint(a) => {
                let pred = decode_topdown(logits, self.n_tx);
                let ok = pred.as_slice().iter().zip(a.as_slice()).filter(|(p, t)| p == t).count();
                (ok, a.len())
            }
            Target::Single(t) => ((decode_bottomup(logits) == *t) as usize, 1),
        }
    }

    fn samples(&self, data: &[LabeledInstance], s: &Standardizer) -> Vec<Sample> {
        match self.kind {
            ModelKind::TopDown => data
                .iter()
                .map(|inst| Sample {
                    input: s.apply(inst.rates.as_slice()),
                    target: Target::Joint(inst.optimal.clone()),
                })
                .collect(),
            ModelKind::BottomUp => data
                .iter()
                .flat_map(|inst| {
                    inst.rates.rows().zip(inst.optimal.as_slice()).map(|(row, &t)| Sample {
                        input: s.apply(row),
                        target: Target::Single(t),
                    })
                })
                .collect(),
        }
    }
}

/// Mean loss and mean gradient over `batch` in train mode. Sample `k` of the
/// batch draws its dropout masks from the stream keyed by `(epoch, ids[k])`.
/// Gradients are summed in batch order.
fn batch_step(
    task: &Task,
    w: &Weights,
    samples: &[Sample],
    ids: &[usize],
    seed: u64,
    epoch: usize,
) -> Result<(f64, Gradients)> {
    let per_sample = ids
        .par_iter()
        .map(|&id| {
            let sample = &samples[id];
            let mut rng = rng::stream(seed, &[TAG_DROPOUT, epoch as u64, id as u64]);
            let (logits, trace) = snn::forward(&task.spec, w, &sample.input, Mode::Train, &mut rng)?;
            let (loss, dlogits) = task.loss(&logits, &sample.target)?;
            let grads = snn::backward(&task.spec, w, &trace, &dlogits)?;
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = w.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        total.add_scaled(g, 1.0);
    }
    let scale = 1.0 / ids.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

/// Mean loss and per-receiver accuracy in eval mode.
fn evaluate_split(task: &Task, w: &Weights, samples: &[Sample]) -> Result<(f64, f64)> {
    let per_sample = samples
        .par_iter()
        .map(|s| {
            let mut unused = rng::stream(0, &[]);
            let (logits, _) = snn::forward(&task.spec, w, &s.input, Mode::Eval, &mut unused)?;
            let (loss, _) = task.loss(&logits, &s.target)?;
            Ok((loss, task.hits(&logits, &s.target)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let (mut ok, mut total) = (0, 0);
    for (l, (o, t)) in per_sample {
        loss += l;
        ok += o;
        total += t;
    }
    Ok((loss / samples.len() as f64, ok as f64 / total as f64))
}

fn shared_limit(data: &[LabeledInstance]) -> Result<usize> {
    let limit = data.first().map(|d| d.limit).unwrap_or(0);
    if data.iter().any(|d| d.limit != limit) {
        return Err(Error::Format("labeled instances carry different limits".into()));
    }
    Ok(limit)
}

fn check_shapes(data: &[LabeledInstance]) -> Result<(usize, usize)> {
    let first = data
        .first()
        .ok_or_else(|| Error::Config("empty training data".into()))?;
    let dims = (first.n_rx(), first.n_tx());
    for d in data {
        if (d.n_rx(), d.n_tx()) != dims {
            return Err(Error::Shape(format!(
                "step {}: {}x{} rates, expected {}x{}",
                d.step,
                d.n_rx(),
                d.n_tx(),
                dims.0,
                dims.1
            )));
        }
        d.validate()?;
    }
    Ok(dims)
}

/// Splits `data` per `cfg.split_ratio` and trains on the result.
pub fn train(kind: ModelKind, data: &[LabeledInstance], cfg: &TrainConfig) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    let (train_set, val_set) = split_dataset(data, cfg.split_ratio, cfg.seed)?;
    train_on_split(kind, &train_set, &val_set, cfg)
}

/// Trains on an explicit train/validation partition. The returned checkpoint
/// holds the weights from the epoch with the lowest validation loss.
pub fn train_on_split(
    kind: ModelKind,
    train_set: &[LabeledInstance],
    val_set: &[LabeledInstance],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    if cfg.epochs_max == 0 {
        return Err(Error::NoTraining);
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    let all: Vec<LabeledInstance> = train_set.iter().chain(val_set).cloned().collect();
    let (n_rx, n_tx) = check_shapes(&all)?;
    let data_limit = shared_limit(&all)?;
    let limit = cfg.loss.limit.unwrap_or(data_limit);

    let spec = match (&cfg.network, kind) {
        (Some(s), _) => s.clone(),
        (None, ModelKind::TopDown) => default_topdown_spec(n_rx, n_tx),
        (None, ModelKind::BottomUp) => default_bottomup_spec(n_tx),
    };
    spec.validate()?;
    let io = match kind {
        ModelKind::TopDown => n_rx * n_tx,
        ModelKind::BottomUp => n_tx,
    };
    if spec.input_size() != io || spec.output_size() != io {
        return Err(Error::Shape(format!(
            "{kind} network must map {io} inputs to {io} outputs"
        )));
    }

    let standardizer = fit_standardizer(train_set.iter().map(|d| &d.rates).collect::<Vec<_>>())?;
    let task = Task {
        kind,
        spec: spec.clone(),
        n_tx,
        penalty_weight: cfg.loss.penalty_weight,
        limit,
    };
    let train_samples = task.samples(train_set, &standardizer);
    let val_samples = task.samples(val_set, &standardizer);

    let mut weights = init_weights(&spec, cfg.seed);
    let mut adam = AdamState::new(&weights);
    let mut plateau = Plateau::new(cfg.plateau.clone(), cfg.lr0);
    let mut history = TrainHistory::default();
    let mut best: Option<(usize, f64, Weights)> = None;
    let mut stale = 0usize;
    let mut early_best = f64::INFINITY;

    for epoch in 0..cfg.epochs_max {
        let lr = plateau.lr();
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));

        let mut train_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_step(&task, &weights, &train_samples, batch, cfg.seed, epoch)?;
            adam_step(&mut weights, &grads, &mut adam, lr)?;
            train_loss += loss * batch.len() as f64;
        }
        train_loss /= train_samples.len() as f64;

        let (val_loss, val_accuracy) = evaluate_split(&task, &weights, &val_samples)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            lr,
        });
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, weights.clone()));
        }
        plateau.observe(val_loss);

        if val_loss < early_best - MIN_IMPROVEMENT {
            early_best = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_loss, best_weights) = best.expect("at least one epoch ran");
    let model = match kind {
        ModelKind::TopDown => Model::TopDown(TopDownModel::new(
            spec,
            best_weights,
            standardizer,
            n_rx,
            n_tx,
            limit,
        )?),
        ModelKind::BottomUp => Model::BottomUp(BottomUpModel::new(spec, best_weights, standardizer, n_tx)?),
    };
    let meta = CheckpointMeta {
        best_epoch,
        best_val_loss,
        config_digest: cfg.digest(),
    };
    Ok((Checkpoint::from_model(&model, meta), history))
}
