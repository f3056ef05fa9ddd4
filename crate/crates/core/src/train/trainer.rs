//! Epoch loop with best-by-dev-loss checkpointing.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::loss::{wce_loss, ClassWeights};
use super::mask::ChannelMask;
use crate::data::{fix_length, Label, Utterance};
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, CheckpointMeta};
use crate::model::RawGatModel;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: ClassWeights,
    pub adam: AdamConfig,
    /// Seeds shuffling and channel masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 10,
            epochs: 50,
            weights: ClassWeights::default(),
            adam: AdamConfig::default(),
            seed: 1234,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a non-negative number, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.weights.bona > 0.0 && self.weights.spoof > 0.0) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        Ok(())
    }
}

/// Front-end features computed once per utterance. The sinc stage is
/// frozen, so these stay valid for the whole run.
#[derive(Clone, Debug)]
pub struct PreparedSet {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    features: Vec<Tensor>,
}

impl PreparedSet {
    pub fn new(model: &RawGatModel, utterances: &[Utterance]) -> Result<Self> {
        let len = model.config().segment_length;
        let mut set = Self {
            ids: Vec::new(),
            labels: Vec::new(),
            features: Vec::new(),
        };
        for u in utterances {
            let label = u
                .label
                .ok_or_else(|| Error::Contract(format!("utterance `{}` has no label", u.id)))?;
            let wave = fix_length(&u.samples, len)?;
            set.features.push(model.prepare(&[&wave])?);
            set.ids.push(u.id.clone());
            set.labels.push(label);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacked `[B, 1, F, W]` features and the labels for `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<Label>)> {
        let first = self.features[indices[0]].shape();
        let mut shape = first.to_vec();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(shape.iter().product());
        for &i in indices {
            data.extend_from_slice(self.features[i].data());
        }
        Ok((Tensor::new(&shape, data)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub seconds: f64,
}

impl EpochStats {
    /// Tab-separated log line; losses print with round-trip precision.
    /// Wall time is left out so that a seeded run reproduces its log exactly.
    pub fn log_line(&self) -> String {
        format!("{}\t{}\t{}", self.epoch, self.train_loss, self.dev_loss)
    }
}

pub const LOG_HEADER: &str = "epoch\ttrain_loss\tdev_loss";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
}

/// Where a run writes its checkpoint and epoch log.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

/// One optimiser step on a batch; returns the batch loss before the update.
pub fn train_step(
    model: &mut RawGatModel,
    adam: &mut AdamState,
    batch: Tensor,
    labels: &[Label],
    mask: Option<&ChannelMask>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let tape = Tape::new();
    let logits = model.forward(&tape, batch, mask, true)?;
    let loss = wce_loss(&logits, labels, cfg.weights)?;
    let value = loss.data()[0];
    let grads = tape.backward(&loss)?;
    let store = model.store_mut();
    store.zero_grads();
    store.absorb(&tape, &grads)?;
    adam.step(store, cfg.lr)?;
    Ok(value)
}

/// Mean per-utterance loss in eval mode.
pub fn evaluate_loss(model: &mut RawGatModel, set: &PreparedSet, cfg: &TrainConfig) -> Result<f64> {
    let order: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let (x, labels) = set.batch(chunk)?;
        let tape = Tape::no_grad();
        let logits = model.forward(&tape, x, None, false)?;
        total += wce_loss(&logits, &labels, cfg.weights)?.data()[0] * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Full training run. The model ends holding the final-epoch weights; the
/// best-by-dev-loss weights are in the checkpoint file. `on_epoch` sees each
/// epoch's stats as soon as they are logged.
pub fn train(
    model: &mut RawGatModel,
    train_set: &PreparedSet,
    dev_set: &PreparedSet,
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Contract("training and dev sets must be non-empty".into()));
    }
    for class in [Label::Bona, Label::Spoof] {
        if !train_set.labels.contains(&class) {
            return Err(Error::Contract(format!("training set has no {class} utterances")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.store(), cfg.adam);
    let rows = model.config().frontend_rows();
    let mask_limit = model.config().mask_limit;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_loss: f64::INFINITY,
    };
    let mut log = format!("{LOG_HEADER}\n");

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mask = ChannelMask::sample(&mut rng, rows, mask_limit);
            let (x, labels) = train_set.batch(chunk)?;
            let loss = train_step(model, &mut adam, x, &labels, Some(&mask), cfg).map_err(|e| diverged(epoch, e))?;
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let dev_loss = evaluate_loss(model, dev_set, cfg).map_err(|e| diverged(epoch, e))?;
        if !(train_loss.is_finite() && dev_loss.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("train loss {train_loss}, dev loss {dev_loss}"),
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            dev_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", stats.log_line()).expect("string write");
        if dev_loss < report.best_dev_loss {
            report.best_dev_loss = dev_loss;
            report.best_epoch = epoch;
            if let Some(path) = &outputs.checkpoint {
                let meta = CheckpointMeta {
                    epoch: Some(epoch),
                    dev_loss: Some(dev_loss),
                };
                checkpoint::save(model, &meta, path)?;
            }
        }
        if let Some(path) = &outputs.log {
            checkpoint::write_atomic(path, log.as_bytes())?;
        }
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Diverged { epoch, detail },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;

    fn tiny_model() -> RawGatModel {
        RawGatModel::new(ModelConfig {
            segment_length: 900,
            sinc_filters: 12,
            sinc_kernel: 33,
            encoder_channels: vec![3, 4],
            encoder_blocks: vec![1, 1],
            gat_dim: 3,
            st_gat_dim: 2,
            fused_nodes: 3,
            mask_limit: 2,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn utterances(n: usize, seed: u64) -> Vec<Utterance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Utterance {
                id: format!("u{i}"),
                samples: (0..700).map(|_| rng.gen_range(-0.3..0.3)).collect(),
                label: Some(if i % 2 == 0 { Label::Bona } else { Label::Spoof }),
            })
            .collect()
    }

    #[test]
    fn zero_lr_keeps_weights() {
        let mut m = tiny_model();
        let before: Vec<Vec<f64>> = trainable(&m);
        let set = PreparedSet::new(&m, &utterances(4, 1)).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        train(&mut m, &set, &set, &cfg, &TrainOutputs::default(), &mut |_| {}).unwrap();
        assert_eq!(before, trainable(&m));
    }

    fn trainable(m: &RawGatModel) -> Vec<Vec<f64>> {
        m.store()
            .entries()
            .iter()
            .filter(|e| e.kind == crate::params::ParamKind::Trainable)
            .map(|e| e.tensor.data().to_vec())
            .collect()
    }

    #[test]
    fn single_class_rejected() {
        let mut m = tiny_model();
        let mut u = utterances(2, 1);
        u[1].label = Some(Label::Bona);
        let set = PreparedSet::new(&m, &u).unwrap();
        assert!(train(&mut m, &set, &set, &TrainConfig::default(), &TrainOutputs::default(), &mut |_| {}).is_err());
    }

    #[test]
    fn batch_stacks_items() {
        let m = tiny_model();
        let set = PreparedSet::new(&m, &utterances(3, 2)).unwrap();
        let (x, labels) = set.batch(&[2, 0]).unwrap();
        assert_eq!(x.shape()[0], 2);
        assert_eq!(labels, vec![Label::Bona, Label::Bona]);
        let n = x.numel() / 2;
        assert_eq!(&x.data()[..n], set.batch(&[2]).unwrap().0.data());
    }
}
