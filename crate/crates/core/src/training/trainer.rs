//! The epoch loop.
//!
//! A batch is cut into fixed-size shards. Each shard builds its own graph and
//! its own news-encoding cache, so a news item that appears several times in
//! a shard shares one dropout mask. Shards may run on different threads;
//! their gradients are summed in shard order before the single Adam update,
//! so results do not depend on the thread count. Every random draw comes
//! from a stream seeded by `(seed, epoch, batch, shard)`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::Dataset;
use crate::encoder::{encode_news_node, Dropout};
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::graph::{Graph, NodeId};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::training::adam::{adam_step, AdamConfig, AdamState};
use crate::training::loss::nce_loss_node;
use crate::training::negatives::sample_negatives;
use crate::training::noise::{inject_masked_news, Slot};
use crate::user::{score_candidates, user_repr, HistorySequence};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub dropout_rate: f64,
    pub mask_noise_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Samples per shard; see the module docs.
    pub shard_size: usize,
    pub clip_norm: Option<f64>,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            negatives: 3,
            dropout_rate: 0.5,
            mask_noise_rate: 0.1,
            epochs: 5,
            seed: 7,
            shard_size: 64,
            clip_norm: None,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(0.0..=0.5).contains(&self.mask_noise_rate) {
            return bad("mask_noise_rate must be in [0, 0.5]");
        }
        if self.batch_size == 0 || self.negatives == 0 || self.shard_size == 0 {
            return bad("batch_size, negatives and shard_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            clip_norm: self.clip_norm,
            ..AdamConfig::new(self.learning_rate)
        }
    }
}

/// One clicked candidate with its sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    /// Oldest first, already truncated to the model's history length.
    pub history: Vec<usize>,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub samples: usize,
    pub batches: usize,
    /// Clicked candidates dropped because their impression had no negative.
    pub skipped_no_negatives: usize,
    pub skipped_empty_history: usize,
}

/// splitmix64 over the mixed-in words.
pub(crate) fn derive_seed(words: &[u64]) -> u64 {
    let mut x = 0x9E37_79B9_7F4A_7C15u64;
    for &w in words {
        x ^= w;
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

const STREAM_SAMPLES: u64 = 1;
const STREAM_SHARD: u64 = 2;

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.store);
        Ok(Self {
            model,
            adam,
            config,
            epoch: 0,
        })
    }

    /// Samples for one epoch, in training order.
    pub fn build_samples(&self, data: &Dataset, epoch: usize) -> (Vec<TrainingSample>, usize, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.config.seed, STREAM_SAMPLES, epoch as u64]));
        let max_len = self.model.config.max_history;
        let mut samples = Vec::new();
        let (mut no_neg, mut no_hist) = (0, 0);
        for imp in &data.impressions {
            let positives: Vec<usize> = imp.positives().collect();
            if imp.history.is_empty() {
                no_hist += positives.len();
                continue;
            }
            let start = imp.history.len().saturating_sub(max_len);
            for pos in positives {
                match sample_negatives(imp, self.config.negatives, &mut rng) {
                    Ok(negatives) => samples.push(TrainingSample {
                        history: imp.history[start..].to_vec(),
                        positive: pos,
                        negatives,
                    }),
                    Err(_) => no_neg += 1,
                }
            }
        }
        samples.shuffle(&mut rng);
        (samples, no_neg, no_hist)
    }

    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        let epoch = self.epoch + 1;
        let (samples, no_neg, no_hist) = self.build_samples(data, epoch);
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        let mut batches = 0;
        for (b, batch) in samples.chunks(self.config.batch_size).enumerate() {
            total += self.train_batch(data, batch, &[epoch as u64, b as u64])?;
            batches += 1;
        }
        self.epoch = epoch;
        Ok(EpochStats {
            epoch,
            mean_loss: total / samples.len() as f64,
            samples: samples.len(),
            batches,
            skipped_no_negatives: no_neg,
            skipped_empty_history: no_hist,
        })
    }

    /// Forward/backward over one batch and one Adam update; returns the
    /// summed (not averaged) sample loss.
    pub fn train_batch(&mut self, data: &Dataset, batch: &[TrainingSample], stream: &[u64]) -> Result<f64> {
        let shards: Vec<&[TrainingSample]> = batch.chunks(self.config.shard_size).collect();
        let inv = 1.0 / batch.len() as f64;
        let model = &self.model;
        let cfg = &self.config;
        let results = exec::map_indexed(cfg.parallelism, &shards, |i, shard| {
            let mut words = vec![cfg.seed, STREAM_SHARD];
            words.extend_from_slice(stream);
            words.push(i as u64);
            shard_gradients(model, data, shard, cfg, derive_seed(&words), inv)
        });
        let mut grads = self.model.store.zeros_like();
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.add_assign(gi);
            }
        }
        adam_step(&mut self.model.store, &grads, &mut self.adam, &self.config.adam())?;
        Ok(loss)
    }
}

/// Builds the training loss of one sample inside `g`.
pub fn sample_loss(
    g: &mut Graph<'_>,
    model: &Model,
    data: &Dataset,
    sample: &TrainingSample,
    cache: &mut HashMap<usize, NodeId>,
    dropout_rate: f64,
    noise_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let history = HistorySequence::new(sample.history.iter().map(|&i| Slot::News(i)).collect());
    let history = inject_masked_news(&history, Slot::Mask, noise_rate, model.config.max_history, rng)?;
    let mut encode = |g: &mut Graph<'_>, idx: usize, rng: &mut ChaCha8Rng| -> Result<NodeId> {
        if let Some(&n) = cache.get(&idx) {
            return Ok(n);
        }
        let f = g.constant(data.features[idx].to_matrix());
        let mut dr = Dropout { rate: dropout_rate, rng };
        let n = encode_news_node(g, f, &model.encoder, model.config.fields, Some(&mut dr))?;
        cache.insert(idx, n);
        Ok(n)
    };
    let mut rows = Vec::with_capacity(history.len());
    for slot in &history.items {
        rows.push(match *slot {
            Slot::News(i) => encode(g, i, rng)?,
            Slot::Mask => g.param(model.user.mask_token),
        });
    }
    let h = g.concat_rows(&rows)?;
    let u = user_repr(g, &model.user, h, &history.valid)?;
    let mut cands = vec![encode(g, sample.positive, rng)?];
    for &n in &sample.negatives {
        cands.push(encode(g, n, rng)?);
    }
    let c = g.concat_rows(&cands)?;
    let scores = score_candidates(g, u, c)?;
    nce_loss_node(g, scores)
}

fn shard_gradients(
    model: &Model,
    data: &Dataset,
    shard: &[TrainingSample],
    cfg: &TrainConfig,
    seed: u64,
    scale: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(&model.store);
    let mut cache = HashMap::new();
    let mut losses = Vec::with_capacity(shard.len());
    for s in shard {
        losses.push(sample_loss(
            &mut g,
            model,
            data,
            s,
            &mut cache,
            cfg.dropout_rate,
            cfg.mask_noise_rate,
            &mut rng,
        )?);
    }
    let all = g.concat_cols(&losses)?;
    let total = g.sum(all)?;
    let scaled = g.scale(total, scale)?;
    let grads = g.backward(scaled)?.param_grads(&g);
    Ok((g.value(total).item(), grads))
}

/// Runs one epoch of `trainer` over `data`.
pub fn train_epoch(trainer: &mut Trainer, data: &Dataset) -> Result<EpochStats> {
    trainer.train_epoch(data)
}
