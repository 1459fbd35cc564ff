//! Mini-batch training with Adam, step-wise learning-rate decay and
//! selection of the best epoch on validation M@20.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, FeatureKind, FeatureVocabulary, PseudoSession};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, DEFAULT_KS};
use crate::graph::GraphSet;
use crate::model::{Model, ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Cutoff whose validation MRR picks the returned epoch.
pub const SELECTION_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub l2_coeff: f64,
    pub seed: u64,
    pub layers: usize,
    pub dropout: f64,
    pub d: usize,
    pub epsilon: usize,
    pub heads: usize,
    pub n_price_bins: usize,
    /// Neighbours kept per node of a co-occurrence graph.
    pub top_n: usize,
    pub week_dim: usize,
    /// Each batch is split into this many gradient shards. Results do not
    /// depend on how many threads run them.
    pub shards: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 100,
            lr: 0.001,
            lr_decay: 0.1,
            lr_decay_every: 3,
            l2_coeff: 1e-5,
            seed: 0,
            layers: 2,
            dropout: 0.2,
            d: 128,
            epsilon: 12,
            heads: 4,
            n_price_bins: 10,
            top_n: 12,
            week_dim: 16,
            shards: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("lr_decay_every", self.lr_decay_every),
            ("layers", self.layers),
            ("d", self.d),
            ("epsilon", self.epsilon),
            ("heads", self.heads),
            ("n_price_bins", self.n_price_bins),
            ("top_n", self.top_n),
            ("shards", self.shards),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) || !(self.l2_coeff >= 0.0) {
            return Err(Error::Config("lr and lr_decay must be positive, l2_coeff non-negative".into()));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!("d = {} is not divisible by heads = {}", self.d, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch.max(1) - 1) / self.lr_decay_every.max(1);
        self.lr * self.lr_decay.powi(steps as i32)
    }

    pub fn model_config(&self, vocab: &FeatureVocabulary) -> ModelConfig {
        ModelConfig {
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            week_dim: self.week_dim,
            n_items: vocab.size(FeatureKind::Id),
            n_prices: vocab.n_price_bins,
            d_sale: vocab.d_sale(),
            d_type: vocab.d_type(),
            dropout: self.dropout,
            seed: self.seed,
        }
    }
}

/// Adam moments for every parameter plus the shared step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// One Adam update with `l2 * theta` added to each gradient. Every parameter
/// must have exactly one gradient of the same shape.
pub fn adam_step<'a, I>(
    params: I,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    l2: f64,
) -> Result<()>
where
    I: IntoIterator<Item = (&'a String, &'a mut Tensor)>,
{
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let mut updated = 0;
    for (name, theta) in params {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?;
        if g.shape() != theta.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: theta.shape(),
                rhs: g.shape(),
            });
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (k, x) in theta.data_mut().iter_mut().enumerate() {
            let gk = g.data()[k] + l2 * *x;
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
            *x -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + ADAM_EPS);
        }
        updated += 1;
    }
    if updated != grads.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {updated} parameters",
            grads.len()
        )));
    }
    Ok(())
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub lr: f64,
    /// Mean cross-entropy per session, without the L2 term.
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_at_10: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_at_20: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_at_10: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_at_20: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from `best_epoch`.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub final_params: ModelParams,
    pub log: Vec<MetricRecord>,
}

/// Mixes seed components into one stream seed (splitmix64 finaliser).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Batch order for `epoch`, a fixed function of the seed.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch as u64])));
    order
}

/// Mean loss and summed gradient over one batch, computed shard by shard
/// and merged in shard order.
fn batch_gradient(
    model: &Model,
    batch: &[&PseudoSession],
    shards: usize,
    seeds: [u64; 3],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let per = batch.len().div_ceil(shards);
    let scale = 1.0 / batch.len() as f64;
    let parts = batch
        .chunks(per)
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(s, chunk)| {
            let seed = derive_seed(&[seeds[0], seeds[1], seeds[2], s as u64]);
            model.loss_and_grads(chunk, scale, Some(seed))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = parts.into_iter();
    let (mut loss, mut grads) = parts.next().expect("non-empty batch");
    for (l, g) in parts {
        loss += l;
        for (name, t) in g {
            let acc = grads.get_mut(&name).expect("same parameter set");
            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
    }
    Ok((loss, grads))
}

/// Trains from a fresh initialisation. `graphs` must come from the training
/// partition only.
pub fn train(
    split: &DatasetSplit<PseudoSession>,
    vocab: &FeatureVocabulary,
    graphs: &GraphSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Contract("no training sessions".into()));
    }
    let params = ModelParams::init(config.model_config(vocab))?;
    let mut model = Model::new(params, graphs)?;
    let mut state = AdamState::default();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut last_finite: Option<(usize, usize, f64)> = None;

    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        let order = epoch_order(split.train.len(), config.seed, epoch);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PseudoSession> = idx.iter().map(|&i| &split.train[i]).collect();
            let seeds = [config.seed, epoch as u64, b as u64];
            let (loss, grads) = batch_gradient(&model, &batch, config.shards, seeds)?;
            let finite = loss.is_finite() && grads.values().all(|g| g.data().iter().all(|x| x.is_finite()));
            if !finite {
                let last = match last_finite {
                    Some((e, lb, l)) => format!("last finite loss {l:.6} at epoch {e} batch {lb}"),
                    None => "no finite step recorded".into(),
                };
                return Err(Error::Divergence(format!(
                    "non-finite loss or gradient at epoch {epoch} batch {b} (lr {lr:e}); {last}"
                )));
            }
            last_finite = Some((epoch, b, loss));
            total += loss * batch.len() as f64;
            adam_step(model.params.iter_mut(), &grads, &mut state, lr, config.l2_coeff)?;
        }
        log.push(MetricRecord {
            epoch,
            split: "train".into(),
            lr,
            loss: total / split.train.len() as f64,
            p_at_10: None,
            p_at_20: None,
            m_at_10: None,
            m_at_20: None,
        });

        let score = if split.validation.is_empty() {
            // Without a validation set the latest epoch wins.
            epoch as f64
        } else {
            let val: Vec<&PseudoSession> = split.validation.iter().collect();
            let loss = model.loss(&val)? / val.len() as f64;
            let ks = clamp_ks(&DEFAULT_KS, model.config().n_items);
            let report = evaluate(&model, &split.validation, &ks)?;
            log.push(MetricRecord {
                epoch,
                split: "validation".into(),
                lr,
                loss,
                p_at_10: report.precision(10),
                p_at_20: report.precision(20),
                m_at_10: report.mrr(10),
                m_at_20: report.mrr(20),
            });
            report.mrr(SELECTION_K).unwrap_or(0.0)
        };
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, model.params.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        final_params: model.params,
        log,
    })
}

/// Drops cutoffs larger than the item vocabulary.
pub fn clamp_ks(ks: &[usize], n_items: usize) -> Vec<usize> {
    ks.iter().copied().filter(|&k| k <= n_items).collect()
}

/// Epoch with the highest validation M@20 in a metrics log, earliest on ties.
pub fn best_epoch_from_log(log: &[MetricRecord]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for r in log.iter().filter(|r| r.split == "validation") {
        let m = r.m_at_20?;
        if best.is_none_or(|(s, _)| m > s) {
            best = Some((m, r.epoch));
        }
    }
    best.map(|(_, e)| e)
}
