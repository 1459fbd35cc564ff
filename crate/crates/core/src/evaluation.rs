//! Ranking metrics, the evaluation harness and two reference baselines.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PseudoSession;
use crate::error::{Error, Result};
use crate::model::{Model, SessionInput};

pub const DEFAULT_KS: [usize; 2] = [10, 20];

/// Sessions scored per work unit.
const EVAL_CHUNK: usize = 64;

/// 1-based rank of `label`. Ties are broken by ascending item index, so an
/// item with an equal score and a lower index ranks ahead of the label.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let target = scores[label];
    let mut rank = 1;
    for (j, &s) in scores.iter().enumerate() {
        if s > target || (s == target && j < label) {
            rank += 1;
        }
    }
    rank
}

/// 1 if the label is among the top `k`, else 0.
pub fn precision_at_k(scores: &[f64], label: usize, k: usize) -> f64 {
    hit(rank_of(scores, label), k)
}

/// Reciprocal rank, truncated to 0 beyond `k`.
pub fn mrr_at_k(scores: &[f64], label: usize, k: usize) -> f64 {
    reciprocal(rank_of(scores, label), k)
}

fn hit(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

fn reciprocal(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / rank as f64
    } else {
        0.0
    }
}

/// Anything that scores every item for a batch of session prefixes.
pub trait Recommender: Sync {
    fn n_items(&self) -> usize;
    fn scores(&self, sessions: &[SessionInput<'_>]) -> Result<Vec<Vec<f64>>>;
}

impl Recommender for Model {
    fn n_items(&self) -> usize {
        self.config().n_items
    }

    fn scores(&self, sessions: &[SessionInput<'_>]) -> Result<Vec<Vec<f64>>> {
        self.predict(sessions)
    }
}

/// Scores each item by how often it was bought in the training sessions.
#[derive(Debug, Clone)]
pub struct Popularity {
    counts: Vec<f64>,
}

impl Popularity {
    pub fn fit(train: &[PseudoSession], n_items: usize) -> Self {
        let mut counts = vec![0.0; n_items];
        for s in train {
            for &i in &s.items {
                counts[i] += 1.0;
            }
        }
        Self { counts }
    }
}

impl Recommender for Popularity {
    fn n_items(&self) -> usize {
        self.counts.len()
    }

    fn scores(&self, sessions: &[SessionInput<'_>]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.counts.clone(); sessions.len()])
    }
}

/// First-order transition counts from the last observed item. Popularity,
/// scaled below one count, breaks ties among unseen transitions.
#[derive(Debug, Clone)]
pub struct Markov {
    transitions: Vec<Vec<f64>>,
    popularity: Vec<f64>,
}

impl Markov {
    pub fn fit(train: &[PseudoSession], n_items: usize) -> Self {
        let mut transitions = vec![vec![0.0; n_items]; n_items];
        for s in train {
            for w in s.items.windows(2) {
                transitions[w[0]][w[1]] += 1.0;
            }
        }
        let pop = Popularity::fit(train, n_items).counts;
        let total: f64 = pop.iter().sum::<f64>() + 1.0;
        let popularity = pop.iter().map(|c| c / total).collect();
        Self {
            transitions,
            popularity,
        }
    }
}

impl Recommender for Markov {
    fn n_items(&self) -> usize {
        self.popularity.len()
    }

    fn scores(&self, sessions: &[SessionInput<'_>]) -> Result<Vec<Vec<f64>>> {
        sessions
            .iter()
            .map(|s| {
                let last = *s
                    .items
                    .last()
                    .ok_or_else(|| Error::Contract("empty session prefix".into()))?;
                let row = self
                    .transitions
                    .get(last)
                    .ok_or_else(|| Error::Domain(format!("item {last} out of range")))?;
                Ok(row.iter().zip(&self.popularity).map(|(t, p)| t + p).collect())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    /// Percent of sessions whose label is in the top `k`.
    pub precision: f64,
    /// Mean truncated reciprocal rank, in percent.
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_sessions: usize,
    pub n_runs: usize,
    pub metrics: Vec<CutoffMetrics>,
    /// Label rank of every session, one list per run.
    pub ranks: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_ranks(ranks: Vec<usize>, ks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Contract("evaluation over an empty session set".into()));
        }
        let n = ranks.len() as f64;
        let metrics = ks
            .iter()
            .map(|&k| CutoffMetrics {
                k,
                precision: 100.0 * ranks.iter().map(|&r| hit(r, k)).sum::<f64>() / n,
                mrr: 100.0 * ranks.iter().map(|&r| reciprocal(r, k)).sum::<f64>() / n,
            })
            .collect();
        Ok(Self {
            n_sessions: ranks.len(),
            n_runs: 1,
            metrics,
            ranks: vec![ranks],
        })
    }

    /// Averages metrics over independent runs on the same cutoffs.
    pub fn mean(runs: &[EvalReport]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Contract("no runs to average".into()))?;
        let ks: Vec<usize> = first.metrics.iter().map(|m| m.k).collect();
        for r in runs {
            if r.metrics.iter().map(|m| m.k).ne(ks.iter().copied()) {
                return Err(Error::Contract("runs use different cutoffs".into()));
            }
        }
        let total_runs: usize = runs.iter().map(|r| r.n_runs).sum();
        let metrics = ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let weighted = |f: fn(&CutoffMetrics) -> f64| {
                    runs.iter().map(|r| f(&r.metrics[i]) * r.n_runs as f64).sum::<f64>()
                        / total_runs as f64
                };
                CutoffMetrics {
                    k,
                    precision: weighted(|m| m.precision),
                    mrr: weighted(|m| m.mrr),
                }
            })
            .collect();
        Ok(Self {
            n_sessions: first.n_sessions,
            n_runs: total_runs,
            metrics,
            ranks: runs.iter().flat_map(|r| r.ranks.iter().cloned()).collect(),
        })
    }

    pub fn precision(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.precision)
    }

    pub fn mrr(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.mrr)
    }

    /// Human-readable table: precision columns first, then MRR columns.
    pub fn table(&self) -> String {
        let mut header = format!("{:>10}", "sessions");
        let mut row = format!("{:>10}", self.n_sessions);
        for m in &self.metrics {
            let _ = write!(header, " {:>8}", format!("P@{}", m.k));
            let _ = write!(row, " {:>8.2}", m.precision);
        }
        for m in &self.metrics {
            let _ = write!(header, " {:>8}", format!("M@{}", m.k));
            let _ = write!(row, " {:>8.2}", m.mrr);
        }
        format!("{header}\n{row}\n")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Label ranks for every session, scoring prefixes in parallel chunks.
pub fn session_ranks<R: Recommender + ?Sized>(rec: &R, sessions: &[PseudoSession]) -> Result<Vec<usize>> {
    let n_items = rec.n_items();
    let chunks: Vec<Vec<usize>> = sessions
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let inputs: Vec<SessionInput<'_>> = chunk.iter().map(SessionInput::prefix_of).collect();
            let scores = rec.scores(&inputs)?;
            chunk
                .iter()
                .zip(&scores)
                .map(|(s, row)| {
                    let label = s.label();
                    if row.len() != n_items || label >= n_items {
                        return Err(Error::Domain(format!(
                            "label {label} outside {} scored items",
                            row.len()
                        )));
                    }
                    Ok(rank_of(row, label))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// P@k and M@k over `sessions`, each predicted from its prefix.
pub fn evaluate<R: Recommender + ?Sized>(
    rec: &R,
    sessions: &[PseudoSession],
    ks: &[usize],
) -> Result<EvalReport> {
    if sessions.is_empty() {
        return Err(Error::Contract("evaluation over an empty session set".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > rec.n_items()) {
        return Err(Error::Config(format!(
            "cutoff {k} must lie in 1..={}",
            rec.n_items()
        )));
    }
    EvalReport::from_ranks(session_ranks(rec, sessions)?, ks)
}
