//! Synthetic purchase logs with planted first-order item transitions.
//!
//! Every item has a fixed price and category pair, sessions alternate user
//! attributes so segmentation recovers them exactly, and weeks never
//! decrease across the log.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{RawRecord, SaleCalendar};
use crate::error::{Error, Result};

/// Sessions are generated in this many interleaved stripes, each with its
/// own derived stream, so output does not depend on the thread count.
const STRIPES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sessions: usize,
    pub n_items: usize,
    pub n_large: usize,
    pub n_middle: usize,
    /// Items `0..n_patterns` of a random cycle get a planted successor.
    pub n_patterns: usize,
    /// Probability that a patterned item is followed by its successor.
    pub pattern_strength: f64,
    pub mean_length: f64,
    pub week_min: u32,
    pub week_max: u32,
    pub genders: Vec<String>,
    pub regions: Vec<String>,
    /// Log-prices follow a logistic law with these parameters.
    pub price_mu: f64,
    pub price_scale: f64,
    pub calendar: SaleCalendar,
    /// Chance that a session in a sale week opens with one of the cheapest
    /// quarter of items.
    pub sale_affinity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sessions: 5000,
            n_items: 50,
            n_large: 5,
            n_middle: 20,
            n_patterns: 50,
            pattern_strength: 0.9,
            mean_length: 2.24,
            week_min: 1,
            week_max: 105,
            genders: vec!["F".into(), "M".into()],
            regions: (1..=8).map(|r| format!("R{r}")).collect(),
            price_mu: 7.0,
            price_scale: 0.6,
            calendar: SaleCalendar::default(),
            sale_affinity: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_sessions == 0 || self.n_items < 2 || self.n_large == 0 || self.n_middle == 0 {
            return bad("session count, category counts must be positive and n_items at least 2");
        }
        if self.n_patterns > self.n_items {
            return bad("n_patterns cannot exceed n_items");
        }
        if !(0.0..=1.0).contains(&self.pattern_strength) || !(0.0..=1.0).contains(&self.sale_affinity) {
            return bad("pattern_strength and sale_affinity must be probabilities");
        }
        if !(self.mean_length >= 2.0) {
            return bad("mean_length must be at least 2");
        }
        if self.week_min == 0 || self.week_max < self.week_min {
            return bad("week range must satisfy 1 <= week_min <= week_max");
        }
        if self.genders.is_empty() || self.regions.is_empty() || self.genders.len() * self.regions.len() < 2 {
            return bad("need at least two distinct (gender, region) pairs");
        }
        if !(self.price_scale > 0.0) || !self.price_mu.is_finite() {
            return bad("price_scale must be positive and price_mu finite");
        }
        Ok(())
    }
}

/// Fixed per-item attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCatalog {
    pub price: Vec<f64>,
    pub large: Vec<usize>,
    pub middle: Vec<usize>,
    /// `successor[i]` is the planted next item, if any.
    pub successor: Vec<Option<usize>>,
    /// The cheapest quarter of items, favoured in sale weeks.
    pub sale_items: Vec<usize>,
}

pub fn item_name(i: usize) -> String {
    format!("item_{i:03}")
}

pub fn large_name(l: usize) -> String {
    format!("L{l:02}")
}

pub fn middle_name(m: usize) -> String {
    format!("M{m:03}")
}

impl ItemCatalog {
    pub fn new(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.n_items;
        let price = (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(1e-6..1.0 - 1e-6);
                let x = config.price_mu + config.price_scale * (u / (1.0 - u)).ln();
                (x.exp() * 100.0).round() / 100.0
            })
            .collect::<Vec<f64>>();
        // Middle categories nest inside large ones.
        let middle: Vec<usize> = (0..n).map(|_| rng.random_range(0..config.n_middle)).collect();
        let large = middle.iter().map(|m| m % config.n_large).collect();

        let mut cycle: Vec<usize> = (0..n).collect();
        cycle.shuffle(&mut rng);
        let mut successor = vec![None; n];
        for k in 0..config.n_patterns {
            successor[cycle[k]] = Some(cycle[(k + 1) % n]);
        }

        let mut by_price: Vec<usize> = (0..n).collect();
        by_price.sort_by(|&a, &b| price[a].total_cmp(&price[b]).then(a.cmp(&b)));
        by_price.truncate(n.div_ceil(4));
        Ok(Self {
            price,
            large,
            middle,
            successor,
            sale_items: by_price,
        })
    }
}

fn stripe_seed(seed: u64, stripe: usize) -> u64 {
    seed ^ (stripe as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Item sequences for every session, before they are flattened to rows.
pub fn generate_sequences(config: &SynthConfig, catalog: &ItemCatalog) -> Result<Vec<Vec<usize>>> {
    config.validate()?;
    let extra = Geometric::new(1.0 / (config.mean_length - 1.0))
        .map_err(|e| Error::Config(format!("session length law: {e}")))?;
    let n = config.n_items;
    let stripes: Vec<Vec<(usize, Vec<usize>)>> = (0..STRIPES)
        .into_par_iter()
        .map(|stripe| {
            let mut rng = ChaCha8Rng::seed_from_u64(stripe_seed(config.seed, stripe));
            (stripe..config.n_sessions)
                .step_by(STRIPES)
                .map(|idx| {
                    let len = 2 + extra.sample(&mut rng) as usize;
                    let week = week_of(config, idx);
                    let sale = config.calendar.flags(week).iter().any(|&f| f == 1);
                    let mut items = Vec::with_capacity(len);
                    let first = if sale && rng.random_bool(config.sale_affinity) {
                        catalog.sale_items[rng.random_range(0..catalog.sale_items.len())]
                    } else {
                        rng.random_range(0..n)
                    };
                    items.push(first);
                    while items.len() < len {
                        let prev = *items.last().expect("non-empty");
                        let next = match catalog.successor[prev] {
                            Some(s) if rng.random_bool(config.pattern_strength) => s,
                            _ => rng.random_range(0..n),
                        };
                        items.push(next);
                    }
                    (idx, items)
                })
                .collect()
        })
        .collect();
    let mut out = vec![Vec::new(); config.n_sessions];
    for (idx, items) in stripes.into_iter().flatten() {
        out[idx] = items;
    }
    Ok(out)
}

fn week_of(config: &SynthConfig, idx: usize) -> u32 {
    let span = (config.week_max - config.week_min + 1) as usize;
    config.week_min + (idx * span / config.n_sessions) as u32
}

/// Session `idx` gets attribute pair `idx mod |pairs|`, so neighbours differ.
fn attrs_of(config: &SynthConfig, idx: usize) -> (&str, &str) {
    let p = idx % (config.genders.len() * config.regions.len());
    (&config.genders[p % config.genders.len()], &config.regions[p / config.genders.len()])
}

/// The full log, one row per purchase, in session order.
pub fn generate(config: &SynthConfig) -> Result<Vec<RawRecord>> {
    let catalog = ItemCatalog::new(config)?;
    let sequences = generate_sequences(config, &catalog)?;
    let mut records = Vec::new();
    for (idx, items) in sequences.iter().enumerate() {
        let week = week_of(config, idx);
        let (gender, region) = attrs_of(config, idx);
        for &i in items {
            records.push(RawRecord {
                week,
                gender: gender.to_string(),
                region: region.to_string(),
                price: catalog.price[i],
                large_category: large_name(catalog.large[i]),
                middle_category: middle_name(catalog.middle[i]),
                small_category: item_name(i),
                row_index: records.len(),
            });
        }
    }
    Ok(records)
}
