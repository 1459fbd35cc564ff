use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::session::RawSession;
use super::PseudoSession;
use crate::error::{Error, Result};

pub trait Weekly {
    fn week(&self) -> u32;
}

impl Weekly for RawSession {
    fn week(&self) -> u32 {
        self.week
    }
}

impl Weekly for PseudoSession {
    fn week(&self) -> u32 {
        self.week
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<S> {
    pub train: Vec<S>,
    pub validation: Vec<S>,
    pub test: Vec<S>,
    pub train_week_max: u32,
    pub test_week_min: u32,
}

/// Sessions up to `train_week_max` form the training pool, later ones the
/// test set. A seeded uniform sample of `floor(val_fraction * |pool|)`
/// sessions moves from the pool into validation; every part keeps file order.
pub fn split_by_week<S: Weekly>(
    sessions: Vec<S>,
    train_week_max: u32,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit<S>> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "validation fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    let (pool, test): (Vec<S>, Vec<S>) = sessions
        .into_iter()
        .partition(|s| s.week() <= train_week_max);

    let n_val = (val_fraction * pool.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; pool.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (s, v) in pool.into_iter().zip(is_val) {
        if v {
            validation.push(s);
        } else {
            train.push(s);
        }
    }

    if train.is_empty() {
        return Err(Error::Config(format!(
            "no training sessions at or before week {train_week_max}"
        )));
    }
    if test.is_empty() {
        return Err(Error::Config(format!(
            "no test sessions after week {train_week_max}"
        )));
    }
    let test_week_min = test.iter().map(Weekly::week).min().unwrap_or(train_week_max + 1);
    Ok(DatasetSplit {
        train,
        validation,
        test,
        train_week_max,
        test_week_min,
    })
}
