use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::session::RawSession;
use crate::error::Error;

pub const UNKNOWN: &str = "<unk>";

/// The four per-record feature types that vary inside a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Item id (small category).
    Id,
    /// Price range.
    Pri,
    /// Large category.
    Lrg,
    /// Middle category.
    Mid,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::Id,
        FeatureKind::Pri,
        FeatureKind::Lrg,
        FeatureKind::Mid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Id => "id",
            FeatureKind::Pri => "pri",
            FeatureKind::Lrg => "lrg",
            FeatureKind::Mid => "mid",
        }
    }

    /// The other three kinds, in canonical order.
    pub fn others(self) -> [FeatureKind; 3] {
        let mut out = [FeatureKind::Id; 3];
        let mut i = 0;
        for k in Self::ALL {
            if k != self {
                out[i] = k;
                i += 1;
            }
        }
        out
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "id" => Ok(FeatureKind::Id),
            "pri" => Ok(FeatureKind::Pri),
            "lrg" => Ok(FeatureKind::Lrg),
            "mid" => Ok(FeatureKind::Mid),
            other => Err(Error::Format(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// Bijective value <-> index map in first-seen order. Open vocabularies
/// reserve index 0 for values never seen during building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    values: Vec<String>,
    index: HashMap<String, usize>,
    open: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    open: bool,
    values: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let index = r
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i))
            .collect();
        Vocab {
            values: r.values,
            index,
            open: r.open,
        }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            open: v.open,
            values: v.values,
        }
    }
}

impl Vocab {
    /// With a reserved unknown slot at index 0.
    pub fn open() -> Self {
        let mut v = Vocab {
            values: Vec::new(),
            index: HashMap::new(),
            open: true,
        };
        v.insert(UNKNOWN);
        v
    }

    pub fn closed() -> Self {
        Vocab {
            values: Vec::new(),
            index: HashMap::new(),
            open: false,
        }
    }

    pub fn insert(&mut self, value: &str) -> usize {
        if let Some(&i) = self.index.get(value) {
            return i;
        }
        self.values.push(value.to_string());
        self.index.insert(value.to_string(), self.values.len() - 1);
        self.values.len() - 1
    }

    pub fn get(&self, value: &str) -> Option<usize> {
        self.index.get(value).copied()
    }

    /// Index of `value`, or the unknown slot for open vocabularies.
    pub fn encode(&self, value: &str) -> Option<usize> {
        self.get(value).or(if self.open { Some(0) } else { None })
    }

    pub fn value(&self, index: usize) -> Option<&str> {
        self.values.get(index).map(String::as_str)
    }

    /// Size including the unknown slot.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn known_len(&self) -> usize {
        self.values.len() - usize::from(self.open)
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocabulary {
    pub items: Vocab,
    pub large: Vocab,
    pub middle: Vocab,
    pub n_price_bins: usize,
    pub genders: Vocab,
    pub regions: Vocab,
    pub n_sales: usize,
}

impl FeatureVocabulary {
    /// Node count for a feature type (including the unknown slot where present).
    pub fn size(&self, kind: FeatureKind) -> usize {
        match kind {
            FeatureKind::Id => self.items.len(),
            FeatureKind::Pri => self.n_price_bins,
            FeatureKind::Lrg => self.large.len(),
            FeatureKind::Mid => self.middle.len(),
        }
    }

    pub fn d_sale(&self) -> usize {
        self.n_sales
    }

    pub fn d_type(&self) -> usize {
        self.genders.len() + self.regions.len()
    }

    /// Multi-hot user-attribute vector: one-hot gender followed by one-hot
    /// region; unseen values leave their block all zero.
    pub fn attr_flags(&self, gender: &str, region: &str) -> Vec<u8> {
        let mut flags = vec![0u8; self.d_type()];
        if let Some(g) = self.genders.get(gender) {
            flags[g] = 1;
        }
        if let Some(r) = self.regions.get(region) {
            flags[self.genders.len() + r] = 1;
        }
        flags
    }
}

/// Builds vocabularies from training sessions in first-seen order.
pub fn build_vocab(train: &[RawSession], n_price_bins: usize, n_sales: usize) -> FeatureVocabulary {
    let mut vocab = FeatureVocabulary {
        items: Vocab::open(),
        large: Vocab::open(),
        middle: Vocab::open(),
        n_price_bins,
        genders: Vocab::closed(),
        regions: Vocab::closed(),
        n_sales,
    };
    for s in train {
        vocab.genders.insert(&s.gender);
        vocab.regions.insert(&s.region);
        for r in &s.records {
            vocab.items.insert(&r.small_category);
            vocab.large.insert(&r.large_category);
            vocab.middle.insert(&r.middle_category);
        }
    }
    vocab
}
