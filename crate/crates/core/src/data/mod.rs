//! Purchase-log ingestion: parsing, pseudo-session segmentation, filtering,
//! price binning, vocabularies and the week-based split.

mod price;
mod records;
mod session;
mod split;
mod vocab;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use price::PriceBinner;
pub use records::{parse_records, write_records, RawRecord, Schema};
pub use session::{filter_sessions, segment_sessions, RawSession};
pub use split::{split_by_week, DatasetSplit, Weekly};
pub use vocab::{build_vocab, FeatureKind, FeatureVocabulary, Vocab, UNKNOWN};

use crate::error::{Error, Result};
use crate::jsonl;

/// Weeks per year used by the calendar and the week encoding.
pub const WEEKS_PER_YEAR: u32 = 52;

/// Recurring sale weeks. Each entry is a period in months; the first week
/// of every period is a sale week for that sale type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaleCalendar {
    pub periods_months: Vec<u32>,
}

impl Default for SaleCalendar {
    /// Quarterly and monthly sales.
    fn default() -> Self {
        Self {
            periods_months: vec![3, 1],
        }
    }
}

impl SaleCalendar {
    pub fn n_sales(&self) -> usize {
        self.periods_months.len()
    }

    fn month(week: u32) -> u32 {
        ((week - 1) % WEEKS_PER_YEAR) * 12 / WEEKS_PER_YEAR
    }

    fn period_index(week: u32, months: u32) -> (u32, u32) {
        ((week - 1) / WEEKS_PER_YEAR, Self::month(week) / months.max(1))
    }

    pub fn is_sale_week(&self, sale: usize, week: u32) -> bool {
        let months = self.periods_months[sale];
        week == 1 || Self::period_index(week, months) != Self::period_index(week - 1, months)
    }

    pub fn flags(&self, week: u32) -> Vec<u8> {
        (0..self.n_sales())
            .map(|s| u8::from(week >= 1 && self.is_sale_week(s, week)))
            .collect()
    }
}

/// An encoded session. The last position is the prediction target and the
/// preceding positions are model input.
///
/// Serialized field order: `session_id, week, gender, region, items,
/// prices, large_cats, middle_cats, sale_flags, attr_flags`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSession {
    pub session_id: usize,
    pub week: u32,
    pub gender: String,
    pub region: String,
    pub items: Vec<usize>,
    pub prices: Vec<usize>,
    pub large_cats: Vec<usize>,
    pub middle_cats: Vec<usize>,
    pub sale_flags: Vec<u8>,
    pub attr_flags: Vec<u8>,
}

impl PseudoSession {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sequence(&self, kind: FeatureKind) -> &[usize] {
        match kind {
            FeatureKind::Id => &self.items,
            FeatureKind::Pri => &self.prices,
            FeatureKind::Lrg => &self.large_cats,
            FeatureKind::Mid => &self.middle_cats,
        }
    }

    /// Item index to predict.
    pub fn label(&self) -> usize {
        *self.items.last().expect("sessions are never empty")
    }

    /// Number of input positions (all but the label).
    pub fn input_len(&self) -> usize {
        self.len().saturating_sub(1)
    }

    /// Checks sequence lengths, index bounds and flag widths.
    pub fn validate(&self, vocab: &FeatureVocabulary) -> Result<()> {
        let s = self.len();
        if s < 2 {
            return Err(Error::Format(format!(
                "session {} has length {s}, need at least 2",
                self.session_id
            )));
        }
        for kind in FeatureKind::ALL {
            let seq = self.sequence(kind);
            if seq.len() != s {
                return Err(Error::Format(format!(
                    "session {}: {kind} sequence has length {}, expected {s}",
                    self.session_id,
                    seq.len()
                )));
            }
            let n = vocab.size(kind);
            if let Some(bad) = seq.iter().find(|&&v| v >= n) {
                return Err(Error::Format(format!(
                    "session {}: {kind} index {bad} out of range {n}",
                    self.session_id
                )));
            }
        }
        if self.sale_flags.len() != vocab.d_sale() || self.attr_flags.len() != vocab.d_type() {
            return Err(Error::Format(format!(
                "session {}: flag widths {}/{} do not match vocabulary {}/{}",
                self.session_id,
                self.sale_flags.len(),
                self.attr_flags.len(),
                vocab.d_sale(),
                vocab.d_type()
            )));
        }
        if self.sale_flags.iter().chain(&self.attr_flags).any(|&b| b > 1) {
            return Err(Error::Format(format!("session {}: flags must be 0/1", self.session_id)));
        }
        Ok(())
    }
}

pub fn encode_session(
    raw: &RawSession,
    vocab: &FeatureVocabulary,
    binner: &PriceBinner,
    calendar: &SaleCalendar,
) -> Result<PseudoSession> {
    let mut prices = Vec::with_capacity(raw.len());
    for r in &raw.records {
        prices.push(binner.bin(r.price)?);
    }
    let enc = |v: &Vocab, value: &str| v.encode(value).unwrap_or(0);
    Ok(PseudoSession {
        session_id: raw.session_id,
        week: raw.week,
        gender: raw.gender.clone(),
        region: raw.region.clone(),
        items: raw.records.iter().map(|r| enc(&vocab.items, &r.small_category)).collect(),
        prices,
        large_cats: raw.records.iter().map(|r| enc(&vocab.large, &r.large_category)).collect(),
        middle_cats: raw.records.iter().map(|r| enc(&vocab.middle, &r.middle_category)).collect(),
        sale_flags: calendar.flags(raw.week),
        attr_flags: vocab.attr_flags(&raw.gender, &raw.region),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub min_len: usize,
    pub min_freq: usize,
    pub n_price_bins: usize,
    pub train_week_max: u32,
    pub val_fraction: f64,
    pub seed: u64,
    pub calendar: SaleCalendar,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_len: 2,
            min_freq: 10,
            n_price_bins: 10,
            train_week_max: 101,
            val_fraction: 0.1,
            seed: 0,
            calendar: SaleCalendar::default(),
        }
    }
}

/// Everything downstream stages need from ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: FeatureVocabulary,
    pub binner: PriceBinner,
    pub calendar: SaleCalendar,
    pub split: DatasetSplit<PseudoSession>,
}

/// segment, filter, split, then fit the binner and vocabularies on the
/// training part only and encode every session.
pub fn ingest(records: &[RawRecord], config: &IngestConfig) -> Result<Dataset> {
    if config.min_len < 1 {
        return Err(Error::Config("min_len must be at least 1".into()));
    }
    let sessions = filter_sessions(segment_sessions(records), config.min_len, config.min_freq);
    if sessions.is_empty() {
        return Err(Error::Config("no sessions survive filtering".into()));
    }
    let raw = split_by_week(sessions, config.train_week_max, config.val_fraction, config.seed)?;

    let train_prices: Vec<f64> = raw
        .train
        .iter()
        .flat_map(|s| s.records.iter().map(|r| r.price))
        .collect();
    let binner = PriceBinner::fit(&train_prices, config.n_price_bins)?;
    let vocab = build_vocab(&raw.train, config.n_price_bins, config.calendar.n_sales());

    let encode_all = |part: &[RawSession]| -> Result<Vec<PseudoSession>> {
        part.iter()
            .map(|s| encode_session(s, &vocab, &binner, &config.calendar))
            .collect()
    };
    let split = DatasetSplit {
        train: encode_all(&raw.train)?,
        validation: encode_all(&raw.validation)?,
        test: encode_all(&raw.test)?,
        train_week_max: raw.train_week_max,
        test_week_min: raw.test_week_min,
    };
    Ok(Dataset {
        vocab,
        binner,
        calendar: config.calendar.clone(),
        split,
    })
}

pub fn write_sessions<W: Write>(sessions: &[PseudoSession], sink: W) -> Result<()> {
    jsonl::write(sessions, sink)
}

pub fn read_sessions<R: Read>(source: R) -> Result<Vec<PseudoSession>> {
    jsonl::read(source)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sale_weeks_per_year() {
        let cal = SaleCalendar::default();
        let quarterly = (1..=52).filter(|&w| cal.is_sale_week(0, w)).count();
        let monthly = (1..=52).filter(|&w| cal.is_sale_week(1, w)).count();
        assert_eq!((quarterly, monthly), (4, 12));
        assert_eq!(cal.flags(1), vec![1, 1]);
        assert_eq!(cal.flags(2), vec![0, 0]);
        // Week 53 opens a new year.
        assert_eq!(cal.flags(53), vec![1, 1]);
    }

    fn rec(week: u32, gender: &str, item: &str, price: f64) -> RawRecord {
        RawRecord {
            week,
            gender: gender.into(),
            region: "R1".into(),
            price,
            large_category: format!("L{}", &item[..1]),
            middle_category: format!("M{item}"),
            small_category: item.into(),
            row_index: 0,
        }
    }

    fn corpus() -> Vec<RawRecord> {
        let mut out = Vec::new();
        for i in 0..40u32 {
            let g = if i % 2 == 0 { "F" } else { "M" };
            let week = 1 + i * 3;
            out.push(rec(week, g, "a", 100.0 + f64::from(i)));
            out.push(rec(week, g, "b", 10.0 + f64::from(i)));
            if i % 3 == 0 {
                out.push(rec(week, g, "c", 1000.0));
            }
        }
        out
    }

    #[test]
    fn ingest_encodes_consistently() {
        let cfg = IngestConfig {
            train_week_max: 90,
            ..IngestConfig::default()
        };
        let ds = ingest(&corpus(), &cfg).unwrap();
        let all = ds.split.train.iter().chain(&ds.split.validation).chain(&ds.split.test);
        for s in all {
            s.validate(&ds.vocab).unwrap();
        }
        assert!(ds.split.test.iter().all(|s| s.week > 90));
        assert_eq!(ds.vocab.d_type(), 3);
        assert_eq!(ds.vocab.d_sale(), 2);
    }

    #[test]
    fn sessions_round_trip_as_jsonl() {
        let ds = ingest(&corpus(), &IngestConfig { train_week_max: 90, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_sessions(&ds.split.train, &mut buf).unwrap();
        let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_string();
        assert!(first.starts_with("{\"session_id\":"), "{first}");
        assert_eq!(read_sessions(buf.as_slice()).unwrap(), ds.split.train);
    }

    #[test]
    fn validate_rejects_bad_index() {
        let ds = ingest(&corpus(), &IngestConfig { train_week_max: 90, ..Default::default() }).unwrap();
        let mut s = ds.split.train[0].clone();
        s.items[0] = 999;
        assert!(matches!(s.validate(&ds.vocab), Err(Error::Format(_))));
    }
}
