use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::records::RawRecord;

/// A maximal run of purchase rows sharing the same user attributes, before
/// vocabulary encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSession {
    pub session_id: usize,
    /// Week of the first record.
    pub week: u32,
    pub gender: String,
    pub region: String,
    pub records: Vec<RawRecord>,
}

impl RawSession {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Splits the record stream into pseudo-sessions. A new session starts when
/// gender or region differs from the previous row. Week changes inside a
/// run do not split it; the session keeps the week of its first record.
pub fn segment_sessions(records: &[RawRecord]) -> Vec<RawSession> {
    let mut sessions: Vec<RawSession> = Vec::new();
    for rec in records {
        let continues = sessions.last().is_some_and(|s| {
            let prev = s.records.last().expect("sessions are never empty");
            prev.gender == rec.gender && prev.region == rec.region
        });
        if continues {
            sessions.last_mut().unwrap().records.push(rec.clone());
        } else {
            sessions.push(RawSession {
                session_id: sessions.len(),
                week: rec.week,
                gender: rec.gender.clone(),
                region: rec.region.clone(),
                records: vec![rec.clone()],
            });
        }
    }
    sessions
}

/// Drops rare items and short sessions, repeating until neither rule removes
/// anything (dropping a session lowers item counts, which can expose new rare
/// items).
pub fn filter_sessions(sessions: Vec<RawSession>, min_len: usize, min_freq: usize) -> Vec<RawSession> {
    let mut sessions = sessions;
    loop {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in &sessions {
            for r in &s.records {
                *counts.entry(r.small_category.as_str()).or_default() += 1;
            }
        }
        let rare: Vec<String> = counts
            .into_iter()
            .filter(|&(_, c)| c < min_freq)
            .map(|(item, _)| item.to_string())
            .collect();

        let before: usize = sessions.iter().map(RawSession::len).sum();
        let n_before = sessions.len();
        if !rare.is_empty() {
            for s in &mut sessions {
                s.records.retain(|r| !rare.contains(&r.small_category));
            }
        }
        sessions.retain(|s| s.len() >= min_len.max(1));
        let after: usize = sessions.iter().map(RawSession::len).sum();
        if after == before && sessions.len() == n_before {
            return sessions;
        }
    }
}
