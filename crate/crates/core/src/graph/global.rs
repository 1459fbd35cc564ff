use std::collections::HashMap;

use rayon::prelude::*;

use super::hyper::NeighborLists;
use crate::data::{FeatureKind, PseudoSession};
use crate::error::{Error, Result};

/// Weighted same-type co-occurrence graph across sessions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalGraph {
    pub kind: FeatureKind,
    pub n_nodes: usize,
    pub epsilon: usize,
    /// `None` for the full graph, `Some(n)` after per-node truncation.
    pub top_n: Option<usize>,
    /// Per node, `(neighbor, weight)` sorted by neighbor index.
    pub adjacency: Vec<Vec<(usize, u32)>>,
}

/// Counts window co-occurrences. Positions `p < q` of session `b` with
/// `q - p <= epsilon` and different values form one event when at least one
/// of the two values also occurs in some other session, so that the pair is
/// reachable from that session through a shared value. Each event adds 1 to
/// the symmetric weight of the value pair.
pub fn build_global_graph(
    sessions: &[PseudoSession],
    kind: FeatureKind,
    n_nodes: usize,
    epsilon: usize,
) -> Result<GlobalGraph> {
    if epsilon < 1 {
        return Err(Error::Config("epsilon must be at least 1".into()));
    }
    let mut session_count = vec![0u32; n_nodes];
    for s in sessions {
        let mut seen: Vec<usize> = s.sequence(kind).to_vec();
        seen.sort_unstable();
        seen.dedup();
        for v in seen {
            if v >= n_nodes {
                return Err(Error::Format(format!(
                    "session {}: {kind} index {v} out of range {n_nodes}",
                    s.session_id
                )));
            }
            session_count[v] += 1;
        }
    }

    let counts = sessions
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<(usize, usize), u32>, s| {
            let seq = s.sequence(kind);
            for p in 0..seq.len() {
                for q in p + 1..seq.len().min(p + epsilon + 1) {
                    let (x, y) = (seq[p], seq[q]);
                    if x != y && (session_count[x] >= 2 || session_count[y] >= 2) {
                        *acc.entry((x.min(y), x.max(y))).or_default() += 1;
                    }
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });

    let mut adjacency = vec![Vec::new(); n_nodes];
    for ((x, y), w) in counts {
        adjacency[x].push((y, w));
        adjacency[y].push((x, w));
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    Ok(GlobalGraph {
        kind,
        n_nodes,
        epsilon,
        top_n: None,
        adjacency,
    })
}

impl GlobalGraph {
    pub fn weight(&self, a: usize, b: usize) -> Option<u32> {
        let list = self.adjacency.get(a)?;
        list.binary_search_by_key(&b, |&(n, _)| n).ok().map(|i| list[i].1)
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Keeps each node's `top_n` heaviest neighbours (ties to the lower
    /// index). The result need not be symmetric.
    pub fn truncated(&self, top_n: usize) -> GlobalGraph {
        let adjacency = self
            .adjacency
            .iter()
            .map(|list| {
                let mut ranked = list.clone();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                ranked.truncate(top_n);
                ranked.sort_unstable();
                ranked
            })
            .collect();
        GlobalGraph {
            top_n: Some(top_n),
            adjacency,
            ..self.clone()
        }
    }

    pub fn neighbor_lists(&self) -> (NeighborLists, Vec<f64>) {
        let lists: Vec<Vec<usize>> = self
            .adjacency
            .iter()
            .map(|l| l.iter().map(|&(n, _)| n).collect())
            .collect();
        let weights = self
            .adjacency
            .iter()
            .flat_map(|l| l.iter().map(|&(_, w)| f64::from(w)))
            .collect();
        (NeighborLists::from_lists(&lists), weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(id: usize, items: &[usize]) -> PseudoSession {
        PseudoSession {
            session_id: id,
            week: 1,
            gender: "F".into(),
            region: "R".into(),
            items: items.to_vec(),
            prices: vec![0; items.len()],
            large_cats: vec![0; items.len()],
            middle_cats: vec![0; items.len()],
            sale_flags: vec![],
            attr_flags: vec![],
        }
    }

    #[test]
    fn two_sessions_sharing_an_item() {
        // x=1, y=2, w=3
        let s = [session(0, &[1, 2]), session(1, &[1, 3])];
        let g = build_global_graph(&s, FeatureKind::Id, 4, 1).unwrap();
        assert_eq!(g.weight(1, 2), Some(1));
        assert_eq!(g.weight(1, 3), Some(1));
        assert_eq!(g.weight(2, 3), None);
    }

    #[test]
    fn single_session_gives_empty_graph() {
        let g = build_global_graph(&[session(0, &[1, 2, 3, 1])], FeatureKind::Id, 4, 3).unwrap();
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn symmetric_without_self_loops() {
        let s = [session(0, &[1, 1, 2, 3]), session(1, &[3, 2, 1]), session(2, &[2, 2])];
        let g = build_global_graph(&s, FeatureKind::Id, 4, 2).unwrap();
        for (a, list) in g.adjacency.iter().enumerate() {
            for &(b, w) in list {
                assert_ne!(a, b);
                assert!(w >= 1);
                assert_eq!(g.weight(b, a), Some(w));
            }
        }
    }

    #[test]
    fn window_respects_epsilon() {
        let s = [session(0, &[1, 2, 3]), session(1, &[1, 2, 3])];
        let g = build_global_graph(&s, FeatureKind::Id, 4, 1).unwrap();
        assert_eq!(g.weight(1, 3), None);
        assert_eq!(g.weight(1, 2), Some(2));
        assert!(build_global_graph(&s, FeatureKind::Id, 4, 0).is_err());
    }

    #[test]
    fn truncation_keeps_heaviest() {
        let s = [
            session(0, &[1, 2]),
            session(1, &[1, 2]),
            session(2, &[1, 3]),
            session(3, &[1, 4]),
            session(4, &[4, 5]),
        ];
        let g = build_global_graph(&s, FeatureKind::Id, 6, 1).unwrap();
        let t = g.truncated(2);
        assert_eq!(t.adjacency[1], vec![(2, 2), (3, 1)]);
        assert_eq!(t.adjacency[4], g.adjacency[4]);
        let (lists, weights) = t.neighbor_lists();
        assert_eq!(lists.of(1), &[2, 3]);
        assert_eq!(weights.len(), t.n_edges());
    }
}
