use std::collections::BTreeSet;
use std::sync::Arc;

use crate::data::{FeatureKind, FeatureVocabulary, PseudoSession};
use crate::error::{Error, Result};

/// Nodes are values of `node_kind`; each hyperedge is a value of `edge_kind`
/// and joins every node observed with it in the same record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroHypergraph {
    pub node_kind: FeatureKind,
    pub edge_kind: FeatureKind,
    pub n_nodes: usize,
    /// Sorted node list per hyperedge value.
    pub incidence: Vec<Vec<usize>>,
}

/// Compressed neighbour lists: the neighbours of node `i` are
/// `indices[offsets[i]..offsets[i + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborLists {
    pub offsets: Arc<[usize]>,
    pub indices: Arc<[usize]>,
}

impl NeighborLists {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for l in lists {
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        Self {
            offsets: offsets.into(),
            indices: indices.into(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn of(&self, node: usize) -> &[usize] {
        &self.indices[self.offsets[node]..self.offsets[node + 1]]
    }
}

pub fn build_hypergraph(
    sessions: &[PseudoSession],
    vocab: &FeatureVocabulary,
    node_kind: FeatureKind,
    edge_kind: FeatureKind,
) -> Result<HeteroHypergraph> {
    if node_kind == edge_kind {
        return Err(Error::Config(format!(
            "hypergraph needs two different feature types, got {node_kind} twice"
        )));
    }
    let n_nodes = vocab.size(node_kind);
    let n_edges = vocab.size(edge_kind);
    let mut sets = vec![BTreeSet::new(); n_edges];
    for s in sessions {
        for (&v, &e) in s.sequence(node_kind).iter().zip(s.sequence(edge_kind)) {
            if v >= n_nodes || e >= n_edges {
                return Err(Error::Format(format!(
                    "session {}: index out of vocabulary range",
                    s.session_id
                )));
            }
            sets[e].insert(v);
        }
    }
    Ok(HeteroHypergraph {
        node_kind,
        edge_kind,
        n_nodes,
        incidence: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
    })
}

impl HeteroHypergraph {
    pub fn n_edges(&self) -> usize {
        self.incidence.len()
    }

    /// The same incidence viewed from the other side.
    pub fn dual(&self) -> HeteroHypergraph {
        let mut incidence = vec![Vec::new(); self.n_nodes];
        for (e, nodes) in self.incidence.iter().enumerate() {
            for &v in nodes {
                incidence[v].push(e);
            }
        }
        HeteroHypergraph {
            node_kind: self.edge_kind,
            edge_kind: self.node_kind,
            n_nodes: self.n_edges(),
            incidence,
        }
    }

    /// Every node sharing a hyperedge with `node`, plus `node` itself, sorted.
    pub fn hyper_neighbors(&self, node: usize) -> Result<Vec<usize>> {
        if node >= self.n_nodes {
            return Err(Error::Domain(format!(
                "node {node} outside {} node range {}",
                self.node_kind, self.n_nodes
            )));
        }
        let mut set = BTreeSet::from([node]);
        for nodes in &self.incidence {
            if nodes.binary_search(&node).is_ok() {
                set.extend(nodes.iter().copied());
            }
        }
        Ok(set.into_iter().collect())
    }

    pub fn neighbor_lists(&self) -> NeighborLists {
        let mut sets: Vec<BTreeSet<usize>> = (0..self.n_nodes).map(|v| BTreeSet::from([v])).collect();
        for nodes in &self.incidence {
            for &v in nodes {
                sets[v].extend(nodes.iter().copied());
            }
        }
        let lists: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        NeighborLists::from_lists(&lists)
    }
}
