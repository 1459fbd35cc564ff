//! Heterogeneous hypergraphs and co-occurrence graphs over the training corpus.
//!
//! Text format written by [`GraphSet::write`]:
//!
//! ```text
//! # cohhgn graphs v1
//! hyper <node_kind> <edge_kind> <n_nodes> <n_edges> <n_pairs>
//! <edge> <node>                      (n_pairs lines)
//! global <kind> <n_nodes> <epsilon> <top_n|-> <n_entries>
//! <node> <neighbor> <weight>         (n_entries lines)
//! item-price <n_items> <fallback_bin>
//! <item> <bin>                       (n_items lines)
//! ```

mod global;
mod hyper;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

pub use global::{build_global_graph, GlobalGraph};
pub use hyper::{build_hypergraph, HeteroHypergraph, NeighborLists};

use crate::data::{FeatureKind, FeatureVocabulary, PseudoSession};
use crate::error::{Error, Result};

pub const FORMAT_HEADER: &str = "# cohhgn graphs v1";

/// Feature types that get their own embedding branch.
pub const BRANCH_KINDS: [FeatureKind; 2] = [FeatureKind::Id, FeatureKind::Pri];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSet {
    /// Keyed by `(node_kind, edge_kind)`.
    pub hyper: BTreeMap<(FeatureKind, FeatureKind), HeteroHypergraph>,
    /// Truncated co-occurrence graph per branch kind.
    pub global: BTreeMap<FeatureKind, GlobalGraph>,
    /// Modal training price bin per item index.
    pub item_price: Vec<usize>,
    /// Modal price bin over all training records; used for items never seen.
    pub fallback_price: usize,
}

impl GraphSet {
    pub fn build(
        train: &[PseudoSession],
        vocab: &FeatureVocabulary,
        epsilon: usize,
        top_n: usize,
    ) -> Result<Self> {
        let mut hyper = BTreeMap::new();
        let mut global = BTreeMap::new();
        for node in BRANCH_KINDS {
            for edge in node.others() {
                hyper.insert((node, edge), build_hypergraph(train, vocab, node, edge)?);
            }
            let g = build_global_graph(train, node, vocab.size(node), epsilon)?;
            global.insert(node, g.truncated(top_n));
        }
        let (item_price, fallback_price) = modal_prices(train, vocab)?;
        Ok(Self {
            hyper,
            global,
            item_price,
            fallback_price,
        })
    }

    pub fn hypergraph(&self, node: FeatureKind, edge: FeatureKind) -> Result<&HeteroHypergraph> {
        self.hyper
            .get(&(node, edge))
            .ok_or_else(|| Error::Contract(format!("no {node}/{edge} hypergraph in graph set")))
    }

    pub fn global_graph(&self, kind: FeatureKind) -> Result<&GlobalGraph> {
        self.global
            .get(&kind)
            .ok_or_else(|| Error::Contract(format!("no {kind} global graph in graph set")))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{FORMAT_HEADER}")?;
        for g in self.hyper.values() {
            let n_pairs: usize = g.incidence.iter().map(Vec::len).sum();
            writeln!(
                w,
                "hyper {} {} {} {} {n_pairs}",
                g.node_kind,
                g.edge_kind,
                g.n_nodes,
                g.n_edges()
            )?;
            for (e, nodes) in g.incidence.iter().enumerate() {
                for v in nodes {
                    writeln!(w, "{e} {v}")?;
                }
            }
        }
        for g in self.global.values() {
            let top = g.top_n.map_or("-".to_string(), |n| n.to_string());
            writeln!(w, "global {} {} {} {top} {}", g.kind, g.n_nodes, g.epsilon, g.n_edges())?;
            for (a, list) in g.adjacency.iter().enumerate() {
                for (b, weight) in list {
                    writeln!(w, "{a} {b} {weight}")?;
                }
            }
        }
        writeln!(w, "item-price {} {}", self.item_price.len(), self.fallback_price)?;
        for (i, b) in self.item_price.iter().enumerate() {
            writeln!(w, "{i} {b}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(source: R) -> Result<Self> {
        let mut lines = Lines {
            inner: BufReader::new(source).lines(),
            line: 0,
        };
        match lines.next_line()? {
            Some(h) if h.trim() == FORMAT_HEADER => {}
            other => {
                return Err(Error::Format(format!(
                    "expected header {FORMAT_HEADER:?}, found {:?}",
                    other.unwrap_or_default()
                )))
            }
        }
        let mut hyper = BTreeMap::new();
        let mut global = BTreeMap::new();
        let mut item_price = None;
        while let Some(line) = lines.next_line()? {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => continue,
                ["hyper", node, edge, n_nodes, n_edges, n_pairs] => {
                    let node: FeatureKind = node.parse()?;
                    let edge: FeatureKind = edge.parse()?;
                    let n_nodes = lines.num(n_nodes)?;
                    let mut incidence = vec![Vec::new(); lines.num(n_edges)?];
                    for _ in 0..lines.num(n_pairs)? {
                        let [e, v] = lines.record::<2>()?;
                        let e = e as usize;
                        if e >= incidence.len() || v as usize >= n_nodes {
                            return Err(lines.error("incidence pair out of range"));
                        }
                        incidence[e].push(v as usize);
                    }
                    for list in &mut incidence {
                        list.sort_unstable();
                    }
                    let g = HeteroHypergraph {
                        node_kind: node,
                        edge_kind: edge,
                        n_nodes,
                        incidence,
                    };
                    hyper.insert((node, edge), g);
                }
                ["global", kind, n_nodes, epsilon, top_n, n_entries] => {
                    let kind: FeatureKind = kind.parse()?;
                    let n_nodes = lines.num(n_nodes)?;
                    let epsilon = lines.num(epsilon)?;
                    let top_n = if *top_n == "-" { None } else { Some(lines.num(top_n)?) };
                    let mut adjacency = vec![Vec::new(); n_nodes];
                    for _ in 0..lines.num(n_entries)? {
                        let [a, b, wt] = lines.record::<3>()?;
                        if a as usize >= n_nodes || b as usize >= n_nodes || wt == 0 {
                            return Err(lines.error("adjacency entry out of range"));
                        }
                        adjacency[a as usize].push((b as usize, wt as u32));
                    }
                    for list in &mut adjacency {
                        list.sort_unstable();
                    }
                    let g = GlobalGraph {
                        kind,
                        n_nodes,
                        epsilon,
                        top_n,
                        adjacency,
                    };
                    global.insert(kind, g);
                }
                ["item-price", n_items, fallback] => {
                    let n = lines.num(n_items)?;
                    let fallback = lines.num(fallback)?;
                    let mut prices = vec![fallback; n];
                    for _ in 0..n {
                        let [i, b] = lines.record::<2>()?;
                        let slot = prices
                            .get_mut(i as usize)
                            .ok_or_else(|| lines.error("item index out of range"))?;
                        *slot = b as usize;
                    }
                    item_price = Some((prices, fallback));
                }
                _ => return Err(lines.error(&format!("unrecognised section line {line:?}"))),
            }
        }
        let (item_price, fallback_price) =
            item_price.ok_or_else(|| Error::Format("missing item-price section".into()))?;
        Ok(Self {
            hyper,
            global,
            item_price,
            fallback_price,
        })
    }
}

struct Lines<B: BufRead> {
    inner: std::io::Lines<B>,
    line: usize,
}

impl<B: BufRead> Lines<B> {
    fn next_line(&mut self) -> Result<Option<String>> {
        self.line += 1;
        Ok(self.inner.next().transpose()?)
    }

    fn error(&self, msg: &str) -> Error {
        Error::Format(format!("graph file line {}: {msg}", self.line))
    }

    fn num(&self, field: &str) -> Result<usize> {
        field
            .parse()
            .map_err(|_| self.error(&format!("expected a count, found {field:?}")))
    }

    fn record<const N: usize>(&mut self) -> Result<[u64; N]> {
        let line = self
            .next_line()?
            .ok_or_else(|| self.error("unexpected end of file"))?;
        let mut out = [0u64; N];
        let mut fields = line.split_whitespace();
        for slot in &mut out {
            *slot = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| self.error(&format!("expected {N} integers")))?;
        }
        if fields.next().is_some() {
            return Err(self.error(&format!("expected {N} integers")));
        }
        Ok(out)
    }
}

/// Most frequent price bin per item over training records (ties to the lower
/// bin) and the overall modal bin.
fn modal_prices(train: &[PseudoSession], vocab: &FeatureVocabulary) -> Result<(Vec<usize>, usize)> {
    let n_bins = vocab.n_price_bins;
    let mut counts = vec![vec![0usize; n_bins]; vocab.size(FeatureKind::Id)];
    let mut overall = vec![0usize; n_bins];
    for s in train {
        for (&item, &bin) in s.items.iter().zip(&s.prices) {
            if item >= counts.len() || bin >= n_bins {
                return Err(Error::Format(format!(
                    "session {}: index out of vocabulary range",
                    s.session_id
                )));
            }
            counts[item][bin] += 1;
            overall[bin] += 1;
        }
    }
    let argmax = |c: &[usize]| {
        c.iter()
            .enumerate()
            .fold((0, 0), |best, (i, &n)| if n > best.1 { (i, n) } else { best })
    };
    let fallback = argmax(&overall).0;
    let per_item = counts
        .iter()
        .map(|c| match argmax(c) {
            (_, 0) => fallback,
            (bin, _) => bin,
        })
        .collect();
    Ok((per_item, fallback))
}
