//! The recommender network: hypergraph and co-occurrence branches per
//! feature type, gate fusion, session feature extraction and item scoring.

pub mod encoding;
pub mod gradcheck;
pub mod layers;
mod params;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use params::{ModelConfig, ModelParams, CHECKPOINT_MAGIC};

use crate::data::{FeatureKind, PseudoSession};
use crate::error::{Error, Result};
use crate::graph::{GraphSet, NeighborLists, BRANCH_KINDS};
use crate::tensor::{Tape, Tensor, Var};

/// Sessions scored per tape at inference time.
const PREDICT_CHUNK: usize = 32;

/// The model-facing part of a session: the observed prefix only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionInput<'a> {
    pub items: &'a [usize],
    pub prices: &'a [usize],
    pub week: u32,
    pub sale_flags: &'a [u8],
    pub attr_flags: &'a [u8],
}

impl<'a> SessionInput<'a> {
    /// Everything but the label position.
    pub fn prefix_of(s: &'a PseudoSession) -> Self {
        let n = s.input_len();
        Self {
            items: &s.items[..n],
            prices: &s.prices[..n],
            week: s.week,
            sale_flags: &s.sale_flags,
            attr_flags: &s.attr_flags,
        }
    }
}

/// Graph structure in the layout the layers consume.
#[derive(Debug, Clone)]
struct Prepared {
    hyper: BTreeMap<(FeatureKind, FeatureKind), NeighborLists>,
    global: BTreeMap<FeatureKind, (NeighborLists, Tensor)>,
    item_price: Arc<[usize]>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    prepared: Prepared,
}

/// Parameters bound to one tape.
struct Bound<'t> {
    vars: HashMap<&'static str, Var<'t>>,
    heads: Vec<[Var<'t>; 3]>,
    names: Vec<(String, Var<'t>)>,
}

impl<'t> Bound<'t> {
    fn new(tape: &'t Tape, params: &ModelParams, trainable: bool) -> Self {
        let mut by_name = BTreeMap::new();
        for (name, t) in params.iter() {
            by_name.insert(name.clone(), tape.leaf(t.clone(), trainable));
        }
        let mut vars = HashMap::new();
        for key in FIXED_NAMES {
            vars.insert(*key, by_name[*key]);
        }
        let heads = (1..=params.config.heads)
            .map(|i| {
                [
                    by_name[&format!("W_Q.{i}")],
                    by_name[&format!("W_K.{i}")],
                    by_name[&format!("W_V.{i}")],
                ]
            })
            .collect();
        Self {
            vars,
            heads,
            names: by_name.into_iter().collect(),
        }
    }

    fn get(&self, name: &str) -> Var<'t> {
        self.vars[name]
    }
}

const FIXED_NAMES: &[&str] = &[
    "emb.id", "emb.pri", "u.id", "u.pri", "W.id", "W.id.pri", "W.id.lrg", "W.id.mid", "W.pri",
    "W.pri.id", "W.pri.lrg", "W.pri.mid", "W_1", "q", "W_2", "W_3", "W_4", "W_5", "W_6", "W_7",
    "b_1", "W_8", "W_9", "b_2", "u", "W_a", "W_b", "W_c", "W_d",
];

fn emb_name(kind: FeatureKind) -> &'static str {
    match kind {
        FeatureKind::Id => "emb.id",
        _ => "emb.pri",
    }
}

fn attention_name(kind: FeatureKind) -> &'static str {
    match kind {
        FeatureKind::Id => "u.id",
        _ => "u.pri",
    }
}

fn self_weight_name(kind: FeatureKind) -> &'static str {
    match kind {
        FeatureKind::Id => "W.id",
        _ => "W.pri",
    }
}

fn type_weight_name(node: FeatureKind, edge: FeatureKind) -> &'static str {
    match (node, edge) {
        (FeatureKind::Id, FeatureKind::Pri) => "W.id.pri",
        (FeatureKind::Id, FeatureKind::Lrg) => "W.id.lrg",
        (FeatureKind::Id, _) => "W.id.mid",
        (_, FeatureKind::Id) => "W.pri.id",
        (_, FeatureKind::Lrg) => "W.pri.lrg",
        _ => "W.pri.mid",
    }
}

impl Model {
    pub fn new(params: ModelParams, graphs: &GraphSet) -> Result<Self> {
        let c = &params.config;
        let mut hyper = BTreeMap::new();
        let mut global = BTreeMap::new();
        for node in BRANCH_KINDS {
            let n = if node == FeatureKind::Id { c.n_items } else { c.n_prices };
            for edge in node.others() {
                let g = graphs.hypergraph(node, edge)?;
                if g.n_nodes != n {
                    return Err(Error::Config(format!(
                        "{node}/{edge} hypergraph has {} nodes but the model expects {n}",
                        g.n_nodes
                    )));
                }
                hyper.insert((node, edge), g.neighbor_lists());
            }
            let g = graphs.global_graph(node)?;
            if g.n_nodes != n {
                return Err(Error::Config(format!(
                    "{node} global graph has {} nodes but the model expects {n}",
                    g.n_nodes
                )));
            }
            let (lists, weights) = g.neighbor_lists();
            global.insert(node, (lists, Tensor::column_vector(weights)));
        }
        if graphs.item_price.len() != c.n_items {
            return Err(Error::Config(format!(
                "item-price map covers {} items but the model expects {}",
                graphs.item_price.len(),
                c.n_items
            )));
        }
        if let Some(bad) = graphs.item_price.iter().find(|&&b| b >= c.n_prices) {
            return Err(Error::Config(format!("item-price map refers to price bin {bad}")));
        }
        Ok(Self {
            params,
            prepared: Prepared {
                hyper,
                global,
                item_price: graphs.item_price.clone().into(),
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Canonical price bin used when scoring each item.
    pub fn item_price(&self) -> &[usize] {
        &self.prepared.item_price
    }

    fn check_input(&self, s: &SessionInput<'_>) -> Result<()> {
        let c = self.config();
        if s.items.is_empty() || s.items.len() != s.prices.len() {
            return Err(Error::Contract(format!(
                "session input needs matching non-empty item and price sequences, got {} and {}",
                s.items.len(),
                s.prices.len()
            )));
        }
        if let Some(bad) = s.items.iter().find(|&&i| i >= c.n_items) {
            return Err(Error::Domain(format!("item index {bad} outside {} items", c.n_items)));
        }
        if let Some(bad) = s.prices.iter().find(|&&p| p >= c.n_prices) {
            return Err(Error::Domain(format!("price bin {bad} outside {} bins", c.n_prices)));
        }
        if s.sale_flags.len() != c.d_sale || s.attr_flags.len() != c.d_type {
            return Err(Error::Contract(format!(
                "flag widths {}/{} do not match model {}/{}",
                s.sale_flags.len(),
                s.attr_flags.len(),
                c.d_sale,
                c.d_type
            )));
        }
        if s.week < 1 {
            return Err(Error::Domain("week must be at least 1".into()));
        }
        Ok(())
    }

    /// Hypergraph branch after `layers` iterations, for items then prices.
    fn hyper_branch<'t>(&self, p: &Bound<'t>, rng: &mut Option<&mut dyn RngCore>) -> Result<[Var<'t>; 2]> {
        let c = self.config();
        let mut out = Vec::with_capacity(2);
        for node in BRANCH_KINDS {
            let mut h = p.get(emb_name(node));
            let u = p.get(attention_name(node));
            let others = node.others();
            for _ in 0..c.layers {
                let mut m = Vec::with_capacity(3);
                for edge in others {
                    m.push(layers::intra_type_aggregate(h, &self.prepared.hyper[&(node, edge)], u)?);
                }
                let w_types = others.map(|e| p.get(type_weight_name(node, e)));
                h = layers::inter_type_aggregate(h, [m[0], m[1], m[2]], p.get(self_weight_name(node)), w_types)?;
                if let Some(r) = rng.as_deref_mut() {
                    h = layers::dropout(h, c.dropout, r)?;
                }
            }
            out.push(h);
        }
        Ok([out[0], out[1]])
    }

    /// Co-occurrence branch for one feature type, conditioned on the session's
    /// rows of that type.
    fn global_branch<'t>(
        &self,
        p: &Bound<'t>,
        kind: FeatureKind,
        seq: &[usize],
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var<'t>> {
        let c = self.config();
        let (lists, weights) = &self.prepared.global[&kind];
        let tape = p.get("W_1").tape();
        let weights = tape.constant(weights.clone());
        let seq: Arc<[usize]> = seq.into();
        let mut g = p.get(emb_name(kind));
        for _ in 0..c.layers {
            let s_bar = g.gather_rows(seq.clone())?.mean_rows()?;
            let neigh = layers::global_propagate(g, s_bar, lists, weights, p.get("W_1"), p.get("q"))?;
            g = layers::global_aggregate(g, neigh, p.get("W_2"))?;
            if let Some(r) = rng.as_deref_mut() {
                g = layers::dropout(g, c.dropout, r)?;
            }
        }
        Ok(g)
    }

    /// Probability row `1 × n_items` for one session.
    fn session_probs<'t>(
        &self,
        p: &Bound<'t>,
        hyper: [Var<'t>; 2],
        s: &SessionInput<'_>,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var<'t>> {
        let c = self.config();
        let tape = p.get("W_1").tape();
        let mut fused = Vec::with_capacity(2);
        for (k, kind) in BRANCH_KINDS.into_iter().enumerate() {
            let seq = if kind == FeatureKind::Id { s.items } else { s.prices };
            let g = self.global_branch(p, kind, seq, rng)?;
            fused.push(layers::gate_fuse(hyper[k], g, p.get("W_3"), p.get("W_4"))?);
        }
        let (h_id, h_pri) = (fused[0], fused[1]);

        let n = s.items.len();
        let items: Arc<[usize]> = s.items.into();
        let prices: Arc<[usize]> = s.prices.into();
        let h_session = h_id.gather_rows(items)?;
        let e_price = h_pri.gather_rows(prices)?;

        let pos: Vec<f64> = (1..=n).flat_map(|i| encoding::position_encoding(i, c.d)).collect();
        let pos = tape.constant(Tensor::new(n, c.d, pos)?);
        let mut sale_time: Vec<f64> = s.sale_flags.iter().map(|&b| f64::from(b)).collect();
        sale_time.extend(encoding::week_encoding(s.week, c.week_dim));
        let sale_time = tape.constant(Tensor::row_vector(sale_time));
        let x_type = tape.constant(Tensor::row_vector(s.attr_flags.iter().map(|&b| f64::from(b)).collect()));

        let v = layers::session_item_embedding(
            h_session,
            pos,
            sale_time,
            x_type,
            p.get("W_5"),
            p.get("W_6"),
            p.get("W_7"),
            p.get("b_1"),
        )?;
        let i_hat = layers::item_preference(v, h_session, p.get("W_8"), p.get("W_9"), p.get("b_2"), p.get("u"))?;
        let wq: Vec<Var<'t>> = p.heads.iter().map(|h| h[0]).collect();
        let wk: Vec<Var<'t>> = p.heads.iter().map(|h| h[1]).collect();
        let wv: Vec<Var<'t>> = p.heads.iter().map(|h| h[2]).collect();
        let p_hat = layers::price_preference(e_price, &wq, &wk, &wv)?;
        let (i, pr) = layers::co_guided_transform(i_hat, p_hat, p.get("W_a"), p.get("W_b"), p.get("W_c"), p.get("W_d"))?;
        let item_price = h_pri.gather_rows(self.prepared.item_price.clone())?;
        Ok(layers::score_items(i, pr, h_id, item_price)?.softmax_rows())
    }

    /// Next-item distributions, one `n_items` vector per session. Dropout is off.
    pub fn predict(&self, sessions: &[SessionInput<'_>]) -> Result<Vec<Vec<f64>>> {
        for s in sessions {
            self.check_input(s)?;
        }
        let mut out = Vec::with_capacity(sessions.len());
        for chunk in sessions.chunks(PREDICT_CHUNK) {
            let tape = Tape::new();
            let bound = Bound::new(&tape, &self.params, false);
            let mut none = None;
            let hyper = self.hyper_branch(&bound, &mut none)?;
            for s in chunk {
                let probs = self.session_probs(&bound, hyper, s, &mut none)?;
                out.push(probs.value().into_data());
            }
        }
        Ok(out)
    }

    /// Summed loss over `sessions`, forward only, dropout off.
    pub fn loss(&self, sessions: &[&PseudoSession]) -> Result<f64> {
        let tape = Tape::new();
        let bound = Bound::new(&tape, &self.params, false);
        let mut none = None;
        let hyper = self.hyper_branch(&bound, &mut none)?;
        let mut total = 0.0;
        for s in sessions {
            let input = SessionInput::prefix_of(s);
            self.check_input(&input)?;
            let probs = self.session_probs(&bound, hyper, &input, &mut none)?;
            total += layers::bce_loss(probs, s.label())?.scalar();
        }
        Ok(total)
    }

    /// `scale * sum of session losses` and its gradient for every parameter.
    /// With `dropout_seed` set, dropout masks are drawn from that stream.
    pub fn loss_and_grads(
        &self,
        sessions: &[&PseudoSession],
        scale: f64,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        if sessions.is_empty() {
            return Err(Error::Contract("loss over an empty batch".into()));
        }
        let tape = Tape::new();
        let bound = Bound::new(&tape, &self.params, true);
        let mut rng_store = dropout_seed
            .filter(|_| self.config().dropout > 0.0)
            .map(ChaCha8Rng::seed_from_u64);
        let mut rng: Option<&mut dyn RngCore> = rng_store.as_mut().map(|r| r as &mut dyn RngCore);
        let hyper = self.hyper_branch(&bound, &mut rng)?;
        let mut total: Option<Var<'_>> = None;
        for s in sessions {
            let input = SessionInput::prefix_of(s);
            self.check_input(&input)?;
            let probs = self.session_probs(&bound, hyper, &input, &mut rng)?;
            let l = layers::bce_loss(probs, s.label())?;
            total = Some(match total {
                None => l,
                Some(t) => t.add(l)?,
            });
        }
        let loss = total.expect("non-empty batch").scale(scale);
        let value = loss.scalar();
        let mut grads = tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, var) in &bound.names {
            let g = grads.take(*var).unwrap_or_else(|| {
                let [r, c] = self.params.get(name).shape();
                Tensor::zeros(r, c)
            });
            out.insert(name.clone(), g);
        }
        Ok((value, out))
    }

    /// Names of parameters that receive no gradient path from the loss.
    pub fn disconnected_params(&self, sessions: &[&PseudoSession]) -> Result<Vec<String>> {
        let tape = Tape::new();
        let bound = Bound::new(&tape, &self.params, true);
        let mut none = None;
        let hyper = self.hyper_branch(&bound, &mut none)?;
        let mut total: Option<Var<'_>> = None;
        for s in sessions {
            let input = SessionInput::prefix_of(s);
            let probs = self.session_probs(&bound, hyper, &input, &mut none)?;
            let l = layers::bce_loss(probs, s.label())?;
            total = Some(match total {
                None => l,
                Some(t) => t.add(l)?,
            });
        }
        let total = total.ok_or_else(|| Error::Contract("no sessions".into()))?;
        let grads = tape.backward(total)?;
        Ok(bound
            .names
            .iter()
            .filter(|(_, v)| grads.get(*v).is_none())
            .map(|(n, _)| n.clone())
            .collect())
    }
}
