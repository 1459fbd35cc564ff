//! The network's building blocks as tape expressions. Vectors are `1 × d`
//! rows and per-node quantities are stacked as rows, so `x.linear(W)` is the
//! row-wise `W x`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::NeighborLists;
use crate::tensor::{Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const PROB_CLAMP: f64 = 1e-12;

/// Attention-weighted mean over hyperedge neighbourhoods. The score of a
/// neighbour is `u . h_j`; neighbourhoods include the node itself.
pub fn intra_type_aggregate<'t>(h: Var<'t>, neighbors: &NeighborLists, u: Var<'t>) -> Result<Var<'t>> {
    let scores = h.linear(u)?.gather_rows(neighbors.indices.clone())?;
    let alpha = scores.segment_softmax(neighbors.offsets.clone())?;
    h.gather_rows(neighbors.indices.clone())?
        .mul_col(alpha)?
        .segment_sum(neighbors.offsets.clone())
}

/// Per-dimension softmax over four candidates (the previous embedding and
/// three intermediate ones), each scored through its own matrix.
pub fn inter_type_aggregate<'t>(
    h: Var<'t>,
    m: [Var<'t>; 3],
    w_self: Var<'t>,
    w_types: [Var<'t>; 3],
) -> Result<Var<'t>> {
    let cands = [h, m[0], m[1], m[2]];
    let weights = [w_self, w_types[0], w_types[1], w_types[2]];
    let mut z = Vec::with_capacity(4);
    for (c, w) in cands.iter().zip(weights) {
        z.push(c.linear(w)?);
    }
    // Shifting by a constant leaves the softmax and its gradient unchanged.
    let shift = {
        let mut m = z[0].value();
        for zj in &z[1..] {
            zj.with_value(|t| {
                m.data_mut()
                    .iter_mut()
                    .zip(t.data())
                    .for_each(|(a, &b)| *a = a.max(b))
            });
        }
        h.tape().constant(m)
    };
    let e: Vec<Var<'t>> = z
        .iter()
        .map(|zj| zj.sub(shift).map(Var::exp))
        .collect::<Result<_>>()?;
    let total = e[0].add(e[1])?.add(e[2])?.add(e[3])?;
    let mut out = e[0].div(total)?.mul(cands[0])?;
    for j in 1..4 {
        out = out.add(e[j].div(total)?.mul(cands[j])?)?;
    }
    Ok(out)
}

/// Neighbourhood embedding on the co-occurrence graph. `weights` is the
/// `n_edges × 1` column of edge weights aligned with `neighbors.indices`.
/// Scores are `q . LeakyReLU(W_1 [s * h_j ; w_ij])`.
pub fn global_propagate<'t>(
    g: Var<'t>,
    s_bar: Var<'t>,
    neighbors: &NeighborLists,
    weights: Var<'t>,
    w1: Var<'t>,
    q: Var<'t>,
) -> Result<Var<'t>> {
    let d = g.shape()[1];
    // W_1 [x ; w] = W_1[:, :d] x + W_1[:, d] w, split so the node part is
    // computed once per node rather than once per edge.
    let node_part = g.mul_row(s_bar)?.linear(w1.slice_cols(0, d)?)?;
    let edge_part = weights.linear(w1.slice_cols(d, 1)?)?;
    let pre = node_part
        .gather_rows(neighbors.indices.clone())?
        .add(edge_part)?
        .leaky_relu(LEAKY_SLOPE);
    let pi = pre.linear(q)?.segment_softmax(neighbors.offsets.clone())?;
    g.gather_rows(neighbors.indices.clone())?
        .mul_col(pi)?
        .segment_sum(neighbors.offsets.clone())
}

/// `ReLU(W_2 [h ; h_neigh])`.
pub fn global_aggregate<'t>(g: Var<'t>, neigh: Var<'t>, w2: Var<'t>) -> Result<Var<'t>> {
    Ok(Var::concat_cols(&[g, neigh])?.linear(w2)?.relu())
}

/// `g * h_hyper + (1 - g) * h_global` with `g = sigmoid(W_3 h_hyper + W_4 h_global)`.
pub fn gate_fuse<'t>(hyper: Var<'t>, global: Var<'t>, w3: Var<'t>, w4: Var<'t>) -> Result<Var<'t>> {
    let g = hyper.linear(w3)?.add(global.linear(w4)?)?.sigmoid();
    global.add(g.mul(hyper.sub(global)?)?)
}

/// `tanh(W_5 [h_i ; pos_i] + W_6 [x_sale ; pos_time] + W_7 x_type + b_1)` for
/// every session position at once.
#[allow(clippy::too_many_arguments)]
pub fn session_item_embedding<'t>(
    h: Var<'t>,
    pos: Var<'t>,
    sale_time: Var<'t>,
    x_type: Var<'t>,
    w5: Var<'t>,
    w6: Var<'t>,
    w7: Var<'t>,
    b1: Var<'t>,
) -> Result<Var<'t>> {
    let per_session = sale_time.linear(w6)?.add(x_type.linear(w7)?)?.add(b1)?;
    Ok(Var::concat_cols(&[h, pos])?
        .linear(w5)?
        .add_row(per_session)?
        .tanh())
}

/// `sum_i beta_i h_i` with raw scores `beta_i = u . sigmoid(W_8 v_i + W_9 v_bar + b_2)`.
pub fn item_preference<'t>(
    v: Var<'t>,
    h: Var<'t>,
    w8: Var<'t>,
    w9: Var<'t>,
    b2: Var<'t>,
    u: Var<'t>,
) -> Result<Var<'t>> {
    let shared = v.mean_rows()?.linear(w9)?.add(b2)?;
    let beta = v.linear(w8)?.add_row(shared)?.sigmoid().linear(u)?;
    beta.matmul_ex(h, true, false)
}

/// Multi-head scaled dot-product attention over the price sequence; only
/// the last position's output is needed.
pub fn price_preference<'t>(e: Var<'t>, wq: &[Var<'t>], wk: &[Var<'t>], wv: &[Var<'t>]) -> Result<Var<'t>> {
    let s = e.shape()[0];
    if s == 0 {
        return Err(Error::Contract("price attention over an empty sequence".into()));
    }
    let last = e.slice_rows(s - 1, 1)?;
    let mut heads = Vec::with_capacity(wq.len());
    for ((&q, &k), &v) in wq.iter().zip(wk).zip(wv) {
        let dh = q.shape()[0];
        let query = last.linear(q)?;
        let keys = e.linear(k)?;
        let values = e.linear(v)?;
        let att = query
            .matmul_ex(keys, false, true)?
            .scale(1.0 / (dh as f64).sqrt())
            .softmax_rows();
        heads.push(att.matmul(values)?);
    }
    Var::concat_cols(&heads)
}

/// Gated mutual refinement of the item and price preference vectors.
pub fn co_guided_transform<'t>(
    i_hat: Var<'t>,
    p_hat: Var<'t>,
    wa: Var<'t>,
    wb: Var<'t>,
    wc: Var<'t>,
    wd: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let joint = Var::concat_cols(&[i_hat, p_hat])?;
    let g_i = joint.linear(wa)?.sigmoid();
    let g_p = joint.linear(wb)?.sigmoid();
    let i = g_i.mul(i_hat)?.add(g_i.one_minus().mul(p_hat.linear(wc)?.tanh())?)?;
    let p = g_p.mul(p_hat)?.add(g_p.one_minus().mul(i_hat.linear(wd)?.tanh())?)?;
    Ok((i, p))
}

/// Logits `q_i = P . h_pri[price(i)] + I . h_id[i]` over all items, as `1 × n`.
pub fn score_items<'t>(i: Var<'t>, p: Var<'t>, h_id: Var<'t>, h_item_price: Var<'t>) -> Result<Var<'t>> {
    i.linear(h_id)?.add(p.linear(h_item_price)?)
}

/// Binary cross-entropy of a `1 × n` probability row against a one-hot label.
pub fn bce_loss<'t>(probs: Var<'t>, label: usize) -> Result<Var<'t>> {
    let n = probs.shape()[1];
    if label >= n {
        return Err(Error::Domain(format!("label {label} outside {n} items")));
    }
    let mut y = Tensor::zeros(1, n);
    y.data_mut()[label] = 1.0;
    let tape = probs.tape();
    let not_y = Tensor::row_vector(y.data().iter().map(|v| 1.0 - v).collect());
    let (y, not_y) = (tape.constant(y), tape.constant(not_y));
    let p = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let pos = p.ln().mul(y)?;
    let neg = p.one_minus().ln().mul(not_y)?;
    Ok(pos.add(neg)?.sum_all().scale(-1.0))
}

/// Inverted dropout: zeroes entries with probability `rate` and rescales the rest.
pub fn dropout<'t, R: Rng + ?Sized>(x: Var<'t>, rate: f64, rng: &mut R) -> Result<Var<'t>> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let [r, c] = x.shape();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..r * c)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    x.mul(x.tape().constant(Tensor::new(r, c, mask)?))
}
