//! Independent reference implementations used by the integration tests.
//! Everything here works on plain nested vectors and loops, sharing no code
//! with the tape-based model beyond reading parameters and graph files.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use cohhgn::data::{FeatureKind, PseudoSession};
use cohhgn::graph::GraphSet;
use cohhgn::model::{ModelParams, SessionInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn mat(params: &ModelParams, name: &str) -> Mat {
    let t = params.get(name);
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn vec_of(params: &ModelParams, name: &str) -> Vec<f64> {
    params.get(name).data().to_vec()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn apply(w: &Mat, x: &[f64]) -> Vec<f64> {
    w.iter().map(|row| dot(row, x)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    if z.is_empty() {
        return Vec::new();
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = a.to_vec();
    out.extend_from_slice(b);
    out
}

fn other_kinds(kind: FeatureKind) -> [FeatureKind; 3] {
    match kind {
        FeatureKind::Id => [FeatureKind::Pri, FeatureKind::Lrg, FeatureKind::Mid],
        _ => [FeatureKind::Id, FeatureKind::Lrg, FeatureKind::Mid],
    }
}

fn tag(kind: FeatureKind) -> &'static str {
    match kind {
        FeatureKind::Id => "id",
        FeatureKind::Pri => "pri",
        FeatureKind::Lrg => "lrg",
        FeatureKind::Mid => "mid",
    }
}

/// Neighbourhoods straight from the incidence lists: nodes sharing an edge, plus self.
fn hyper_neighbourhoods(graphs: &GraphSet, node: FeatureKind, edge: FeatureKind) -> Vec<Vec<usize>> {
    let g = &graphs.hyper[&(node, edge)];
    (0..g.n_nodes)
        .map(|v| {
            let mut set = BTreeSet::from([v]);
            for members in &g.incidence {
                if members.contains(&v) {
                    set.extend(members.iter().copied());
                }
            }
            set.into_iter().collect()
        })
        .collect()
}

fn hyper_branch(params: &ModelParams, graphs: &GraphSet, kind: FeatureKind) -> Mat {
    let t = tag(kind);
    let mut h = mat(params, &format!("emb.{t}"));
    let u = vec_of(params, &format!("u.{t}"));
    let w_self = mat(params, &format!("W.{t}"));
    let others = other_kinds(kind);
    let neigh: Vec<Vec<Vec<usize>>> = others.iter().map(|&e| hyper_neighbourhoods(graphs, kind, e)).collect();
    let w_types: Vec<Mat> = others.iter().map(|&e| mat(params, &format!("W.{t}.{}", tag(e)))).collect();
    for _ in 0..params.config.layers {
        let n = h.len();
        let d = h[0].len();
        let mut next = vec![vec![0.0; d]; n];
        for i in 0..n {
            let mut cands = vec![h[i].clone()];
            for nb in &neigh {
                let scores: Vec<f64> = nb[i].iter().map(|&j| dot(&u, &h[j])).collect();
                let alpha = softmax(&scores);
                let mut m = vec![0.0; d];
                for (a, &j) in alpha.iter().zip(&nb[i]) {
                    for k in 0..d {
                        m[k] += a * h[j][k];
                    }
                }
                cands.push(m);
            }
            let mut z = vec![apply(&w_self, &cands[0])];
            for c in 0..3 {
                z.push(apply(&w_types[c], &cands[c + 1]));
            }
            for k in 0..d {
                let col: Vec<f64> = z.iter().map(|zc| zc[k]).collect();
                let a = softmax(&col);
                next[i][k] = (0..4).map(|c| a[c] * cands[c][k]).sum();
            }
        }
        h = next;
    }
    h
}

fn global_branch(params: &ModelParams, graphs: &GraphSet, kind: FeatureKind, seq: &[usize]) -> Mat {
    let t = tag(kind);
    let mut g = mat(params, &format!("emb.{t}"));
    let w1 = mat(params, "W_1");
    let q = vec_of(params, "q");
    let w2 = mat(params, "W_2");
    let adjacency = &graphs.global[&kind].adjacency;
    for _ in 0..params.config.layers {
        let n = g.len();
        let d = g[0].len();
        let mut s_bar = vec![0.0; d];
        for &i in seq {
            for k in 0..d {
                s_bar[k] += g[i][k] / seq.len() as f64;
            }
        }
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let scores: Vec<f64> = adjacency[i]
                .iter()
                .map(|&(j, w)| {
                    let mut x: Vec<f64> = (0..d).map(|k| s_bar[k] * g[j][k]).collect();
                    x.push(f64::from(w));
                    let pre: Vec<f64> = apply(&w1, &x)
                        .into_iter()
                        .map(|v| if v > 0.0 { v } else { 0.01 * v })
                        .collect();
                    dot(&q, &pre)
                })
                .collect();
            let pi = softmax(&scores);
            let mut hn = vec![0.0; d];
            for (p, &(j, _)) in pi.iter().zip(&adjacency[i]) {
                for k in 0..d {
                    hn[k] += p * g[j][k];
                }
            }
            let out: Vec<f64> = apply(&w2, &concat(&g[i], &hn)).into_iter().map(|v| v.max(0.0)).collect();
            next.push(out);
        }
        g = next;
    }
    g
}

fn gate(params: &ModelParams, hyper: &Mat, global: &Mat) -> Mat {
    let w3 = mat(params, "W_3");
    let w4 = mat(params, "W_4");
    hyper
        .iter()
        .zip(global)
        .map(|(h, g)| {
            let a = apply(&w3, h);
            let b = apply(&w4, g);
            (0..h.len())
                .map(|k| {
                    let s = sigmoid(a[k] + b[k]);
                    s * h[k] + (1.0 - s) * g[k]
                })
                .collect()
        })
        .collect()
}

fn position(i: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for k in 0..d / 2 {
        let a = i as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
        out[2 * k] = a.sin();
        out[2 * k + 1] = a.cos();
    }
    out
}

fn week(m: u32, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for k in 1..=c / 2 {
        let a = 2.0 * PI * f64::from(m) / (52.0 * k as f64);
        out[2 * k - 2] = a.sin();
        out[2 * k - 1] = a.cos();
    }
    out
}

/// Next-item distribution for one session prefix, computed loop by loop.
pub fn forward_oracle(params: &ModelParams, graphs: &GraphSet, s: &SessionInput<'_>) -> Vec<f64> {
    let c = &params.config;
    let d = c.d;
    let h_id = gate(
        params,
        &hyper_branch(params, graphs, FeatureKind::Id),
        &global_branch(params, graphs, FeatureKind::Id, s.items),
    );
    let h_pri = gate(
        params,
        &hyper_branch(params, graphs, FeatureKind::Pri),
        &global_branch(params, graphs, FeatureKind::Pri, s.prices),
    );

    let n = s.items.len();
    let w5 = mat(params, "W_5");
    let w6 = mat(params, "W_6");
    let w7 = mat(params, "W_7");
    let b1 = vec_of(params, "b_1");
    let mut sale_time: Vec<f64> = s.sale_flags.iter().map(|&f| f64::from(f)).collect();
    sale_time.extend(week(s.week, c.week_dim));
    let x_type: Vec<f64> = s.attr_flags.iter().map(|&f| f64::from(f)).collect();
    let shared: Vec<f64> = {
        let a = apply(&w6, &sale_time);
        let b = apply(&w7, &x_type);
        (0..d).map(|k| a[k] + b[k] + b1[k]).collect()
    };
    let hs: Mat = s.items.iter().map(|&i| h_id[i].clone()).collect();
    let v: Mat = (0..n)
        .map(|i| {
            let a = apply(&w5, &concat(&hs[i], &position(i + 1, d)));
            (0..d).map(|k| (a[k] + shared[k]).tanh()).collect()
        })
        .collect();
    let v_bar: Vec<f64> = (0..d).map(|k| v.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
    let w8 = mat(params, "W_8");
    let w9 = mat(params, "W_9");
    let b2 = vec_of(params, "b_2");
    let u = vec_of(params, "u");
    let common = apply(&w9, &v_bar);
    let mut i_hat = vec![0.0; d];
    for i in 0..n {
        let a = apply(&w8, &v[i]);
        let sig: Vec<f64> = (0..d).map(|k| sigmoid(a[k] + common[k] + b2[k])).collect();
        let beta = dot(&u, &sig);
        for k in 0..d {
            i_hat[k] += beta * hs[i][k];
        }
    }

    let e: Mat = s.prices.iter().map(|&p| h_pri[p].clone()).collect();
    let mut p_hat = Vec::with_capacity(d);
    for head in 1..=c.heads {
        let wq = mat(params, &format!("W_Q.{head}"));
        let wk = mat(params, &format!("W_K.{head}"));
        let wv = mat(params, &format!("W_V.{head}"));
        let dh = wq.len() as f64;
        let query = apply(&wq, &e[n - 1]);
        let scores: Vec<f64> = e.iter().map(|x| dot(&query, &apply(&wk, x)) / dh.sqrt()).collect();
        let att = softmax(&scores);
        let mut out = vec![0.0; wq.len()];
        for (a, x) in att.iter().zip(&e) {
            let val = apply(&wv, x);
            for k in 0..out.len() {
                out[k] += a * val[k];
            }
        }
        p_hat.extend(out);
    }

    let joint = concat(&i_hat, &p_hat);
    let ga = apply(&mat(params, "W_a"), &joint);
    let gb = apply(&mat(params, "W_b"), &joint);
    let tc = apply(&mat(params, "W_c"), &p_hat);
    let td = apply(&mat(params, "W_d"), &i_hat);
    let mut pref_i = vec![0.0; d];
    let mut pref_p = vec![0.0; d];
    for k in 0..d {
        let gi = sigmoid(ga[k]);
        let gp = sigmoid(gb[k]);
        pref_i[k] = gi * i_hat[k] + (1.0 - gi) * tc[k].tanh();
        pref_p[k] = gp * p_hat[k] + (1.0 - gp) * td[k].tanh();
    }
    let logits: Vec<f64> = (0..c.n_items)
        .map(|j| dot(&pref_i, &h_id[j]) + dot(&pref_p, &h_pri[graphs.item_price[j]]))
        .collect();
    softmax(&logits)
}

/// Random encoded sessions with functional item attributes, for graph tests.
pub fn random_sessions(n: usize, n_items: usize, seed: u64) -> Vec<PseudoSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|sid| {
            let len = rng.random_range(1..=7);
            let items: Vec<usize> = (0..len).map(|_| rng.random_range(1..n_items)).collect();
            PseudoSession {
                session_id: sid,
                week: rng.random_range(1..=105),
                gender: "F".into(),
                region: "R1".into(),
                prices: items.iter().map(|i| i % 5).collect(),
                large_cats: items.iter().map(|i| 1 + i % 3).collect(),
                middle_cats: items.iter().map(|i| 1 + i % 7).collect(),
                items,
                sale_flags: vec![0, 0],
                attr_flags: vec![1, 1],
            }
        })
        .collect()
}

/// Co-occurrence weights by literal enumeration: session `b`, a position `c`
/// whose value also appears in another session `a`, and any window position
/// `j != c` with a different value. Each unordered position pair of `b` is
/// one event, counted once however many anchors reach it.
pub fn global_oracle(sessions: &[PseudoSession], kind: FeatureKind, epsilon: usize) -> BTreeMap<(usize, usize), u32> {
    let mut events: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    for (b, sb) in sessions.iter().enumerate() {
        let seq = sb.sequence(kind);
        for c in 0..seq.len() {
            let v = seq[c];
            let shared = sessions
                .iter()
                .enumerate()
                .any(|(a, sa)| a != b && sa.sequence(kind).contains(&v));
            if !shared {
                continue;
            }
            let lo = c.saturating_sub(epsilon);
            let hi = (c + epsilon).min(seq.len() - 1);
            for j in lo..=hi {
                if j != c && seq[j] != v {
                    events.insert((b, c.min(j), c.max(j)));
                }
            }
        }
    }
    let mut weights = BTreeMap::new();
    for (b, p, q) in events {
        let seq = sessions[b].sequence(kind);
        let (x, y) = (seq[p], seq[q]);
        *weights.entry((x, y)).or_insert(0) += 1;
        *weights.entry((y, x)).or_insert(0) += 1;
    }
    weights
}

/// Node/edge incidence by scanning every session position.
pub fn incidence_oracle(sessions: &[PseudoSession], node: FeatureKind, edge: FeatureKind) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for s in sessions {
        for p in 0..s.len() {
            out.insert((s.sequence(node)[p], s.sequence(edge)[p]));
        }
    }
    out
}
