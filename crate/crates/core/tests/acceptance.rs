//! End-to-end acceptance checks, one test per criterion. Each writes a
//! single `criterion N [PASS|FAIL]` line to stderr, bypassing output capture,
//! and the tests hold a shared lock so timed runs do not compete for cores.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use cohhgn::data::{
    filter_sessions, ingest, segment_sessions, FeatureKind, FeatureVocabulary, IngestConfig, PriceBinner,
    PseudoSession, RawRecord, Vocab,
};
use cohhgn::evaluation::{evaluate, mrr_at_k, precision_at_k, rank_of, EvalReport, Markov, Popularity};
use cohhgn::graph::{build_global_graph, build_hypergraph, GraphSet};
use cohhgn::model::encoding::week_encoding;
use cohhgn::model::gradcheck::{run_toy, ToyInstance};
use cohhgn::model::{Model, ModelParams, SessionInput};
use cohhgn::synthgen::{generate, SynthConfig};
use cohhgn::tensor::{Tape, Tensor};
use cohhgn::trainer::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static LOCK: Mutex<()> = Mutex::new(());

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n} [{verdict}] {detail}");
    assert!(pass, "criterion {n}: {detail}");
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn criterion_1_gradient_integrity() {
    let _g = serial();
    let start = Instant::now();
    let r = run_toy(0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = r.passed() && secs < 30.0;
    report(
        1,
        pass,
        &format!(
            "{} tensors, max rel err {:.2e} (tol 1e-4), {secs:.1}s (limit 30s)",
            r.params.len(),
            r.max_rel_error()
        ),
    );
}

#[test]
fn criterion_2_formula_oracle() {
    let _g = serial();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for seed in 1..=5u64 {
        let toy = ToyInstance::new(seed).unwrap();
        let mut config = toy.config.clone();
        config.layers = 1 + (seed as usize % 2);
        let params = ModelParams::init(config).unwrap();
        let model = Model::new(params.clone(), &toy.graphs).unwrap();
        let inputs: Vec<SessionInput<'_>> = toy.sessions.iter().map(SessionInput::prefix_of).collect();
        let got = model.predict(&inputs).unwrap();
        for (input, row) in inputs.iter().zip(&got) {
            let expect = common::forward_oracle(&params, &toy.graphs, input);
            for (a, b) in row.iter().zip(&expect) {
                worst = worst.max((a - b).abs());
                count += 1;
            }
        }
    }
    report(
        2,
        worst <= 1e-10,
        &format!("{count} probabilities over 5 batches, max abs diff {worst:.2e} (tol 1e-10)"),
    );
}

fn graph_vocab(n_items: usize) -> FeatureVocabulary {
    let open = |n: usize, p: &str| {
        let mut v = Vocab::open();
        for i in 1..n {
            v.insert(&format!("{p}{i}"));
        }
        v
    };
    let mut genders = Vocab::closed();
    genders.insert("F");
    let mut regions = Vocab::closed();
    regions.insert("R1");
    FeatureVocabulary {
        items: open(n_items, "i"),
        large: open(4, "L"),
        middle: open(8, "M"),
        n_price_bins: 5,
        genders,
        regions,
        n_sales: 2,
    }
}

#[test]
fn criterion_3_graph_oracles() {
    let _g = serial();
    let sessions = common::random_sessions(200, 30, 11);
    let vocab = graph_vocab(30);
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for node in FeatureKind::ALL {
        for edge in node.others() {
            let g = build_hypergraph(&sessions, &vocab, node, edge).unwrap();
            let got: BTreeSet<(usize, usize)> = g
                .incidence
                .iter()
                .enumerate()
                .flat_map(|(e, nodes)| nodes.iter().map(move |&v| (v, e)))
                .collect();
            let expect = common::incidence_oracle(&sessions, node, edge);
            if got != expect {
                mismatches.push(format!("{node}/{edge} incidence"));
            }
            let lists = g.neighbor_lists();
            for v in 0..g.n_nodes {
                let brute: Vec<usize> = (0..g.n_nodes)
                    .filter(|&u| u == v || expect.iter().any(|&(x, e)| x == v && expect.contains(&(u, e))))
                    .collect();
                if lists.of(v) != brute.as_slice() {
                    mismatches.push(format!("{node}/{edge} neighbours of {v}"));
                }
            }
            checked += 1;
        }
        for eps in [1, 2, 3, 12] {
            let g = build_global_graph(&sessions, node, vocab.size(node), eps).unwrap();
            let got: BTreeMap<(usize, usize), u32> = g
                .adjacency
                .iter()
                .enumerate()
                .flat_map(|(a, l)| l.iter().map(move |&(b, w)| ((a, b), w)))
                .collect();
            if got != common::global_oracle(&sessions, node, eps) {
                mismatches.push(format!("{node} global eps {eps}"));
            }
            checked += 1;
        }
    }
    report(
        3,
        mismatches.is_empty(),
        &format!("{checked} graphs on 200 sessions, mismatches: {mismatches:?}"),
    );
}

#[test]
fn criterion_4_metric_oracles() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100;
    let mut exact = true;
    for _ in 0..1000 {
        // Coarse values force plenty of ties.
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..40u32)) / 7.0).collect();
        let label = rng.random_range(0..n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let rank = order.iter().position(|&i| i == label).unwrap() + 1;
        for k in [1, 5, 10, 20, 100] {
            let p = if rank <= k { 1.0 } else { 0.0 };
            let m = if rank <= k { 1.0 / rank as f64 } else { 0.0 };
            exact &= precision_at_k(&scores, label, k) == p && mrr_at_k(&scores, label, k) == m;
        }
    }
    let ranks: Vec<usize> = (0..10_000)
        .map(|_| {
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            rank_of(&scores, rng.random_range(0..n))
        })
        .collect();
    let p10 = EvalReport::from_ranks(ranks, &[10]).unwrap().precision(10).unwrap();
    let expected = 100.0 * 10.0 / n as f64;
    report(
        4,
        exact && (p10 - expected).abs() <= 1.0,
        &format!("full-sort agreement {exact}, uniform P@10 {p10:.2} vs {expected:.2} +- 1"),
    );
}

#[test]
fn criterion_5_learning_signal() {
    let _g = serial();
    let start = Instant::now();
    let records = generate(&SynthConfig::default()).unwrap();
    let data = ingest(&records, &IngestConfig::default()).unwrap();
    let config = TrainConfig::default();
    let graphs = GraphSet::build(&data.split.train, &data.vocab, config.epsilon, config.top_n).unwrap();
    let out = train(&data.split, &data.vocab, &graphs, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let n_items = data.vocab.items.len();
    let model = Model::new(out.best, &graphs).unwrap();
    let ks = [10, 20];
    let ours = evaluate(&model, &data.split.test, &ks).unwrap();
    let pop = evaluate(&Popularity::fit(&data.split.train, n_items), &data.split.test, &ks).unwrap();
    let markov = evaluate(&Markov::fit(&data.split.train, n_items), &data.split.test, &ks).unwrap();
    let (p, pp, pm) = (
        ours.precision(10).unwrap(),
        pop.precision(10).unwrap(),
        markov.precision(10).unwrap(),
    );
    report(
        5,
        p >= pp + 15.0 && p >= pm - 2.0 && secs < 600.0,
        &format!(
            "P@10 model {p:.2}, popularity {pp:.2}, markov {pm:.2}; {} test sessions; {secs:.0}s (limit 600s)",
            data.split.test.len()
        ),
    );
}

#[test]
fn criterion_6_overfit() {
    let _g = serial();
    let synth = SynthConfig {
        // One session per week; the last week is held out.
        n_sessions: 21,
        week_max: 21,
        n_items: 12,
        n_patterns: 12,
        pattern_strength: 1.0,
        seed: 6,
        ..SynthConfig::default()
    };
    let ingest_config = IngestConfig {
        min_freq: 1,
        val_fraction: 0.0,
        train_week_max: synth.week_max - 1,
        ..IngestConfig::default()
    };
    let data = ingest(&generate(&synth).unwrap(), &ingest_config).unwrap();
    let config = TrainConfig {
        epochs: 200,
        batch_size: 20,
        lr: 0.01,
        lr_decay: 1.0,
        dropout: 0.0,
        ..TrainConfig::default()
    };
    let graphs = GraphSet::build(&data.split.train, &data.vocab, config.epsilon, config.top_n).unwrap();
    let out = train(&data.split, &data.vocab, &graphs, &config).unwrap();
    let model = Model::new(out.final_params, &graphs).unwrap();
    let train: Vec<&PseudoSession> = data.split.train.iter().collect();
    let loss = model.loss(&train).unwrap() / train.len() as f64;
    let p1 = evaluate(&model, &data.split.train, &[1]).unwrap().precision(1).unwrap();
    report(
        6,
        train.len() == 20 && loss < 0.05 && p1 == 100.0,
        &format!("{} sessions, final loss {loss:.2e} (< 0.05), train P@1 {p1:.1}", train.len()),
    );
}

/// One small pipeline run: checkpoint bytes, report JSON and metrics log.
fn pipeline_run(threads: usize) -> (Vec<u8>, String, String) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let synth = SynthConfig {
            n_sessions: 600,
            seed: 7,
            ..SynthConfig::default()
        };
        let data = ingest(&generate(&synth).unwrap(), &IngestConfig::default()).unwrap();
        let config = TrainConfig {
            epochs: 2,
            d: 32,
            seed: 7,
            ..TrainConfig::default()
        };
        let graphs = GraphSet::build(&data.split.train, &data.vocab, config.epsilon, config.top_n).unwrap();
        let out = train(&data.split, &data.vocab, &graphs, &config).unwrap();
        let mut ckpt = Vec::new();
        out.best.save(&mut ckpt).unwrap();
        let model = Model::new(out.best, &graphs).unwrap();
        let report = evaluate(&model, &data.split.test, &[10, 20]).unwrap().to_json().unwrap();
        let mut log = Vec::new();
        cohhgn::jsonl::write(&out.log, &mut log).unwrap();
        (ckpt, report, String::from_utf8(log).unwrap())
    })
}

#[test]
fn criterion_7_determinism() {
    let _g = serial();
    let a = pipeline_run(1);
    let b = pipeline_run(3);
    let same = a == b;
    report(
        7,
        same,
        &format!(
            "checkpoint {} bytes, report {} bytes, identical across runs (1 vs 3 threads): {same}",
            a.0.len(),
            a.1.len()
        ),
    );
}

/// Session boundaries by a plain run-length scan.
fn run_length_oracle(records: &[RawRecord]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let start = match i {
            0 => true,
            _ => {
                let p = &records[i - 1];
                p.gender != r.gender || p.region != r.region
            }
        };
        if start {
            out.push(Vec::new());
        }
        out.last_mut().unwrap().push(r.row_index);
    }
    out
}

fn noisy_records(seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut week = 1;
    (0..3000)
        .map(|row| {
            if rng.random_bool(0.1) {
                week = rng.random_range(1..=105);
            }
            // A long tail of rare items exercises the filter.
            let item = if rng.random_bool(0.7) {
                rng.random_range(0..40)
            } else {
                rng.random_range(40..400)
            };
            RawRecord {
                week,
                gender: ["F", "M"][rng.random_range(0..2)].into(),
                region: ["R1", "R2"][rng.random_range(0..2)].into(),
                price: (rng.random::<f64>() * 3.0 + 5.0).exp(),
                large_category: format!("L{}", item % 4),
                middle_category: format!("M{}", item % 9),
                small_category: format!("item{item}"),
                row_index: row,
            }
        })
        .collect()
}

#[test]
fn criterion_8_ingestion_fidelity() {
    let _g = serial();
    let mut corpora: Vec<Vec<RawRecord>> = (0..3)
        .map(|s| {
            generate(&SynthConfig {
                n_sessions: 2000,
                seed: s,
                ..SynthConfig::default()
            })
            .unwrap()
        })
        .collect();
    corpora.extend((0..3).map(noisy_records));

    let mut filter_ok = true;
    let mut segment_ok = true;
    for records in &corpora {
        let sessions = segment_sessions(records);
        let got: Vec<Vec<usize>> = sessions
            .iter()
            .map(|s| s.records.iter().map(|r| r.row_index).collect())
            .collect();
        segment_ok &= got == run_length_oracle(records);

        let kept = filter_sessions(sessions, 2, 10);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &kept {
            for r in &s.records {
                *counts.entry(&r.small_category).or_default() += 1;
            }
        }
        filter_ok &= kept.iter().all(|s| s.len() >= 2) && counts.values().all(|&c| c >= 10);
        if let Ok(data) = ingest(records, &IngestConfig::default()) {
            let all = data.split.train.iter().chain(&data.split.validation).chain(&data.split.test);
            filter_ok &= all.clone().all(|s| s.len() >= 2);
        }
    }

    let (mu, scale, n_bins) = (6.5, 0.8, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let prices: Vec<f64> = (0..100_000)
        .map(|_| {
            let u: f64 = rng.random_range(1e-12..1.0);
            (mu + scale * (u / (1.0 - u)).ln()).exp()
        })
        .collect();
    let binner = PriceBinner::fit(&prices, n_bins).unwrap();
    let mut mass = vec![0usize; n_bins];
    for &p in &prices {
        mass[binner.bin(p).unwrap()] += 1;
    }
    let worst = mass
        .iter()
        .map(|&m| (m as f64 / prices.len() as f64 - 1.0 / n_bins as f64).abs())
        .fold(0.0, f64::max);
    report(
        8,
        filter_ok && segment_ok && worst <= 0.02,
        &format!(
            "{} corpora: filter invariants {filter_ok}, run-length segmentation {segment_ok}; bin mass max deviation {worst:.4} (tol 0.02)",
            corpora.len()
        ),
    );
}

#[test]
fn criterion_9_encodings() {
    let _g = serial();
    let mut periodic = 0.0f64;
    for m in 1..=1000u32 {
        let a = week_encoding(m, 16);
        let b = week_encoding(m + 52, 16);
        periodic = periodic.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
    }

    let mut worst = 0.0f64;
    let mut rows = 0;
    for seed in 0..3 {
        let toy = ToyInstance::new(seed).unwrap();
        let model = toy.model().unwrap();
        let inputs: Vec<SessionInput<'_>> = toy.sessions.iter().map(SessionInput::prefix_of).collect();
        for row in model.predict(&inputs).unwrap() {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            rows += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tape = Tape::new();
    for scale in [1.0, 50.0, 700.0] {
        let data: Vec<f64> = (0..64 * 40).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
        let x = tape.constant(Tensor::new(64, 40, data).unwrap());
        let s = x.softmax_rows().value();
        for r in 0..s.rows() {
            worst = worst.max((s.row(r).iter().sum::<f64>() - 1.0).abs());
            rows += 1;
        }
    }
    report(
        9,
        periodic <= 1e-12 && worst <= 1e-9,
        &format!("week period max diff {periodic:.1e}; {rows} softmax rows, max |sum - 1| {worst:.1e}"),
    );
}
