use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use cohhgn::data::{ingest, parse_records, write_records, FeatureKind, IngestConfig, Schema};
use cohhgn::evaluation::{evaluate, EvalReport, Markov, Popularity};
use cohhgn::graph::GraphSet;
use cohhgn::jsonl;
use cohhgn::model::gradcheck::{gradcheck, ToyInstance, DEFAULT_FLOOR};
use cohhgn::model::{Model, SessionInput};
use cohhgn::synthgen::{generate, SynthConfig};
use cohhgn::trainer::{train, TrainConfig};
use cohhgn::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::workdir::{
    DatasetMeta, RunManifest, Workdir, CHECKPOINT, DATASET, DATASET_FORMAT, GRAPHS, METRICS, REPORT_JSON,
    REPORT_TABLE, SPLITS,
};
use crate::{
    Cli, Command, EvaluateArgs, GradcheckArgs, GraphArgs, IngestArgs, RecommendArgs, SynthArgs, TrainArgs,
};

/// Optional tables of the TOML config file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    synth: SynthConfig,
    ingest: IngestConfig,
    train: TrainConfig,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    let dir = Workdir::new(cli.data_dir)?;
    match cli.command {
        Command::Synth(a) => synth(&dir, file.synth, a),
        Command::Ingest(a) => ingest_cmd(&dir, file.ingest, a),
        Command::BuildGraphs(a) => build_graphs(&dir, file.train, a),
        Command::Train(a) => train_cmd(&dir, file.train, a),
        Command::Evaluate(a) => evaluate_cmd(&dir, a),
        Command::Recommend(a) => recommend(&dir, a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn synth(dir: &Workdir, mut config: SynthConfig, a: SynthArgs) -> Result<()> {
    set(&mut config.n_sessions, a.sessions);
    set(&mut config.n_items, a.items);
    set(&mut config.n_patterns, a.patterns);
    set(&mut config.pattern_strength, a.pattern_strength);
    set(&mut config.mean_length, a.mean_length);
    set(&mut config.seed, a.seed);
    if a.items.is_some() && a.patterns.is_none() {
        config.n_patterns = config.n_items;
    }
    let records = generate(&config)?;
    let out = dir.resolve(&a.out);
    let mut w = dir.create(&out)?;
    write_records(&records, &mut w, &Schema::default())?;
    w.flush().map_err(|e| Error::file(&out, e))?;
    RunManifest::record(dir, "synth", &config, &[], &[&out])?;
    println!("wrote {} rows ({} sessions) to {}", records.len(), config.n_sessions, out.display());
    Ok(())
}

fn ingest_cmd(dir: &Workdir, mut config: IngestConfig, a: IngestArgs) -> Result<()> {
    set(&mut config.min_len, a.min_len);
    set(&mut config.min_freq, a.min_freq);
    set(&mut config.n_price_bins, a.price_bins);
    set(&mut config.train_week_max, a.train_week_max);
    set(&mut config.val_fraction, a.val_fraction);
    set(&mut config.seed, a.seed);
    let delimiter = u8::try_from(a.delimiter)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::Config(format!("delimiter `{}` is not a single ASCII character", a.delimiter)))?;
    let schema = Schema {
        delimiter,
        ..Schema::default()
    };
    let input = dir.resolve(&a.input);
    let records = parse_records(dir.open(&input)?, &schema)?;
    let data = ingest(&records, &config)?;

    let mut outputs = Vec::new();
    let mut counts = BTreeMap::new();
    for (name, part) in SPLITS.iter().zip([&data.split.train, &data.split.validation, &data.split.test]) {
        outputs.push(dir.write_split(name, part)?);
        counts.insert(name.to_string(), part.len());
    }
    counts.insert("records".into(), records.len());
    dir.write_dataset(&DatasetMeta {
        format: DATASET_FORMAT.into(),
        ingest: config.clone(),
        vocab: data.vocab.clone(),
        binner: data.binner.clone(),
        calendar: data.calendar.clone(),
        train_week_max: data.split.train_week_max,
        test_week_min: data.split.test_week_min,
        counts: counts.clone(),
    })?;
    let meta = dir.path(DATASET);
    let mut out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    out_refs.push(&meta);
    RunManifest::record(dir, "ingest", &(&config, schema), &[&input], &out_refs)?;
    println!(
        "{} records -> train {} / validation {} / test {} sessions, {} items",
        records.len(),
        counts["train"],
        counts["validation"],
        counts["test"],
        data.vocab.size(FeatureKind::Id)
    );
    Ok(())
}

fn build_graphs(dir: &Workdir, mut config: TrainConfig, a: GraphArgs) -> Result<()> {
    set(&mut config.epsilon, a.epsilon);
    set(&mut config.top_n, a.top_n);
    if config.epsilon == 0 || config.top_n == 0 {
        return Err(Error::Config("epsilon and top-n must be positive".into()));
    }
    let meta = dir.read_dataset()?;
    let train = dir.read_split("train")?;
    let graphs = GraphSet::build(&train, &meta.vocab, config.epsilon, config.top_n)?;
    let out = dir.path(GRAPHS);
    let mut w = dir.create(&out)?;
    graphs.write(&mut w)?;
    w.flush().map_err(|e| Error::file(&out, e))?;
    #[derive(Serialize)]
    struct GraphConfig {
        epsilon: usize,
        top_n: usize,
    }
    let cfg = GraphConfig {
        epsilon: config.epsilon,
        top_n: config.top_n,
    };
    let train_path = dir.path(&crate::workdir::sessions_file("train"));
    RunManifest::record(dir, "build-graphs", &cfg, &[&dir.path(DATASET), &train_path], &[&out])?;
    let edges: usize = graphs.global.values().map(|g| g.n_edges()).sum();
    println!(
        "{} hypergraphs, {} co-occurrence edges kept (epsilon {}, top-n {})",
        graphs.hyper.len(),
        edges,
        config.epsilon,
        config.top_n
    );
    Ok(())
}

fn resolve_train_config(mut c: TrainConfig, a: &TrainArgs) -> TrainConfig {
    set(&mut c.epochs, a.epochs);
    set(&mut c.batch_size, a.batch_size);
    set(&mut c.lr, a.lr);
    set(&mut c.lr_decay, a.lr_decay);
    set(&mut c.lr_decay_every, a.lr_decay_every);
    set(&mut c.l2_coeff, a.l2);
    set(&mut c.seed, a.seed);
    set(&mut c.layers, a.layers);
    set(&mut c.dropout, a.dropout);
    set(&mut c.d, a.d);
    set(&mut c.epsilon, a.epsilon);
    set(&mut c.heads, a.heads);
    set(&mut c.n_price_bins, a.price_bins);
    set(&mut c.top_n, a.top_n);
    set(&mut c.week_dim, a.week_dim);
    set(&mut c.shards, a.shards);
    c
}

/// The graphs and vocabulary on disk must match the training settings.
fn check_artifacts(meta: &DatasetMeta, graphs: &GraphSet, c: &TrainConfig) -> Result<()> {
    if meta.vocab.n_price_bins != c.n_price_bins {
        return Err(Error::Config(format!(
            "dataset was ingested with {} price bins but training asks for {}",
            meta.vocab.n_price_bins, c.n_price_bins
        )));
    }
    for g in graphs.global.values() {
        if g.epsilon != c.epsilon || g.top_n != Some(c.top_n) {
            return Err(Error::Config(format!(
                "graphs were built with epsilon {} and top-n {:?}; training asks for {} and {}",
                g.epsilon, g.top_n, c.epsilon, c.top_n
            )));
        }
    }
    Ok(())
}

fn train_cmd(dir: &Workdir, file: TrainConfig, a: TrainArgs) -> Result<()> {
    let config = resolve_train_config(file, &a);
    config.validate()?;
    let meta = dir.read_dataset()?;
    let graphs = dir.read_graphs()?;
    check_artifacts(&meta, &graphs, &config)?;
    let split = cohhgn::data::DatasetSplit {
        train: dir.read_split("train")?,
        validation: dir.read_split("validation")?,
        test: Vec::new(),
        train_week_max: meta.train_week_max,
        test_week_min: meta.test_week_min,
    };
    let out = train(&split, &meta.vocab, &graphs, &config)?;

    let ckpt = dir.path(CHECKPOINT);
    let mut w = dir.create(&ckpt)?;
    out.best.save(&mut w)?;
    w.flush().map_err(|e| Error::file(&ckpt, e))?;
    let metrics = dir.path(METRICS);
    let mut w = dir.create(&metrics)?;
    jsonl::write(&out.log, &mut w)?;
    w.flush().map_err(|e| Error::file(&metrics, e))?;

    let inputs = [
        dir.path(DATASET),
        dir.path(GRAPHS),
        dir.path(&crate::workdir::sessions_file("train")),
        dir.path(&crate::workdir::sessions_file("validation")),
    ];
    let in_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    RunManifest::record(dir, "train", &config, &in_refs, &[&ckpt, &metrics])?;
    for r in &out.log {
        match r.m_at_20 {
            Some(m) => println!("epoch {:>3} {:<10} loss {:.4}  M@20 {m:.2}", r.epoch, r.split, r.loss),
            None => println!("epoch {:>3} {:<10} loss {:.4}  lr {:e}", r.epoch, r.split, r.loss, r.lr),
        }
    }
    println!("best epoch {} saved to {}", out.best_epoch, ckpt.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    split: &'a str,
    checkpoints: Vec<String>,
    model: &'a EvalReport,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    baselines: BTreeMap<&'static str, EvalReport>,
}

fn evaluate_cmd(dir: &Workdir, a: EvaluateArgs) -> Result<()> {
    if !SPLITS.contains(&a.split.as_str()) {
        return Err(Error::Config(format!("unknown split `{}`; use train, validation or test", a.split)));
    }
    let graphs = dir.read_graphs()?;
    let sessions = dir.read_split(&a.split)?;
    let mut runs = Vec::new();
    let ckpts: Vec<PathBuf> = a.checkpoint.iter().map(|p| dir.resolve(p)).collect();
    for path in &ckpts {
        let model = Model::new(dir.read_checkpoint(path)?, &graphs)?;
        runs.push(evaluate(&model, &sessions, &a.k)?);
    }
    let report = EvalReport::mean(&runs)?;
    let mut baselines = BTreeMap::new();
    if a.baselines {
        let train = dir.read_split("train")?;
        let n = graphs.item_price.len();
        baselines.insert("popularity", evaluate(&Popularity::fit(&train, n), &sessions, &a.k)?);
        baselines.insert("markov", evaluate(&Markov::fit(&train, n), &sessions, &a.k)?);
    }

    let mut table = format!("model ({} run(s), split {})\n{}", report.n_runs, a.split, report.table());
    for (name, r) in &baselines {
        table.push_str(&format!("{name}\n{}", r.table()));
    }
    let file = ReportFile {
        split: &a.split,
        checkpoints: ckpts.iter().map(|p| rel(dir, p)).collect(),
        model: &report,
        baselines,
    };
    let json_path = dir.path(REPORT_JSON);
    let table_path = dir.path(REPORT_TABLE);
    dir.write_string(&json_path, &(serde_json::to_string_pretty(&file)? + "\n"))?;
    dir.write_string(&table_path, &table)?;

    #[derive(Serialize)]
    struct EvalConfig<'a> {
        split: &'a str,
        k: &'a [usize],
        baselines: bool,
    }
    let mut inputs = vec![dir.path(GRAPHS), dir.path(&crate::workdir::sessions_file(&a.split))];
    inputs.extend(ckpts.iter().cloned());
    let in_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let cfg = EvalConfig {
        split: &a.split,
        k: &a.k,
        baselines: a.baselines,
    };
    RunManifest::record(dir, "evaluate", &cfg, &in_refs, &[&json_path, &table_path])?;
    print!("{table}");
    Ok(())
}

fn rel(dir: &Workdir, p: &Path) -> String {
    p.strip_prefix(&dir.root).unwrap_or(p).display().to_string()
}

fn recommend(dir: &Workdir, a: RecommendArgs) -> Result<()> {
    let meta = dir.read_dataset()?;
    let graphs = dir.read_graphs()?;
    let model = Model::new(dir.read_checkpoint(&dir.resolve(&a.checkpoint))?, &graphs)?;
    let vocab = &meta.vocab;

    let mut items = Vec::with_capacity(a.items.len());
    for name in &a.items {
        let idx = vocab
            .items
            .encode(name)
            .ok_or_else(|| Error::Domain(format!("item `{name}` cannot be encoded")))?;
        if idx == 0 {
            eprintln!("note: item `{name}` is not in the vocabulary and is treated as unknown");
        }
        items.push(idx);
    }
    let prices = match &a.prices {
        Some(p) if p.len() != items.len() => {
            return Err(Error::Config(format!("{} prices given for {} items", p.len(), items.len())));
        }
        Some(p) => p.iter().map(|&x| meta.binner.bin(x)).collect::<Result<Vec<_>>>()?,
        None => items.iter().map(|&i| model.item_price()[i]).collect(),
    };
    let week = a.week.unwrap_or(meta.test_week_min);
    let sale_flags = meta.calendar.flags(week);
    let attr_flags = vocab.attr_flags(&a.gender, &a.region);
    let input = SessionInput {
        items: &items,
        prices: &prices,
        week,
        sale_flags: &sale_flags,
        attr_flags: &attr_flags,
    };
    let probs = model.predict(&[input])?.remove(0);

    // The unknown slot is never a useful suggestion.
    let mut order: Vec<usize> = (1..probs.len()).collect();
    order.sort_by(|&x, &y| probs[y].total_cmp(&probs[x]).then(x.cmp(&y)));
    if a.k == 0 || a.k > order.len() {
        return Err(Error::Config(format!("k must lie in 1..={}", order.len())));
    }
    for &i in order.iter().take(a.k) {
        let name = vocab.items.value(i).unwrap_or("?");
        println!("{name}\t{:.6}", probs[i]);
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let toy = ToyInstance::new(a.seed)?;
    let mut model = toy.model()?;
    let batch: Vec<_> = toy.sessions.iter().take(3).collect();
    let report = gradcheck(&mut model, &batch, a.step, a.tolerance, DEFAULT_FLOOR)?;
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Gradcheck(format!(
            "max relative error {:.3e} exceeds {:.0e}",
            report.max_rel_error(),
            a.tolerance
        )))
    }
}
