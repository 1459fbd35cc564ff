//! File layout inside the data directory, the dataset descriptor and the
//! run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cohhgn::data::{
    read_sessions, write_sessions, FeatureVocabulary, IngestConfig, PriceBinner, PseudoSession, SaleCalendar,
};
use cohhgn::graph::GraphSet;
use cohhgn::model::ModelParams;
use cohhgn::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DATASET_FORMAT: &str = "cohhgn-dataset v1";
pub const MANIFEST_FORMAT: &str = "cohhgn-manifest v1";

pub const CORPUS: &str = "corpus.csv";
pub const DATASET: &str = "dataset.json";
pub const GRAPHS: &str = "graphs.txt";
pub const CHECKPOINT: &str = "model.ckpt";
pub const METRICS: &str = "metrics.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const MANIFEST: &str = "manifest.json";

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

pub fn sessions_file(split: &str) -> String {
    format!("sessions.{split}.jsonl")
}

/// Everything ingestion learned, stored next to the encoded sessions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub ingest: IngestConfig,
    pub vocab: FeatureVocabulary,
    pub binner: PriceBinner,
    pub calendar: SaleCalendar,
    pub train_week_max: u32,
    pub test_week_min: u32,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).map_err(|e| Error::file(&root, e))?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Resolves a user-supplied path against the data directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn open(&self, path: &Path) -> Result<BufReader<File>> {
        File::open(path)
            .map(BufReader::new)
            .map_err(|e| Error::file(path, e))
    }

    pub fn create(&self, path: &Path) -> Result<BufWriter<File>> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        File::create(path)
            .map(BufWriter::new)
            .map_err(|e| Error::file(path, e))
    }

    pub fn write_string(&self, path: &Path, text: &str) -> Result<()> {
        let mut w = self.create(path)?;
        w.write_all(text.as_bytes()).map_err(|e| Error::file(path, e))?;
        w.flush().map_err(|e| Error::file(path, e))
    }

    pub fn read_string(&self, path: &Path) -> Result<String> {
        fs::read_to_string(path).map_err(|e| Error::file(path, e))
    }

    pub fn read_dataset(&self) -> Result<DatasetMeta> {
        let path = self.path(DATASET);
        let meta: DatasetMeta = serde_json::from_str(&self.read_string(&path)?)?;
        if meta.format != DATASET_FORMAT {
            return Err(Error::Format(format!(
                "{}: expected `{DATASET_FORMAT}`, found `{}`",
                path.display(),
                meta.format
            )));
        }
        Ok(meta)
    }

    pub fn write_dataset(&self, meta: &DatasetMeta) -> Result<()> {
        self.write_string(&self.path(DATASET), &(serde_json::to_string_pretty(meta)? + "\n"))
    }

    pub fn read_split(&self, split: &str) -> Result<Vec<PseudoSession>> {
        let path = self.path(&sessions_file(split));
        read_sessions(self.open(&path)?).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write_split(&self, split: &str, sessions: &[PseudoSession]) -> Result<PathBuf> {
        let path = self.path(&sessions_file(split));
        let mut w = self.create(&path)?;
        write_sessions(sessions, &mut w)?;
        w.flush().map_err(|e| Error::file(&path, e))?;
        Ok(path)
    }

    pub fn read_graphs(&self) -> Result<GraphSet> {
        GraphSet::read(self.open(&self.path(GRAPHS))?)
    }

    pub fn read_checkpoint(&self, path: &Path) -> Result<ModelParams> {
        ModelParams::load(self.open(path)?)
    }
}

/// One pipeline stage: its resolved configuration and the files it touched.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Stage {
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

/// The resolved configuration and artifacts of every stage run so far.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub stages: BTreeMap<String, Stage>,
}

impl RunManifest {
    pub fn load_or_new(dir: &Workdir) -> Result<Self> {
        let path = dir.path(MANIFEST);
        if !path.exists() {
            return Ok(Self {
                format: MANIFEST_FORMAT.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                stages: BTreeMap::new(),
            });
        }
        let m: Self = serde_json::from_str(&dir.read_string(&path)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("{}: unknown manifest format `{}`", path.display(), m.format)));
        }
        Ok(m)
    }

    /// Records a stage and rewrites the manifest file.
    pub fn record<C: Serialize>(
        dir: &Workdir,
        name: &str,
        config: &C,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<()> {
        let mut m = Self::load_or_new(dir)?;
        m.tool_version = env!("CARGO_PKG_VERSION").into();
        let rel = |p: &&Path| {
            p.strip_prefix(&dir.root)
                .unwrap_or(p)
                .display()
                .to_string()
        };
        m.stages.insert(
            name.into(),
            Stage {
                config: serde_json::to_value(config)?,
                inputs: inputs.iter().map(rel).collect(),
                outputs: outputs.iter().map(rel).collect(),
            },
        );
        dir.write_string(&dir.path(MANIFEST), &(serde_json::to_string_pretty(&m)? + "\n"))
    }
}
