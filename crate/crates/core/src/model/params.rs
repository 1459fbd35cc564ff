use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{he_init_with, Tensor};

pub const CHECKPOINT_MAGIC: &str = "cohhgn-checkpoint v1";

/// Architecture and sizes. Everything needed to recreate the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Propagation iterations on both graph branches.
    pub layers: usize,
    /// Attention heads over the price sequence.
    pub heads: usize,
    /// Width of the week encoding; must be even.
    pub week_dim: usize,
    pub n_items: usize,
    pub n_prices: usize,
    pub d_sale: usize,
    pub d_type: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads));
        }
        if self.d % 2 != 0 {
            return fail(format!("d = {} must be even for the position encoding", self.d));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.week_dim % 2 != 0 {
            return fail(format!("week_dim = {} must be even", self.week_dim));
        }
        if self.n_items < 2 || self.n_prices < 1 {
            return fail(format!(
                "vocabulary too small: {} items, {} price bins",
                self.n_items, self.n_prices
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Every learnable tensor with its shape, in name order.
    pub fn shapes(&self) -> BTreeMap<String, [usize; 2]> {
        let d = self.d;
        let dh = d / self.heads.max(1);
        let mut s = BTreeMap::new();
        let mut put = |name: &str, shape: [usize; 2]| {
            s.insert(name.to_string(), shape);
        };
        put("emb.id", [self.n_items, d]);
        put("emb.pri", [self.n_prices, d]);
        for t in ["id", "pri"] {
            put(&format!("u.{t}"), [1, d]);
            put(&format!("W.{t}"), [d, d]);
        }
        for tau in ["pri", "lrg", "mid"] {
            put(&format!("W.id.{tau}"), [d, d]);
        }
        for tau in ["id", "lrg", "mid"] {
            put(&format!("W.pri.{tau}"), [d, d]);
        }
        put("W_1", [d + 1, d + 1]);
        put("q", [1, d + 1]);
        put("W_2", [d, 2 * d]);
        put("W_3", [d, d]);
        put("W_4", [d, d]);
        put("W_5", [d, 2 * d]);
        put("W_6", [d, self.d_sale + self.week_dim]);
        put("W_7", [d, self.d_type]);
        put("b_1", [1, d]);
        put("W_8", [d, d]);
        put("W_9", [d, d]);
        put("b_2", [1, d]);
        put("u", [1, d]);
        for i in 1..=self.heads {
            put(&format!("W_Q.{i}"), [dh, d]);
            put(&format!("W_K.{i}"), [dh, d]);
            put(&format!("W_V.{i}"), [dh, d]);
        }
        put("W_a", [d, 2 * d]);
        put("W_b", [d, 2 * d]);
        put("W_c", [d, d]);
        put("W_d", [d, d]);
        s
    }
}

fn is_bias(name: &str) -> bool {
    name.starts_with("b_")
}

/// All learnable tensors, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// He-normal weights drawn in name order from one seeded stream; biases zero.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = config
            .shapes()
            .into_iter()
            .map(|(name, [r, c])| {
                let t = if is_bias(&name) {
                    Tensor::zeros(r, c)
                } else {
                    he_init_with(r, c, &mut rng)
                };
                (name, t)
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .shapes()
            .into_iter()
            .map(|(name, [r, c])| (name, Tensor::zeros(r, c)))
            .collect();
        Ok(Self { config, tensors })
    }

    /// Builds from explicit tensors, checking names and shapes.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if let Some(extra) = tensors.keys().find(|k| !shapes.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        for (name, shape) in &shapes {
            match tensors.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
                Some(t) if t.shape() != *shape => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Text header followed by raw little-endian `f64` blocks.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "d {}", c.d)?;
        writeln!(w, "layers {}", c.layers)?;
        writeln!(w, "heads {}", c.heads)?;
        writeln!(w, "week_dim {}", c.week_dim)?;
        writeln!(w, "n_items {}", c.n_items)?;
        writeln!(w, "n_prices {}", c.n_prices)?;
        writeln!(w, "d_sale {}", c.d_sale)?;
        writeln!(w, "d_type {}", c.d_type)?;
        writeln!(w, "dropout {:?}", c.dropout)?;
        writeln!(w, "seed {}", c.seed)?;
        writeln!(w, "params {}", self.tensors.len())?;
        for (name, t) in &self.tensors {
            writeln!(w, "param {name} {} {}", t.rows(), t.cols())?;
            let mut bytes = Vec::with_capacity(t.len() * 8);
            for x in t.data() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&bytes)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        let mut next = |r: &mut R| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let magic = next(&mut r)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("unsupported checkpoint header {magic:?}")));
        }
        let mut field = |r: &mut R, key: &str| -> Result<String> {
            let l = next(r)?;
            match l.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(Error::Checkpoint(format!("expected `{key}`, found {l:?}"))),
            }
        };
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for `{key}`: {v:?}")))
        }
        let config = ModelConfig {
            d: num("d", field(&mut r, "d")?)?,
            layers: num("layers", field(&mut r, "layers")?)?,
            heads: num("heads", field(&mut r, "heads")?)?,
            week_dim: num("week_dim", field(&mut r, "week_dim")?)?,
            n_items: num("n_items", field(&mut r, "n_items")?)?,
            n_prices: num("n_prices", field(&mut r, "n_prices")?)?,
            d_sale: num("d_sale", field(&mut r, "d_sale")?)?,
            d_type: num("d_type", field(&mut r, "d_type")?)?,
            dropout: num("dropout", field(&mut r, "dropout")?)?,
            seed: num("seed", field(&mut r, "seed")?)?,
        };
        let count: usize = num("params", field(&mut r, "params")?)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let header = field(&mut r, "param")?;
            let parts: Vec<&str> = header.split(' ').collect();
            let [name, rows, cols] = parts.as_slice() else {
                return Err(Error::Checkpoint(format!("bad parameter header {header:?}")));
            };
            let rows: usize = num("rows", rows.to_string())?;
            let cols: usize = num("cols", cols.to_string())?;
            let mut bytes = vec![0u8; rows * cols * 8];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Checkpoint(format!("truncated data for `{name}`")))?;
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            let mut nl = [0u8; 1];
            r.read_exact(&mut nl)?;
            tensors.insert(name.to_string(), Tensor::new(rows, cols, data)?);
        }
        Self::from_tensors(config, tensors)
    }
}
