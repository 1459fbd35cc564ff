//! Central finite-difference check of every parameter gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Model, ModelConfig, ModelParams};
use crate::data::{FeatureVocabulary, PseudoSession, SaleCalendar, Vocab};
use crate::error::Result;
use crate::graph::GraphSet;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale. Central
/// differences of a loss near 6 at step 1e-5 carry roughly 1e-10 of rounding
/// noise, so relative error below this magnitude measures the noise only.
pub const DEFAULT_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            let verdict = if p.max_rel_error <= self.tolerance { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{:<10} {:>6} entries  max rel err {:.3e}  [{verdict}]\n",
                p.name, p.entries, p.max_rel_error
            ));
        }
        out.push_str(&format!(
            "{}: max rel err {:.3e} (tolerance {:.0e}, step {:.0e})\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance,
            self.step
        ));
        out
    }
}

/// Compares `loss_and_grads` against `(L(x+h) - L(x-h)) / 2h` for every
/// scalar of every parameter. The model is restored before returning.
pub fn gradcheck(
    model: &mut Model,
    sessions: &[&PseudoSession],
    step: f64,
    tolerance: f64,
    floor: f64,
) -> Result<GradcheckReport> {
    let (_, grads) = model.loss_and_grads(sessions, 1.0, None)?;
    let mut params = Vec::new();
    for (name, grad) in &grads {
        let mut check = ParamCheck {
            name: name.clone(),
            entries: grad.len(),
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..grad.len() {
            let original = model.params.get(name).data()[k];
            let at = |x: f64, m: &mut Model| -> Result<f64> {
                m.params.get_mut(name).expect("known name").data_mut()[k] = x;
                m.loss(sessions)
            };
            let plus = at(original + step, model)?;
            let minus = at(original - step, model)?;
            at(original, model)?;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grad.data()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            if rel > check.max_rel_error || k == 0 {
                check.max_rel_error = rel.max(check.max_rel_error);
                check.worst_entry = k;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradcheckReport {
        step,
        tolerance,
        floor,
        params,
    })
}

/// A small, fully specified problem: 8 items (slot 0 unknown), 4 price
/// bins, `d = 16`, one layer, two heads, sessions of length 3.
pub struct ToyInstance {
    pub vocab: FeatureVocabulary,
    pub graphs: GraphSet,
    pub sessions: Vec<PseudoSession>,
    pub config: ModelConfig,
}

impl ToyInstance {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vocab::open();
        for i in 1..8 {
            items.insert(&format!("item{i}"));
        }
        let mut large = Vocab::open();
        large.insert("L1");
        large.insert("L2");
        let mut middle = Vocab::open();
        for m in 1..4 {
            middle.insert(&format!("M{m}"));
        }
        let mut genders = Vocab::closed();
        genders.insert("F");
        let mut regions = Vocab::closed();
        regions.insert("R1");
        regions.insert("R2");
        let calendar = SaleCalendar::default();
        let vocab = FeatureVocabulary {
            items,
            large,
            middle,
            n_price_bins: 4,
            genders,
            regions,
            n_sales: calendar.n_sales(),
        };
        // Fixed item attributes: price bin, large and middle category.
        let attr = |i: usize| (i % 4, 1 + i % 2, 1 + i % 3);
        let sessions = (0..8)
            .map(|sid| {
                let seq: Vec<usize> = (0..3).map(|_| rng.random_range(1..8)).collect();
                let week = rng.random_range(1..=105);
                let region = if sid % 2 == 0 { "R1" } else { "R2" };
                PseudoSession {
                    session_id: sid,
                    week,
                    gender: "F".into(),
                    region: region.into(),
                    prices: seq.iter().map(|&i| attr(i).0).collect(),
                    large_cats: seq.iter().map(|&i| attr(i).1).collect(),
                    middle_cats: seq.iter().map(|&i| attr(i).2).collect(),
                    items: seq,
                    sale_flags: calendar.flags(week),
                    attr_flags: vocab.attr_flags("F", region),
                }
            })
            .collect::<Vec<_>>();
        let graphs = GraphSet::build(&sessions, &vocab, 2, 12)?;
        let config = ModelConfig {
            d: 16,
            layers: 1,
            heads: 2,
            week_dim: 4,
            n_items: vocab.size(crate::data::FeatureKind::Id),
            n_prices: vocab.n_price_bins,
            d_sale: vocab.d_sale(),
            d_type: vocab.d_type(),
            dropout: 0.0,
            seed,
        };
        Ok(Self {
            vocab,
            graphs,
            sessions,
            config,
        })
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(ModelParams::init(self.config.clone())?, &self.graphs)
    }
}

/// Runs the check on the toy problem with default settings.
pub fn run_toy(seed: u64) -> Result<GradcheckReport> {
    let toy = ToyInstance::new(seed)?;
    let mut model = toy.model()?;
    let batch: Vec<&PseudoSession> = toy.sessions.iter().take(3).collect();
    gradcheck(&mut model, &batch, DEFAULT_STEP, DEFAULT_TOLERANCE, DEFAULT_FLOOR)
}
