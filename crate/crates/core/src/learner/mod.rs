//! One-vs-rest program learning over the preprocessed table.
//!
//! Each class gets a pool of demes. A generation selects a deme in
//! proportion to fitness, inserts knobs, hill-climbs the knob settings,
//! reduces the instantiated program and replaces the deme when the result is
//! strictly fitter.

pub mod knobs;
pub mod program;
pub mod reduce;

use std::fs;
use std::path::Path;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{ColumnData, TabularDataset};
pub use knobs::{hill_climb, insert_knobs, Climb, Deme, Insertion, Knob, KnobSpace};
pub use program::{AttrSchema, Bits, BoolExpr, Columns, NumExpr};
pub use reduce::reduce;

pub const MODEL_VERSION: u32 = 1;
pub const DECISION_RULE: &str =
    "single firing class; else highest-fitness firing class; else highest-fitness class; ties by class order";

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("program parse error: {0}")]
    Parse(String),
    #[error("class '{0}' has no positive or no negative examples")]
    SingleClass(String),
    #[error("the dataset has fewer than two classes")]
    TooFewClasses,
    #[error("need at least two training rows, got {0}")]
    TooFewRows(usize),
    #[error("no numeric or boolean attributes to learn from")]
    EmptySchema,
    #[error("no informative attribute: every attribute scores zero")]
    NoInformativeAttribute,
    #[error("feature count must be positive")]
    FeatureCount,
    #[error("hill-climbing budget must be at least 1")]
    Budget,
    #[error("row {0} has no label")]
    Unlabeled(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("model file: {0}")]
    Model(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Evolution hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub generations: usize,
    pub pool_size: usize,
    pub knobs_per_generation: usize,
    /// Parsimony weight per program node.
    pub lambda: f64,
    pub threshold_step: f64,
    /// Fitness evaluations allowed per hill-climbing run.
    pub climb_budget: usize,
    pub stop_on_perfect: bool,
    /// Keep only the top-k attributes per class; all when absent.
    pub feature_k: Option<usize>,
    /// Allow knob insertion to add new literals and terms.
    pub grow: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            generations: 200,
            pool_size: 8,
            knobs_per_generation: 3,
            lambda: 1e-4,
            threshold_step: 0.01,
            climb_budget: 1000,
            stop_on_perfect: true,
            feature_k: None,
            grow: true,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.pool_size == 0 {
            errs.push("learner.pool_size must be at least 1".to_string());
        }
        if self.climb_budget == 0 {
            errs.push("learner.climb_budget must be at least 1".to_string());
        }
        if !(self.threshold_step > 0.0 && self.threshold_step <= 1.0) {
            errs.push(format!("learner.threshold_step must lie in (0, 1], got {}", self.threshold_step));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            errs.push(format!("learner.lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.feature_k == Some(0) {
            errs.push("learner.feature_k must be positive".to_string());
        }
        errs
    }
}

/// Numeric columns and boolean bitsets extracted from a table.
#[derive(Debug, Clone)]
pub struct LearnData {
    pub schema: AttrSchema,
    num: Vec<Vec<f64>>,
    boo: Vec<Bits>,
    rows: usize,
}

impl Columns for LearnData {
    fn rows(&self) -> usize {
        self.rows
    }
    fn numeric(&self, i: usize) -> &[f64] {
        &self.num[i]
    }
    fn boolean(&self, i: usize) -> &Bits {
        &self.boo[i]
    }
}

impl LearnData {
    /// Takes every numeric and boolean column, or exactly the columns of
    /// `schema` when given. Nominal columns are skipped.
    pub fn from_dataset(ds: &TabularDataset, schema: Option<&AttrSchema>) -> Result<Self, LearnError> {
        let rows = ds.len();
        match schema {
            None => {
                let mut s = AttrSchema::default();
                let (mut num, mut boo) = (Vec::new(), Vec::new());
                for c in &ds.columns {
                    match &c.data {
                        ColumnData::Numeric(v) => {
                            s.numeric.push(c.name.clone());
                            num.push(v.clone());
                        }
                        ColumnData::Boolean(v) => {
                            s.boolean.push(c.name.clone());
                            boo.push(Bits::from_fn(rows, |i| v[i]));
                        }
                        ColumnData::Nominal(_) => debug!("skipping nominal column {}", c.name),
                    }
                }
                Ok(LearnData { schema: s, num, boo, rows })
            }
            Some(s) => {
                let get = |name: &str| {
                    ds.column(name).ok_or_else(|| LearnError::Schema(format!("missing column '{name}'")))
                };
                let mut num = Vec::new();
                for n in &s.numeric {
                    match &get(n)?.data {
                        ColumnData::Numeric(v) => num.push(v.clone()),
                        _ => return Err(LearnError::Schema(format!("column '{n}' is not numeric"))),
                    }
                }
                let mut boo = Vec::new();
                for n in &s.boolean {
                    match &get(n)?.data {
                        ColumnData::Boolean(v) => boo.push(Bits::from_fn(rows, |i| v[i])),
                        _ => return Err(LearnError::Schema(format!("column '{n}' is not boolean"))),
                    }
                }
                Ok(LearnData { schema: s.clone(), num, boo, rows })
            }
        }
    }

    /// Builds data straight from columns.
    pub fn new(schema: AttrSchema, num: Vec<Vec<f64>>, boo: Vec<Vec<bool>>) -> Self {
        let rows = num.first().map(Vec::len).or_else(|| boo.first().map(Vec::len)).unwrap_or(0);
        let boo = boo.iter().map(|v| Bits::from_fn(rows, |i| v[i])).collect();
        LearnData { schema, num, boo, rows }
    }
}

/// Attribute names ranked by relevance to `target`, best first, truncated to `k`.
/// Numeric attributes score |point-biserial r|; boolean ones 2·BA − 1 of the
/// better polarity, where BA is balanced accuracy. Ties go to name order.
pub fn select_features(data: &LearnData, target: &Bits, k: usize) -> Result<Vec<String>, LearnError> {
    if k == 0 {
        return Err(LearnError::FeatureCount);
    }
    let mut scored = feature_scores(data, target);
    if scored.iter().all(|(_, s)| *s == 0.0) {
        return Err(LearnError::NoInformativeAttribute);
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(n, _)| n).collect())
}

pub fn feature_scores(data: &LearnData, target: &Bits) -> Vec<(String, f64)> {
    let n = data.rows as f64;
    let pos = target.count_ones() as f64;
    let neg = n - pos;
    let mut out = Vec::new();
    for (i, name) in data.schema.numeric.iter().enumerate() {
        let v = &data.num[i];
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let r = if sd == 0.0 || pos == 0.0 || neg == 0.0 {
            0.0
        } else {
            let m1 = (0..data.rows).filter(|&r| target.get(r)).map(|r| v[r]).sum::<f64>() / pos;
            let m0 = (0..data.rows).filter(|&r| !target.get(r)).map(|r| v[r]).sum::<f64>() / neg;
            (m1 - m0) / sd * (pos / n * neg / n).sqrt()
        };
        out.push((name.clone(), r.abs()));
    }
    for (i, name) in data.schema.boolean.iter().enumerate() {
        let b = &data.boo[i];
        let score = if pos == 0.0 || neg == 0.0 {
            0.0
        } else {
            let tp = (0..data.rows).filter(|&r| target.get(r) && b.get(r)).count() as f64;
            let tn = (0..data.rows).filter(|&r| !target.get(r) && !b.get(r)).count() as f64;
            let ba = 0.5 * (tp / pos + tn / neg);
            (2.0 * ba - 1.0).abs()
        };
        out.push((name.clone(), score));
    }
    out
}

/// The outcome of evolving one class's program.
#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub program: BoolExpr,
    pub fitness: f64,
    pub accuracy: f64,
    /// Best pool fitness after each generation.
    pub history: Vec<f64>,
    pub knob_insertions: usize,
    pub evaluations: usize,
}

const SELECT_STREAM: u64 = 0xFFFF_FFFF;
const INIT_STREAM: u64 = 0xFFFF_FFFE;

fn stream_rng(seed: u64, class_index: u64, low: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((class_index << 32) | low);
    rng
}

fn random_literal(space: &KnobSpace, rng: &mut impl Rng) -> BoolExpr {
    let total = space.numeric.len() + space.boolean.len();
    let pick = rng.gen_range(0..total);
    if pick < space.numeric.len() {
        let steps = (1.0 / space.step).round() as i64;
        let t = rng.gen_range(0..=steps) as f64 * space.step;
        BoolExpr::Greater(Box::new(NumExpr::Attr(space.numeric[pick])), Box::new(NumExpr::Const(t)))
    } else {
        let a = BoolExpr::Attr(space.boolean[pick - space.numeric.len()]);
        if rng.gen_bool(0.5) {
            BoolExpr::Not(Box::new(a))
        } else {
            a
        }
    }
}

fn select(pool: &[Deme], rng: &mut impl Rng) -> usize {
    let total: f64 = pool.iter().map(|d| d.fitness).sum();
    if total <= 0.0 {
        return rng.gen_range(0..pool.len());
    }
    let mut x = rng.gen::<f64>() * total;
    for (i, d) in pool.iter().enumerate() {
        if x < d.fitness {
            return i;
        }
        x -= d.fitness;
    }
    pool.len() - 1
}

fn pool_best(pool: &[Deme]) -> &Deme {
    // first maximum, so ties keep the earlier deme
    pool.iter().fold(&pool[0], |b, d| if d.fitness > b.fitness { d } else { b })
}

/// Evolves a program that separates `target` rows from the rest.
/// `class_index` selects the random streams so classes train independently.
pub fn evolve(
    data: &LearnData,
    target: &Bits,
    class_name: &str,
    class_index: u64,
    seed: u64,
    cfg: &LearnerConfig,
) -> Result<Evolution, LearnError> {
    if data.rows < 2 {
        return Err(LearnError::TooFewRows(data.rows));
    }
    if data.schema.is_empty() {
        return Err(LearnError::EmptySchema);
    }
    let pos = target.count_ones();
    if pos == 0 || pos == data.rows {
        return Err(LearnError::SingleClass(class_name.to_string()));
    }
    if cfg.climb_budget == 0 {
        return Err(LearnError::Budget);
    }
    let (numeric, boolean) = match cfg.feature_k {
        Some(k) => {
            let keep = select_features(data, target, k)?;
            let idx = |names: &[String]| -> Vec<usize> {
                (0..names.len()).filter(|&i| keep.contains(&names[i])).collect()
            };
            (idx(&data.schema.numeric), idx(&data.schema.boolean))
        }
        None => ((0..data.schema.numeric.len()).collect(), (0..data.schema.boolean.len()).collect()),
    };
    let space = KnobSpace { step: cfg.threshold_step, lambda: cfg.lambda, numeric, boolean, grow: cfg.grow };

    let mut init = stream_rng(seed, class_index, INIT_STREAM);
    let mut pool: Vec<Deme> = (0..cfg.pool_size.max(1))
        .map(|_| {
            let e = reduce(&random_literal(&space, &mut init));
            let (fitness, accuracy) = knobs::evaluate(&e, &[], data, target, cfg.lambda);
            Deme { exemplar: e, knobs: Vec::new(), fitness, accuracy }
        })
        .collect();
    let mut selector = stream_rng(seed, class_index, SELECT_STREAM);
    let mut history = Vec::with_capacity(cfg.generations);
    let (mut insertions, mut evaluations) = (0, 0);

    for g in 0..cfg.generations {
        if cfg.stop_on_perfect && pool_best(&pool).accuracy >= 1.0 {
            break;
        }
        let mut rng = stream_rng(seed, class_index, g as u64);
        let i = select(&pool, &mut selector);
        let ins = insert_knobs(&pool[i], cfg.knobs_per_generation, &space, &mut rng);
        insertions += ins.inserted;
        let climb = hill_climb(&ins.deme, data, target, &space, cfg.climb_budget)?;
        evaluations += climb.evaluations;
        let program = reduce(&climb.deme.exemplar.instantiate(&climb.deme.knobs));
        let (fitness, accuracy) = knobs::evaluate(&program, &[], data, target, cfg.lambda);
        if fitness > pool[i].fitness {
            pool[i] = Deme { exemplar: program, knobs: Vec::new(), fitness, accuracy };
        }
        history.push(pool_best(&pool).fitness);
    }
    let best = pool_best(&pool).clone();
    info!(
        "class {class_name}: fitness {:.4}, accuracy {:.4} after {} generations",
        best.fitness,
        best.accuracy,
        history.len()
    );
    Ok(Evolution {
        program: best.exemplar,
        fitness: best.fitness,
        accuracy: best.accuracy,
        history,
        knob_insertions: insertions,
        evaluations,
    })
}

/// A learned program for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProgram {
    pub class: String,
    pub program: BoolExpr,
    pub fitness: f64,
    pub accuracy: f64,
    pub history: Vec<f64>,
    pub knob_insertions: usize,
    pub evaluations: usize,
}

/// One program per class plus the attributes they read.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub schema: AttrSchema,
    /// In class order, which also breaks ties.
    pub programs: Vec<ClassProgram>,
    pub seed: u64,
    pub config: LearnerConfig,
}

/// Trains one program per class on a labeled table. Classes run in parallel.
pub fn train(ds: &TabularDataset, seed: u64, cfg: &LearnerConfig) -> Result<Classifier, LearnError> {
    if let Some(i) = ds.labels.iter().position(Option::is_none) {
        return Err(LearnError::Unlabeled(ds.ids[i].clone()));
    }
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(LearnError::Model(errs.join("; ")));
    }
    let data = LearnData::from_dataset(ds, None)?;
    let classes = ds.classes();
    if classes.len() < 2 {
        return Err(match classes.first() {
            Some(c) => LearnError::SingleClass(c.clone()),
            None => LearnError::TooFewClasses,
        });
    }
    let programs = classes
        .par_iter()
        .enumerate()
        .map(|(ci, class)| {
            let target = Bits::from_fn(ds.len(), |r| ds.labels[r].as_deref() == Some(class));
            let ev = evolve(&data, &target, class, ci as u64, seed, cfg)?;
            Ok(ClassProgram {
                class: class.clone(),
                program: ev.program,
                fitness: ev.fitness,
                accuracy: ev.accuracy,
                history: ev.history,
                knob_insertions: ev.knob_insertions,
                evaluations: ev.evaluations,
            })
        })
        .collect::<Result<Vec<_>, LearnError>>()?;
    Ok(Classifier { schema: data.schema, programs, seed, config: cfg.clone() })
}

/// Applies the decision rule to per-class firings.
pub fn decide(fired: &[bool], fitness: &[f64]) -> usize {
    let best_of = |cands: &mut dyn Iterator<Item = usize>| {
        cands.fold(None, |b: Option<usize>, i| match b {
            Some(j) if fitness[j] >= fitness[i] => Some(j),
            _ => Some(i),
        })
    };
    best_of(&mut (0..fired.len()).filter(|&i| fired[i]))
        .or_else(|| best_of(&mut (0..fired.len())))
        .unwrap_or(0)
}

impl Classifier {
    pub fn classes(&self) -> Vec<String> {
        self.programs.iter().map(|p| p.class.clone()).collect()
    }

    /// Predicted class index per row.
    pub fn predict(&self, data: &LearnData) -> Vec<usize> {
        let outs: Vec<Bits> = self.programs.iter().map(|p| p.program.eval(data, &[])).collect();
        let fitness: Vec<f64> = self.programs.iter().map(|p| p.fitness).collect();
        (0..data.rows)
            .map(|r| {
                let fired: Vec<bool> = outs.iter().map(|o| o.get(r)).collect();
                decide(&fired, &fitness)
            })
            .collect()
    }

    /// Predicted labels for every row of a table with a compatible schema.
    pub fn classify_dataset(&self, ds: &TabularDataset) -> Result<Vec<String>, LearnError> {
        let data = LearnData::from_dataset(ds, Some(&self.schema))?;
        Ok(self.predict(&data).into_iter().map(|i| self.programs[i].class.clone()).collect())
    }

    pub fn to_json(&self) -> Result<String, LearnError> {
        let file = ModelFile {
            version: MODEL_VERSION,
            decision_rule: DECISION_RULE.to_string(),
            seed: self.seed,
            config: self.config.clone(),
            schema: self.schema.clone(),
            classes: self
                .programs
                .iter()
                .map(|p| ModelClass {
                    class: p.class.clone(),
                    program: p.program.to_prefix(&self.schema),
                    fitness: p.fitness,
                    accuracy: p.accuracy,
                    knob_insertions: p.knob_insertions,
                    evaluations: p.evaluations,
                    history: p.history.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).map_err(|e| LearnError::Model(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| LearnError::Model(e.to_string()))?;
        if file.version != MODEL_VERSION {
            return Err(LearnError::Model(format!("unsupported model version {}", file.version)));
        }
        if file.classes.is_empty() {
            return Err(LearnError::Model("model has no classes".into()));
        }
        let programs = file
            .classes
            .into_iter()
            .map(|c| {
                Ok(ClassProgram {
                    program: BoolExpr::parse_prefix(&c.program, &file.schema)?,
                    class: c.class,
                    fitness: c.fitness,
                    accuracy: c.accuracy,
                    history: c.history,
                    knob_insertions: c.knob_insertions,
                    evaluations: c.evaluations,
                })
            })
            .collect::<Result<Vec<_>, LearnError>>()?;
        Ok(Classifier { schema: file.schema, programs, seed: file.seed, config: file.config })
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        fs::write(path, self.to_json()?).map_err(|source| LearnError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let text = fs::read_to_string(path)
            .map_err(|source| LearnError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    decision_rule: String,
    seed: u64,
    config: LearnerConfig,
    schema: AttrSchema,
    classes: Vec<ModelClass>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelClass {
    class: String,
    program: String,
    fitness: f64,
    accuracy: f64,
    knob_insertions: usize,
    evaluations: usize,
    history: Vec<f64>,
}

/// Logs a warning when a trained class never beat chance.
pub fn warn_weak(clf: &Classifier) {
    for p in &clf.programs {
        if p.accuracy <= 0.5 {
            warn!("class {} program is no better than chance (accuracy {:.3})", p.class, p.accuracy);
        }
    }
}
