//! Train/test splits, coordinate noise, accuracy reports and result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Coord, FeatureCollection, Scope};
use crate::learner::{Classifier, LearnError};
use crate::preprocess::TabularDataset;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("holdout fraction must lie strictly between 0 and 1, got {0}")]
    Fraction(f64),
    #[error("k-fold needs 2 <= k <= rows, got k = {k} for {rows} rows")]
    Folds { k: usize, rows: usize },
    #[error("class '{0}' has fewer than two instances and cannot be stratified")]
    TinyClass(String),
    #[error("row '{0}' has no label")]
    Unlabeled(String),
    #[error("the test set is empty")]
    EmptyTest,
    #[error("test label '{0}' is unknown to the classifier")]
    UnseenLabel(String),
    #[error("noise parameter {name} must lie in [0, 1], got {value}")]
    Noise { name: &'static str, value: f64 },
    #[error(transparent)]
    Learn(#[from] LearnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    Holdout,
    KFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub method: SplitMethod,
    /// Train share for holdout.
    pub fraction: f64,
    /// Fold count for k-fold.
    pub k: usize,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { method: SplitMethod::Holdout, fraction: 0.7, k: 5, stratified: true }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            e.push(format!("split.fraction must lie in (0, 1), got {}", self.fraction));
        }
        if self.k < 2 {
            e.push(format!("split.k must be at least 2, got {}", self.k));
        }
        e
    }
}

/// Row indices of one train/test partition, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    pub fn apply(&self, ds: &TabularDataset) -> (TabularDataset, TabularDataset) {
        (ds.subset(&self.train), ds.subset(&self.test))
    }
}

/// Row groups to split independently: one per class when stratified.
fn strata(ds: &TabularDataset, stratified: bool) -> Result<Vec<(String, Vec<usize>)>, EvalError> {
    if !stratified {
        return Ok(vec![(String::new(), (0..ds.len()).collect())]);
    }
    let mut by: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, l) in ds.labels.iter().enumerate() {
        let l = l.as_ref().ok_or_else(|| EvalError::Unlabeled(ds.ids[i].clone()))?;
        by.entry(l.clone()).or_default().push(i);
    }
    if let Some((c, _)) = by.iter().find(|(_, v)| v.len() < 2) {
        return Err(EvalError::TinyClass(c.clone()));
    }
    Ok(by.into_iter().collect())
}

/// Splits into `fraction` train and the rest test. Stratified splits give
/// each class its proportional share, rounded by largest remainder so the
/// total train size is round(fraction · rows).
pub fn holdout(ds: &TabularDataset, fraction: f64, seed: u64, stratified: bool) -> Result<Fold, EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::Fraction(fraction));
    }
    let groups = strata(ds, stratified)?;
    let total = (fraction * ds.len() as f64).round() as usize;
    let exact: Vec<f64> = groups.iter().map(|(_, v)| fraction * v.len() as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = total.saturating_sub(take.iter().sum());
    for &g in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if take[g] < groups[g].1.len() {
            take[g] += 1;
            left -= 1;
        }
    }
    if stratified {
        // every class keeps at least one row on each side
        for (g, (_, rows)) in groups.iter().enumerate() {
            take[g] = take[g].clamp(1, rows.len() - 1);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (g, (_, rows)) in groups.iter().enumerate() {
        let mut rows = rows.clone();
        rows.shuffle(&mut rng);
        train.extend_from_slice(&rows[..take[g]]);
        test.extend_from_slice(&rows[take[g]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Fold { train, test })
}

/// k folds whose test parts partition the rows. Stratified folds deal each
/// class round-robin, continuing where the previous class stopped.
pub fn k_fold(ds: &TabularDataset, k: usize, seed: u64, stratified: bool) -> Result<Vec<Fold>, EvalError> {
    if k < 2 || k > ds.len() {
        return Err(EvalError::Folds { k, rows: ds.len() });
    }
    let groups = strata(ds, stratified)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0usize; ds.len()];
    let mut next = 0;
    for (_, rows) in &groups {
        let mut rows = rows.clone();
        rows.shuffle(&mut rng);
        for r in rows {
            assign[r] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| Fold {
            train: (0..ds.len()).filter(|&i| assign[i] != f).collect(),
            test: (0..ds.len()).filter(|&i| assign[i] == f).collect(),
        })
        .collect())
}

pub fn split(ds: &TabularDataset, spec: &SplitSpec, seed: u64) -> Result<Vec<Fold>, EvalError> {
    match spec.method {
        SplitMethod::Holdout => Ok(vec![holdout(ds, spec.fraction, seed, spec.stratified)?]),
        SplitMethod::KFold => k_fold(ds, spec.k, seed, spec.stratified),
    }
}

/// Probability `p` that an instance is perturbed and relative magnitude `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub p: f64,
    pub q: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, value) in [("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(EvalError::Noise { name, value });
            }
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        self.p == 0.0 || self.q == 0.0
    }
}

/// Perturbs each instance with probability p: every coordinate moves by
/// u · q · (bounding-box diagonal), u uniform in [-1, 1] per axis, then is
/// clamped into `scope`. Returns the noisy collection and the number of
/// instances selected.
pub fn inject_noise(
    coll: &FeatureCollection,
    noise: &NoiseSpec,
    scope: &Scope,
    seed: u64,
) -> Result<(FeatureCollection, usize), EvalError> {
    noise.validate()?;
    if noise.is_clean() {
        return Ok((coll.clone(), 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hit = 0;
    let out = coll.with_geometries(|_, f| {
        if !rng.gen_bool(noise.p) {
            return f.geometry.clone();
        }
        hit += 1;
        let scale = noise.q * f.geometry.extent();
        f.geometry.map_coords(|c| {
            let du: f64 = rng.gen_range(-1.0..=1.0);
            let dv: f64 = rng.gen_range(-1.0..=1.0);
            scope.clamp(Coord::new(c.lon + du * scale, c.lat + dv * scale))
        })
    });
    Ok((out, hit))
}

/// Population and sample standard deviation.
pub fn sigma(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sample = if values.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    ((ss / n).sqrt(), sample)
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub count: usize,
    pub correct: usize,
    /// None when the class has no test rows.
    pub accuracy: Option<f64>,
}

/// Accuracy of a classifier on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub classes: Vec<ClassAccuracy>,
    pub overall_accuracy: f64,
    /// Dispersion of the per-class accuracies over classes with test rows.
    pub sigma_population: f64,
    pub sigma_sample: f64,
    /// Rows are actual classes, columns predicted classes, both in class order.
    pub confusion: Vec<Vec<usize>>,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn from_predictions(classes: &[String], actual: &[String], predicted: &[String]) -> Result<Self, EvalError> {
        if actual.is_empty() {
            return Err(EvalError::EmptyTest);
        }
        let pos = |l: &str| classes.iter().position(|c| c == l).ok_or_else(|| EvalError::UnseenLabel(l.to_string()));
        let k = classes.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for (a, p) in actual.iter().zip(predicted) {
            confusion[pos(a)?][pos(p)?] += 1;
        }
        let per: Vec<ClassAccuracy> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let count: usize = confusion[i].iter().sum();
                let correct = confusion[i][i];
                ClassAccuracy {
                    class: c.clone(),
                    count,
                    correct,
                    accuracy: (count > 0).then(|| correct as f64 / count as f64),
                }
            })
            .collect();
        let accs: Vec<f64> = per.iter().filter_map(|c| c.accuracy).collect();
        let (sigma_population, sigma_sample) = sigma(&accs);
        let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
        Ok(EvalReport {
            version: REPORT_VERSION,
            classes: per,
            overall_accuracy: trace as f64 / actual.len() as f64,
            sigma_population,
            sigma_sample,
            confusion,
            metadata: BTreeMap::new(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Classifies the test table and scores the predictions.
pub fn evaluate(clf: &Classifier, test: &TabularDataset) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let actual = test
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.clone().ok_or_else(|| EvalError::Unlabeled(test.ids[i].clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let classes = clf.classes();
    if let Some(l) = actual.iter().find(|l| !classes.contains(l)) {
        return Err(EvalError::UnseenLabel(l.clone()));
    }
    let predicted = clf.classify_dataset(test)?;
    EvalReport::from_predictions(&classes, &actual, &predicted)
}

/// Mean and dispersion of overall accuracy over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub mean_accuracy: f64,
    pub sigma_population: f64,
    pub sigma_sample: f64,
}

pub fn summarize(reports: &[EvalReport]) -> RunSummary {
    let accs: Vec<f64> = reports.iter().map(|r| r.overall_accuracy).collect();
    let (sigma_population, sigma_sample) = sigma(&accs);
    RunSummary {
        runs: accs.len(),
        mean_accuracy: if accs.is_empty() { 0.0 } else { accs.iter().sum::<f64>() / accs.len() as f64 },
        sigma_population,
        sigma_sample,
    }
}

/// One cell of a noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub q: f64,
    pub seed: u64,
    pub accuracy: f64,
}

/// Per-(p, q) mean accuracy over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMean {
    pub p: f64,
    pub q: f64,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub sigma_population: f64,
}

pub fn sort_sweep(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| a.p.total_cmp(&b.p).then(a.q.total_cmp(&b.q)).then(a.seed.cmp(&b.seed)));
}

pub fn sweep_means(rows: &[SweepRow]) -> Vec<SweepMean> {
    let mut cells: Vec<((f64, f64), Vec<f64>)> = Vec::new();
    for r in rows {
        match cells.iter_mut().find(|(k, _)| *k == (r.p, r.q)) {
            Some((_, v)) => v.push(r.accuracy),
            None => cells.push(((r.p, r.q), vec![r.accuracy])),
        }
    }
    cells.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    cells
        .into_iter()
        .map(|((p, q), v)| SweepMean {
            p,
            q,
            runs: v.len(),
            mean_accuracy: v.iter().sum::<f64>() / v.len() as f64,
            sigma_population: sigma(&v).0,
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("p\tq\tseed\taccuracy\n");
    for r in rows {
        writeln!(s, "{}\t{}\t{}\t{:.6}", r.p, r.q, r.seed, r.accuracy).unwrap();
    }
    s
}

pub fn sweep_means_table(means: &[SweepMean]) -> String {
    let mut s = String::from("p\tq\truns\tmean_accuracy\tsigma_population\n");
    for m in means {
        writeln!(s, "{}\t{}\t{}\t{:.6}\t{:.6}", m.p, m.q, m.runs, m.mean_accuracy, m.sigma_population).unwrap();
    }
    s
}

/// Wall time of one benchmark task at one worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub task: String,
    pub workers: usize,
    pub seconds: f64,
    pub speedup: f64,
    /// Output identical to the single-worker run.
    pub matches_serial: bool,
}

pub fn timing_table(rows: &[TimingRow]) -> String {
    let mut s = String::from("task\tworkers\tseconds\tspeedup\tmatches_serial\n");
    for r in rows {
        writeln!(s, "{}\t{}\t{:.6}\t{:.3}\t{}", r.task, r.workers, r.seconds, r.speedup, r.matches_serial).unwrap();
    }
    s
}

#[cfg(test)]
mod tests;
