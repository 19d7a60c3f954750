//! Stage orchestration: load, preprocess, split, normalize, train, classify,
//! evaluate, noise sweep and parallel benchmark, with a run directory and
//! a reproducibility manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{hex, ConfigError, PipelineConfig};
use crate::eval::{
    evaluate, inject_noise, sort_sweep, summarize, sweep_means, sweep_means_table, sweep_table, timing_table,
    EvalError, EvalReport, NoiseSpec, RunSummary, SweepRow, TimingRow,
};
use crate::ingest::{compute_scope, load_collection, FeatureCollection, IngestError, LoadOptions, Scope};
use crate::learner::{train, Classifier, LearnError};
use crate::preprocess::{
    emit_table, normalize, preprocess, read_table, NormalizationSpec, PreprocessError, Relation, RelationSpec,
    RelevantType, TabularDataset,
};
use crate::raster::{index_all, GridSpec, RasterError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{missing} not found in {dir}; {hint}")]
    Missing { missing: String, dir: String, hint: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Loaded feature types and the scope they share.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub collections: BTreeMap<String, FeatureCollection>,
    pub scope: Scope,
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    let dir = cfg.data_dir();
    let opts = LoadOptions {
        delimiter: cfg.data.delimiter.as_bytes()[0],
        id_column: cfg.data.id_column.clone(),
        label_column: Some(cfg.data.label_column.clone()),
    };
    let collections = cfg
        .data
        .types
        .iter()
        .map(|t| {
            let attrs = t.attributes.as_ref().map(|a| dir.join(a));
            let c = load_collection(&dir.join(&t.geometry), attrs.as_deref(), &t.name, &opts)?;
            Ok((t.name.clone(), c))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let scope = scope_for(cfg, &collections)?;
    Ok(Inputs { collections, scope })
}

pub fn scope_for(cfg: &PipelineConfig, collections: &BTreeMap<String, FeatureCollection>) -> Result<Scope> {
    Ok(match cfg.grid.scope {
        Some([a, b, c, d]) => Scope::new(a, b, c, d)?,
        None => compute_scope(&collections.values().collect::<Vec<_>>(), cfg.grid.padding)?,
    })
}

pub fn grid_for(cfg: &PipelineConfig, scope: Scope) -> Result<GridSpec> {
    Ok(GridSpec::new(scope, cfg.grid.n, cfg.grid.m)?)
}

/// Seed of the noise stream for a run seed, decorrelated from split and learner.
pub fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Copy of the inputs with the configured types perturbed. The scope is kept.
pub fn noisy_inputs(inputs: &Inputs, cfg: &PipelineConfig, noise: &NoiseSpec, seed: u64) -> Result<Inputs> {
    let mut out = inputs.clone();
    let types = if cfg.noise.types.is_empty() { vec![cfg.relations.target.clone()] } else { cfg.noise.types.clone() };
    for (i, t) in types.iter().enumerate() {
        let c = inputs
            .collections
            .get(t)
            .ok_or_else(|| PipelineError::Preprocess(PreprocessError::MissingType(t.clone())))?;
        let (noisy, _) = inject_noise(c, noise, &inputs.scope, noise_seed(seed).wrapping_add(i as u64))?;
        out.collections.insert(t.clone(), noisy);
    }
    Ok(out)
}

/// The raw (unnormalized) learner table.
pub fn build_table(inputs: &Inputs, cfg: &PipelineConfig) -> Result<TabularDataset> {
    let grid = grid_for(cfg, inputs.scope)?;
    Ok(preprocess(
        &inputs.collections,
        &cfg.relations,
        &cfg.derived,
        &grid,
        &cfg.membership,
        &cfg.relate_params(),
    )?)
}

/// One train/test run: normalization fitted on train, classifier, report.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub train: TabularDataset,
    pub test: TabularDataset,
    pub normalization: NormalizationSpec,
    pub classifier: Classifier,
    pub report: EvalReport,
}

/// Splits with `seed`, then normalizes, trains and evaluates each fold.
pub fn train_and_evaluate(table: &TabularDataset, cfg: &PipelineConfig, seed: u64) -> Result<Vec<RunOutput>> {
    let folds = crate::eval::split(table, &cfg.split, seed)?;
    folds
        .iter()
        .map(|f| {
            let (train_raw, test_raw) = f.apply(table);
            let (train_ds, spec) = normalize(&train_raw, None)?;
            let (test_ds, _) = normalize(&test_raw, Some(&spec))?;
            let clf = train(&train_ds, seed, &cfg.learner)?;
            let report = evaluate(&clf, &test_ds)?;
            Ok(RunOutput { train: train_ds, test: test_ds, normalization: spec, classifier: clf, report })
        })
        .collect()
}

/// Mean overall accuracy of a run's folds.
pub fn mean_accuracy(runs: &[RunOutput]) -> f64 {
    runs.iter().map(|r| r.report.overall_accuracy).sum::<f64>() / runs.len().max(1) as f64
}

/// Accuracy of the full pipeline on inputs perturbed by `noise`, for one seed.
pub fn noisy_accuracy(inputs: &Inputs, cfg: &PipelineConfig, noise: &NoiseSpec, seed: u64) -> Result<f64> {
    let noisy = noisy_inputs(inputs, cfg, noise, seed)?;
    let table = build_table(&noisy, cfg)?;
    Ok(mean_accuracy(&train_and_evaluate(&table, cfg, seed)?))
}

/// Accuracy for every (p, q) cell and seed, canonically sorted.
pub fn noise_sweep(inputs: &Inputs, cfg: &PipelineConfig, cells: &[NoiseSpec], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(NoiseSpec, u64)> = cells.iter().flat_map(|c| seeds.iter().map(move |&s| (*c, s))).collect();
    let mut rows = jobs
        .par_iter()
        .map(|(cell, seed)| {
            let accuracy = noisy_accuracy(inputs, cfg, cell, *seed)?;
            Ok(SweepRow { p: cell.p, q: cell.q, seed: *seed, accuracy })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_sweep(&mut rows);
    Ok(rows)
}

/// Times membership indexing and city overlap evaluation at each worker
/// count, checking every output against the single-worker one.
pub fn benchmark_parallel(inputs: &Inputs, cfg: &PipelineConfig) -> Result<Vec<TimingRow>> {
    let grid = grid_for(cfg, inputs.scope)?;
    let colls: Vec<&FeatureCollection> = inputs.collections.values().collect();
    let membership = || -> Result<String> {
        let fields = index_all(&colls, &grid, &cfg.membership)?;
        Ok(serde_json::to_string(&fields.values().collect::<Vec<_>>()).expect("fields serialize"))
    };
    let overlap_spec = RelationSpec {
        target: cfg.relations.target.clone(),
        relevant: inputs
            .collections
            .values()
            .filter(|c| c.type_name != cfg.relations.target && c.geometry_kind != crate::ingest::GeometryKind::Point)
            .map(|c| RelevantType { type_name: c.type_name.clone(), relations: vec![Relation::Overlap] })
            .collect(),
        granularity: cfg.relations.granularity,
    };
    let overlap = || -> Result<String> {
        let ds = preprocess(&inputs.collections, &overlap_spec, &[], &grid, &cfg.membership, &cfg.relate_params())?;
        Ok(ds.to_delimited()?)
    };
    let tasks: [(&str, &(dyn Fn() -> Result<String> + Sync)); 2] = [("membership", &membership), ("overlap", &overlap)];
    let mut rows = Vec::new();
    for (task, run) in tasks {
        let reference = crate::with_workers(1, run)?;
        let mut base = None;
        for &w in &cfg.bench.workers {
            let mut best = f64::INFINITY;
            let mut same = true;
            for _ in 0..cfg.bench.repeats.max(1) {
                let t0 = Instant::now();
                let out = crate::with_workers(w, run)?;
                best = best.min(t0.elapsed().as_secs_f64());
                same &= out == reference;
            }
            let base = *base.get_or_insert(best);
            rows.push(TimingRow {
                task: task.to_string(),
                workers: w,
                seconds: best,
                speedup: if best > 0.0 { base / best } else { 1.0 },
                matches_serial: same,
            });
        }
    }
    Ok(rows)
}

// ---- run directory ----

pub const TABLE: &str = "table.tsv";
pub const TRAIN: &str = "train.tsv";
pub const TEST: &str = "test.tsv";
pub const NORMALIZATION: &str = "normalization.json";
pub const MODEL: &str = "model.json";
pub const PREDICTIONS: &str = "predictions.tsv";
pub const REPORT: &str = "report.json";
pub const SWEEP: &str = "sweep.tsv";
pub const SWEEP_MEANS: &str = "sweep_means.tsv";
pub const MANIFEST: &str = "manifest.json";
/// Timing outputs; excluded from the manifest and from reproducibility checks.
pub const TIMING: &str = "timing.tsv";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn need(dir: &Path, file: &str, hint: &str) -> Result<PathBuf> {
    let p = dir.join(file);
    if p.exists() {
        Ok(p)
    } else {
        Err(PipelineError::Missing { missing: file.to_string(), dir: dir.display().to_string(), hint: hint.to_string() })
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Versioned evaluation output: one report per run plus the run summary.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationFile {
    pub version: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<EvalReport>,
    pub summary: RunSummary,
}

pub struct Run<'a> {
    pub cfg: &'a PipelineConfig,
    pub dir: PathBuf,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a PipelineConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        Ok(Run { cfg, dir })
    }

    fn path(&self, f: &str) -> PathBuf {
        self.dir.join(f)
    }

    fn stage<T>(&self, stage: &'static str, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
    where
        T: Send,
    {
        let out = crate::with_workers(self.cfg.workers, f).map_err(|e| PipelineError::Stage { stage, source: Box::new(e) })?;
        self.write_manifest().map_err(|e| PipelineError::Stage { stage, source: Box::new(e) })?;
        Ok(out)
    }

    pub fn preprocess(&self) -> Result<()> {
        self.stage("preprocess", || {
            let inputs = load_inputs(self.cfg)?;
            let table = build_table(&inputs, self.cfg)?;
            emit_table(&table, &self.path(TABLE))?;
            Ok(())
        })
    }

    pub fn train(&self) -> Result<()> {
        self.stage("train", || {
            let table = read_table(&need(&self.dir, TABLE, "run the preprocess stage first")?)?;
            let run = first_run(train_and_evaluate_train_only(&table, self.cfg, self.cfg.seed)?)?;
            emit_table(&run.0, &self.path(TRAIN))?;
            emit_table(&run.1, &self.path(TEST))?;
            write(&self.path(NORMALIZATION), &json(&run.2))?;
            run.3.save(&self.path(MODEL))?;
            Ok(())
        })
    }

    pub fn classify(&self) -> Result<()> {
        self.stage("classify", || {
            let clf = Classifier::load(&need(&self.dir, MODEL, "train first")?)?;
            let test = read_table(&need(&self.dir, TEST, "train first")?)?;
            let pred = clf.classify_dataset(&test)?;
            let mut out = String::from("id\tpredicted\tactual\n");
            for (i, p) in pred.iter().enumerate() {
                out.push_str(&format!("{}\t{}\t{}\n", test.ids[i], p, test.labels[i].as_deref().unwrap_or("")));
            }
            write(&self.path(PREDICTIONS), &out)
        })
    }

    pub fn evaluate(&self) -> Result<()> {
        self.stage("evaluate", || {
            let clf = Classifier::load(&need(&self.dir, MODEL, "train first")?)?;
            let test = read_table(&need(&self.dir, TEST, "train first")?)?;
            let mut runs = vec![evaluate(&clf, &test)?];
            let mut seeds = vec![self.cfg.seed];
            if self.cfg.evaluate.repeats > 1 {
                let table = read_table(&need(&self.dir, TABLE, "run the preprocess stage first")?)?;
                for i in 1..self.cfg.evaluate.repeats as u64 {
                    let seed = self.cfg.seed.wrapping_add(i);
                    runs.extend(train_and_evaluate(&table, self.cfg, seed)?.into_iter().map(|r| r.report));
                    seeds.push(seed);
                }
            }
            for r in &runs {
                check_report(r)?;
            }
            let file = EvaluationFile {
                version: crate::eval::REPORT_VERSION,
                config_hash: self.cfg.hash(),
                seeds,
                summary: summarize(&runs),
                runs,
            };
            write(&self.path(REPORT), &json(&file))
        })
    }

    pub fn sweep(&self) -> Result<()> {
        self.stage("sweep", || {
            let inputs = load_inputs(self.cfg)?;
            let rows = noise_sweep(&inputs, self.cfg, &self.cfg.noise.grid, &self.cfg.noise.seeds)?;
            write(&self.path(SWEEP), &sweep_table(&rows))?;
            write(&self.path(SWEEP_MEANS), &sweep_means_table(&sweep_means(&rows)))
        })
    }

    pub fn bench(&self) -> Result<Vec<TimingRow>> {
        let inputs = load_inputs(self.cfg).map_err(|e| PipelineError::Stage { stage: "bench", source: Box::new(e) })?;
        let rows = benchmark_parallel(&inputs, self.cfg)
            .map_err(|e| PipelineError::Stage { stage: "bench", source: Box::new(e) })?;
        write(&self.path(TIMING), &timing_table(&rows))?;
        if let Some(r) = rows.iter().find(|r| !r.matches_serial) {
            return Err(PipelineError::Invariant(format!("{} output differs at {} workers", r.task, r.workers)));
        }
        Ok(rows)
    }

    /// preprocess, train, classify and evaluate in order.
    pub fn all(&self) -> Result<()> {
        self.preprocess()?;
        self.train()?;
        self.classify()?;
        self.evaluate()
    }

    fn write_manifest(&self) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for f in [TABLE, TRAIN, TEST, NORMALIZATION, MODEL, PREDICTIONS, REPORT, SWEEP, SWEEP_MEANS] {
            let p = self.path(f);
            if p.exists() {
                artifacts.insert(f.to_string(), sha256_file(&p)?);
            }
        }
        let dir = self.cfg.data_dir();
        let mut inputs = BTreeMap::new();
        for t in &self.cfg.data.types {
            inputs.insert(format!("{}.geometry", t.name), sha256_file(&dir.join(&t.geometry))?);
            if let Some(a) = &t.attributes {
                inputs.insert(format!("{}.attributes", t.name), sha256_file(&dir.join(a))?);
            }
        }
        let mut config = self.cfg.clone();
        config.workers = 1;
        config.out_dir = PathBuf::new();
        config.data.dir = None;
        let manifest = Manifest {
            version: 1,
            crate_version: env!("CARGO_PKG_VERSION"),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            config,
            inputs,
            artifacts,
        };
        write(&self.path(MANIFEST), &json(&manifest))
    }
}

#[derive(Serialize)]
struct Manifest {
    version: u32,
    crate_version: &'static str,
    config_hash: String,
    seed: u64,
    config: PipelineConfig,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

type TrainedRun = (TabularDataset, TabularDataset, NormalizationSpec, Classifier);

/// The train stage's work: split, normalize and train, without evaluating.
fn train_and_evaluate_train_only(table: &TabularDataset, cfg: &PipelineConfig, seed: u64) -> Result<Vec<TrainedRun>> {
    let folds = crate::eval::split(table, &cfg.split, seed)?;
    folds
        .iter()
        .take(1)
        .map(|f| {
            let (train_raw, test_raw) = f.apply(table);
            let (train_ds, spec) = normalize(&train_raw, None)?;
            let (test_ds, _) = normalize(&test_raw, Some(&spec))?;
            let clf = train(&train_ds, seed, &cfg.learner)?;
            Ok((train_ds, test_ds, spec, clf))
        })
        .collect()
}

fn first_run(mut runs: Vec<TrainedRun>) -> Result<TrainedRun> {
    if runs.is_empty() {
        return Err(PipelineError::Invariant("split produced no folds".into()));
    }
    Ok(runs.swap_remove(0))
}

/// Report invariants: accuracies in [0, 1], confusion rows summing to class
/// counts, and overall accuracy equal to trace / total.
pub fn check_report(r: &EvalReport) -> Result<()> {
    let bad = |m: String| Err(PipelineError::Invariant(m));
    let total: usize = r.classes.iter().map(|c| c.count).sum();
    let mut trace = 0;
    for (i, c) in r.classes.iter().enumerate() {
        if r.confusion[i].iter().sum::<usize>() != c.count {
            return bad(format!("confusion row for '{}' does not sum to its count", c.class));
        }
        if let Some(a) = c.accuracy {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("accuracy {a} for '{}' outside [0, 1]", c.class));
            }
        }
        trace += r.confusion[i][i];
    }
    if total == 0 || (r.overall_accuracy - trace as f64 / total as f64).abs() > 1e-12 {
        return bad("overall accuracy differs from confusion trace / total".into());
    }
    Ok(())
}

/// Reads a run's report, for callers that check results.
pub fn read_report(dir: &Path) -> Result<serde_json::Value> {
    let text = read(&need(dir, REPORT, "run the evaluate stage first")?)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Invariant(format!("unreadable report: {e}")))
}
