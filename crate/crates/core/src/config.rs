//! Pipeline configuration: one TOML file holding every tunable.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{NoiseSpec, SplitSpec};
use crate::learner::LearnerConfig;
use crate::preprocess::{DerivedAttr, RelateParams, RelationSpec};
use crate::raster::MembershipSet;
use crate::rcc::{OverlapMode, ResolutionParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// Where one feature type is read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSource {
    pub name: String,
    /// Lines of `id<TAB>WKT`.
    pub geometry: PathBuf,
    /// Header-bearing attribute table joined on the id column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Base for relative paths; the config file's directory when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_id")]
    pub id_column: String,
    #[serde(default = "default_label")]
    pub label_column: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    pub types: Vec<TypeSource>,
}

fn default_id() -> String {
    "id".into()
}
fn default_label() -> String {
    "label".into()
}
fn default_delimiter() -> String {
    "\t".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub m: usize,
    /// Fraction of the data extent added on each side of the computed scope.
    pub padding: f64,
    /// Fixed scope [min_lon, min_lat, max_lon, max_lat]; computed when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scope: Option<[f64; 4]>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 64, m: 10, padding: 0.0, scope: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelateConfig {
    pub overlap_mode: OverlapMode,
    pub line_half_width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crisp_overlap_threshold: Option<f64>,
}

impl Default for RelateConfig {
    fn default() -> Self {
        let d = RelateParams::default();
        RelateConfig {
            overlap_mode: d.overlap_mode,
            line_half_width: d.line_half_width,
            crisp_overlap_threshold: d.crisp_overlap_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Independent split/train/evaluate runs, seeded seed, seed + 1, ...
    pub repeats: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { repeats: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub grid: Vec<NoiseSpec>,
    /// Seeds per grid cell.
    pub seeds: Vec<u64>,
    /// Feature types to perturb; the target type when empty.
    pub types: Vec<String>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let cell = |p, q| NoiseSpec { p, q };
        NoiseConfig {
            grid: vec![cell(0.0, 0.0), cell(0.1, 0.1), cell(0.1, 0.2), cell(0.2, 0.1), cell(0.2, 0.2)],
            seeds: (1..=10).collect(),
            types: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub workers: Vec<usize>,
    /// Timed repetitions per worker count; the minimum is reported.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { workers: vec![1, 2, 4, 8], repeats: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub resolution: ResolutionParams,
    #[serde(default)]
    pub membership: MembershipSet,
    #[serde(default = "RelationSpec::reference")]
    pub relations: RelationSpec,
    #[serde(default)]
    pub derived: Vec<DerivedAttr>,
    #[serde(default)]
    pub relate: RelateConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_seed() -> u64 {
    1
}
fn default_workers() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("run")
}

impl PipelineConfig {
    /// A config with every default filled in, reading the given types.
    pub fn with_types(types: Vec<TypeSource>) -> Self {
        PipelineConfig {
            seed: default_seed(),
            workers: default_workers(),
            out_dir: default_out(),
            data: DataConfig {
                dir: None,
                id_column: default_id(),
                label_column: default_label(),
                delimiter: default_delimiter(),
                types,
            },
            grid: GridConfig::default(),
            resolution: ResolutionParams::default(),
            membership: MembershipSet::default(),
            relations: RelationSpec::reference(),
            derived: Vec::new(),
            relate: RelateConfig::default(),
            learner: LearnerConfig::default(),
            split: SplitSpec::default(),
            evaluate: EvaluateConfig::default(),
            noise: NoiseConfig::default(),
            bench: BenchConfig::default(),
        }
    }

    /// Parses and validates. Relative data paths are resolved against
    /// `data.dir`, or `base` when that is unset.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let dir = match &cfg.data.dir {
            Some(d) if d.is_relative() => base.join(d),
            Some(d) => d.clone(),
            None => base.to_path_buf(),
        };
        cfg.data.dir = Some(dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// TOML text of the config. Unset optional knobs appear as comments.
    pub fn to_toml(&self) -> String {
        let mut text = toml::to_string(self).expect("config serializes");
        if self.relate.crisp_overlap_threshold.is_none() {
            text = text.replacen("[relate]\n", "[relate]\n# crisp_overlap_threshold = 0.5\n", 1);
        }
        if self.learner.feature_k.is_none() {
            text = text.replacen("[learner]\n", "[learner]\n# feature_k = 8\n", 1);
        }
        if self.grid.scope.is_none() {
            text = text.replacen("[grid]\n", "[grid]\n# scope = [min_lon, min_lat, max_lon, max_lat]\n", 1);
        }
        text
    }

    /// Every problem in the config, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut e = Vec::new();
        if self.workers == 0 {
            e.push("workers must be at least 1".to_string());
        }
        if self.data.types.is_empty() {
            e.push("data.types must list at least one feature type".to_string());
        }
        let mut names = BTreeSet::new();
        for t in &self.data.types {
            if !names.insert(t.name.as_str()) {
                e.push(format!("data.types: type '{}' listed twice", t.name));
            }
        }
        if self.data.delimiter.len() != 1 {
            e.push(format!("data.delimiter must be a single byte, got {:?}", self.data.delimiter));
        }
        if self.grid.n < 2 {
            e.push(format!("grid.n must be at least 2, got {}", self.grid.n));
        }
        if self.grid.m < 1 {
            e.push("grid.m must be at least 1".to_string());
        }
        if !(self.grid.padding >= 0.0 && self.grid.padding.is_finite()) {
            e.push(format!("grid.padding must be finite and >= 0, got {}", self.grid.padding));
        }
        if let Some([a, b, c, d]) = self.grid.scope {
            if !(a < c && b < d) {
                e.push(format!("grid.scope must have min < max on both axes, got [{a}, {b}, {c}, {d}]"));
            }
        }
        let r = self.resolution;
        if !(r.alpha >= 0.0 && r.alpha.is_finite()) {
            e.push(format!("resolution.alpha must be >= 0, got {}", r.alpha));
        }
        if !(r.beta > 0.0 && r.beta.is_finite()) {
            e.push(format!("resolution.beta must be > 0, got {}", r.beta));
        }
        if let Err(err) = self.membership.validate() {
            e.push(format!("membership: {err}"));
        }
        if let Err(crate::preprocess::PreprocessError::InvalidSpec(errs)) =
            self.relations.validate(&Default::default())
        {
            e.extend(errs.into_iter().map(|m| format!("relations: {m}")));
        }
        if !names.is_empty() {
            if !names.contains(self.relations.target.as_str()) {
                e.push(format!("relations.target '{}' is not among data.types", self.relations.target));
            }
            for t in &self.relations.relevant {
                if !names.contains(t.type_name.as_str()) {
                    e.push(format!("relations: type '{}' is not among data.types", t.type_name));
                }
            }
            for d in &self.derived {
                if !names.contains(d.source()) {
                    e.push(format!("derived '{}': source '{}' is not among data.types", d.name(), d.source()));
                }
            }
            for t in &self.noise.types {
                if !names.contains(t.as_str()) {
                    e.push(format!("noise.types: '{t}' is not among data.types"));
                }
            }
        }
        if !(self.relate.line_half_width >= 0.0 && self.relate.line_half_width.is_finite()) {
            e.push(format!("relate.line_half_width must be >= 0, got {}", self.relate.line_half_width));
        }
        if let Some(t) = self.relate.crisp_overlap_threshold {
            if !(0.0..=1.0).contains(&t) {
                e.push(format!("relate.crisp_overlap_threshold must lie in [0, 1], got {t}"));
            }
        }
        e.extend(self.learner.validate());
        e.extend(self.split.validate());
        if self.evaluate.repeats == 0 {
            e.push("evaluate.repeats must be at least 1".to_string());
        }
        for (i, cell) in self.noise.grid.iter().enumerate() {
            if let Err(err) = cell.validate() {
                e.push(format!("noise.grid[{i}]: {err}"));
            }
        }
        if self.bench.workers.is_empty() || self.bench.workers.contains(&0) {
            e.push("bench.workers must be a nonempty list of positive counts".to_string());
        }
        if self.bench.repeats == 0 {
            e.push("bench.repeats must be at least 1".to_string());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(e))
        }
    }

    pub fn relate_params(&self) -> RelateParams {
        RelateParams {
            resolution: self.resolution,
            overlap_mode: self.relate.overlap_mode,
            line_half_width: self.relate.line_half_width,
            crisp_overlap_threshold: self.relate.crisp_overlap_threshold,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.dir.clone().unwrap_or_default()
    }

    /// SHA-256 of the config with the worker count, output directory and
    /// data directory blanked, so it identifies the experiment only.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 1;
        c.out_dir = PathBuf::new();
        c.data.dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
