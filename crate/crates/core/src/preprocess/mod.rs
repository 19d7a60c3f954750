//! Spatial relations between a target feature type and its relevant types,
//! turned into plain attributes for the learner.

mod normalize;
mod table;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{normalize, ColumnRange, NormalizationSpec};
pub use table::{emit_table, read_table, Column, ColumnData, TabularDataset};

use crate::ingest::{AttrKind, AttrValue, FeatureCollection, GeoFeature, GeometryKind};
use crate::raster::{
    index_buffered_lines, index_feature, paint, Field, FeatureKey, GridSpec, MembershipSet,
    PixelSet, RasterError,
};
use crate::rcc::{min_distance, sup_tnorm, FuzzyRelationEval, OverlapMode, ResolutionParams, RccError};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid relation spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("feature type '{0}' is not loaded")]
    MissingType(String),
    #[error("feature '{0}' has no index entry")]
    Unindexed(String),
    #[error("attribute name '{0}' is already in use")]
    NameCollision(String),
    #[error("no '{type_name}' instances to measure {relation} against")]
    NoInstances { type_name: String, relation: String },
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Rcc(#[from] RccError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Distance,
    Length,
    Overlap,
}

impl Relation {
    /// Column-name suffix.
    pub fn suffix(self) -> &'static str {
        match self {
            Relation::Distance => "dist",
            Relation::Length => "len",
            Relation::Overlap => "overlap",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Distance => "distance",
            Relation::Length => "length",
            Relation::Overlap => "overlap",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One column per relevant instance.
    InstanceLevel,
    /// One column per relevant type, aggregated over its instances.
    #[default]
    TypeLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevantType {
    #[serde(rename = "type")]
    pub type_name: String,
    pub relations: Vec<Relation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSpec {
    pub target: String,
    pub relevant: Vec<RelevantType>,
    #[serde(default)]
    pub granularity: Granularity,
}

impl RelationSpec {
    /// Cities against three line types (distance, length) and three area
    /// types (overlap).
    pub fn reference() -> Self {
        let rel = |t: &str, r: &[Relation]| RelevantType { type_name: t.into(), relations: r.to_vec() };
        let dl = [Relation::Distance, Relation::Length];
        let ov = [Relation::Overlap];
        Self {
            target: "city".into(),
            relevant: vec![
                rel("river", &dl),
                rel("road", &dl),
                rel("rail", &dl),
                rel("mount", &ov),
                rel("veg", &ov),
                rel("urban", &ov),
            ],
            granularity: Granularity::TypeLevel,
        }
    }

    /// Checks the spec's own shape, and the geometry kinds of the named types
    /// when they are known. All problems are reported together.
    pub fn validate(&self, kinds: &BTreeMap<String, GeometryKind>) -> Result<(), PreprocessError> {
        let mut errs = Vec::new();
        if self.target.is_empty() {
            errs.push("target type name is empty".to_string());
        }
        if !kinds.is_empty() && !kinds.contains_key(&self.target) {
            errs.push(format!("target type '{}' is not loaded", self.target));
        }
        let mut seen = Vec::new();
        for r in &self.relevant {
            let t = &r.type_name;
            if *t == self.target {
                errs.push(format!("relevant type '{t}' equals the target type"));
            }
            if seen.contains(&t) {
                errs.push(format!("relevant type '{t}' listed twice"));
            }
            seen.push(t);
            if r.relations.is_empty() {
                errs.push(format!("relevant type '{t}' has no relations"));
            }
            let mut rels = r.relations.clone();
            rels.sort();
            rels.dedup();
            if rels.len() != r.relations.len() {
                errs.push(format!("relevant type '{t}' repeats a relation"));
            }
            match kinds.get(t) {
                None if !kinds.is_empty() => errs.push(format!("relevant type '{t}' is not loaded")),
                None => {}
                Some(kind) => {
                    for rel in &r.relations {
                        let ok = match rel {
                            Relation::Distance => true,
                            Relation::Length => *kind == GeometryKind::LineString,
                            Relation::Overlap => *kind != GeometryKind::Point,
                        };
                        if !ok {
                            errs.push(format!("relation {rel} is not defined for {kind} type '{t}'"));
                        }
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PreprocessError::InvalidSpec(errs))
        }
    }

    /// Names of the type-level synthesized columns, in emission order.
    pub fn type_columns(&self) -> Vec<String> {
        self.relevant
            .iter()
            .flat_map(|r| r.relations.iter().map(move |rel| format!("{}_{}", r.type_name, rel.suffix())))
            .collect()
    }
}

/// Attributes computed from a relevant type restricted to the instances whose
/// boolean attribute `subset` is true (all instances when unset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DerivedAttr {
    /// Boolean: some selected instance touches or lies within the target.
    AnyWithin {
        name: String,
        source: String,
        #[serde(default)]
        subset: Option<String>,
    },
    /// Numeric: distance to the nearest selected instance.
    DistanceTo {
        name: String,
        source: String,
        #[serde(default)]
        subset: Option<String>,
    },
}

impl DerivedAttr {
    pub fn name(&self) -> &str {
        match self {
            DerivedAttr::AnyWithin { name, .. } | DerivedAttr::DistanceTo { name, .. } => name,
        }
    }

    pub fn source(&self) -> &str {
        match self {
            DerivedAttr::AnyWithin { source, .. } | DerivedAttr::DistanceTo { source, .. } => source,
        }
    }

    fn subset(&self) -> Option<&str> {
        match self {
            DerivedAttr::AnyWithin { subset, .. } | DerivedAttr::DistanceTo { subset, .. } => {
                subset.as_deref()
            }
        }
    }

    /// Expressways among roads touching a city, and distance from a city to
    /// the nearest capital.
    pub fn reference() -> Vec<DerivedAttr> {
        vec![
            DerivedAttr::AnyWithin {
                name: "Have_Exp".into(),
                source: "road".into(),
                subset: Some("expressway".into()),
            },
            DerivedAttr::DistanceTo {
                name: "Cdist".into(),
                source: "city".into(),
                subset: Some("capital".into()),
            },
        ]
    }
}

/// Knobs of relation evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelateParams {
    pub resolution: ResolutionParams,
    #[serde(default)]
    pub overlap_mode: OverlapMode,
    /// Half-width, in pixels, of the strip a line becomes for overlap.
    pub line_half_width: f64,
    /// When set, overlap degrees are replaced by 1 if ≥ the threshold and 0 otherwise.
    #[serde(default)]
    pub crisp_overlap_threshold: Option<f64>,
}

impl Default for RelateParams {
    fn default() -> Self {
        Self {
            resolution: ResolutionParams::default(),
            overlap_mode: OverlapMode::Pointwise,
            line_half_width: 1.0,
            crisp_overlap_threshold: None,
        }
    }
}

/// Membership fields and pixel sets needed to evaluate a relation spec.
pub struct RelationIndex {
    m: usize,
    params: RelateParams,
    /// Eroded fields (pointwise mode) or scalar collapses (scalar mode).
    eroded: BTreeMap<FeatureKey, Field>,
    scalars: BTreeMap<FeatureKey, f64>,
    pixels: BTreeMap<FeatureKey, PixelSet>,
}

fn collection<'a>(
    all: &'a BTreeMap<String, FeatureCollection>,
    name: &str,
) -> Result<&'a FeatureCollection, PreprocessError> {
    all.get(name).ok_or_else(|| PreprocessError::MissingType(name.to_string()))
}

impl RelationIndex {
    pub fn build(
        collections: &BTreeMap<String, FeatureCollection>,
        spec: &RelationSpec,
        grid: &GridSpec,
        mfs: &MembershipSet,
        params: &RelateParams,
    ) -> Result<Self, PreprocessError> {
        let target = collection(collections, &spec.target)?;
        let wants = |rel: Relation| spec.relevant.iter().any(|r| r.relations.contains(&rel));
        let mut fields = Vec::new();
        let mut pixels = BTreeMap::new();
        if wants(Relation::Overlap) {
            fields.extend(
                target
                    .features()
                    .par_iter()
                    .map(|f| index_feature(&target.type_name, f, grid, mfs).map(|m| (m.key, m.field)))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        if wants(Relation::Length) {
            pixels.extend(paint_all(target, grid)?);
        }
        for r in &spec.relevant {
            let coll = collection(collections, &r.type_name)?;
            if r.relations.contains(&Relation::Overlap) {
                let map = if coll.geometry_kind == GeometryKind::LineString {
                    index_buffered_lines(coll, grid, mfs, params.line_half_width)?
                } else {
                    crate::raster::index_all(&[coll], grid, mfs)?
                };
                fields.extend(map.into_values().map(|m| (m.key, m.field)));
            }
            if r.relations.contains(&Relation::Length) {
                pixels.extend(paint_all(coll, grid)?);
            }
        }
        let eval = FuzzyRelationEval::new(grid.n, params.resolution);
        let mut eroded = BTreeMap::new();
        let mut scalars = BTreeMap::new();
        match params.overlap_mode {
            OverlapMode::Pointwise => {
                let out = fields
                    .into_par_iter()
                    .map(|(k, f)| eval.erode(&f).map(|e| (k, e)))
                    .collect::<Result<Vec<_>, _>>()?;
                eroded.extend(out);
            }
            OverlapMode::Scalar => {
                let out = fields
                    .into_par_iter()
                    .map(|(k, f)| eval.scalar_collapse(&f).map(|s| (k, s)))
                    .collect::<Result<Vec<_>, _>>()?;
                scalars.extend(out);
            }
        }
        Ok(Self { m: grid.m, params: params.clone(), eroded, scalars, pixels })
    }

    fn lookup<T>(map: &BTreeMap<FeatureKey, T>, key: FeatureKey) -> Result<&T, PreprocessError> {
        map.get(&key).ok_or_else(|| PreprocessError::Unindexed(key.to_string()))
    }

    /// Value of one relation between a target instance and a relevant instance.
    pub fn value(
        &self,
        rel: Relation,
        target_type: &str,
        t: &GeoFeature,
        relevant_type: &str,
        f: &GeoFeature,
    ) -> Result<f64, PreprocessError> {
        let tk = || FeatureKey::feature(target_type, &t.id);
        let fk = || FeatureKey::feature(relevant_type, &f.id);
        Ok(match rel {
            Relation::Distance => min_distance(&t.geometry, &f.geometry),
            Relation::Length => {
                let a = Self::lookup(&self.pixels, tk())?;
                let b = Self::lookup(&self.pixels, fk())?;
                a.intersection_len(b) as f64 / self.m as f64
            }
            Relation::Overlap => {
                let v = match self.params.overlap_mode {
                    OverlapMode::Pointwise => sup_tnorm(
                        Self::lookup(&self.eroded, tk())?,
                        Self::lookup(&self.eroded, fk())?,
                    ),
                    OverlapMode::Scalar => {
                        let a = *Self::lookup(&self.scalars, tk())?;
                        let b = *Self::lookup(&self.scalars, fk())?;
                        (a + b - 1.0).max(0.0)
                    }
                };
                match self.params.crisp_overlap_threshold {
                    Some(th) => f64::from(u8::from(v >= th)),
                    None => v,
                }
            }
        })
    }
}

fn paint_all(
    coll: &FeatureCollection,
    grid: &GridSpec,
) -> Result<Vec<(FeatureKey, PixelSet)>, PreprocessError> {
    coll.features()
        .par_iter()
        .map(|f| {
            paint(&f.geometry, grid)
                .map(|p| (FeatureKey::feature(&coll.type_name, &f.id), p))
                .map_err(|e| match e {
                    RasterError::OutsideScope => RasterError::FeatureOutsideScope(format!(
                        "{}/{}",
                        coll.type_name, f.id
                    ))
                    .into(),
                    other => other.into(),
                })
        })
        .collect()
}

fn attr_cell<'a>(f: &'a GeoFeature, name: &str) -> Result<&'a AttrValue, PreprocessError> {
    f.attributes
        .get(name)
        .ok_or_else(|| PreprocessError::Schema(format!("feature '{}' lacks attribute '{name}'", f.id)))
}

/// Ids, labels and raw attribute columns of the target type.
pub fn base_dataset(target: &FeatureCollection) -> Result<TabularDataset, PreprocessError> {
    let feats = target.features();
    let mut ds = TabularDataset::new(
        feats.iter().map(|f| f.id.clone()).collect(),
        feats.iter().map(|f| f.label.clone()).collect(),
    );
    for (name, kind) in &target.schema {
        let cell = |f| attr_cell(f, name);
        let mismatch = |f: &GeoFeature| {
            PreprocessError::Schema(format!("attribute '{name}' of '{}' is not {kind}", f.id))
        };
        let data = match kind {
            AttrKind::Numeric => ColumnData::Numeric(
                feats
                    .iter()
                    .map(|f| match cell(f)? {
                        AttrValue::Numeric(v) => Ok(*v),
                        _ => Err(mismatch(f)),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            AttrKind::Boolean => ColumnData::Boolean(
                feats
                    .iter()
                    .map(|f| match cell(f)? {
                        AttrValue::Boolean(v) => Ok(*v),
                        _ => Err(mismatch(f)),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            AttrKind::Nominal => ColumnData::Nominal(
                feats.iter().map(|f| cell(f).map(|v| v.render())).collect::<Result<_, _>>()?,
            ),
        };
        ds.push_column(name.clone(), data)?;
    }
    Ok(ds)
}

/// Computes every row in parallel and returns the values column-major.
fn compute_columns(
    target: &FeatureCollection,
    ncols: usize,
    row: impl Fn(&GeoFeature) -> Result<Vec<f64>, PreprocessError> + Sync + Send,
) -> Result<Vec<Vec<f64>>, PreprocessError> {
    let rows = target.features().par_iter().map(row).collect::<Result<Vec<_>, _>>()?;
    let mut cols = vec![Vec::with_capacity(rows.len()); ncols];
    for r in rows {
        for (c, v) in cols.iter_mut().zip(r) {
            c.push(v);
        }
    }
    Ok(cols)
}

/// One column per (relevant instance, relation), named `<id>_<relation>`.
pub fn relate_instance_level(
    collections: &BTreeMap<String, FeatureCollection>,
    spec: &RelationSpec,
    index: &RelationIndex,
) -> Result<TabularDataset, PreprocessError> {
    let target = collection(collections, &spec.target)?;
    let mut plan: Vec<(&str, &GeoFeature, Relation)> = Vec::new();
    for r in &spec.relevant {
        let coll = collection(collections, &r.type_name)?;
        for f in coll.features() {
            for &rel in &r.relations {
                plan.push((&coll.type_name, f, rel));
            }
        }
    }
    let cols = compute_columns(target, plan.len(), |t| {
        plan.iter()
            .map(|&(ft, f, rel)| index.value(rel, &target.type_name, t, ft, f))
            .collect()
    })?;
    let mut ds = base_dataset(target)?;
    for ((_, f, rel), values) in plan.iter().zip(cols) {
        ds.push_column(format!("{}_{}", f.id, rel.suffix()), ColumnData::Numeric(values))?;
    }
    Ok(ds)
}

/// One column per (relevant type, relation), aggregating over instances:
/// minimum distance, total length, maximum overlap.
pub fn relate_type_level(
    collections: &BTreeMap<String, FeatureCollection>,
    spec: &RelationSpec,
    index: &RelationIndex,
) -> Result<TabularDataset, PreprocessError> {
    let target = collection(collections, &spec.target)?;
    let mut plan: Vec<(&FeatureCollection, Relation)> = Vec::new();
    for r in &spec.relevant {
        let coll = collection(collections, &r.type_name)?;
        for &rel in &r.relations {
            if rel == Relation::Distance && coll.is_empty() {
                return Err(PreprocessError::NoInstances {
                    type_name: coll.type_name.clone(),
                    relation: rel.to_string(),
                });
            }
            plan.push((coll, rel));
        }
    }
    let cols = compute_columns(target, plan.len(), |t| {
        plan.iter()
            .map(|&(coll, rel)| {
                let vals = coll
                    .features()
                    .iter()
                    .map(|f| index.value(rel, &target.type_name, t, &coll.type_name, f));
                let mut acc = match rel {
                    Relation::Distance => f64::INFINITY,
                    Relation::Length | Relation::Overlap => 0.0,
                };
                for v in vals {
                    let v = v?;
                    acc = match rel {
                        Relation::Distance => acc.min(v),
                        Relation::Length => acc + v,
                        Relation::Overlap => acc.max(v),
                    };
                }
                Ok(acc)
            })
            .collect()
    })?;
    let mut ds = base_dataset(target)?;
    for ((coll, rel), values) in plan.iter().zip(cols) {
        ds.push_column(format!("{}_{}", coll.type_name, rel.suffix()), ColumnData::Numeric(values))?;
    }
    Ok(ds)
}

fn selected<'a>(
    coll: &'a FeatureCollection,
    subset: Option<&str>,
) -> Result<Vec<&'a GeoFeature>, PreprocessError> {
    let Some(attr) = subset else {
        return Ok(coll.features().iter().collect());
    };
    match coll.schema.iter().find(|(n, _)| n == attr) {
        Some((_, AttrKind::Boolean)) => {}
        _ => {
            return Err(PreprocessError::Schema(format!(
                "'{}' has no boolean attribute '{attr}'",
                coll.type_name
            )))
        }
    }
    Ok(coll
        .features()
        .iter()
        .filter(|f| f.attributes.get(attr) == Some(&AttrValue::Boolean(true)))
        .collect())
}

/// Appends derived attributes to a dataset whose rows are the target features.
pub fn add_derived(
    ds: &mut TabularDataset,
    collections: &BTreeMap<String, FeatureCollection>,
    target: &str,
    derived: &[DerivedAttr],
) -> Result<(), PreprocessError> {
    let target = collection(collections, target)?;
    for d in derived {
        let source = collection(collections, d.source())?;
        let chosen = selected(source, d.subset())?;
        let data = match d {
            DerivedAttr::AnyWithin { .. } => ColumnData::Boolean(
                target
                    .features()
                    .par_iter()
                    .map(|t| chosen.iter().any(|f| min_distance(&t.geometry, &f.geometry) == 0.0))
                    .collect(),
            ),
            DerivedAttr::DistanceTo { .. } => {
                if chosen.is_empty() {
                    return Err(PreprocessError::NoInstances {
                        type_name: source.type_name.clone(),
                        relation: format!("'{}'", d.name()),
                    });
                }
                ColumnData::Numeric(
                    target
                        .features()
                        .par_iter()
                        .map(|t| {
                            chosen
                                .iter()
                                .map(|f| min_distance(&t.geometry, &f.geometry))
                                .fold(f64::INFINITY, f64::min)
                        })
                        .collect(),
                )
            }
        };
        ds.push_column(d.name(), data)?;
    }
    Ok(())
}

/// Full preprocessing: index, relate at the spec's granularity, add derived attributes.
pub fn preprocess(
    collections: &BTreeMap<String, FeatureCollection>,
    spec: &RelationSpec,
    derived: &[DerivedAttr],
    grid: &GridSpec,
    mfs: &MembershipSet,
    params: &RelateParams,
) -> Result<TabularDataset, PreprocessError> {
    let kinds = collections.iter().map(|(k, c)| (k.clone(), c.geometry_kind)).collect();
    spec.validate(&kinds)?;
    let index = RelationIndex::build(collections, spec, grid, mfs, params)?;
    let mut ds = match spec.granularity {
        Granularity::InstanceLevel => relate_instance_level(collections, spec, &index)?,
        Granularity::TypeLevel => relate_type_level(collections, spec, &index)?,
    };
    add_derived(&mut ds, collections, &spec.target, derived)?;
    Ok(ds)
}
