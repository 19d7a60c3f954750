//! Scope tiling, feature rasterization and per-tile fuzzy membership.

mod grid;
mod membership;
mod rasterize;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{Field, GridSpec};
pub use membership::{membership_from_coverage, MembershipFunctionSpec, MembershipSet};
pub use rasterize::{
    coverage_from_pixels, paint, paint_buffered_line, rasterize, CoverageKind, PixelSet,
    TileCoverage,
};

use crate::ingest::{FeatureCollection, GeoFeature, GeometryKind};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("zero-area scope")]
    ZeroAreaScope,
    #[error("geometry lies outside the grid scope")]
    OutsideScope,
    #[error("feature '{0}' lies outside the grid scope")]
    FeatureOutsideScope(String),
    #[error("invalid membership function: {0}")]
    BadMembership(String),
    #[error("coverage kind {coverage:?} does not match membership function kind {membership:?}")]
    KindMismatch { coverage: CoverageKind, membership: CoverageKind },
    #[error("grid mismatch: expected side {expected}, found {found}")]
    GridMismatch { expected: usize, found: usize },
    #[error("membership degree {0} outside [0, 1]")]
    DegreeOutOfRange(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Instance {
    Feature(String),
    Aggregate,
}

/// Identifies a membership field: one feature instance, or a whole feature type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureKey {
    pub type_name: String,
    pub instance: Instance,
}

impl FeatureKey {
    pub fn feature(type_name: &str, id: &str) -> Self {
        Self { type_name: type_name.to_string(), instance: Instance::Feature(id.to_string()) }
    }

    pub fn aggregate(type_name: &str) -> Self {
        Self { type_name: type_name.to_string(), instance: Instance::Aggregate }
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.instance {
            Instance::Feature(id) => write!(f, "{}/{}", self.type_name, id),
            Instance::Aggregate => write!(f, "{}/*", self.type_name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipField {
    pub key: FeatureKey,
    pub field: Field,
}

pub type FieldMap = BTreeMap<FeatureKey, MembershipField>;

/// Membership field of a single feature instance.
pub fn index_feature(
    type_name: &str,
    feature: &GeoFeature,
    grid: &GridSpec,
    mfs: &MembershipSet,
) -> Result<MembershipField, RasterError> {
    let cov = rasterize(&feature.id, &feature.geometry, grid).map_err(|e| match e {
        RasterError::OutsideScope => {
            RasterError::FeatureOutsideScope(format!("{type_name}/{}", feature.id))
        }
        other => other,
    })?;
    let field = membership_from_coverage(&cov, mfs.for_kind(cov.kind), grid)?;
    Ok(MembershipField { key: FeatureKey::feature(type_name, &feature.id), field })
}

/// Membership fields of every feature of every collection.
///
/// Features are processed in parallel on the current rayon pool; the result
/// does not depend on the number of workers.
pub fn index_all(
    collections: &[&FeatureCollection],
    grid: &GridSpec,
    mfs: &MembershipSet,
) -> Result<FieldMap, RasterError> {
    let tasks: Vec<(&str, &GeoFeature)> = collections
        .iter()
        .flat_map(|c| c.features().iter().map(move |f| (c.type_name.as_str(), f)))
        .collect();
    let fields = tasks
        .par_iter()
        .map(|(t, f)| index_feature(t, f, grid, mfs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(fields.into_iter().map(|f| (f.key.clone(), f)).collect())
}

/// Area-kind membership of lines widened to `half_width` pixels, keyed like
/// instance fields.
pub fn index_buffered_lines(
    collection: &FeatureCollection,
    grid: &GridSpec,
    mfs: &MembershipSet,
    half_width: f64,
) -> Result<FieldMap, RasterError> {
    if collection.geometry_kind != GeometryKind::LineString {
        return Err(RasterError::BadGrid(format!(
            "'{}' is not a line feature type",
            collection.type_name
        )));
    }
    let fields = collection
        .features()
        .par_iter()
        .map(|f| {
            let px = paint_buffered_line(&f.geometry, grid, half_width)?;
            let cov = coverage_from_pixels(&f.id, CoverageKind::Area, &px, grid);
            let field = membership_from_coverage(&cov, &mfs.area, grid)?;
            Ok(MembershipField { key: FeatureKey::feature(&collection.type_name, &f.id), field })
        })
        .collect::<Result<Vec<_>, RasterError>>()?;
    Ok(fields.into_iter().map(|f| (f.key.clone(), f)).collect())
}

/// Fuzzy union (pointwise max) of all instance fields of one type, folded in key order.
pub fn aggregate_type_field(fields: &FieldMap, type_name: &str, n: usize) -> MembershipField {
    let field = fields
        .values()
        .filter(|f| f.key.type_name == type_name && f.key.instance != Instance::Aggregate)
        .fold(Field::zeros(n), |acc, f| acc.union(&f.field));
    MembershipField { key: FeatureKey::aggregate(type_name), field }
}
