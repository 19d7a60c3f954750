//! Feature ingestion: WKT geometry files joined with delimited attribute tables.

mod geometry;
mod wkt;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{point_in_ring, point_on_segment, Coord, Geometry, GeometryKind};
pub use wkt::{emit_wkt, parse_wkt};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("WKT syntax error at byte {pos}: {msg}")]
    WktSyntax { pos: usize, msg: String },
    #[error("unsupported WKT: {0}")]
    UnsupportedWkt(String),
    #[error("polygon ring is not closed (first point differs from last)")]
    UnclosedRing,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("{path}:{line}: {source}")]
    AtLine {
        path: String,
        line: usize,
        #[source]
        source: Box<IngestError>,
    },
    #[error("{path}:{line}: expected 'id<TAB>wkt'")]
    MalformedLine { path: String, line: usize },
    #[error("duplicate feature id '{id}' in {path}")]
    DuplicateId { id: String, path: String },
    #[error("ids present in only one of the geometry/attribute files: {}", .0.join(", "))]
    JoinMismatch(Vec<String>),
    #[error("collection '{type_name}' mixes geometry kinds {first} and {other}")]
    MixedGeometryKinds { type_name: String, first: GeometryKind, other: GeometryKind },
    #[error("attribute file {path} has no '{column}' column")]
    MissingColumn { path: String, column: String },
    #[error("empty value for attribute '{column}' of feature '{id}'")]
    MissingValue { id: String, column: String },
    #[error("no geometries to compute a scope from")]
    EmptyInput,
    #[error("zero-area scope ({0})")]
    ZeroAreaScope(String),
    #[error("padding fraction must be finite and >= 0, got {0}")]
    BadPadding(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Numeric,
    Boolean,
    Nominal,
}

impl fmt::Display for AttrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttrKind::Numeric => "numeric",
            AttrKind::Boolean => "boolean",
            AttrKind::Nominal => "nominal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttrValue {
    Numeric(f64),
    Boolean(bool),
    Nominal(String),
}

impl AttrValue {
    pub fn kind(&self) -> AttrKind {
        match self {
            AttrValue::Numeric(_) => AttrKind::Numeric,
            AttrValue::Boolean(_) => AttrKind::Boolean,
            AttrValue::Nominal(_) => AttrKind::Nominal,
        }
    }

    /// Text form used in attribute predicates and tables.
    pub fn render(&self) -> String {
        match self {
            AttrValue::Numeric(v) => v.to_string(),
            AttrValue::Boolean(b) => b.to_string(),
            AttrValue::Nominal(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoFeature {
    pub id: String,
    pub geometry: Geometry,
    pub attributes: BTreeMap<String, AttrValue>,
    pub label: Option<String>,
}

/// All instances of one feature type. Features are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCollection {
    pub type_name: String,
    pub geometry_kind: GeometryKind,
    /// Attribute columns in file order, excluding the id and label columns.
    pub schema: Vec<(String, AttrKind)>,
    features: Vec<GeoFeature>,
}

impl FeatureCollection {
    /// Builds a collection, checking id uniqueness and kind homogeneity.
    pub fn new(
        type_name: impl Into<String>,
        schema: Vec<(String, AttrKind)>,
        mut features: Vec<GeoFeature>,
    ) -> Result<Self, IngestError> {
        let type_name = type_name.into();
        features.sort_by(|a, b| a.id.cmp(&b.id));
        for w in features.windows(2) {
            if w[0].id == w[1].id {
                return Err(IngestError::DuplicateId { id: w[0].id.clone(), path: type_name });
            }
        }
        let geometry_kind = match features.first() {
            Some(f) => f.geometry.kind(),
            None => GeometryKind::Polygon,
        };
        if let Some(f) = features.iter().find(|f| f.geometry.kind() != geometry_kind) {
            return Err(IngestError::MixedGeometryKinds {
                type_name,
                first: geometry_kind,
                other: f.geometry.kind(),
            });
        }
        Ok(Self { type_name, geometry_kind, schema, features })
    }

    /// A collection with no features and a declared geometry kind.
    pub fn empty(type_name: impl Into<String>, geometry_kind: GeometryKind) -> Self {
        Self { type_name: type_name.into(), geometry_kind, schema: Vec::new(), features: Vec::new() }
    }

    pub fn features(&self) -> &[GeoFeature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GeoFeature> {
        self.features
            .binary_search_by(|f| f.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.features[i])
    }

    /// Same collection with every geometry replaced through `f`.
    pub fn with_geometries(&self, mut f: impl FnMut(usize, &GeoFeature) -> Geometry) -> Self {
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(i, feat)| GeoFeature { geometry: f(i, feat), ..feat.clone() })
            .collect();
        Self { features, ..self.clone() }
    }
}

/// Options for reading an attribute table.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub id_column: String,
    pub label_column: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { delimiter: b'\t', id_column: "id".into(), label_column: Some("label".into()) }
    }
}

fn read_to_string(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path)
        .map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

/// Reads an `id<TAB>wkt` file. Blank lines and lines starting with `#` are skipped.
pub fn read_geometry_file(path: &Path) -> Result<Vec<(String, Geometry)>, IngestError> {
    let text = read_to_string(path)?;
    let shown = path.display().to_string();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (id, wkt) = trimmed
            .split_once('\t')
            .ok_or(IngestError::MalformedLine { path: shown.clone(), line: i + 1 })?;
        let id = id.trim().to_string();
        let geom = parse_wkt(wkt).map_err(|e| IngestError::AtLine {
            path: shown.clone(),
            line: i + 1,
            source: Box::new(e),
        })?;
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId { id, path: shown });
        }
        out.push((id, geom));
    }
    Ok(out)
}

struct AttributeTable {
    schema: Vec<(String, AttrKind)>,
    rows: BTreeMap<String, (BTreeMap<String, AttrValue>, Option<String>)>,
}

fn infer_kind(values: &[&str]) -> AttrKind {
    if values.iter().all(|v| v.parse::<f64>().map(f64::is_finite).unwrap_or(false)) {
        AttrKind::Numeric
    } else if values.iter().all(|v| v.eq_ignore_ascii_case("true") || v.eq_ignore_ascii_case("false")) {
        AttrKind::Boolean
    } else {
        AttrKind::Nominal
    }
}

fn read_attribute_file(path: &Path, opts: &LoadOptions) -> Result<AttributeTable, IngestError> {
    let shown = path.display().to_string();
    let file = fs::File::open(path)
        .map_err(|source| IngestError::Io { path: shown.clone(), source })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let id_idx = headers.iter().position(|h| *h == opts.id_column).ok_or_else(|| {
        IngestError::MissingColumn { path: shown.clone(), column: opts.id_column.clone() }
    })?;
    let label_idx = match &opts.label_column {
        Some(l) => headers.iter().position(|h| h == l),
        None => None,
    };
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;

    let attr_cols: Vec<usize> =
        (0..headers.len()).filter(|&c| c != id_idx && Some(c) != label_idx).collect();
    let mut schema = Vec::with_capacity(attr_cols.len());
    for &c in &attr_cols {
        let mut values = Vec::with_capacity(records.len());
        for r in &records {
            let v = r.get(c).unwrap_or("").trim();
            if v.is_empty() {
                return Err(IngestError::MissingValue {
                    id: r.get(id_idx).unwrap_or("").to_string(),
                    column: headers[c].clone(),
                });
            }
            values.push(v);
        }
        schema.push((headers[c].clone(), infer_kind(&values)));
    }

    let mut rows = BTreeMap::new();
    for r in &records {
        let id = r.get(id_idx).unwrap_or("").trim().to_string();
        let mut attrs = BTreeMap::new();
        for (&c, (name, kind)) in attr_cols.iter().zip(&schema) {
            let raw = r.get(c).unwrap_or("").trim();
            let v = match kind {
                AttrKind::Numeric => AttrValue::Numeric(raw.parse().expect("kind inferred numeric")),
                AttrKind::Boolean => AttrValue::Boolean(raw.eq_ignore_ascii_case("true")),
                AttrKind::Nominal => AttrValue::Nominal(raw.to_string()),
            };
            attrs.insert(name.clone(), v);
        }
        let label = label_idx
            .and_then(|l| r.get(l))
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty());
        if rows.insert(id.clone(), (attrs, label)).is_some() {
            return Err(IngestError::DuplicateId { id, path: shown });
        }
    }
    Ok(AttributeTable { schema, rows })
}

/// Loads a feature type from its geometry file and optional attribute table.
///
/// Without an attribute file every geometry becomes a feature with no attributes.
pub fn load_collection(
    geometry_file: &Path,
    attribute_file: Option<&Path>,
    type_name: &str,
    opts: &LoadOptions,
) -> Result<FeatureCollection, IngestError> {
    let geoms = read_geometry_file(geometry_file)?;
    let Some(attribute_file) = attribute_file else {
        let features = geoms
            .into_iter()
            .map(|(id, geometry)| GeoFeature { id, geometry, attributes: BTreeMap::new(), label: None })
            .collect();
        return FeatureCollection::new(type_name, Vec::new(), features);
    };
    let mut table = read_attribute_file(attribute_file, opts)?;

    let geo_ids: BTreeSet<&String> = geoms.iter().map(|(id, _)| id).collect();
    let mut mismatched: Vec<String> = table
        .rows
        .keys()
        .filter(|id| !geo_ids.contains(id))
        .cloned()
        .chain(geoms.iter().filter(|(id, _)| !table.rows.contains_key(id)).map(|(id, _)| id.clone()))
        .collect();
    if !mismatched.is_empty() {
        mismatched.sort();
        return Err(IngestError::JoinMismatch(mismatched));
    }

    let features = geoms
        .into_iter()
        .map(|(id, geometry)| {
            let (attributes, label) = table.rows.remove(&id).expect("join checked above");
            GeoFeature { id, geometry, attributes, label }
        })
        .collect();
    FeatureCollection::new(type_name, table.schema, features)
}

/// Axis-aligned bounding rectangle of the problem, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scope {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl Scope {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self, IngestError> {
        let s = Self { min_lon, min_lat, max_lon, max_lat };
        if ![min_lon, min_lat, max_lon, max_lat].iter().all(|v| v.is_finite()) {
            return Err(IngestError::InvalidGeometry("non-finite scope bound".into()));
        }
        if !(min_lon < max_lon && min_lat < max_lat) {
            return Err(IngestError::ZeroAreaScope(format!(
                "[{min_lon}, {min_lat}, {max_lon}, {max_lat}]"
            )));
        }
        Ok(s)
    }

    pub fn width(&self) -> f64 {
        self.max_lon - self.min_lon
    }

    pub fn height(&self) -> f64 {
        self.max_lat - self.min_lat
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.lon >= self.min_lon && c.lon <= self.max_lon && c.lat >= self.min_lat && c.lat <= self.max_lat
    }

    pub fn contains_geometry(&self, g: &Geometry) -> bool {
        g.coords().iter().all(|&c| self.contains(c))
    }

    pub fn clamp(&self, c: Coord) -> Coord {
        Coord::new(c.lon.clamp(self.min_lon, self.max_lon), c.lat.clamp(self.min_lat, self.max_lat))
    }
}

/// Tight bounding box of every coordinate, grown by `padding_fraction` of
/// the width and height on each side.
pub fn compute_scope(
    collections: &[&FeatureCollection],
    padding_fraction: f64,
) -> Result<Scope, IngestError> {
    if !padding_fraction.is_finite() || padding_fraction < 0.0 {
        return Err(IngestError::BadPadding(padding_fraction));
    }
    let mut bounds: Option<(f64, f64, f64, f64)> = None;
    for f in collections.iter().flat_map(|c| c.features()) {
        let (a, b, c, d) = f.geometry.bounds();
        bounds = Some(match bounds {
            None => (a, b, c, d),
            Some((x0, y0, x1, y1)) => (x0.min(a), y0.min(b), x1.max(c), y1.max(d)),
        });
    }
    let (x0, y0, x1, y1) = bounds.ok_or(IngestError::EmptyInput)?;
    let (px, py) = ((x1 - x0) * padding_fraction, (y1 - y0) * padding_fraction);
    Scope::new(x0 - px, y0 - py, x1 + px, y1 + py)
}
