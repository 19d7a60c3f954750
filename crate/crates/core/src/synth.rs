//! Synthetic map with a planted labelling rule.
//!
//! Cities sit on a jittered lattice over a square scope together with
//! vegetation, mountain and urban areas, meandering rivers, roads and rail
//! lines. Cities are labelled "A" when they are close to a river and overlap
//! vegetation, "B" otherwise, with both thresholds taken as quantiles of the
//! clean preprocessed attributes.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, TypeSource};
use crate::ingest::{AttrKind, AttrValue, FeatureCollection, GeoFeature, Geometry, GeometryKind, Scope};
use crate::pipeline::{build_table, Inputs, PipelineError, Result};
use crate::preprocess::{ColumnData, DerivedAttr};

pub const CONFIG_FILE: &str = "geofuzz.toml";
pub const RULE_FILE: &str = "planted_rule.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub cities: usize,
    pub scope: [f64; 4],
    /// Grid side used for labelling, and written to the config.
    pub n: usize,
    /// Quantile of river distance below which a city can be "A".
    pub river_quantile: f64,
    /// Quantile of vegetation overlap above which a city can be "A".
    pub veg_quantile: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { seed: 7, cities: 200, scope: [40.0, 25.0, 60.0, 45.0], n: 64, river_quantile: 0.6, veg_quantile: 0.6 }
    }
}

/// Class "A" iff `river_dist < river_dist_below` and `veg_overlap > veg_overlap_above`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub river_dist_below: f64,
    pub veg_overlap_above: f64,
    pub class_a: usize,
    pub class_b: usize,
}

impl PlantedRule {
    pub fn label(&self, river_dist: f64, veg_overlap: f64) -> &'static str {
        if river_dist < self.river_dist_below && veg_overlap > self.veg_overlap_above {
            "A"
        } else {
            "B"
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthMap {
    pub inputs: Inputs,
    pub rule: PlantedRule,
    pub config: PipelineConfig,
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    scope: &'a Scope,
    tile: f64,
}

impl Gen<'_> {
    fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        let c = self.scope.clamp(crate::ingest::Coord::new(x, y));
        (round6(c.lon), round6(c.lat))
    }

    fn point(&mut self) -> (f64, f64) {
        let s = self.scope;
        (self.rng.gen_range(s.min_lon..s.max_lon), self.rng.gen_range(s.min_lat..s.max_lat))
    }

    /// Star-shaped ring with a smooth radius profile.
    fn blob(&mut self, cx: f64, cy: f64, r: f64, k: usize, wobble: f64) -> Geometry {
        let (a, b) = (self.rng.gen_range(0.0..wobble), self.rng.gen_range(0.0..wobble));
        let (p1, p2) = (self.rng.gen_range(0.0..TAU), self.rng.gen_range(0.0..TAU));
        let ring: Vec<(f64, f64)> = (0..k)
            .map(|i| {
                let t = TAU * (i as f64 + self.rng.gen_range(-0.3..0.3)) / k as f64;
                let rr = r * (1.0 + a * (2.0 * t + p1).sin() + b * (3.0 * t + p2).sin()) * self.rng.gen_range(0.92..1.08);
                self.clamp(cx + rr * t.cos(), cy + rr * t.sin())
            })
            .collect();
        Geometry::polygon_from_open_ring(ring).expect("ring has enough vertices")
    }

    /// Random walk across the scope along a drifting heading.
    fn meander(&mut self, horizontal: bool, steps: usize) -> Geometry {
        let s = self.scope;
        let (mut x, mut y, mut heading) = if horizontal {
            (s.min_lon, self.rng.gen_range(s.min_lat..s.max_lat), 0.0)
        } else {
            (self.rng.gen_range(s.min_lon..s.max_lon), s.min_lat, TAU / 4.0)
        };
        let base = heading;
        let step = s.width().max(s.height()) / steps as f64 * 1.1;
        let mut pts = vec![self.clamp(x, y)];
        for _ in 0..steps {
            heading = (heading + self.rng.gen_range(-0.5..0.5)).clamp(base - 1.0, base + 1.0);
            x += step * f64::cos(heading);
            y += step * f64::sin(heading);
            pts.push(self.clamp(x, y));
            if !s.contains(crate::ingest::Coord::new(x, y)) {
                break;
            }
        }
        Geometry::line_string(pts).expect("line has two vertices")
    }

    /// Polyline between two random points with jittered interior vertices.
    fn route(&mut self, vertices: usize) -> Geometry {
        let (a, b) = (self.point(), self.point());
        let j = 2.0 * self.tile;
        let pts: Vec<(f64, f64)> = (0..vertices)
            .map(|i| {
                let t = i as f64 / (vertices - 1) as f64;
                let (dx, dy) = if i == 0 || i == vertices - 1 {
                    (0.0, 0.0)
                } else {
                    (self.rng.gen_range(-j..j), self.rng.gen_range(-j..j))
                };
                self.clamp(a.0 + t * (b.0 - a.0) + dx, a.1 + t * (b.1 - a.1) + dy)
            })
            .collect();
        Geometry::line_string(pts).expect("line has two vertices")
    }
}

fn feature(prefix: &str, i: usize, geometry: Geometry, attributes: BTreeMap<String, AttrValue>) -> GeoFeature {
    GeoFeature { id: format!("{prefix}{i:03}"), geometry, attributes, label: None }
}

fn plain(type_name: &str, prefix: &str, geoms: Vec<Geometry>) -> FeatureCollection {
    let feats = geoms.into_iter().enumerate().map(|(i, g)| feature(prefix, i, g, BTreeMap::new())).collect();
    FeatureCollection::new(type_name, Vec::new(), feats).expect("generated ids are unique")
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

fn type_sources() -> Vec<TypeSource> {
    let t = |name: &str, attrs: bool| TypeSource {
        name: name.into(),
        geometry: PathBuf::from(format!("{name}.wkt")),
        attributes: attrs.then(|| PathBuf::from(format!("{name}.tsv"))),
    };
    vec![
        t("city", true),
        t("river", false),
        t("road", true),
        t("rail", false),
        t("mount", false),
        t("veg", false),
        t("urban", false),
    ]
}

/// The config shipped with a generated map: every default spelled out,
/// plus the map's scope and the two derived attributes.
pub fn map_config(params: &SynthParams) -> PipelineConfig {
    let mut cfg = PipelineConfig::with_types(type_sources());
    cfg.grid.n = params.n;
    cfg.grid.scope = Some(params.scope);
    cfg.derived = DerivedAttr::reference();
    cfg
}

pub fn generate(params: &SynthParams) -> Result<SynthMap> {
    let [a, b, c, d] = params.scope;
    let scope = Scope::new(a, b, c, d)?;
    let tile = scope.width().min(scope.height()) / params.n as f64;
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(params.seed), scope: &scope, tile };

    let cols = (params.cities as f64).sqrt().ceil() as usize;
    let rows = params.cities.div_ceil(cols);
    let (dx, dy) = (scope.width() / cols as f64, scope.height() / rows as f64);
    let mut slots = sample(&mut g.rng, cols * rows, params.cities).into_vec();
    slots.sort_unstable();
    let capitals: Vec<usize> = sample(&mut g.rng, params.cities, 8.min(params.cities)).into_vec();
    let mut cities = Vec::new();
    for (i, s) in slots.into_iter().enumerate() {
        let cx = a + ((s % cols) as f64 + 0.5 + g.rng.gen_range(-0.25..0.25)) * dx;
        let cy = b + ((s / cols) as f64 + 0.5 + g.rng.gen_range(-0.25..0.25)) * dy;
        let r = tile * g.rng.gen_range(2.4..3.2);
        let k = g.rng.gen_range(12..=16);
        let geom = g.blob(cx, cy, r, k, 0.12);
        let population = (10f64.powf(g.rng.gen_range(4.0..6.5))).round();
        let attrs = BTreeMap::from([
            ("population".to_string(), AttrValue::Numeric(population)),
            ("capital".to_string(), AttrValue::Boolean(capitals.contains(&i))),
        ]);
        cities.push(feature("c", i, geom, attrs));
    }

    let areas = |g: &mut Gen, count: usize, lo: f64, hi: f64| -> Vec<Geometry> {
        (0..count)
            .map(|_| {
                let (x, y) = g.point();
                let r = tile * g.rng.gen_range(lo..hi);
                g.blob(x, y, r, 28, 0.25)
            })
            .collect()
    };
    let veg = areas(&mut g, 7, 9.0, 15.0);
    let mount = areas(&mut g, 4, 5.0, 9.0);
    let urban = areas(&mut g, 10, 2.5, 5.0);
    let rivers: Vec<Geometry> = (0..3).map(|i| g.meander(i % 2 == 0, 40)).collect();
    let roads: Vec<GeoFeature> = (0..14)
        .map(|i| {
            let v = g.rng.gen_range(3..8);
            let geom = g.route(v);
            let exp = g.rng.gen_bool(0.3);
            feature("r", i, geom, BTreeMap::from([("expressway".to_string(), AttrValue::Boolean(exp))]))
        })
        .collect();
    let rails: Vec<Geometry> = (0..4).map(|_| g.route(5)).collect();

    let city_schema = vec![("population".to_string(), AttrKind::Numeric), ("capital".to_string(), AttrKind::Boolean)];
    let mut collections = BTreeMap::new();
    collections.insert("city".to_string(), FeatureCollection::new("city", city_schema.clone(), cities)?);
    collections.insert("river".to_string(), plain("river", "w", rivers));
    collections.insert(
        "road".to_string(),
        FeatureCollection::new("road", vec![("expressway".to_string(), AttrKind::Boolean)], roads)?,
    );
    collections.insert("rail".to_string(), plain("rail", "t", rails));
    collections.insert("mount".to_string(), plain("mount", "m", mount));
    collections.insert("veg".to_string(), plain("veg", "v", veg));
    collections.insert("urban".to_string(), plain("urban", "u", urban));
    debug_assert!(collections.values().all(|c| c.geometry_kind != GeometryKind::Point));

    let config = map_config(params);
    let mut inputs = Inputs { collections, scope };
    let table = build_table(&inputs, &config)?;
    let column = |name: &str| -> Result<Vec<f64>> {
        match table.column(name).map(|c| &c.data) {
            Some(ColumnData::Numeric(v)) => Ok(v.clone()),
            _ => Err(PipelineError::Invariant(format!("generated table lacks numeric column {name}"))),
        }
    };
    let (dist, veg) = (column("river_dist")?, column("veg_overlap")?);
    let mut rule = PlantedRule {
        river_dist_below: quantile(&dist, params.river_quantile),
        veg_overlap_above: quantile(&veg, params.veg_quantile),
        class_a: 0,
        class_b: 0,
    };
    let labels: BTreeMap<&str, &str> =
        table.ids.iter().enumerate().map(|(i, id)| (id.as_str(), rule.label(dist[i], veg[i]))).collect();
    rule.class_a = labels.values().filter(|l| **l == "A").count();
    rule.class_b = labels.len() - rule.class_a;
    if rule.class_a == 0 || rule.class_b == 0 {
        return Err(PipelineError::Invariant("planted rule leaves a single class".into()));
    }
    let city = &inputs.collections["city"];
    let labelled: Vec<GeoFeature> = city
        .features()
        .iter()
        .map(|f| GeoFeature { label: Some(labels[f.id.as_str()].to_string()), ..f.clone() })
        .collect();
    inputs.collections.insert("city".into(), FeatureCollection::new("city", city_schema, labelled)?);
    Ok(SynthMap { inputs, rule, config })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
}

/// Writes geometry, attribute tables, the config and the rule into `dir`.
/// Returns the config path.
pub fn write_map(map: &SynthMap, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.display().to_string(), source })?;
    for (name, coll) in &map.inputs.collections {
        let mut wkt = String::new();
        for f in coll.features() {
            wkt.push_str(&format!("{}\t{}\n", f.id, f.geometry));
        }
        write(&dir.join(format!("{name}.wkt")), &wkt)?;
        let labelled = coll.features().iter().any(|f| f.label.is_some());
        if coll.schema.is_empty() && !labelled {
            continue;
        }
        let mut header = vec!["id".to_string()];
        header.extend(coll.schema.iter().map(|(n, _)| n.clone()));
        if labelled {
            header.push("label".into());
        }
        let mut tsv = header.join("\t") + "\n";
        for f in coll.features() {
            let mut row = vec![f.id.clone()];
            row.extend(coll.schema.iter().map(|(n, _)| f.attributes[n].render()));
            if let Some(l) = &f.label {
                row.push(l.clone());
            }
            tsv.push_str(&(row.join("\t") + "\n"));
        }
        write(&dir.join(format!("{name}.tsv")), &tsv)?;
    }
    write(&dir.join(RULE_FILE), &(serde_json::to_string_pretty(&map.rule).expect("rule serializes") + "\n"))?;
    let path = dir.join(CONFIG_FILE);
    write(&path, &map.config.to_toml())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::load_inputs;

    fn small() -> SynthParams {
        SynthParams { seed: 11, cities: 30, n: 32, ..SynthParams::default() }
    }

    #[test]
    fn same_seed_same_map() {
        let (a, b) = (generate(&small()).unwrap(), generate(&small()).unwrap());
        assert_eq!(a.inputs.collections, b.inputs.collections);
        let c = generate(&SynthParams { seed: 12, ..small() }).unwrap();
        assert_ne!(a.inputs.collections["city"], c.inputs.collections["city"]);
    }

    #[test]
    fn labels_follow_the_rule_and_files_round_trip() {
        let map = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::load(&write_map(&map, dir.path()).unwrap()).unwrap();
        let loaded = load_inputs(&cfg).unwrap();
        assert_eq!(loaded.collections, map.inputs.collections);
        let table = build_table(&loaded, &cfg).unwrap();
        let col = |n: &str| match &table.column(n).unwrap().data {
            ColumnData::Numeric(v) => v.clone(),
            _ => unreachable!(),
        };
        let (d, v) = (col("river_dist"), col("veg_overlap"));
        let mut a = 0;
        for i in 0..table.len() {
            let want = if d[i] < map.rule.river_dist_below && v[i] > map.rule.veg_overlap_above { "A" } else { "B" };
            assert_eq!(table.labels[i].as_deref(), Some(want));
            a += (want == "A") as usize;
        }
        assert_eq!((a, table.len() - a), (map.rule.class_a, map.rule.class_b));
        let city = &map.inputs.collections["city"];
        assert!(city.features().iter().all(|f| map.inputs.scope.contains_geometry(&f.geometry)));
        assert_eq!(city.features().iter().filter(|f| f.attributes["capital"] == AttrValue::Boolean(true)).count(), 8);
    }
}
