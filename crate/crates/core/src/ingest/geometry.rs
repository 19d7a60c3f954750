//! Vector geometry types in WGS84 degrees.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// A (lon, lat) pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub lon: f64,
    pub lat: f64,
}

impl Coord {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

impl From<(f64, f64)> for Coord {
    fn from((lon, lat): (f64, f64)) -> Self {
        Self { lon, lat }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeometryKind {
    Point,
    LineString,
    Polygon,
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryKind::Point => "POINT",
            GeometryKind::LineString => "LINESTRING",
            GeometryKind::Polygon => "POLYGON",
        })
    }
}

/// A point, a polyline, or a single-ring polygon.
///
/// Polygon rings are stored closed: the last coordinate repeats the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    kind: GeometryKind,
    coords: Vec<Coord>,
}

impl Geometry {
    /// Builds a geometry, checking closure, vertex counts and coordinate ranges.
    pub fn new(kind: GeometryKind, coords: Vec<Coord>) -> Result<Self, IngestError> {
        let g = Self { kind, coords };
        g.validate()?;
        Ok(g)
    }

    pub fn point(lon: f64, lat: f64) -> Result<Self, IngestError> {
        Self::new(GeometryKind::Point, vec![Coord::new(lon, lat)])
    }

    pub fn line_string(coords: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, IngestError> {
        Self::new(GeometryKind::LineString, coords.into_iter().map(Coord::from).collect())
    }

    /// Builds a polygon from a ring; the ring must already be closed.
    pub fn polygon(ring: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, IngestError> {
        Self::new(GeometryKind::Polygon, ring.into_iter().map(Coord::from).collect())
    }

    /// Builds a polygon from an open ring, appending the closing vertex.
    pub fn polygon_from_open_ring(
        ring: impl IntoIterator<Item = (f64, f64)>,
    ) -> Result<Self, IngestError> {
        let mut coords: Vec<Coord> = ring.into_iter().map(Coord::from).collect();
        if let Some(&first) = coords.first() {
            coords.push(first);
        }
        Self::new(GeometryKind::Polygon, coords)
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    /// Rebuilds the geometry with every coordinate mapped through `f`.
    /// Polygon rings are re-closed afterwards; range checks are skipped.
    pub(crate) fn map_coords(&self, mut f: impl FnMut(Coord) -> Coord) -> Geometry {
        let mut coords: Vec<Coord> = self.coords.iter().map(|&c| f(c)).collect();
        if self.kind == GeometryKind::Polygon {
            let first = coords[0];
            *coords.last_mut().expect("polygon ring is nonempty") = first;
        }
        Geometry { kind: self.kind, coords }
    }

    /// Line segments of the geometry. A point yields one degenerate segment.
    pub fn segments(&self) -> Vec<(Coord, Coord)> {
        match self.kind {
            GeometryKind::Point => vec![(self.coords[0], self.coords[0])],
            _ => self.coords.windows(2).map(|w| (w[0], w[1])).collect(),
        }
    }

    /// (min_lon, min_lat, max_lon, max_lat)
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.coords.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.lon), b.min(p.lat), c.max(p.lon), d.max(p.lat)),
        )
    }

    /// Length of the bounding box diagonal.
    pub fn extent(&self) -> f64 {
        let (x0, y0, x1, y1) = self.bounds();
        (x1 - x0).hypot(y1 - y0)
    }

    fn validate(&self) -> Result<(), IngestError> {
        for c in &self.coords {
            if !c.lon.is_finite() || !c.lat.is_finite() {
                return Err(IngestError::InvalidGeometry(format!(
                    "non-finite coordinate ({}, {})",
                    c.lon, c.lat
                )));
            }
            if !(-180.0..=180.0).contains(&c.lon) || !(-90.0..=90.0).contains(&c.lat) {
                return Err(IngestError::InvalidGeometry(format!(
                    "coordinate ({}, {}) outside WGS84 range",
                    c.lon, c.lat
                )));
            }
        }
        let n = self.coords.len();
        match self.kind {
            GeometryKind::Point if n != 1 => Err(IngestError::InvalidGeometry(format!(
                "point needs exactly 1 coordinate, got {n}"
            ))),
            GeometryKind::LineString if n < 2 => Err(IngestError::InvalidGeometry(format!(
                "linestring needs at least 2 points, got {n}"
            ))),
            GeometryKind::Polygon => {
                if n >= 2 && self.coords[0] != self.coords[n - 1] {
                    return Err(IngestError::UnclosedRing);
                }
                if n < 4 {
                    return Err(IngestError::InvalidGeometry(format!(
                        "polygon ring needs at least 4 points, got {n}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::wkt::emit_wkt(self))
    }
}

/// Even-odd point-in-ring test; points on the boundary count as inside.
pub fn point_in_ring(p: Coord, ring: &[Coord]) -> bool {
    if point_on_ring(p, ring) {
        return true;
    }
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn point_on_ring(p: Coord, ring: &[Coord]) -> bool {
    ring.windows(2).any(|w| point_on_segment(p, w[0], w[1]))
}

/// Exact collinearity-and-bounds test.
pub fn point_on_segment(p: Coord, a: Coord, b: Coord) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    cross == 0.0
        && p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_needs_closure_and_four_points() {
        assert!(matches!(
            Geometry::polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]),
            Err(IngestError::UnclosedRing)
        ));
        assert!(Geometry::polygon([(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]).is_err());
        assert!(Geometry::polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 0.0)]).is_ok());
    }

    #[test]
    fn rejects_out_of_range_and_nan() {
        assert!(Geometry::point(181.0, 0.0).is_err());
        assert!(Geometry::point(0.0, f64::NAN).is_err());
        assert!(Geometry::line_string([(0.0, 0.0)]).is_err());
    }

    #[test]
    fn ring_membership_includes_boundary() {
        let sq = Geometry::polygon_from_open_ring([(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)])
            .unwrap();
        let ring = sq.coords();
        assert!(point_in_ring(Coord::new(1.0, 1.0), ring));
        assert!(point_in_ring(Coord::new(2.0, 1.0), ring));
        assert!(point_in_ring(Coord::new(0.0, 2.0), ring));
        assert!(!point_in_ring(Coord::new(2.5, 1.0), ring));
    }
}
