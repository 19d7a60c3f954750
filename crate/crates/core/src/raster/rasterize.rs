//! Bitmap painting of vector geometries on the pixel grid.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::grid::{clamp_index, GridSpec};
use super::RasterError;
use crate::ingest::{Coord, Geometry, GeometryKind};

/// Which per-tile statistic a coverage matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageKind {
    /// Painted pixel centers inside a polygon.
    Area,
    /// Pixels touched by a polyline.
    Length,
    /// Points falling in the tile.
    Count,
}

impl CoverageKind {
    pub fn for_geometry(kind: GeometryKind) -> Self {
        match kind {
            GeometryKind::Polygon => CoverageKind::Area,
            GeometryKind::LineString => CoverageKind::Length,
            GeometryKind::Point => CoverageKind::Count,
        }
    }
}

/// Painted pixels of one geometry, as sorted linear indices `row * N + col`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PixelSet(Vec<u32>);

impl PixelSet {
    fn from_set(set: BTreeSet<u32>) -> Self {
        Self(set.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, idx: u32) -> bool {
        self.0.binary_search(&idx).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    /// Size of the intersection with another set.
    pub fn intersection_len(&self, other: &PixelSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Per-tile pixel statistics of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileCoverage {
    pub feature_id: String,
    pub kind: CoverageKind,
    pub n: usize,
    pub counts: Vec<u32>,
}

impl TileCoverage {
    pub fn count(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.n + col]
    }
}

fn check_in_scope(geometry: &Geometry, grid: &GridSpec) -> Result<(), RasterError> {
    if grid.scope.contains_geometry(geometry) {
        Ok(())
    } else {
        Err(RasterError::OutsideScope)
    }
}

/// Pixels painted by a geometry using the kind-specific rule.
pub fn paint(geometry: &Geometry, grid: &GridSpec) -> Result<PixelSet, RasterError> {
    check_in_scope(geometry, grid)?;
    Ok(match geometry.kind() {
        GeometryKind::Polygon => paint_polygon(geometry.coords(), grid),
        GeometryKind::LineString => paint_line(geometry.coords(), grid),
        GeometryKind::Point => {
            let (c, r) = grid.pixel_of(geometry.coords()[0]);
            PixelSet(vec![(r * grid.pixels_per_axis() + c) as u32])
        }
    })
}

/// Tile coverage counts of a geometry.
pub fn rasterize(
    feature_id: &str,
    geometry: &Geometry,
    grid: &GridSpec,
) -> Result<TileCoverage, RasterError> {
    let pixels = paint(geometry, grid)?;
    Ok(coverage_from_pixels(feature_id, CoverageKind::for_geometry(geometry.kind()), &pixels, grid))
}

pub fn coverage_from_pixels(
    feature_id: &str,
    kind: CoverageKind,
    pixels: &PixelSet,
    grid: &GridSpec,
) -> TileCoverage {
    let big = grid.pixels_per_axis();
    let mut counts = vec![0u32; grid.cells()];
    for p in pixels.iter() {
        let (row, col) = (p as usize / big, p as usize % big);
        counts[grid.cell_of_pixel(col, row)] += 1;
    }
    TileCoverage { feature_id: feature_id.to_string(), kind, n: grid.n, counts }
}

/// Pixel centers inside the ring under the even-odd rule, boundary included.
fn paint_polygon(ring: &[Coord], grid: &GridSpec) -> PixelSet {
    let big = grid.pixels_per_axis();
    let (lat_lo, lat_hi) = ring
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.lat), hi.max(c.lat)));
    let (_, r0) = grid.to_pixel_space(Coord::new(grid.scope.min_lon, lat_lo));
    let (_, r1) = grid.to_pixel_space(Coord::new(grid.scope.min_lon, lat_hi));
    let row_lo = clamp_index(r0 - 1.0, big);
    let row_hi = clamp_index(r1 + 1.0, big);

    let mut out = BTreeSet::new();
    let mut xs = Vec::new();
    for row in row_lo..=row_hi {
        let yc = grid.pixel_center_lat(row);
        xs.clear();
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a.lat > yc) != (b.lat > yc) {
                xs.push(a.lon + (yc - a.lat) * (b.lon - a.lon) / (b.lat - a.lat));
            }
        }
        xs.sort_by(f64::total_cmp);
        let base = (row * big) as u32;
        // Interior: centers with an odd number of crossings strictly to their east.
        for pair in xs.chunks(2) {
            if let [x0, x1] = *pair {
                let first = first_col_at_or_after(grid, x0);
                let mut col = first;
                while col < big && grid.pixel_center_lon(col) < x1 {
                    out.insert(base + col as u32);
                    col += 1;
                }
            }
        }
        // Boundary: centers lying exactly on an edge.
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if yc < a.lat.min(b.lat) || yc > a.lat.max(b.lat) {
                continue;
            }
            let (xa, xb) = if a.lat == b.lat {
                (a.lon.min(b.lon), a.lon.max(b.lon))
            } else {
                let x = a.lon + (yc - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                (x, x)
            };
            let c0 = clamp_index(grid.to_pixel_space(Coord::new(xa, yc)).0 - 1.5, big);
            let c1 = clamp_index(grid.to_pixel_space(Coord::new(xb, yc)).0 + 1.5, big);
            for col in c0..=c1 {
                let p = grid.pixel_center(col, row);
                if crate::ingest::point_on_segment(p, a, b) {
                    out.insert(base + col as u32);
                }
            }
        }
    }
    PixelSet::from_set(out)
}

fn first_col_at_or_after(grid: &GridSpec, x: f64) -> usize {
    let big = grid.pixels_per_axis();
    let (u, _) = grid.to_pixel_space(Coord::new(x, grid.scope.min_lat));
    let mut col = clamp_index(u - 0.5, big);
    while col > 0 && grid.pixel_center_lon(col - 1) >= x {
        col -= 1;
    }
    while col < big && grid.pixel_center_lon(col) < x {
        col += 1;
    }
    col
}

/// Pixels touched by a polyline, sampled at a step of at most half a pixel.
fn paint_line(coords: &[Coord], grid: &GridSpec) -> PixelSet {
    let big = grid.pixels_per_axis();
    let mut out = BTreeSet::new();
    for w in coords.windows(2) {
        let (u0, v0) = grid.to_pixel_space(w[0]);
        let (u1, v1) = grid.to_pixel_space(w[1]);
        let len = (u1 - u0).hypot(v1 - v0);
        let steps = ((2.0 * len).ceil() as usize).max(1);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let col = clamp_index(u0 + t * (u1 - u0), big);
            let row = clamp_index(v0 + t * (v1 - v0), big);
            out.insert((row * big + col) as u32);
        }
    }
    PixelSet::from_set(out)
}

/// Pixels whose centers lie within `half_width` pixels of a polyline, i.e. the
/// line widened into a thin polygon.
pub fn paint_buffered_line(
    geometry: &Geometry,
    grid: &GridSpec,
    half_width: f64,
) -> Result<PixelSet, RasterError> {
    check_in_scope(geometry, grid)?;
    if !(half_width.is_finite() && half_width >= 0.0) {
        return Err(RasterError::BadGrid(format!("line half-width must be >= 0, got {half_width}")));
    }
    let big = grid.pixels_per_axis();
    let mut out = BTreeSet::new();
    for (a, b) in geometry.segments() {
        let (u0, v0) = grid.to_pixel_space(a);
        let (u1, v1) = grid.to_pixel_space(b);
        let c0 = clamp_index(u0.min(u1) - half_width - 1.0, big);
        let c1 = clamp_index(u0.max(u1) + half_width + 1.0, big);
        let r0 = clamp_index(v0.min(v1) - half_width - 1.0, big);
        let r1 = clamp_index(v0.max(v1) + half_width + 1.0, big);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (pu, pv) = (col as f64 + 0.5, row as f64 + 0.5);
                if point_segment_distance((pu, pv), (u0, v0), (u1, v1)) <= half_width {
                    out.insert((row * big + col) as u32);
                }
            }
        }
    }
    Ok(PixelSet::from_set(out))
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - (a.0 + t * dx)).hypot(p.1 - (a.1 + t * dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{point_in_ring, Scope};
    use proptest::prelude::*;

    fn grid(n: usize, m: usize) -> GridSpec {
        GridSpec::new(Scope::new(0.0, 0.0, 1.0, 1.0).unwrap(), n, m).unwrap()
    }

    fn brute_polygon(ring: &[Coord], g: &GridSpec) -> Vec<u32> {
        let big = g.pixels_per_axis();
        let mut counts = vec![0u32; g.cells()];
        for row in 0..big {
            for col in 0..big {
                if point_in_ring(g.pixel_center(col, row), ring) {
                    counts[g.cell_of_pixel(col, row)] += 1;
                }
            }
        }
        counts
    }

    #[test]
    fn square_covering_one_tile() {
        let g = grid(4, 4);
        let sq = Geometry::polygon_from_open_ring([(0.25, 0.25), (0.5, 0.25), (0.5, 0.5), (0.25, 0.5)])
            .unwrap();
        let cov = rasterize("s", &sq, &g).unwrap();
        assert_eq!(cov.count(1, 1), 16);
        assert_eq!(cov.counts.iter().sum::<u32>(), 16);
    }

    #[test]
    fn point_at_tile_center() {
        let g = grid(4, 4);
        let cov = rasterize("p", &Geometry::point(0.625, 0.375).unwrap(), &g).unwrap();
        assert_eq!(cov.count(1, 2), 1);
        assert_eq!(cov.counts.iter().sum::<u32>(), 1);
    }

    #[test]
    fn boundary_centers_count_as_inside() {
        // 4 pixels per axis, centers at 0.125, 0.375, ...; the ring passes through centers.
        let g = grid(2, 2);
        let sq = Geometry::polygon_from_open_ring([(0.125, 0.125), (0.375, 0.125), (0.375, 0.375), (0.125, 0.375)])
            .unwrap();
        let px = paint(&sq, &g).unwrap();
        assert_eq!(px.len(), 4);
    }

    #[test]
    fn diagonal_line_matches_dense_sampling() {
        let (n, m) = (2, 8);
        let g = grid(n, m);
        let line = Geometry::line_string([(0.0, 0.0), (1.0, 1.0)]).unwrap();
        let cov = rasterize("l", &line, &g).unwrap();
        // oracle: m*n*4 evenly spaced samples, distinct pixels
        let big = g.pixels_per_axis();
        let samples = m * n * 4;
        let mut seen = BTreeSet::new();
        for i in 0..=samples {
            let t = i as f64 / samples as f64;
            let col = ((t * big as f64).floor() as usize).min(big - 1);
            let row = ((t * big as f64).floor() as usize).min(big - 1);
            seen.insert((row, col));
        }
        let mut expected = vec![0u32; g.cells()];
        for (row, col) in seen {
            expected[g.cell_of_pixel(col, row)] += 1;
        }
        assert_eq!(cov.counts, expected);
        assert_eq!(cov.counts, vec![8, 0, 0, 8]);
    }

    #[test]
    fn outside_scope_is_an_error() {
        let g = grid(2, 2);
        assert!(matches!(
            rasterize("p", &Geometry::point(1.5, 0.5).unwrap(), &g),
            Err(RasterError::OutsideScope)
        ));
    }

    #[test]
    fn buffered_line_contains_walked_pixels() {
        let g = grid(4, 5);
        let line = Geometry::line_string([(0.1, 0.1), (0.9, 0.4), (0.3, 0.8)]).unwrap();
        let walked = paint(&line, &g).unwrap();
        let buffered = paint_buffered_line(&line, &g, 1.0).unwrap();
        assert!(walked.iter().all(|p| buffered.contains(p)));
        assert!(buffered.len() > walked.len());
    }

    fn ring_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 3..9)
    }

    proptest! {
        #[test]
        fn polygon_scanline_matches_pointwise_test(ring in ring_strategy(), n in 2usize..5, m in 1usize..6) {
            let g = grid(n, m);
            let poly = Geometry::polygon_from_open_ring(ring).unwrap();
            let cov = rasterize("x", &poly, &g).unwrap();
            prop_assert_eq!(cov.counts, brute_polygon(poly.coords(), &g));
        }

        #[test]
        fn enlarging_a_square_never_decreases_counts(
            x0 in 0.05f64..0.45, y0 in 0.05f64..0.45, w in 0.05f64..0.4, grow in 0.0f64..0.05,
        ) {
            let g = grid(4, 6);
            let small = Geometry::polygon_from_open_ring([(x0, y0), (x0 + w, y0), (x0 + w, y0 + w), (x0, y0 + w)]).unwrap();
            let (a, b) = (x0 - grow, x0 + w + grow);
            let (c, d) = (y0 - grow, y0 + w + grow);
            let big = Geometry::polygon_from_open_ring([(a, c), (b, c), (b, d), (a, d)]).unwrap();
            let s = rasterize("s", &small, &g).unwrap();
            let l = rasterize("l", &big, &g).unwrap();
            for (x, y) in s.counts.iter().zip(&l.counts) {
                prop_assert!(x <= y);
            }
        }

        #[test]
        fn translation_preserves_counts(
            ring in prop::collection::vec((0u32..=32, 0u32..=32), 3..7),
        ) {
            // Dyadic coordinates keep the shift exact.
            let pts: Vec<(f64, f64)> = ring.iter().map(|&(x, y)| (x as f64 / 64.0, y as f64 / 64.0)).collect();
            let g = grid(4, 4);
            let g2 = GridSpec::new(Scope::new(8.0, -4.0, 9.0, -3.0).unwrap(), 4, 4).unwrap();
            let p1 = Geometry::polygon_from_open_ring(pts.clone()).unwrap();
            let p2 = Geometry::polygon_from_open_ring(pts.iter().map(|&(x, y)| (x + 8.0, y - 4.0))).unwrap();
            prop_assert_eq!(rasterize("a", &p1, &g).unwrap().counts, rasterize("b", &p2, &g2).unwrap().counts);
        }
    }
}
