//! Exact minimum Euclidean distance between vector geometries, in degrees.

use crate::ingest::{point_in_ring, Coord, Geometry, GeometryKind};

fn orient(a: Coord, b: Coord, c: Coord) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn on_box(a: Coord, b: Coord, p: Coord) -> bool {
    p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn segments_intersect(p1: Coord, p2: Coord, q1: Coord, q2: Coord) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_box(q1, q2, p1))
        || (d2 == 0.0 && on_box(q1, q2, p2))
        || (d3 == 0.0 && on_box(p1, p2, q1))
        || (d4 == 0.0 && on_box(p1, p2, q2))
}

fn point_segment(p: Coord, a: Coord, b: Coord) -> f64 {
    let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.lon - a.lon) * dx + (p.lat - a.lat) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.lon - (a.lon + t * dx)).hypot(p.lat - (a.lat + t * dy))
}

/// Minimum distance between two closed segments (0 when they touch).
pub fn segment_distance(p1: Coord, p2: Coord, q1: Coord, q2: Coord) -> f64 {
    if segments_intersect(p1, p2, q1, q2) {
        return 0.0;
    }
    point_segment(p1, q1, q2)
        .min(point_segment(p2, q1, q2))
        .min(point_segment(q1, p1, p2))
        .min(point_segment(q2, p1, p2))
}

fn inside_polygon(outer: &Geometry, inner: &Geometry) -> bool {
    outer.kind() == GeometryKind::Polygon && point_in_ring(inner.coords()[0], outer.coords())
}

/// Minimum Euclidean distance between the point sets of two geometries.
///
/// Polygons are treated as filled regions, so containment yields 0.
pub fn min_distance(g1: &Geometry, g2: &Geometry) -> f64 {
    if inside_polygon(g1, g2) || inside_polygon(g2, g1) {
        return 0.0;
    }
    let s2 = g2.segments();
    let mut best = f64::INFINITY;
    for (a, b) in g1.segments() {
        for &(c, d) in &s2 {
            best = best.min(segment_distance(a, b, c, d));
            if best == 0.0 {
                return 0.0;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(x0: f64, y0: f64, w: f64) -> Geometry {
        Geometry::polygon_from_open_ring([(x0, y0), (x0 + w, y0), (x0 + w, y0 + w), (x0, y0 + w)]).unwrap()
    }

    #[test]
    fn overlapping_and_nested_polygons_are_at_zero() {
        assert_eq!(min_distance(&square(0.0, 0.0, 2.0), &square(1.0, 1.0, 2.0)), 0.0);
        assert_eq!(min_distance(&square(0.0, 0.0, 4.0), &square(1.0, 1.0, 1.0)), 0.0);
        assert_eq!(min_distance(&square(1.0, 1.0, 1.0), &square(0.0, 0.0, 4.0)), 0.0);
        let inner_line = Geometry::line_string([(1.0, 1.0), (2.0, 2.0)]).unwrap();
        assert_eq!(min_distance(&square(0.0, 0.0, 4.0), &inner_line), 0.0);
    }

    #[test]
    fn axis_aligned_gap() {
        assert_eq!(min_distance(&square(0.0, 0.0, 1.0), &square(4.0, 0.0, 1.0)), 3.0);
        let p = Geometry::point(0.0, 5.0).unwrap();
        let line = Geometry::line_string([(-1.0, 1.0), (1.0, 1.0)]).unwrap();
        assert_eq!(min_distance(&p, &line), 4.0);
    }

    fn sample(a: Coord, b: Coord, k: usize) -> Vec<Coord> {
        (0..=k)
            .map(|i| {
                let t = i as f64 / k as f64;
                Coord::new(a.lon + t * (b.lon - a.lon), a.lat + t * (b.lat - a.lat))
            })
            .collect()
    }

    #[test]
    fn random_segments_agree_with_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut c = || Coord::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let (a, b, p, q) = (c(), c(), c(), c());
            let s1 = sample(a, b, 2000);
            let s2 = sample(p, q, 2000);
            let mut oracle = f64::INFINITY;
            for u in &s1 {
                for v in &s2 {
                    oracle = oracle.min((u.lon - v.lon).hypot(u.lat - v.lat));
                }
            }
            let g1 = Geometry::line_string([(a.lon, a.lat), (b.lon, b.lat)]).unwrap();
            let g2 = Geometry::line_string([(p.lon, p.lat), (q.lon, q.lat)]).unwrap();
            let exact = min_distance(&g1, &g2);
            assert!(exact <= oracle + 1e-12);
            assert!((exact - oracle).abs() < 1e-3, "exact {exact} oracle {oracle}");
            assert_eq!(exact, min_distance(&g2, &g1));
        }
    }
}
