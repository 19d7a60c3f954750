//! Coverage statistics to fuzzy membership degrees.

use serde::{Deserialize, Serialize};

use super::rasterize::{CoverageKind, TileCoverage};
use super::{Field, GridSpec, RasterError};

/// Piecewise-linear, non-decreasing ramp from a normalized statistic to a degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipFunctionSpec {
    pub kind: CoverageKind,
    /// (x, μ) pairs sorted by x; flat extrapolation outside the knot range.
    pub knots: Vec<(f64, f64)>,
    /// Point count mapped to input 1.0 (count kind only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<f64>,
}

impl MembershipFunctionSpec {
    pub fn identity(kind: CoverageKind) -> Self {
        let saturation = (kind == CoverageKind::Count).then_some(5.0);
        Self { kind, knots: vec![(0.0, 0.0), (1.0, 1.0)], saturation }
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        let bad = |msg: String| Err(RasterError::BadMembership(msg));
        if self.knots.is_empty() {
            return bad("membership ramp needs at least one knot".into());
        }
        for &(x, mu) in &self.knots {
            if !x.is_finite() || !(0.0..=1.0).contains(&mu) {
                return bad(format!("knot ({x}, {mu}) out of range"));
            }
        }
        for w in self.knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad("knots must be sorted by strictly increasing x".into());
            }
            if w[1].1 < w[0].1 {
                return bad("membership degrees must be non-decreasing".into());
            }
        }
        if self.kind == CoverageKind::Count {
            match self.saturation {
                Some(s) if s > 0.0 && s.is_finite() => {}
                _ => return bad("count ramps need a positive saturation".into()),
            }
        }
        Ok(())
    }

    pub fn ramp(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if x >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|&(kx, _)| kx <= x);
        let (x0, y0) = k[i - 1];
        let (x1, y1) = k[i];
        y0 + (x - x0) * (y1 - y0) / (x1 - x0)
    }

    /// Normalized ramp input for a raw tile count.
    pub fn input(&self, count: u32, m: usize) -> f64 {
        let c = count as f64;
        match self.kind {
            CoverageKind::Area => c / (m * m) as f64,
            CoverageKind::Length => (c / (m as f64 * std::f64::consts::SQRT_2)).clamp(0.0, 1.0),
            CoverageKind::Count => c / self.saturation.unwrap_or(5.0),
        }
    }
}

/// Ramps for each coverage kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MembershipSet {
    pub area: MembershipFunctionSpec,
    pub length: MembershipFunctionSpec,
    pub count: MembershipFunctionSpec,
}

impl Default for MembershipSet {
    fn default() -> Self {
        Self {
            area: MembershipFunctionSpec::identity(CoverageKind::Area),
            length: MembershipFunctionSpec::identity(CoverageKind::Length),
            count: MembershipFunctionSpec::identity(CoverageKind::Count),
        }
    }
}

impl MembershipSet {
    pub fn for_kind(&self, kind: CoverageKind) -> &MembershipFunctionSpec {
        match kind {
            CoverageKind::Area => &self.area,
            CoverageKind::Length => &self.length,
            CoverageKind::Count => &self.count,
        }
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        for (want, mf) in [
            (CoverageKind::Area, &self.area),
            (CoverageKind::Length, &self.length),
            (CoverageKind::Count, &self.count),
        ] {
            if mf.kind != want {
                return Err(RasterError::KindMismatch { coverage: want, membership: mf.kind });
            }
            mf.validate()?;
        }
        Ok(())
    }
}

pub fn membership_from_coverage(
    cov: &TileCoverage,
    mf: &MembershipFunctionSpec,
    grid: &GridSpec,
) -> Result<Field, RasterError> {
    if cov.kind != mf.kind {
        return Err(RasterError::KindMismatch { coverage: cov.kind, membership: mf.kind });
    }
    if cov.n != grid.n {
        return Err(RasterError::GridMismatch { expected: grid.n, found: cov.n });
    }
    let values = cov.counts.iter().map(|&c| mf.ramp(mf.input(c, grid.m))).collect();
    Field::from_values(grid.n, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Scope;

    fn grid() -> GridSpec {
        GridSpec::new(Scope::new(0.0, 0.0, 1.0, 1.0).unwrap(), 2, 4).unwrap()
    }

    fn cov(kind: CoverageKind, counts: Vec<u32>) -> TileCoverage {
        TileCoverage { feature_id: "f".into(), kind, n: 2, counts }
    }

    #[test]
    fn area_examples() {
        let mf = MembershipFunctionSpec::identity(CoverageKind::Area);
        let f = membership_from_coverage(&cov(CoverageKind::Area, vec![16, 0, 8, 4]), &mf, &grid()).unwrap();
        assert_eq!(f.values(), &[1.0, 0.0, 0.5, 0.25]);
    }

    #[test]
    fn length_and_count_saturate() {
        let g = grid();
        let mf = MembershipFunctionSpec::identity(CoverageKind::Length);
        let f = membership_from_coverage(&cov(CoverageKind::Length, vec![100, 0, 0, 0]), &mf, &g).unwrap();
        assert_eq!(f.values()[0], 1.0);
        let mf = MembershipFunctionSpec::identity(CoverageKind::Count);
        let f = membership_from_coverage(&cov(CoverageKind::Count, vec![1, 5, 9, 0]), &mf, &g).unwrap();
        assert_eq!(f.values(), &[0.2, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let mf = MembershipFunctionSpec::identity(CoverageKind::Area);
        assert!(matches!(
            membership_from_coverage(&cov(CoverageKind::Length, vec![0; 4]), &mf, &grid()),
            Err(RasterError::KindMismatch { .. })
        ));
    }

    #[test]
    fn ramp_interpolates_between_knots() {
        let mf = MembershipFunctionSpec {
            kind: CoverageKind::Area,
            knots: vec![(0.1, 0.0), (0.5, 0.8), (0.9, 1.0)],
            saturation: None,
        };
        mf.validate().unwrap();
        assert_eq!(mf.ramp(0.0), 0.0);
        assert!((mf.ramp(0.3) - 0.4).abs() < 1e-15);
        assert!((mf.ramp(0.7) - 0.9).abs() < 1e-15);
        assert_eq!(mf.ramp(2.0), 1.0);
        let bad = MembershipFunctionSpec { knots: vec![(0.0, 0.5), (1.0, 0.2)], ..mf };
        assert!(bad.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn degrees_stay_in_unit_interval_and_follow_counts(a in 0u32..=16, b in 0u32..=16) {
            let mf = MembershipFunctionSpec {
                kind: CoverageKind::Area,
                knots: vec![(0.0, 0.0), (0.3, 0.6), (1.0, 1.0)],
                saturation: None,
            };
            let f = membership_from_coverage(&cov(CoverageKind::Area, vec![a, b, 0, 16]), &mf, &grid()).unwrap();
            let v = f.values();
            proptest::prop_assert!(v.iter().all(|d| (0.0..=1.0).contains(d)));
            if a <= b { proptest::prop_assert!(v[0] <= v[1]); }
        }
    }
}
