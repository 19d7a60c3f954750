//! Fuzzy region connection calculus on grid membership fields, with
//! Łukasiewicz connectives, plus exact vector distances.

mod distance;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use distance::{min_distance, segment_distance};

use crate::raster::Field;

#[derive(Debug, Error, PartialEq)]
pub enum RccError {
    #[error("degree {0} outside [0, 1]")]
    DegreeOutOfRange(f64),
    #[error("invalid resolution parameters: {0}")]
    BadParams(String),
    #[error("grid mismatch: relation is on a {expected}x{expected} grid, field is {found}x{found}")]
    GridMismatch { expected: usize, found: usize },
    #[error("cell ({0}, {1}) outside the grid")]
    CellOutOfGrid(usize, usize),
}

fn check_degree(v: f64) -> Result<f64, RccError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(RccError::DegreeOutOfRange(v))
    }
}

/// Łukasiewicz t-norm, max(0, a + b − 1).
pub fn t_norm(a: f64, b: f64) -> Result<f64, RccError> {
    Ok(tw(check_degree(a)?, check_degree(b)?))
}

/// Łukasiewicz residual implicator, min(1, 1 − a + b).
pub fn implicator(a: f64, b: f64) -> Result<f64, RccError> {
    Ok(it(check_degree(a)?, check_degree(b)?))
}

#[inline]
pub(crate) fn tw(a: f64, b: f64) -> f64 {
    (a + b - 1.0).max(0.0)
}

#[inline]
pub(crate) fn it(a: f64, b: f64) -> f64 {
    (1.0 - a + b).min(1.0)
}

/// α and β of the resolution relation, in cell units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ResolutionParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0 }
    }
}

impl ResolutionParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, RccError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(RccError::BadParams(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(RccError::BadParams(format!("beta must be > 0, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    /// Degree to which two locations `d` apart are considered the same place.
    pub fn degree(&self, d: f64) -> f64 {
        if d <= self.alpha {
            1.0
        } else if d > self.alpha + self.beta {
            0.0
        } else {
            (self.alpha + self.beta - d) / self.beta
        }
    }

    /// Cells farther than this (in whole cells per axis) are unrelated.
    pub fn cutoff(&self) -> usize {
        (self.alpha + self.beta).ceil() as usize
    }
}

/// Which overlap formula to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Supremum of the pointwise t-norm of both eroded fields.
    #[default]
    Pointwise,
    /// Scalar variant: t-norm of two per-field infima, kept for comparison.
    Scalar,
}

/// The resolution relation R on an n×n grid, with distances between cell
/// centers measured in cell units.
#[derive(Debug, Clone)]
pub struct FuzzyRelationEval {
    n: usize,
    params: ResolutionParams,
    /// (d_row, d_col, R) for every offset with R > 0.
    kernel: Vec<(isize, isize, f64)>,
}

impl FuzzyRelationEval {
    pub fn new(n: usize, params: ResolutionParams) -> Self {
        let r = params.cutoff() as isize;
        let mut kernel = Vec::new();
        for dr in -r..=r {
            for dc in -r..=r {
                let deg = params.degree(((dr * dr + dc * dc) as f64).sqrt());
                if deg > 0.0 {
                    kernel.push((dr, dc, deg));
                }
            }
        }
        Self { n, params, kernel }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> ResolutionParams {
        self.params
    }

    /// R(x, y) for cells given as (row, col).
    pub fn resolution(&self, x: (usize, usize), y: (usize, usize)) -> Result<f64, RccError> {
        for &(r, c) in [&x, &y] {
            if r >= self.n || c >= self.n {
                return Err(RccError::CellOutOfGrid(r, c));
            }
        }
        let (dr, dc) = (x.0.abs_diff(y.0), x.1.abs_diff(y.1));
        let d = ((dr * dr + dc * dc) as f64).sqrt();
        Ok(self.params.degree(d))
    }

    fn check(&self, f: &Field) -> Result<(), RccError> {
        if f.side() == self.n {
            Ok(())
        } else {
            Err(RccError::GridMismatch { expected: self.n, found: f.side() })
        }
    }

    /// Offsets with R > 0 that stay inside the grid around (row, col).
    fn neighbours(&self, row: usize, col: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let n = self.n as isize;
        self.kernel.iter().filter_map(move |&(dr, dc, deg)| {
            let (r, c) = (row as isize + dr, col as isize + dc);
            (r >= 0 && r < n && c >= 0 && c < n).then(|| ((r * n + c) as usize, deg))
        })
    }

    /// (R↓A)(y) = inf over x of It(R(x, y), A(x)).
    pub fn erode(&self, field: &Field) -> Result<Field, RccError> {
        self.check(field)?;
        let a = field.values();
        let mut out = Field::filled(self.n, 1.0);
        for (i, slot) in out.values_mut().iter_mut().enumerate() {
            let (row, col) = (i / self.n, i % self.n);
            *slot = self.neighbours(row, col).fold(1.0, |acc, (x, r)| acc.min(it(r, a[x])));
        }
        Ok(out)
    }

    /// (R↑A)(y) = sup over x of Tw(R(x, y), A(x)).
    pub fn dilate(&self, field: &Field) -> Result<Field, RccError> {
        self.check(field)?;
        let a = field.values();
        let mut out = Field::zeros(self.n);
        for (i, slot) in out.values_mut().iter_mut().enumerate() {
            let (row, col) = (i / self.n, i % self.n);
            *slot = self.neighbours(row, col).fold(0.0, |acc, (x, r)| acc.max(tw(r, a[x])));
        }
        Ok(out)
    }

    /// C(A, B) = sup over p of Tw(A(p), (R↑B)(p)).
    pub fn connection_degree(&self, a: &Field, b: &Field) -> Result<f64, RccError> {
        self.check(a)?;
        let db = self.dilate(b)?;
        Ok(sup_tnorm(a, &db))
    }

    /// O(A, B) = overl(R↓A, R↓B), overl being the supremum of the pointwise t-norm.
    pub fn overlap_degree(&self, a: &Field, b: &Field) -> Result<f64, RccError> {
        let ea = self.erode(a)?;
        let eb = self.erode(b)?;
        Ok(sup_tnorm(&ea, &eb))
    }

    /// Scalar overlap variant: each field collapses to
    /// s = sup_{x,y} Tw(R(x,y), A(x)) and i = min(s, inf_{x,y} It(R(x,y), s)),
    /// and the result is Tw(i_A, i_B).
    pub fn overlap_degree_scalar(&self, a: &Field, b: &Field) -> Result<f64, RccError> {
        Ok(tw(self.scalar_collapse(a)?, self.scalar_collapse(b)?))
    }

    /// The per-field scalar used by the scalar overlap variant.
    pub fn scalar_collapse(&self, f: &Field) -> Result<f64, RccError> {
        let s = self.dilate(f)?.values().iter().fold(0.0f64, |m, v| m.max(*v));
        Ok(self.kernel.iter().fold(s, |m, &(_, _, r)| m.min(it(r, s))))
    }

    pub fn overlap(&self, a: &Field, b: &Field, mode: OverlapMode) -> Result<f64, RccError> {
        match mode {
            OverlapMode::Pointwise => self.overlap_degree(a, b),
            OverlapMode::Scalar => self.overlap_degree_scalar(a, b),
        }
    }
}

/// sup over p of Tw(X(p), Y(p)) for two same-sized fields.
pub fn sup_tnorm(x: &Field, y: &Field) -> f64 {
    x.values().iter().zip(y.values()).fold(0.0, |m, (a, b)| m.max(tw(*a, *b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Direct double-loop evaluation over all cell pairs, no cutoff.
    fn r_direct(p: ResolutionParams, n: usize, x: usize, y: usize) -> f64 {
        let (xr, xc) = ((x / n) as f64, (x % n) as f64);
        let (yr, yc) = ((y / n) as f64, (y % n) as f64);
        let d = ((xr - yr).powi(2) + (xc - yc).powi(2)).sqrt();
        if d <= p.alpha {
            1.0
        } else if d > p.alpha + p.beta {
            0.0
        } else {
            (p.alpha + p.beta - d) / p.beta
        }
    }

    fn erode_direct(p: ResolutionParams, n: usize, a: &[f64]) -> Vec<f64> {
        (0..n * n)
            .map(|y| (0..n * n).map(|x| (1.0 - r_direct(p, n, x, y) + a[x]).min(1.0)).fold(1.0, f64::min))
            .collect()
    }

    fn dilate_direct(p: ResolutionParams, n: usize, a: &[f64]) -> Vec<f64> {
        (0..n * n)
            .map(|y| (0..n * n).map(|x| (r_direct(p, n, x, y) + a[x] - 1.0).max(0.0)).fold(0.0, f64::max))
            .collect()
    }

    fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Field {
        Field::from_values(n, (0..n * n).map(|_| rng.gen_range(0..=4) as f64 * 0.25).collect()).unwrap()
    }

    #[test]
    fn connective_examples() {
        assert_eq!(t_norm(1.0, 1.0), Ok(1.0));
        assert_eq!(t_norm(0.5, 0.5), Ok(0.0));
        assert!((t_norm(0.8, 0.7).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(implicator(0.3, 0.3), Ok(1.0));
        assert_eq!(implicator(1.0, 0.0), Ok(0.0));
        assert!((implicator(0.8, 0.5).unwrap() - 0.7).abs() < 1e-15);
        assert!(t_norm(1.2, 0.0).is_err());
        assert!(implicator(0.0, -0.1).is_err());
    }

    #[test]
    fn resolution_examples() {
        let p = ResolutionParams::new(2.0, 3.0).unwrap();
        assert_eq!(p.degree(0.0), 1.0);
        assert_eq!(p.degree(6.0), 0.0);
        assert_eq!(p.degree(3.5), 0.5);
        assert!(ResolutionParams::new(-1.0, 1.0).is_err());
        assert!(ResolutionParams::new(1.0, 0.0).is_err());
        let rel = FuzzyRelationEval::new(8, p);
        assert_eq!(rel.resolution((3, 3), (3, 3)), Ok(1.0));
        assert_eq!(rel.resolution((0, 0), (3, 4)), rel.resolution((3, 4), (0, 0)));
        assert!(rel.resolution((8, 0), (0, 0)).is_err());
    }

    #[test]
    fn erosion_fixes_constant_fields() {
        let rel = FuzzyRelationEval::new(5, ResolutionParams::new(0.0, 0.5).unwrap());
        assert_eq!(rel.erode(&Field::filled(5, 1.0)).unwrap(), Field::filled(5, 1.0));
        assert_eq!(rel.erode(&Field::zeros(5)).unwrap(), Field::zeros(5));
        assert_eq!(rel.dilate(&Field::zeros(5)).unwrap(), Field::zeros(5));
    }

    #[test]
    fn erosion_of_crisp_square_matches_double_loop() {
        let n = 8;
        let p = ResolutionParams::new(1.0, 2.0).unwrap();
        let mut v = vec![0.0; n * n];
        for r in 2..5 {
            for c in 3..6 {
                v[r * n + c] = 1.0;
            }
        }
        let rel = FuzzyRelationEval::new(n, p);
        let got = rel.erode(&Field::from_values(n, v.clone()).unwrap()).unwrap();
        assert_eq!(got.values(), erode_direct(p, n, &v).as_slice());
    }

    #[test]
    fn dilation_of_singleton_with_huge_alpha_is_all_ones() {
        let n = 6;
        let mut f = Field::zeros(n);
        f.values_mut()[7] = 1.0;
        let rel = FuzzyRelationEval::new(n, ResolutionParams::new(10.0, 1.0).unwrap());
        assert_eq!(rel.dilate(&f).unwrap(), Field::filled(n, 1.0));
    }

    #[test]
    fn cutoff_kernels_match_full_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(alpha, beta) in &[(0.0, 1.0), (1.0, 2.0), (0.5, 1.7), (2.0, 3.0)] {
            let p = ResolutionParams::new(alpha, beta).unwrap();
            for n in 2..=6 {
                let rel = FuzzyRelationEval::new(n, p);
                let f = random_field(&mut rng, n);
                assert_eq!(rel.erode(&f).unwrap().values(), erode_direct(p, n, f.values()).as_slice());
                assert_eq!(rel.dilate(&f).unwrap().values(), dilate_direct(p, n, f.values()).as_slice());
            }
        }
    }

    #[test]
    fn overlap_and_connection_examples() {
        let n = 6;
        let rel = FuzzyRelationEval::new(n, ResolutionParams::new(1.0, 2.0).unwrap());
        let ones = Field::filled(n, 1.0);
        assert_eq!(rel.overlap_degree(&ones, &ones), Ok(1.0));
        assert_eq!(rel.connection_degree(&ones, &ones), Ok(1.0));

        // Crisp blocks in opposite corners, farther apart than alpha + beta.
        let mut a = Field::zeros(n);
        let mut b = Field::zeros(n);
        a.values_mut()[0] = 1.0;
        b.values_mut()[n * n - 1] = 1.0;
        assert_eq!(rel.overlap_degree(&a, &b), Ok(0.0));

        let tight = FuzzyRelationEval::new(4, ResolutionParams::new(0.0, 1e-9).unwrap());
        let mut c = Field::zeros(4);
        let mut d = Field::zeros(4);
        c.values_mut()[..8].fill(1.0);
        d.values_mut()[8..].fill(1.0);
        assert_eq!(tight.connection_degree(&c, &d), Ok(0.0));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let rel = FuzzyRelationEval::new(4, ResolutionParams::default());
        assert!(matches!(rel.erode(&Field::zeros(5)), Err(RccError::GridMismatch { .. })));
        assert!(rel.overlap_degree(&Field::zeros(4), &Field::zeros(5)).is_err());
    }

    #[test]
    fn connection_and_overlap_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..=6);
            let rel = FuzzyRelationEval::new(n, ResolutionParams::new(1.0, 1.0).unwrap());
            let (a, b) = (random_field(&mut rng, n), random_field(&mut rng, n));
            assert_eq!(rel.connection_degree(&a, &b), rel.connection_degree(&b, &a));
            assert_eq!(rel.overlap_degree(&a, &b), rel.overlap_degree(&b, &a));
        }
    }

    #[test]
    fn erosion_dilation_adjunction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = rng.gen_range(2..=6);
            let rel = FuzzyRelationEval::new(n, ResolutionParams::new(rng.gen_range(0..=1) as f64, rng.gen_range(1..=2) as f64).unwrap());
            let a = random_field(&mut rng, n);
            let de = rel.dilate(&rel.erode(&a).unwrap()).unwrap();
            let ed = rel.erode(&rel.dilate(&a).unwrap()).unwrap();
            for i in 0..n * n {
                assert!(de.values()[i] <= a.values()[i] + 1e-12);
                assert!(a.values()[i] <= ed.values()[i] + 1e-12);
            }
        }
    }

    #[test]
    fn overlap_is_monotone_in_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let n = rng.gen_range(2..=6);
            let rel = FuzzyRelationEval::new(n, ResolutionParams::new(1.0, 2.0).unwrap());
            let a = random_field(&mut rng, n);
            let b = random_field(&mut rng, n);
            let bigger = Field::from_values(
                n,
                a.values().iter().map(|v| (v + rng.gen_range(0..=2) as f64 * 0.25).min(1.0)).collect(),
            )
            .unwrap();
            assert!(rel.overlap_degree(&a, &b).unwrap() <= rel.overlap_degree(&bigger, &b).unwrap());
            // An eroded copy of a is a sub-field of a.
            let sub = rel.erode(&a).unwrap();
            assert!(rel.overlap_degree(&sub, &a).unwrap() <= rel.overlap_degree(&a, &a).unwrap());
        }
    }

    #[test]
    fn scalar_variant_collapses_to_peak_degrees() {
        let n = 5;
        let rel = FuzzyRelationEval::new(n, ResolutionParams::default());
        let mut a = Field::zeros(n);
        a.values_mut()[3] = 0.75;
        let b = Field::filled(n, 0.5);
        // With R(y,y) = 1 both collapses equal the field maxima.
        assert_eq!(rel.overlap_degree_scalar(&a, &b), Ok(tw(0.75, 0.5)));
        assert_eq!(rel.overlap(&a, &b, OverlapMode::Pointwise), rel.overlap_degree(&a, &b));
    }
}
