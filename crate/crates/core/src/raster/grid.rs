use serde::{Deserialize, Serialize};

use super::RasterError;
use crate::ingest::{Coord, Scope};

/// An n×n tiling of the scope, each tile subdivided into m×m pixels.
///
/// Cells and pixels are addressed row-major with row 0 at the southern edge
/// and column 0 at the western edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub scope: Scope,
    pub n: usize,
    pub m: usize,
}

impl GridSpec {
    pub fn new(scope: Scope, n: usize, m: usize) -> Result<Self, RasterError> {
        if n < 2 {
            return Err(RasterError::BadGrid(format!("n must be >= 2, got {n}")));
        }
        if m < 1 {
            return Err(RasterError::BadGrid("m must be >= 1".into()));
        }
        if !(scope.width() > 0.0 && scope.height() > 0.0) {
            return Err(RasterError::ZeroAreaScope);
        }
        Ok(Self { scope, n, m })
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    /// Pixels along one axis of the whole map.
    pub fn pixels_per_axis(&self) -> usize {
        self.n * self.m
    }

    pub fn tile_width(&self) -> f64 {
        self.scope.width() / self.n as f64
    }

    pub fn tile_height(&self) -> f64 {
        self.scope.height() / self.n as f64
    }

    pub fn pixel_width(&self) -> f64 {
        self.scope.width() / self.pixels_per_axis() as f64
    }

    pub fn pixel_height(&self) -> f64 {
        self.scope.height() / self.pixels_per_axis() as f64
    }

    pub fn pixel_center_lon(&self, col: usize) -> f64 {
        self.scope.min_lon + (col as f64 + 0.5) * self.pixel_width()
    }

    pub fn pixel_center_lat(&self, row: usize) -> f64 {
        self.scope.min_lat + (row as f64 + 0.5) * self.pixel_height()
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> Coord {
        Coord::new(self.pixel_center_lon(col), self.pixel_center_lat(row))
    }

    /// Continuous pixel coordinates of a location (column axis, row axis).
    pub fn to_pixel_space(&self, c: Coord) -> (f64, f64) {
        (
            (c.lon - self.scope.min_lon) / self.pixel_width(),
            (c.lat - self.scope.min_lat) / self.pixel_height(),
        )
    }

    /// Tile (cell) index containing pixel (col, row).
    pub fn cell_of_pixel(&self, col: usize, row: usize) -> usize {
        (row / self.m) * self.n + col / self.m
    }

    /// Pixel containing a location; locations on the far edges map to the last pixel.
    pub fn pixel_of(&self, c: Coord) -> (usize, usize) {
        let (u, v) = self.to_pixel_space(c);
        (clamp_index(u, self.pixels_per_axis()), clamp_index(v, self.pixels_per_axis()))
    }

    /// Tile center in cell units: (col + 0.5, row + 0.5).
    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        ((cell % self.n) as f64 + 0.5, (cell / self.n) as f64 + 0.5)
    }
}

pub(crate) fn clamp_index(u: f64, len: usize) -> usize {
    if u <= 0.0 {
        0
    } else {
        (u.floor() as usize).min(len - 1)
    }
}

/// Degrees over the n×n cells of a grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    n: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Self { n, values: vec![0.0; n * n] }
    }

    pub fn filled(n: usize, v: f64) -> Self {
        Self { n, values: vec![v; n * n] }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self, RasterError> {
        if values.len() != n * n {
            return Err(RasterError::BadGrid(format!(
                "field of side {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RasterError::DegreeOutOfRange(*v));
        }
        Ok(Self { n, values })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Pointwise maximum (fuzzy union) of two same-sized fields.
    pub fn union(&self, other: &Field) -> Field {
        debug_assert_eq!(self.n, other.n);
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a.max(*b)).collect();
        Field { n: self.n, values }
    }

    /// Nonzero support: indices of cells with degree > 0.
    pub fn support(&self) -> Vec<usize> {
        self.values.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, _)| i).collect()
    }

    /// Tab-separated matrix, one grid row per line, southern row first.
    pub fn to_delimited(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn from_delimited(text: &str) -> Result<Self, RasterError> {
        let mut values = Vec::new();
        let mut rows = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            rows += 1;
            for tok in line.split('\t') {
                values.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|_| RasterError::BadGrid(format!("bad matrix value '{tok}'")))?,
                );
            }
        }
        Self::from_values(rows, values)
    }
}
