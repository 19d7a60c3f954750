//! Min-max normalization fitted on training rows.

use serde::{Deserialize, Serialize};

use super::table::{Column, ColumnData, TabularDataset};
use super::PreprocessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Per-column ranges learned from training data, plus the constant columns
/// that were dropped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub ranges: Vec<ColumnRange>,
    pub dropped: Vec<String>,
}

impl NormalizationSpec {
    pub fn fit(train: &TabularDataset) -> Self {
        let mut spec = NormalizationSpec::default();
        for c in &train.columns {
            match &c.data {
                ColumnData::Numeric(v) => {
                    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if max > min {
                        spec.ranges.push(ColumnRange { name: c.name.clone(), min, max });
                    } else {
                        spec.dropped.push(c.name.clone());
                    }
                }
                ColumnData::Boolean(v) => {
                    if v.iter().all(|&b| b == v[0]) {
                        spec.dropped.push(c.name.clone());
                    }
                }
                ColumnData::Nominal(_) => {}
            }
        }
        for name in &spec.dropped {
            log::info!("dropping constant column '{name}'");
        }
        spec
    }

    /// Maps numeric columns into [0, 1] with the fitted ranges, clamping
    /// values outside the training range, and removes dropped columns.
    pub fn apply(&self, ds: &TabularDataset) -> Result<TabularDataset, PreprocessError> {
        for r in &self.ranges {
            match ds.column(&r.name).map(|c| &c.data) {
                Some(ColumnData::Numeric(_)) => {}
                _ => {
                    return Err(PreprocessError::Schema(format!(
                        "normalization expects numeric column '{}'",
                        r.name
                    )))
                }
            }
        }
        let mut out = TabularDataset { columns: Vec::new(), ..ds.clone() };
        let mut clamped = 0usize;
        for c in &ds.columns {
            if self.dropped.contains(&c.name) {
                continue;
            }
            let data = match (&c.data, self.ranges.iter().find(|r| r.name == c.name)) {
                (ColumnData::Numeric(v), Some(r)) => ColumnData::Numeric(
                    v.iter()
                        .map(|&x| {
                            let y = (x - r.min) / (r.max - r.min);
                            if !(0.0..=1.0).contains(&y) {
                                clamped += 1;
                            }
                            y.clamp(0.0, 1.0)
                        })
                        .collect(),
                ),
                (ColumnData::Numeric(_), None) => {
                    return Err(PreprocessError::Schema(format!(
                        "column '{}' was not present when normalization was fitted",
                        c.name
                    )))
                }
                (other, _) => other.clone(),
            };
            out.columns.push(Column { name: c.name.clone(), data });
        }
        if clamped > 0 {
            log::warn!("clamped {clamped} value(s) outside the training range into [0, 1]");
        }
        Ok(out)
    }
}

/// Fits on `train` unless a spec is supplied, then applies it.
pub fn normalize(
    ds: &TabularDataset,
    spec: Option<&NormalizationSpec>,
) -> Result<(TabularDataset, NormalizationSpec), PreprocessError> {
    let spec = spec.cloned().unwrap_or_else(|| NormalizationSpec::fit(ds));
    Ok((spec.apply(ds)?, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(cols: Vec<(&str, ColumnData)>) -> TabularDataset {
        let n = cols[0].1.len();
        let mut d = TabularDataset::new((0..n).map(|i| i.to_string()).collect(), vec![None; n]);
        for (name, c) in cols {
            d.push_column(name, c).unwrap();
        }
        d
    }

    #[test]
    fn min_max_examples() {
        let d = ds(vec![("x", ColumnData::Numeric(vec![0.0, 5.0, 10.0]))]);
        let (out, spec) = normalize(&d, None).unwrap();
        assert_eq!(out.columns[0].data, ColumnData::Numeric(vec![0.0, 0.5, 1.0]));
        let test = ds(vec![("x", ColumnData::Numeric(vec![12.0, -1.0]))]);
        let (t, _) = normalize(&test, Some(&spec)).unwrap();
        assert_eq!(t.columns[0].data, ColumnData::Numeric(vec![1.0, 0.0]));
    }

    #[test]
    fn constant_columns_are_dropped() {
        let d = ds(vec![
            ("k", ColumnData::Numeric(vec![7.0, 7.0])),
            ("b", ColumnData::Boolean(vec![true, true])),
            ("y", ColumnData::Numeric(vec![1.0, 2.0])),
        ]);
        let (out, spec) = normalize(&d, None).unwrap();
        assert_eq!(spec.dropped, vec!["k".to_string(), "b".to_string()]);
        assert_eq!(out.schema().len(), 1);
    }

    #[test]
    fn missing_fitted_column_is_an_error() {
        let d = ds(vec![("x", ColumnData::Numeric(vec![0.0, 1.0]))]);
        let spec = NormalizationSpec::fit(&d);
        let other = ds(vec![("z", ColumnData::Numeric(vec![0.0, 1.0]))]);
        assert!(spec.apply(&other).is_err());
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(v in prop::collection::vec(-1e6f64..1e6, 2..30)) {
            let d = ds(vec![("x", ColumnData::Numeric(v))]);
            let (once, _) = normalize(&d, None).unwrap();
            if once.columns.is_empty() { return Ok(()); }
            let (twice, _) = normalize(&once, None).unwrap();
            let (ColumnData::Numeric(a), ColumnData::Numeric(b)) = (&once.columns[0].data, &twice.columns[0].data) else { unreachable!() };
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
