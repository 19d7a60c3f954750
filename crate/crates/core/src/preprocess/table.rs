//! Column-oriented learner input and its delimited text form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::ingest::AttrKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Boolean(Vec<bool>),
    Nominal(Vec<String>),
}

impl ColumnData {
    pub fn kind(&self) -> AttrKind {
        match self {
            ColumnData::Numeric(_) => AttrKind::Numeric,
            ColumnData::Boolean(_) => AttrKind::Boolean,
            ColumnData::Nominal(_) => AttrKind::Nominal,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Boolean(v) => v.len(),
            ColumnData::Nominal(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn empty(kind: AttrKind) -> Self {
        match kind {
            AttrKind::Numeric => ColumnData::Numeric(Vec::new()),
            AttrKind::Boolean => ColumnData::Boolean(Vec::new()),
            AttrKind::Nominal => ColumnData::Nominal(Vec::new()),
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Boolean(v) => ColumnData::Boolean(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Nominal(v) => {
                ColumnData::Nominal(rows.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }

    /// Cell text; booleans are written as 0/1.
    fn render(&self, i: usize) -> String {
        match self {
            ColumnData::Numeric(v) => v[i].to_string(),
            ColumnData::Boolean(v) => if v[i] { "1" } else { "0" }.to_string(),
            ColumnData::Nominal(v) => v[i].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

/// One row per target instance: raw and synthesized attributes plus a label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TabularDataset {
    pub ids: Vec<String>,
    pub columns: Vec<Column>,
    pub labels: Vec<Option<String>>,
}

impl TabularDataset {
    pub fn new(ids: Vec<String>, labels: Vec<Option<String>>) -> Self {
        assert_eq!(ids.len(), labels.len());
        Self { ids, columns: Vec::new(), labels }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn schema(&self) -> Vec<(String, AttrKind)> {
        self.columns.iter().map(|c| (c.name.clone(), c.data.kind())).collect()
    }

    /// Appends a column, rejecting duplicate names and length mismatches.
    pub fn push_column(&mut self, name: impl Into<String>, data: ColumnData) -> Result<(), PreprocessError> {
        let name = name.into();
        if self.column(&name).is_some() {
            return Err(PreprocessError::NameCollision(name));
        }
        if data.len() != self.len() {
            return Err(PreprocessError::Schema(format!(
                "column '{name}' has {} values for {} rows",
                data.len(),
                self.len()
            )));
        }
        self.columns.push(Column { name, data });
        Ok(())
    }

    /// Rows at the given indices, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| Column { name: c.name.clone(), data: c.data.select(rows) })
                .collect(),
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    /// Distinct labels in sorted order.
    pub fn classes(&self) -> Vec<String> {
        let mut v: Vec<String> = self.labels.iter().flatten().cloned().collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn to_delimited(&self) -> Result<String, PreprocessError> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend(self.columns.iter().map(|c| format!("{}:{}", c.name, c.data.kind())));
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.ids[i].clone()];
            rec.extend(self.columns.iter().map(|c| c.data.render(i)));
            rec.push(self.labels[i].clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| PreprocessError::Schema(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 input"))
    }

    pub fn from_delimited(text: &str) -> Result<Self, PreprocessError> {
        let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        let bad = |m: String| PreprocessError::Schema(m);
        if header.len() < 2 || &header[0] != "id" || &header[header.len() - 1] != "label" {
            return Err(bad("table header must start with 'id' and end with 'label'".into()));
        }
        let mut columns = Vec::new();
        for h in header.iter().skip(1).take(header.len() - 2) {
            let (name, kind) = h.rsplit_once(':').ok_or_else(|| bad(format!("column '{h}' lacks ':kind'")))?;
            let kind = match kind {
                "numeric" => AttrKind::Numeric,
                "boolean" => AttrKind::Boolean,
                "nominal" => AttrKind::Nominal,
                other => return Err(bad(format!("unknown column kind '{other}'"))),
            };
            columns.push(Column { name: name.to_string(), data: ColumnData::empty(kind) });
        }
        let mut ds = TabularDataset::default();
        for rec in r.records() {
            let rec = rec?;
            ds.ids.push(rec[0].to_string());
            for (j, col) in columns.iter_mut().enumerate() {
                let cell = &rec[j + 1];
                let err = || bad(format!("bad value '{cell}' in column '{}'", col.name));
                match &mut col.data {
                    ColumnData::Numeric(v) => v.push(cell.parse().map_err(|_| err())?),
                    ColumnData::Boolean(v) => v.push(match cell {
                        "1" => true,
                        "0" => false,
                        _ => return Err(err()),
                    }),
                    ColumnData::Nominal(v) => v.push(cell.to_string()),
                }
            }
            let label = &rec[rec.len() - 1];
            ds.labels.push((!label.is_empty()).then(|| label.to_string()));
        }
        ds.columns = columns;
        Ok(ds)
    }
}

pub fn emit_table(ds: &TabularDataset, path: &Path) -> Result<(), PreprocessError> {
    fs::write(path, ds.to_delimited()?)
        .map_err(|source| PreprocessError::Io { path: path.display().to_string(), source })
}

pub fn read_table(path: &Path) -> Result<TabularDataset, PreprocessError> {
    let text = fs::read_to_string(path)
        .map_err(|source| PreprocessError::Io { path: path.display().to_string(), source })?;
    TabularDataset::from_delimited(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TabularDataset {
        let mut ds = TabularDataset::new(
            vec!["c1".into(), "c2".into()],
            vec![Some("A".into()), None],
        );
        ds.push_column("river_dist", ColumnData::Numeric(vec![0.1, 2.5e-7])).unwrap();
        ds.push_column("Have_Exp", ColumnData::Boolean(vec![true, false])).unwrap();
        ds.push_column("name", ColumnData::Nominal(vec!["a\tb".into(), "\"q\"".into()])).unwrap();
        ds
    }

    #[test]
    fn write_read_round_trip() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        emit_table(&ds, &p).unwrap();
        assert_eq!(read_table(&p).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let mut ds = TabularDataset::default();
        ds.push_column("x", ColumnData::Numeric(vec![])).unwrap();
        let text = ds.to_delimited().unwrap();
        assert_eq!(text, "id\tx:numeric\tlabel\n");
        assert_eq!(TabularDataset::from_delimited(&text).unwrap(), ds);
    }

    #[test]
    fn nominal_with_delimiter_is_quoted() {
        let text = sample().to_delimited().unwrap();
        assert!(text.contains("\"a\tb\""));
    }

    #[test]
    fn duplicate_column_is_rejected() {
        let mut ds = sample();
        assert!(matches!(
            ds.push_column("river_dist", ColumnData::Numeric(vec![0.0, 0.0])),
            Err(PreprocessError::NameCollision(_))
        ));
    }

    proptest! {
        #[test]
        fn numeric_cells_round_trip_exactly(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..20)) {
            let ids = (0..v.len()).map(|i| format!("r{i}")).collect();
            let mut ds = TabularDataset::new(ids, vec![Some("L".into()); v.len()]);
            ds.push_column("x", ColumnData::Numeric(v)).unwrap();
            prop_assert_eq!(TabularDataset::from_delimited(&ds.to_delimited().unwrap()).unwrap(), ds);
        }
    }
}
