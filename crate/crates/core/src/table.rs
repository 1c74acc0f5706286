//! Fixed-header CSV tables with a JSON metadata sidecar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{EitError, Result};
use crate::io::csv_err;

/// Experiment metadata, keyed by field name.
pub type Metadata = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.headers.len() {
            return Err(EitError::InvalidInput(format!(
                "row has {} fields, table has {} columns",
                row.len(),
                self.headers.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EitError::InvalidInput(format!("no column `{name}` in {:?}", self.headers)))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    /// Numeric column; fields that do not parse become NaN.
    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self
            .column(name)?
            .into_iter()
            .map(|v| v.parse().unwrap_or(f64::NAN))
            .collect())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| EitError::InvalidInput(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| EitError::InvalidInput(e.to_string()))
    }

    pub fn from_csv_str(text: &str) -> Result<Table> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(csv_err)?.iter().map(String::from).collect());
        }
        Ok(Table { headers, rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Table> {
        Table::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// `out/foo.csv` → `out/foo.meta.json`.
pub fn metadata_path(csv_path: impl AsRef<Path>) -> PathBuf {
    let p = csv_path.as_ref();
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!("{stem}.meta.json"))
}

/// Writes the table and its metadata sidecar.
pub fn write_table(table: &Table, metadata: &Metadata, csv_path: impl AsRef<Path>) -> Result<()> {
    let csv_path = csv_path.as_ref();
    table.write_csv(csv_path)?;
    std::fs::write(metadata_path(csv_path), serde_json::to_string_pretty(metadata)?)?;
    Ok(())
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<Metadata> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_ragged_rows() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]).unwrap();
        assert!(t.push(vec!["1".into()]).is_err());
        let back = Table::from_csv_str(&t.to_csv_string().unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("b").unwrap(), vec!["x,y"]);
        assert!(back.column_f64("b").unwrap()[0].is_nan());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(metadata_path("out/rate.csv"), PathBuf::from("out/rate.meta.json"));
    }
}
