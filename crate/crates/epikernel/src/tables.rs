//! CSV table emission and ingestion for fit artifacts.
//!
//! All tables carry a header row; floating-point cells use a fixed
//! 17-significant-digit scientific rendering so outputs are byte-stable and
//! diffable, and values round-trip exactly through f64.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("column {0:?} missing from table")]
    MissingColumn(String),
}

/// Fixed 17-significant-digit rendering; round-trips f64 exactly.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TableError + '_ {
    move |source| TableError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write a table of f64 columns with the standard rendering.
pub fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), TableError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "{}", header.join(",")).map_err(io_err(path))?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(io_err(path))?;
    }
    Ok(())
}

/// A named-column table of f64 values read back from disk.
#[derive(Debug, Clone)]
pub struct DrawsTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DrawsTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TableError> {
        let idx = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }
}

/// Read a numeric CSV table with a header row.
pub fn read_numeric_csv(path: &Path) -> Result<DrawsTable, TableError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| TableError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| TableError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TableError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(names.len());
        for field in rec.iter() {
            row.push(field.parse::<f64>().map_err(|e| TableError::Parse {
                path: path.to_path_buf(),
                detail: format!("row {}: cannot parse {:?}: {}", i + 1, field, e),
            })?);
        }
        rows.push(row);
    }
    Ok(DrawsTable { names, rows })
}
