//! Weekly epidemic dataset: counts, year labels, covariates, and the ragged
//! per-week pairwise farm-distance structure.
//!
//! A dataset is a directory of CSV files plus a small JSON manifest. All
//! indices in the on-disk format are 1-based inclusive; in-memory accessors
//! take 1-based week numbers as well.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tables::fmt_g17;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("invariant violation: {0}")]
    Invariant(String),
}

/// Planar GPS-derived farm coordinates in km.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarmLocation {
    pub easting_km: f64,
    pub northing_km: f64,
}

impl FarmLocation {
    pub fn new(easting_km: f64, northing_km: f64) -> Self {
        Self {
            easting_km,
            northing_km,
        }
    }
}

/// Euclidean distance in km between two farms.
pub fn pairwise_distance(a: FarmLocation, b: FarmLocation) -> Result<f64, DataError> {
    if !(a.easting_km.is_finite()
        && a.northing_km.is_finite()
        && b.easting_km.is_finite()
        && b.northing_km.is_finite())
    {
        return Err(DataError::Invariant(
            "farm coordinates must be finite".into(),
        ));
    }
    let du = a.easting_km - b.easting_km;
    let dv = a.northing_km - b.northing_km;
    Ok(du.hypot(dv))
}

/// Ragged per-week cross-distances between the farms infected in a week and
/// those infected the week before.
///
/// Weeks with no cases store the single sentinel value `d_min`; weeks with
/// cases following a case-free week store the single value 1 km. Ranges are
/// 1-based inclusive into `flat` and exist for weeks `2..=n` only.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBundle {
    pub flat: Vec<f64>,
    pub start_index: Vec<usize>,
    pub end_index: Vec<usize>,
    pub d_min: f64,
}

impl DistanceBundle {
    /// Number of weeks covered (ranges exist for weeks 2..=n).
    pub fn n_weeks(&self) -> usize {
        self.start_index.len() + 1
    }

    /// Distance entries for a week (valid weeks: 2..=n).
    pub fn week_distances(&self, week: usize) -> Result<&[f64], DataError> {
        if week < 2 || week > self.n_weeks() {
            return Err(DataError::Invariant(format!(
                "no distance range for week {week} (valid weeks are 2..={})",
                self.n_weeks()
            )));
        }
        let s = self.start_index[week - 2];
        let e = self.end_index[week - 2];
        Ok(&self.flat[s - 1..e])
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.start_index.len() != self.end_index.len() {
            return Err(DataError::Dimension {
                what: "distance index columns".into(),
                expected: self.start_index.len(),
                actual: self.end_index.len(),
            });
        }
        if !(self.d_min.is_finite() && self.d_min > 0.0) {
            return Err(DataError::Invariant(format!(
                "d_min must be a positive finite distance, got {}",
                self.d_min
            )));
        }
        for (k, v) in self.flat.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(DataError::Invariant(format!(
                    "distance entry {} is {} (must be finite and >= 0)",
                    k + 1,
                    v
                )));
            }
        }
        for (k, (&s, &e)) in self.start_index.iter().zip(&self.end_index).enumerate() {
            if s == 0 || e < s || e > self.flat.len() {
                return Err(DataError::Invariant(format!(
                    "week {} distance range [{s}, {e}] out of bounds (flat length {})",
                    k + 2,
                    self.flat.len()
                )));
            }
        }
        Ok(())
    }
}

/// Build the per-week distance structure from case locations.
///
/// Week `i` with cases in both weeks `i` and `i-1` stores all cross-distances
/// between the two location sets; cases after a case-free week store 1 km;
/// case-free weeks store `d_min`.
pub fn build_distance_bundle(
    weekly_case_locations: &[Vec<FarmLocation>],
    counts: &[u32],
    d_min: f64,
) -> Result<DistanceBundle, DataError> {
    if weekly_case_locations.len() != counts.len() {
        return Err(DataError::Dimension {
            what: "weekly case location lists".into(),
            expected: counts.len(),
            actual: weekly_case_locations.len(),
        });
    }
    if !(d_min.is_finite() && d_min > 0.0) {
        return Err(DataError::Invariant(format!(
            "d_min must be a positive finite distance, got {d_min}"
        )));
    }
    let n = counts.len();
    let mut flat = Vec::new();
    let mut start_index = Vec::with_capacity(n.saturating_sub(1));
    let mut end_index = Vec::with_capacity(n.saturating_sub(1));
    for week in 2..=n {
        let y_curr = counts[week - 1];
        let y_prev = counts[week - 2];
        let start = flat.len() + 1;
        if y_curr == 0 {
            flat.push(d_min);
        } else if y_prev == 0 {
            flat.push(1.0);
        } else {
            let curr = &weekly_case_locations[week - 1];
            let prev = &weekly_case_locations[week - 2];
            if curr.is_empty() || prev.is_empty() {
                return Err(DataError::Invariant(format!(
                    "week {week} has positive counts in weeks {week} and {} but no case locations",
                    week - 1
                )));
            }
            for &c in curr {
                for &p in prev {
                    flat.push(pairwise_distance(c, p)?);
                }
            }
        }
        start_index.push(start);
        end_index.push(flat.len());
    }
    let bundle = DistanceBundle {
        flat,
        start_index,
        end_index,
        d_min,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Weekly counts, year labels, covariate matrix (intercept column included),
/// and the distance bundle. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub counts: Vec<u32>,
    pub years: Vec<usize>,
    /// n x (1 + p); column 0 is the all-ones intercept.
    pub covariates: DMatrix<f64>,
    /// Names of the p non-intercept covariate columns.
    pub covariate_names: Vec<String>,
    pub distances: DistanceBundle,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.iter().copied().max().unwrap_or(0)
    }

    pub fn total_cases(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    fn validate(&self) -> Result<(), DataError> {
        let n = self.counts.len();
        if self.years.len() != n {
            return Err(DataError::Dimension {
                what: "year labels".into(),
                expected: n,
                actual: self.years.len(),
            });
        }
        if self.covariates.nrows() != n {
            return Err(DataError::Dimension {
                what: "covariate rows".into(),
                expected: n,
                actual: self.covariates.nrows(),
            });
        }
        if self.covariates.ncols() != 1 + self.covariate_names.len() {
            return Err(DataError::Dimension {
                what: "covariate columns".into(),
                expected: 1 + self.covariate_names.len(),
                actual: self.covariates.ncols(),
            });
        }
        for i in 0..n {
            if self.covariates[(i, 0)] != 1.0 {
                return Err(DataError::Invariant(format!(
                    "covariate column 0 must be identically 1 (week {} has {})",
                    i + 1,
                    self.covariates[(i, 0)]
                )));
            }
            for j in 1..self.covariates.ncols() {
                if !self.covariates[(i, j)].is_finite() {
                    return Err(DataError::Invariant(format!(
                        "covariate {} at week {} is not finite",
                        self.covariate_names[j - 1],
                        i + 1
                    )));
                }
            }
        }
        let n_years = self.n_years();
        let mut prev = 0usize;
        for (i, &y) in self.years.iter().enumerate() {
            if y == 0 || y > n_years {
                return Err(DataError::Invariant(format!(
                    "year label {} at week {} outside 1..={}",
                    y,
                    i + 1,
                    n_years
                )));
            }
            if y < prev {
                return Err(DataError::Invariant(format!(
                    "year labels must be nondecreasing (week {} drops {} -> {})",
                    i + 1,
                    prev,
                    y
                )));
            }
            prev = y;
        }
        if self.distances.n_weeks() != n {
            return Err(DataError::Dimension {
                what: "distance index ranges".into(),
                expected: n - 1,
                actual: self.distances.start_index.len(),
            });
        }
        self.distances.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    n: usize,
    p: usize,
    years: usize,
    d_min: f64,
    counts: String,
    covariates: String,
    distances: String,
    dist_index: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> DataError + '_ {
    move |e| DataError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), DataError> {
    let mut rdr = csv::Reader::from_path(path).map_err(parse_err(path))?;
    let header = rdr
        .headers()
        .map_err(parse_err(path))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(parse_err(path))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn parse_field<T: std::str::FromStr>(path: &Path, row: usize, field: &str) -> Result<T, DataError>
where
    T::Err: std::fmt::Display,
{
    field.parse().map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        detail: format!("row {}: cannot parse {:?}: {}", row + 1, field, e),
    })
}

/// Load and validate a dataset from its manifest file.
///
/// File paths inside the manifest are resolved relative to the manifest's
/// directory. Every structural invariant is checked; violations are reported
/// with distinct error classes.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DataError> {
    let file = File::open(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: DatasetManifest =
        serde_json::from_reader(file).map_err(parse_err(manifest_path))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    // counts.csv: week,count,year
    let counts_path = dir.join(&manifest.counts);
    let (header, rows) = read_csv(&counts_path)?;
    if header != ["week", "count", "year"] {
        return Err(DataError::Parse {
            path: counts_path.clone(),
            detail: format!("expected header week,count,year; got {header:?}"),
        });
    }
    if rows.len() != manifest.n {
        return Err(DataError::Dimension {
            what: "count rows".into(),
            expected: manifest.n,
            actual: rows.len(),
        });
    }
    let mut counts = Vec::with_capacity(manifest.n);
    let mut years = Vec::with_capacity(manifest.n);
    for (i, row) in rows.iter().enumerate() {
        let week: usize = parse_field(&counts_path, i, &row[0])?;
        if week != i + 1 {
            return Err(DataError::Invariant(format!(
                "count rows must be numbered 1..n in order (row {} is week {})",
                i + 1,
                week
            )));
        }
        counts.push(parse_field(&counts_path, i, &row[1])?);
        years.push(parse_field(&counts_path, i, &row[2])?);
    }

    // covariates.csv: week + p named columns
    let cov_path = dir.join(&manifest.covariates);
    let (header, rows) = read_csv(&cov_path)?;
    if header.len() != 1 + manifest.p {
        return Err(DataError::Dimension {
            what: "covariate columns".into(),
            expected: 1 + manifest.p,
            actual: header.len(),
        });
    }
    if rows.len() != manifest.n {
        return Err(DataError::Dimension {
            what: "covariate rows".into(),
            expected: manifest.n,
            actual: rows.len(),
        });
    }
    let covariate_names: Vec<String> = header[1..].to_vec();
    let mut covariates = DMatrix::zeros(manifest.n, 1 + manifest.p);
    for (i, row) in rows.iter().enumerate() {
        covariates[(i, 0)] = 1.0;
        for j in 0..manifest.p {
            covariates[(i, j + 1)] = parse_field(&cov_path, i, &row[j + 1])?;
        }
    }

    // distances.csv: value
    let dist_path = dir.join(&manifest.distances);
    let (_, rows) = read_csv(&dist_path)?;
    let mut flat = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        flat.push(parse_field(&dist_path, i, &row[0])?);
    }

    // dist_index.csv: week,start,end for weeks 2..=n
    let idx_path = dir.join(&manifest.dist_index);
    let (header, rows) = read_csv(&idx_path)?;
    if header != ["week", "start", "end"] {
        return Err(DataError::Parse {
            path: idx_path.clone(),
            detail: format!("expected header week,start,end; got {header:?}"),
        });
    }
    if rows.len() != manifest.n - 1 {
        return Err(DataError::Dimension {
            what: "distance index rows".into(),
            expected: manifest.n - 1,
            actual: rows.len(),
        });
    }
    let mut start_index = Vec::with_capacity(rows.len());
    let mut end_index = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let week: usize = parse_field(&idx_path, i, &row[0])?;
        if week != i + 2 {
            return Err(DataError::Invariant(format!(
                "distance index rows must cover weeks 2..n in order (row {} is week {})",
                i + 1,
                week
            )));
        }
        start_index.push(parse_field(&idx_path, i, &row[1])?);
        end_index.push(parse_field(&idx_path, i, &row[2])?);
    }

    let dataset = Dataset {
        counts,
        years,
        covariates,
        covariate_names,
        distances: DistanceBundle {
            flat,
            start_index,
            end_index,
            d_min: manifest.d_min,
        },
    };
    if dataset.n_years() != manifest.years {
        return Err(DataError::Dimension {
            what: "year count".into(),
            expected: manifest.years,
            actual: dataset.n_years(),
        });
    }
    dataset.validate()?;
    Ok(dataset)
}

/// Write a dataset to a directory in the canonical on-disk layout.
///
/// Output is byte-deterministic: floating-point fields use the fixed
/// 17-significant-digit rendering, so `save(load(d))` is byte-identical for
/// files produced by this writer.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    dataset.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join("counts.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    writeln!(w, "week,count,year").map_err(io_err(&path))?;
    for i in 0..dataset.n() {
        writeln!(
            w,
            "{},{},{}",
            i + 1,
            dataset.counts[i],
            dataset.years[i]
        )
        .map_err(io_err(&path))?;
    }

    let path = dir.join("covariates.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    writeln!(w, "week,{}", dataset.covariate_names.join(",")).map_err(io_err(&path))?;
    for i in 0..dataset.n() {
        let fields: Vec<String> = (1..dataset.covariates.ncols())
            .map(|j| fmt_g17(dataset.covariates[(i, j)]))
            .collect();
        writeln!(w, "{},{}", i + 1, fields.join(",")).map_err(io_err(&path))?;
    }

    let path = dir.join("distances.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    writeln!(w, "value").map_err(io_err(&path))?;
    for v in &dataset.distances.flat {
        writeln!(w, "{}", fmt_g17(*v)).map_err(io_err(&path))?;
    }

    let path = dir.join("dist_index.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    writeln!(w, "week,start,end").map_err(io_err(&path))?;
    for (k, (&s, &e)) in dataset
        .distances
        .start_index
        .iter()
        .zip(&dataset.distances.end_index)
        .enumerate()
    {
        writeln!(w, "{},{},{}", k + 2, s, e).map_err(io_err(&path))?;
    }

    let manifest = DatasetManifest {
        n: dataset.n(),
        p: dataset.n_covariates(),
        years: dataset.n_years(),
        d_min: dataset.distances.d_min,
        counts: "counts.csv".into(),
        covariates: "covariates.csv".into(),
        distances: "distances.csv".into(),
        dist_index: "dist_index.csv".into(),
    };
    let path = dir.join("manifest.json");
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(parse_err(&path))?;
    writeln!(w).map_err(io_err(&path))?;
    Ok(())
}
