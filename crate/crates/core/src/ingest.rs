//! CSV ingestion and training-window standardization.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    /// Number of leading rows used to learn per-series mean and sd.
    pub train_rows: usize,
    pub sqrt_transform: bool,
    /// Symmetric clip level applied after standardization.
    pub clip: Option<f64>,
}

impl PreprocessSpec {
    pub fn new(train_rows: usize, sqrt_transform: bool, clip: Option<f64>) -> Result<Self> {
        if train_rows < 2 {
            return Err(invalid("train_rows", "need at least two training rows to estimate a variance"));
        }
        if let Some(c) = clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid("clip", format!("must be positive, got {c}")));
            }
        }
        Ok(Self {
            train_rows,
            sqrt_transform,
            clip,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    /// Retained series names, in file order.
    pub names: Vec<String>,
    /// Series dropped for having zero training variance.
    pub dropped: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Standardized rows (training rows included).
    pub rows: Vec<Vec<f64>>,
}

impl Preprocessed {
    pub fn p(&self) -> usize {
        self.names.len()
    }
}

/// Raw numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Data("CSV header has no columns".into()));
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // Data row i sits on line i + 2 of the file.
        let line = i + 2;
        if record.len() != names.len() {
            return Err(Error::Data(format!(
                "line {line}: expected {} cells, found {}",
                names.len(),
                record.len()
            )));
        }
        let row = record
            .iter()
            .zip(&names)
            .map(|(cell, name)| {
                if cell.is_empty() {
                    return Err(Error::Data(format!("line {line}: missing value in column `{name}`")));
                }
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("line {line}: non-numeric value `{cell}` in column `{name}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { names, rows })
}

/// Square root (optional), standardize by training mean and sd, then clip.
pub fn preprocess_table(table: Table, spec: &PreprocessSpec) -> Result<Preprocessed> {
    let Table { names, mut rows } = table;
    if spec.train_rows < 2 {
        return Err(invalid("train_rows", "need at least two training rows"));
    }
    if spec.train_rows > rows.len() {
        return Err(Error::Data(format!(
            "train_rows = {} exceeds the {} data rows",
            spec.train_rows,
            rows.len()
        )));
    }
    if spec.sqrt_transform {
        for (i, row) in rows.iter_mut().enumerate() {
            for (v, name) in row.iter_mut().zip(&names) {
                if *v < 0.0 {
                    return Err(Error::Data(format!(
                        "line {}: negative value {v} in column `{name}` under square-root transform",
                        i + 2
                    )));
                }
                *v = v.sqrt();
            }
        }
    }
    let k = spec.train_rows as f64;
    let mut keep = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut dropped = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let train = rows[..spec.train_rows].iter().map(|r| r[c]);
        let mean = train.clone().sum::<f64>() / k;
        let var = train.map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        if var > 0.0 {
            keep.push(c);
            means.push(mean);
            sds.push(var.sqrt());
        } else {
            log::warn!("dropping column `{name}`: constant over the training rows");
            dropped.push(name.clone());
        }
    }
    if keep.is_empty() {
        return Err(Error::Data("every column is constant over the training rows".into()));
    }
    let out_rows = rows
        .iter()
        .map(|row| {
            keep.iter()
                .zip(means.iter().zip(&sds))
                .map(|(&c, (m, s))| {
                    let z = (row[c] - m) / s;
                    match spec.clip {
                        Some(l) => z.clamp(-l, l),
                        None => z,
                    }
                })
                .collect()
        })
        .collect();
    Ok(Preprocessed {
        names: keep.iter().map(|&c| names[c].clone()).collect(),
        dropped,
        means,
        sds,
        rows: out_rows,
    })
}

pub fn preprocess<R: Read>(reader: R, spec: &PreprocessSpec) -> Result<Preprocessed> {
    preprocess_table(read_table(reader)?, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(train: usize, sqrt: bool, clip: Option<f64>) -> PreprocessSpec {
        PreprocessSpec::new(train, sqrt, clip).unwrap()
    }

    #[test]
    fn standardizes_on_training_rows() {
        let csv = "a,b\n1,10\n3,10\n5,11\n";
        let out = preprocess(csv.as_bytes(), &spec(2, false, None)).unwrap();
        assert_eq!(out.names, vec!["a"]);
        assert_eq!(out.dropped, vec!["b"]);
        assert_relative_eq!(out.means[0], 2.0);
        assert_relative_eq!(out.sds[0], 2f64.sqrt());
        let col: Vec<f64> = out.rows.iter().map(|r| r[0]).collect();
        let r2 = 2f64.sqrt();
        assert_relative_eq!(col[0], -1.0 / r2, max_relative = 1e-15);
        assert_relative_eq!(col[1], 1.0 / r2, max_relative = 1e-15);
        assert_relative_eq!(col[2], 3.0 / r2, max_relative = 1e-15);
    }

    #[test]
    fn clip_after_standardizing() {
        // Training mean 0, sd 1; the 5.2 row stays 5.2 after standardizing.
        let csv = "x,y\n-1,1\n1,-1\n0,0\n5.2,-5.2\n";
        let out = preprocess(csv.as_bytes(), &spec(3, false, Some(3.0))).unwrap();
        assert_eq!(out.rows[3], vec![3.0, -3.0]);
        assert_relative_eq!(out.rows[0][0], -1.0);
    }

    #[test]
    fn sqrt_transform() {
        let csv = "x\n1\n9\n4\n";
        let out = preprocess(csv.as_bytes(), &spec(2, true, None)).unwrap();
        assert_relative_eq!(out.means[0], 2.0);
        assert_relative_eq!(out.rows[2][0], 0.0);
        let err = preprocess("x\n1\n-1\n".as_bytes(), &spec(2, true, None)).unwrap_err();
        assert!(err.to_string().contains("negative"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(preprocess("x\n1\nfoo\n".as_bytes(), &spec(2, false, None)).is_err());
        assert!(preprocess("x,y\n1,2\n3,\n".as_bytes(), &spec(2, false, None)).is_err());
        assert!(preprocess("x\n1\n2\n".as_bytes(), &spec(3, false, None)).is_err());
        assert!(preprocess("x\n1\n1\n".as_bytes(), &spec(2, false, None)).is_err());
        assert!(PreprocessSpec::new(1, false, None).is_err());
        assert!(PreprocessSpec::new(5, false, Some(0.0)).is_err());
    }
}
