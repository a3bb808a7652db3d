//! CSV ingestion with per-column Yeo-Johnson transform and standardization.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub response: String,
    pub covariates: Vec<String>,
    pub standardize: bool,
    pub yeo_johnson_lambda: Option<f64>,
}

impl ColumnSchema {
    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Config("at least one covariate column is required".into()));
        }
        if self.covariates.contains(&self.response) {
            return Err(Error::Config(format!(
                "response column '{}' is also listed as a covariate",
                self.response
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.covariates.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::Config(format!("covariate '{dup}' listed twice")));
        }
        if let Some(l) = self.yeo_johnson_lambda {
            if !l.is_finite() {
                return Err(Error::Config("Yeo-Johnson lambda must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Yeo-Johnson power transform.
pub fn yeo_johnson(u: f64, lambda: f64) -> f64 {
    const EPS: f64 = 1e-12;
    if u >= 0.0 {
        if lambda.abs() < EPS {
            u.ln_1p()
        } else {
            ((u.ln_1p() * lambda).exp_m1()) / lambda
        }
    } else {
        let l2 = 2.0 - lambda;
        if l2.abs() < EPS {
            -(-u).ln_1p()
        } else {
            -((-u).ln_1p() * l2).exp_m1() / l2
        }
    }
}

/// Subtract the mean and divide by the sample standard deviation (divisor
/// n - 1). A constant column is an error.
pub fn standardize(values: &mut [f64], name: &str) -> Result<()> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        let message = if sd.is_finite() {
            "column is constant and cannot be standardized"
        } else {
            "column values are too large to standardize"
        };
        return Err(Error::Data {
            row: None,
            column: Some(name.to_string()),
            message: message.into(),
        });
    }
    values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    Ok(())
}

pub fn load_dataset(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    parse_dataset(file, schema)
}

/// Parse a comma-delimited file with a header row. Rows are numbered from 1
/// for the first data row.
pub fn parse_dataset<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("cannot read header: {e}")))?
        .clone();
    let locate = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Data {
            row: None,
            column: Some(name.to_string()),
            message: "column not found in header".into(),
        })
    };
    let y_idx = locate(&schema.response)?;
    let x_idx = schema
        .covariates
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); x_idx.len() + 1];
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Data {
            row: Some(row),
            column: None,
            message: format!("malformed record: {e}"),
        })?;
        for (slot, (&idx, name)) in std::iter::once((&y_idx, &schema.response))
            .chain(x_idx.iter().zip(&schema.covariates))
            .enumerate()
        {
            let cell = record.get(idx).ok_or_else(|| Error::Data {
                row: Some(row),
                column: Some(name.clone()),
                message: "missing cell".into(),
            })?;
            let v: f64 = cell.parse().map_err(|_| Error::Data {
                row: Some(row),
                column: Some(name.clone()),
                message: format!("non-numeric value '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row: Some(row),
                    column: Some(name.clone()),
                    message: format!("non-finite value '{cell}'"),
                });
            }
            columns[slot].push(v);
        }
    }
    let n = columns[0].len();
    if n < 3 {
        return Err(Error::data(format!("need at least 3 data rows, found {n}")));
    }
    let names: Vec<&String> = std::iter::once(&schema.response).chain(&schema.covariates).collect();
    for (col, name) in columns.iter_mut().zip(&names) {
        if let Some(lambda) = schema.yeo_johnson_lambda {
            col.iter_mut().for_each(|v| *v = yeo_johnson(*v, lambda));
            if let Some(r) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data {
                    row: Some(r + 1),
                    column: Some(name.to_string()),
                    message: format!("Yeo-Johnson transform with lambda {lambda} overflows"),
                });
            }
        }
        if schema.standardize {
            standardize(col, name)?;
        }
    }
    let y = DVector::from_vec(columns[0].clone());
    let x = DMatrix::from_fn(n, x_idx.len(), |i, j| columns[j + 1][i]);
    Dataset::with_names(x, y, schema.covariates.clone(), schema.response.clone())
}

/// Write the response followed by the covariates with 17 significant digits,
/// enough to round-trip every f64.
pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = std::iter::once(data.response_name())
        .chain(data.covariate_names().iter().map(String::as_str))
        .collect();
    w.write_record(&header).map_err(|e| Error::data(e.to_string()))?;
    for i in 0..data.n() {
        let row: Vec<String> = std::iter::once(data.y()[i])
            .chain(data.x().row(i).iter().copied())
            .map(|v| format!("{v:.16e}"))
            .collect();
        w.write_record(&row).map_err(|e| Error::data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
