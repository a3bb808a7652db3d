use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// An n x p covariate matrix paired with a length-n response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    covariate_names: Vec<String>,
    response_name: String,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, names, "y".to_string())
    }

    pub fn with_names(
        x: DMatrix<f64>,
        y: DVector<f64>,
        covariate_names: Vec<String>,
        response_name: String,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "covariate rows ({}) and response length ({}) differ",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 || x.nrows() == 0 {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if covariate_names.len() != x.ncols() {
            return Err(Error::InvalidArgument(
                "one name per covariate column required".into(),
            ));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            let (r, c) = (i % x.nrows(), i / x.nrows());
            return Err(Error::Data {
                row: Some(r + 1),
                column: Some(covariate_names[c].clone()),
                message: "non-finite value".into(),
            });
        }
        if let Some(r) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                row: Some(r + 1),
                column: Some(response_name),
                message: "non-finite value".into(),
            });
        }
        Ok(Self {
            x,
            y,
            covariate_names,
            response_name,
        })
    }

    /// Build from row-major covariate rows.
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidArgument("ragged covariate rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(x, DVector::from_column_slice(y))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Same covariates, different response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::with_names(
            self.x.clone(),
            y,
            self.covariate_names.clone(),
            self.response_name.clone(),
        )
    }
}
