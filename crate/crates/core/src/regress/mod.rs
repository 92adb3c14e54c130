//! Body-weight regression: least squares, ridge, LASSO and a linear mixed
//! model with per-cow random intercepts and slopes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod lmm;
mod ols;
mod penalized;

pub use lmm::{fit_lmm, fit_lmm_with, lmm_log_likelihood, LmmCriterion, LmmFit, LmmOptions};
pub use ols::fit_ols;
pub use penalized::{
    cv_risk, default_lambda_grid, fit_lasso, fit_lasso_with, fit_ridge, lambda_max, tune_lambda,
    LassoOptions,
};

/// Predictor columns after the intercept, in design-matrix order.
pub const PREDICTORS: [&str; 4] = ["width_px", "length_px", "avg_height_m", "volume"];

/// Observations by columns; column 0 is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub cow_ids: Vec<String>,
    /// Session ordinal of each row (used by the mixed model's slopes).
    pub time: Vec<f64>,
    pub columns: Vec<String>,
}

impl DesignMatrix {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        cow_ids: Vec<String>,
        time: Vec<f64>,
        columns: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        for len in [y.len(), cow_ids.len(), time.len()] {
            if len != n {
                return Err(Error::LengthMismatch(n, len));
            }
        }
        if columns.len() != x.ncols() {
            return Err(Error::LengthMismatch(x.ncols(), columns.len()));
        }
        if x.ncols() == 0 || x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidArgument(
                "first design column must be the intercept".into(),
            ));
        }
        if x.iter().chain(y.iter()).chain(time.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design contains non-finite cells".into()));
        }
        Ok(Self {
            x,
            y,
            cow_ids,
            time,
            columns,
        })
    }

    /// Builds `[1, predictors...]` rows.
    pub fn from_rows(
        predictors: &[Vec<f64>],
        y: &[f64],
        cow_ids: Vec<String>,
        time: Vec<f64>,
        names: &[&str],
    ) -> Result<Self> {
        let n = predictors.len();
        let p = names.len() + 1;
        let mut x = DMatrix::from_element(n, p, 1.0);
        for (i, row) in predictors.iter().enumerate() {
            if row.len() != p - 1 {
                return Err(Error::LengthMismatch(p - 1, row.len()));
            }
            for (j, &v) in row.iter().enumerate() {
                x[(i, j + 1)] = v;
            }
        }
        let mut columns = vec!["intercept".to_string()];
        columns.extend(names.iter().map(|s| s.to_string()));
        Self::new(x, DVector::from_column_slice(y), cow_ids, time, columns)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            cow_ids: rows.iter().map(|&i| self.cow_ids[i].clone()).collect(),
            time: rows.iter().map(|&i| self.time[i]).collect(),
            columns: self.columns.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegressionMethod {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "RR")]
    Ridge,
    #[serde(rename = "LASSO")]
    Lasso,
    #[serde(rename = "LMM")]
    Lmm,
}

impl RegressionMethod {
    pub const ALL: [RegressionMethod; 4] = [Self::Ols, Self::Ridge, Self::Lasso, Self::Lmm];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ols => "OLS",
            Self::Ridge => "RR",
            Self::Lasso => "LASSO",
            Self::Lmm => "LMM",
        }
    }
}

impl fmt::Display for RegressionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegressionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OLS" => Ok(Self::Ols),
            "RR" | "RIDGE" => Ok(Self::Ridge),
            "LASSO" => Ok(Self::Lasso),
            "LMM" => Ok(Self::Lmm),
            _ => Err(Error::InvalidArgument(format!("unknown regression method {s:?}"))),
        }
    }
}

/// Per-column `(mean, sd)` used to standardize predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedFit {
    pub method: RegressionMethod,
    /// Coefficients on the original column scales, intercept first.
    pub beta: Vec<f64>,
    pub lambda: Option<f64>,
    /// Present for penalized fits; one entry per non-intercept column.
    pub standardization: Option<Vec<ColumnScale>>,
}

impl FixedFit {
    pub fn predict(&self, d: &DesignMatrix) -> Result<DVector<f64>> {
        if d.p() != self.beta.len() {
            return Err(Error::LengthMismatch(self.beta.len(), d.p()));
        }
        Ok(&d.x * DVector::from_column_slice(&self.beta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Fixed(FixedFit),
    Mixed(LmmFit),
}

impl Model {
    pub fn method(&self) -> RegressionMethod {
        match self {
            Model::Fixed(f) => f.method,
            Model::Mixed(_) => RegressionMethod::Lmm,
        }
    }

    pub fn beta(&self) -> &[f64] {
        match self {
            Model::Fixed(f) => &f.beta,
            Model::Mixed(m) => &m.beta,
        }
    }

    pub fn predict(&self, d: &DesignMatrix) -> Result<DVector<f64>> {
        match self {
            Model::Fixed(f) => f.predict(d),
            Model::Mixed(m) => m.predict(d),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Settings shared by every fit in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Explicit penalty grid; `None` uses [`default_lambda_grid`].
    pub lambda_grid: Option<Vec<f64>>,
    pub tuning_folds: usize,
    pub lmm: LmmOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            tuning_folds: 5,
            lmm: LmmOptions::default(),
        }
    }
}

/// Fits `method`, tuning the penalty by k-fold CV for ridge and LASSO.
pub fn fit_model(
    d: &DesignMatrix,
    method: RegressionMethod,
    opts: &FitOptions,
    seed: u64,
) -> Result<Model> {
    let tuned = |d: &DesignMatrix| -> Result<f64> {
        let grid = match &opts.lambda_grid {
            Some(g) => g.clone(),
            None => default_lambda_grid(d)?,
        };
        tune_lambda(d, method, &grid, opts.tuning_folds, seed)
    };
    Ok(match method {
        RegressionMethod::Ols => Model::Fixed(fit_ols(d)?),
        RegressionMethod::Ridge => Model::Fixed(fit_ridge(d, tuned(d)?)?),
        RegressionMethod::Lasso => Model::Fixed(fit_lasso(d, tuned(d)?)?),
        RegressionMethod::Lmm => Model::Mixed(fit_lmm_with(d, &opts.lmm)?),
    })
}

pub(crate) fn cow_groups(cow_ids: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in cow_ids.iter().enumerate() {
        groups.entry(c.as_str()).or_default().push(i);
    }
    groups
}
