use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ColumnScale, DesignMatrix, FixedFit, RegressionMethod};
use crate::error::{Error, Result};

const GRID_SIZE: usize = 50;
const GRID_MIN_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Stop once no coefficient moves more than this in a full cycle.
    pub tolerance: f64,
    pub max_cycles: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_cycles: 10_000,
        }
    }
}

/// Centered-and-scaled problem: `gram = Z'Z/n`, `cross = Z'(y - ybar)/n`.
struct Standardized {
    scales: Vec<ColumnScale>,
    y_mean: f64,
    gram: DMatrix<f64>,
    cross: DVector<f64>,
}

fn standardize(d: &DesignMatrix) -> Result<Standardized> {
    let n = d.n();
    if n == 0 {
        return Err(Error::EmptyInput("design matrix"));
    }
    let nf = n as f64;
    let k = d.p() - 1;
    let mut scales = Vec::with_capacity(k);
    let mut z = DMatrix::zeros(n, k);
    for j in 0..k {
        let col = d.x.column(j + 1);
        let mean = col.sum() / nf;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ZeroVarianceColumn(j + 1));
        }
        for i in 0..n {
            z[(i, j)] = (col[i] - mean) / sd;
        }
        scales.push(ColumnScale { mean, sd });
    }
    let y_mean = d.y.sum() / nf;
    let yc = d.y.map(|v| v - y_mean);
    Ok(Standardized {
        gram: z.transpose() * &z / nf,
        cross: z.transpose() * yc / nf,
        scales,
        y_mean,
    })
}

fn back_transform(
    s: Standardized,
    b: &DVector<f64>,
    method: RegressionMethod,
    lambda: f64,
) -> FixedFit {
    let slopes: Vec<f64> = b.iter().zip(&s.scales).map(|(b, c)| b / c.sd).collect();
    let intercept = s.y_mean - slopes.iter().zip(&s.scales).map(|(b, c)| b * c.mean).sum::<f64>();
    let mut beta = vec![intercept];
    beta.extend(slopes);
    FixedFit {
        method,
        beta,
        lambda: Some(lambda),
        standardization: Some(s.scales),
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("penalty must be finite and >= 0, got {lambda}")))
    }
}

/// Ridge regression minimizing `RSS/n + lambda * |b|^2` on standardized
/// predictors; the intercept is not penalized.
pub fn fit_ridge(d: &DesignMatrix, lambda: f64) -> Result<FixedFit> {
    check_lambda(lambda)?;
    let s = standardize(d)?;
    let b = ridge_solve(&s, lambda)?;
    Ok(back_transform(s, &b, RegressionMethod::Ridge, lambda))
}

fn ridge_solve(s: &Standardized, lambda: f64) -> Result<DVector<f64>> {
    let k = s.gram.nrows();
    let system = &s.gram + DMatrix::identity(k, k) * lambda;
    Ok(system.cholesky().ok_or(Error::RankDeficient)?.solve(&s.cross))
}

/// LASSO minimizing `RSS/(2n) + lambda * |b|_1` on standardized predictors.
pub fn fit_lasso(d: &DesignMatrix, lambda: f64) -> Result<FixedFit> {
    fit_lasso_with(d, lambda, &LassoOptions::default())
}

pub fn fit_lasso_with(d: &DesignMatrix, lambda: f64, opts: &LassoOptions) -> Result<FixedFit> {
    check_lambda(lambda)?;
    let s = standardize(d)?;
    let b = coordinate_descent(&s.gram, &s.cross, lambda, DVector::zeros(s.cross.len()), opts)?;
    Ok(back_transform(s, &b, RegressionMethod::Lasso, lambda))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn coordinate_descent(
    gram: &DMatrix<f64>,
    cross: &DVector<f64>,
    lambda: f64,
    start: DVector<f64>,
    opts: &LassoOptions,
) -> Result<DVector<f64>> {
    let k = cross.len();
    let mut b = start;
    for _ in 0..opts.max_cycles {
        let mut largest_step = 0.0f64;
        for j in 0..k {
            let partial = cross[j] - gram.column(j).dot(&b) + gram[(j, j)] * b[j];
            let next = soft_threshold(partial, lambda) / gram[(j, j)];
            largest_step = largest_step.max((next - b[j]).abs());
            b[j] = next;
        }
        if largest_step < opts.tolerance {
            return Ok(b);
        }
    }
    Err(Error::NonConvergence("lasso coordinate descent", opts.max_cycles))
}

/// Smallest LASSO penalty that zeroes every slope: `max |Z'(y - ybar)| / n`.
pub fn lambda_max(d: &DesignMatrix) -> Result<f64> {
    Ok(standardize(d)?.cross.amax())
}

/// 50 log-spaced penalties from `1e-4 * lambda_max` up to `lambda_max`.
pub fn default_lambda_grid(d: &DesignMatrix) -> Result<Vec<f64>> {
    let top = lambda_max(d)?;
    if top == 0.0 {
        return Ok(vec![0.0]);
    }
    let (lo, hi) = ((GRID_MIN_RATIO * top).ln(), top.ln());
    Ok((0..GRID_SIZE)
        .map(|i| (lo + (hi - lo) * i as f64 / (GRID_SIZE - 1) as f64).exp())
        .collect())
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds.
pub(crate) fn kfold(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    folds
}

/// Mean held-out RMSE of each grid penalty under k-fold CV.
pub fn cv_risk(
    d: &DesignMatrix,
    method: RegressionMethod,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !matches!(method, RegressionMethod::Ridge | RegressionMethod::Lasso) {
        return Err(Error::InvalidArgument(format!("{method} has no penalty to tune")));
    }
    if grid.is_empty() {
        return Err(Error::EmptyInput("penalty grid"));
    }
    let n = d.n();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("cannot make {k} folds from {n} rows")));
    }
    let folds = kfold(n, k, seed);
    let mut risk = vec![0.0; grid.len()];
    for held in &folds {
        let mut in_fold = vec![false; n];
        for &i in held {
            in_fold[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
        let (train, test) = (d.subset(&train), d.subset(held));
        let s = standardize(&train)?;
        let z_test = DMatrix::from_fn(test.n(), s.scales.len(), |i, j| {
            (test.x[(i, j + 1)] - s.scales[j].mean) / s.scales[j].sd
        });
        // largest penalty first so each LASSO solve warm-starts from a
        // sparser neighbour
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
        let mut warm = DVector::zeros(s.cross.len());
        for idx in order {
            let lambda = grid[idx];
            check_lambda(lambda)?;
            let b = match method {
                RegressionMethod::Ridge => ridge_solve(&s, lambda)?,
                _ => coordinate_descent(&s.gram, &s.cross, lambda, warm, &LassoOptions::default())?,
            };
            let resid = (&z_test * &b).add_scalar(s.y_mean) - &test.y;
            risk[idx] += (resid.norm_squared() / test.n() as f64).sqrt() / k as f64;
            warm = b;
        }
    }
    Ok(risk)
}

/// Grid penalty with the lowest CV risk; near-ties go to the larger penalty.
pub fn tune_lambda(
    d: &DesignMatrix,
    method: RegressionMethod,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<f64> {
    let risk = cv_risk(d, method, grid, k, seed)?;
    let best = risk.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * best.abs().max(f64::MIN_POSITIVE);
    Ok(grid
        .iter()
        .zip(&risk)
        .filter(|(_, &r)| r - best <= tol)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max))
}
