use nalgebra::DVector;

use super::{DesignMatrix, FixedFit, RegressionMethod};
use crate::error::{Error, Result};

/// Relative pivot size below which the design is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares via a thin QR factorization.
pub fn fit_ols(d: &DesignMatrix) -> Result<FixedFit> {
    let (n, p) = (d.n(), d.p());
    if n < p {
        return Err(Error::RankDeficient);
    }
    let qr = d.x.clone().qr();
    let r = qr.r();
    let largest = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if largest == 0.0 || r.diagonal().iter().any(|v| v.abs() <= RANK_TOL * largest) {
        return Err(Error::RankDeficient);
    }
    let qty: DVector<f64> = qr.q().transpose() * &d.y;
    let beta = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient)?;
    Ok(FixedFit {
        method: RegressionMethod::Ols,
        beta: beta.iter().copied().collect(),
        lambda: None,
        standardization: None,
    })
}
