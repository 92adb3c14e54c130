use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{cow_groups, DesignMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmmCriterion {
    Reml,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmmOptions {
    pub criterion: LmmCriterion,
    /// Stop restarting once the log-likelihood improves by less than this.
    pub tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for LmmOptions {
    fn default() -> Self {
        Self {
            criterion: LmmCriterion::Reml,
            tolerance: 1e-8,
            max_evaluations: 20_000,
        }
    }
}

/// Mixed model `y = X b + u0[cow] + u1[cow] * t + e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub beta: Vec<f64>,
    pub beta_se: Vec<f64>,
    pub var_intercept: f64,
    pub var_slope: f64,
    pub cov_int_slope: f64,
    pub var_resid: f64,
    /// Per-cow `(intercept, slope)` deviations, slope per raw time unit.
    pub blups: BTreeMap<String, (f64, f64)>,
    pub loglik: f64,
    pub criterion: LmmCriterion,
    /// Set when the random-effect covariance is (nearly) singular.
    pub boundary: bool,
    /// Relative covariance factor on the internal time scale.
    pub theta: [f64; 3],
    pub time_shift: f64,
    pub time_scale: f64,
    pub evaluations: usize,
}

impl LmmFit {
    pub fn predict(&self, d: &DesignMatrix) -> Result<DVector<f64>> {
        if d.p() != self.beta.len() {
            return Err(Error::LengthMismatch(self.beta.len(), d.p()));
        }
        let mut out = &d.x * DVector::from_column_slice(&self.beta);
        for (i, cow) in d.cow_ids.iter().enumerate() {
            let (b0, b1) = self
                .blups
                .get(cow)
                .ok_or_else(|| Error::UnknownCow(cow.clone()))?;
            out[i] += b0 + b1 * d.time[i];
        }
        Ok(out)
    }
}

/// Per-cow cross products on the internal time scale.
struct Group {
    ztz: Matrix2<f64>,
    ztx: DMatrix<f64>,
    zty: Vector2<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

struct Problem {
    names: Vec<String>,
    groups: Vec<Group>,
    n: usize,
    p: usize,
    criterion: LmmCriterion,
    residual_floor: f64,
    shift: f64,
    scale: f64,
}

struct Profile {
    deviance: f64,
    beta: DVector<f64>,
    xtwx_inv: DMatrix<f64>,
    sigma2: f64,
    blups: Vec<Vector2<f64>>,
}

fn lambda(theta: &[f64; 3]) -> Matrix2<f64> {
    Matrix2::new(theta[0], 0.0, theta[1], theta[2])
}

impl Problem {
    fn new(d: &DesignMatrix, criterion: LmmCriterion) -> Result<Self> {
        let by_cow = cow_groups(&d.cow_ids);
        if by_cow.len() < 2 {
            return Err(Error::TooFewGroups(by_cow.len()));
        }
        let (n, p) = (d.n(), d.p());
        if n <= p {
            return Err(Error::RankDeficient);
        }
        let lo = d.time.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.time.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { hi - lo } else { 1.0 };
        let mut names = Vec::new();
        let mut groups = Vec::new();
        for (cow, rows) in by_cow {
            let sub = d.subset(&rows);
            let z = DMatrix::from_fn(rows.len(), 2, |i, j| {
                if j == 0 {
                    1.0
                } else {
                    (sub.time[i] - lo) / scale
                }
            });
            let ztz = z.transpose() * &z;
            let zty = z.transpose() * &sub.y;
            groups.push(Group {
                ztz: Matrix2::new(ztz[(0, 0)], ztz[(0, 1)], ztz[(1, 0)], ztz[(1, 1)]),
                ztx: z.transpose() * &sub.x,
                zty: Vector2::new(zty[0], zty[1]),
                xtx: sub.x.transpose() * &sub.x,
                xty: sub.x.transpose() * &sub.y,
                yty: sub.y.norm_squared(),
            });
            names.push(cow.to_string());
        }
        let mean = d.y.mean();
        let spread: f64 = d.y.iter().map(|v| (v - mean).powi(2)).sum();
        Ok(Self {
            names,
            groups,
            n,
            p,
            criterion,
            residual_floor: 1e-14 * spread.max(f64::MIN_POSITIVE),
            shift: lo,
            scale,
        })
    }

    /// Profiled -2 log-likelihood at relative factor `theta`.
    fn profile(&self, theta: &[f64; 3]) -> Option<Profile> {
        let lam = lambda(theta);
        let p = self.p;
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwy = DVector::zeros(p);
        let mut ytwy = 0.0;
        let mut log_det_a = 0.0;
        let mut solved = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let a = Matrix2::identity() + lam.transpose() * g.ztz * lam;
            let chol = a.cholesky()?;
            log_det_a += 2.0 * chol.l().diagonal().map(f64::ln).sum();
            let lzx = DMatrix::from_fn(2, p, |r, c| {
                (0..2).map(|k| lam[(k, r)] * g.ztx[(k, c)]).sum()
            });
            let lzy = lam.transpose() * g.zty;
            let a_inv = chol.inverse();
            let a_inv_lzx = DMatrix::from_fn(2, p, |r, c| {
                a_inv[(r, 0)] * lzx[(0, c)] + a_inv[(r, 1)] * lzx[(1, c)]
            });
            let a_inv_lzy = a_inv * lzy;
            xtwx += &g.xtx - lzx.transpose() * &a_inv_lzx;
            xtwy += &g.xty - lzx.transpose() * DVector::from_column_slice(a_inv_lzy.as_slice());
            ytwy += g.yty - lzy.dot(&a_inv_lzy);
            solved.push((a_inv, lzy, lzx));
        }
        let chol = xtwx.clone().cholesky()?;
        let beta = chol.solve(&xtwy);
        let log_det_x = 2.0 * chol.l().diagonal().map(f64::ln).sum();
        let rss = (ytwy - beta.dot(&xtwy)).max(self.residual_floor);
        let (dof, extra) = match self.criterion {
            LmmCriterion::Reml => ((self.n - p) as f64, log_det_x),
            LmmCriterion::Ml => (self.n as f64, 0.0),
        };
        let sigma2 = rss / dof;
        let deviance =
            log_det_a + extra + dof * (1.0 + (2.0 * std::f64::consts::PI * sigma2).ln());
        if !deviance.is_finite() {
            return None;
        }
        let blups = solved
            .iter()
            .map(|(a_inv, lzy, lzx)| {
                let fitted = Vector2::new(
                    (0..p).map(|c| lzx[(0, c)] * beta[c]).sum(),
                    (0..p).map(|c| lzx[(1, c)] * beta[c]).sum(),
                );
                lam * (a_inv * (lzy - fitted))
            })
            .collect();
        Some(Profile {
            deviance,
            beta,
            xtwx_inv: chol.inverse(),
            sigma2: rss / if self.criterion == LmmCriterion::Reml { (self.n - p) as f64 } else { self.n as f64 },
            blups,
        })
    }

    fn deviance(&self, theta: &[f64; 3]) -> f64 {
        self.profile(theta).map_or(f64::INFINITY, |p| p.deviance)
    }
}

/// Nelder-Mead on a 3-vector; returns the best point and evaluations used.
fn nelder_mead(
    f: impl Fn(&[f64; 3]) -> f64,
    start: [f64; 3],
    step: f64,
    budget: usize,
) -> ([f64; 3], f64, usize, bool) {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, f(&start)));
    for k in 0..3 {
        let mut v = start;
        v[k] += if v[k].abs() > 1e-3 { step * v[k].abs().max(1.0) } else { step };
        simplex.push((v, f(&v)));
    }
    let mut evals = 4;
    let blend = |a: &[f64; 3], b: &[f64; 3], t: f64| -> [f64; 3] {
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
    };
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[3].1);
        let anchor = simplex[0].0;
        let size = simplex[1..]
            .iter()
            .flat_map(|(v, _)| (0..3).map(move |k| (v[k] - anchor[k]).abs()))
            .fold(0.0f64, f64::max);
        // a collapsed simplex on a long ridge can crawl forever; the caller
        // restarts from the best vertex, so a flat simplex is enough here
        let flat = (worst - best).abs() <= 1e-11 * (1.0 + best.abs());
        let scale = 1.0 + anchor.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if flat || size <= 1e-10 * scale {
            return (simplex[0].0, best, evals, true);
        }
        if evals >= budget {
            return (simplex[0].0, best, evals, false);
        }
        let mut centroid = [0.0; 3];
        for (v, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += v[k] / 3.0;
            }
        }
        let far = simplex[3].0;
        let reflected = blend(&centroid, &far, -1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < simplex[0].1 {
            let expanded = blend(&centroid, &far, -2.0);
            let fe = f(&expanded);
            evals += 1;
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let (towards, ft) = if fr < worst { (reflected, fr) } else { (far, worst) };
            let contracted = blend(&centroid, &towards, 0.5);
            let fc = f(&contracted);
            evals += 1;
            if fc < ft {
                simplex[3] = (contracted, fc);
            } else {
                let anchor = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let v = blend(&anchor, &entry.0, 0.5);
                    *entry = (v, f(&v));
                }
                evals += 3;
            }
        }
    }
}

/// Random intercept and slope model with the default REML settings.
pub fn fit_lmm(d: &DesignMatrix) -> Result<LmmFit> {
    fit_lmm_with(d, &LmmOptions::default())
}

pub fn fit_lmm_with(d: &DesignMatrix, opts: &LmmOptions) -> Result<LmmFit> {
    let problem = Problem::new(d, opts.criterion)?;
    let f = |t: &[f64; 3]| problem.deviance(t);
    let mut theta = [1.0, 0.0, 1.0];
    let mut dev = f(&theta);
    if !dev.is_finite() {
        return Err(Error::RankDeficient);
    }
    let mut used = 1;
    let mut step = 0.5;
    loop {
        let (next, next_dev, evals, settled) =
            nelder_mead(f, theta, step, opts.max_evaluations.saturating_sub(used));
        used += evals;
        let gain = (dev - next_dev) / 2.0;
        if next_dev <= dev {
            theta = next;
            dev = next_dev;
        }
        if settled && gain < opts.tolerance {
            break;
        }
        if used >= opts.max_evaluations {
            return Err(Error::NonConvergence("mixed model likelihood", used));
        }
        step = 0.1;
    }
    finish(&problem, theta, used)
}

fn finish(problem: &Problem, theta: [f64; 3], evaluations: usize) -> Result<LmmFit> {
    let prof = problem.profile(&theta).ok_or(Error::RankDeficient)?;
    let lam = lambda(&theta);
    let rel = lam * lam.transpose();
    let boundary = {
        let (v0, v1) = (rel[(0, 0)], rel[(1, 1)]);
        v0 < 1e-6 || v1 < 1e-6 || rel.determinant() < 1e-6 * v0 * v1
    };
    // map (u0, u1) on t' = (t - shift) / scale back to raw time
    let (m, s) = (problem.shift, problem.scale);
    let to_raw = Matrix2::new(1.0, -m / s, 0.0, 1.0 / s);
    let g = to_raw * rel * to_raw.transpose() * prof.sigma2;
    let blups = problem
        .names
        .iter()
        .zip(&prof.blups)
        .map(|(name, b)| {
            let raw = to_raw * b;
            (name.clone(), (raw[0], raw[1]))
        })
        .collect();
    let beta_se = prof
        .xtwx_inv
        .diagonal()
        .iter()
        .map(|v| (v * prof.sigma2).max(0.0).sqrt())
        .collect();
    Ok(LmmFit {
        beta: prof.beta.iter().copied().collect(),
        beta_se,
        var_intercept: g[(0, 0)],
        var_slope: g[(1, 1)],
        cov_int_slope: g[(0, 1)],
        var_resid: prof.sigma2,
        blups,
        loglik: -prof.deviance / 2.0,
        criterion: problem.criterion,
        boundary,
        theta,
        time_shift: m,
        time_scale: s,
        evaluations,
    })
}

/// Profiled log-likelihood at a relative covariance factor on the fit's
/// internal time scale.
pub fn lmm_log_likelihood(d: &DesignMatrix, theta: [f64; 3], criterion: LmmCriterion) -> Result<f64> {
    let problem = Problem::new(d, criterion)?;
    Ok(-problem.deviance(&theta) / 2.0)
}
