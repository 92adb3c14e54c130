//! Metrics, correlation tables, cross-validation splits and experiment runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::biometrics::FeatureRow;
use crate::error::{Error, Result};
use crate::ingest::{Manifest, Period};
use crate::regress::{DesignMatrix, PREDICTORS};

mod experiment;
mod splits;

pub use experiment::{
    run_experiment, CvReport, Design, ExperimentConfig, FoldResult, SummaryRow,
};
pub use splits::{forecast_splits, leave_k_cows_out, Split, PAPER_RATIOS};

/// A video's features joined with its session's scale weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: FeatureRow,
    pub weight_kg: f64,
}

impl Observation {
    pub fn time_index(&self) -> u32 {
        self.features.session().time_index()
    }

    /// Values in [`FEATURES`] order.
    pub fn feature_values(&self) -> [f64; 5] {
        let f = &self.features;
        [f.length_px, f.width_px, f.centroid_height_m, f.avg_height_m, f.volume]
    }
}

/// Feature names in correlation-table order.
pub const FEATURES: [&str; 5] = [
    "length_px",
    "width_px",
    "centroid_height_m",
    "avg_height_m",
    "volume",
];

/// Attaches manifest weights to feature rows; rows whose session has no
/// weight are dropped and counted.
pub fn join_weights(rows: &[FeatureRow], manifest: &Manifest) -> Result<(Vec<Observation>, usize)> {
    let weights: BTreeMap<_, _> = manifest
        .sessions
        .iter()
        .map(|s| (s.key(), s.body_weight_kg))
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    let mut dropped = 0;
    for row in rows {
        match weights.get(&row.session()) {
            Some(Some(w)) => out.push(Observation {
                features: row.clone(),
                weight_kg: *w,
            }),
            Some(None) => dropped += 1,
            None => return Err(Error::UnknownVideoReference(row.video_id.clone())),
        }
    }
    Ok((out, dropped))
}

/// `[1, width, length, avg_height, volume]` rows with session-ordinal time.
pub fn design_matrix(obs: &[Observation]) -> Result<DesignMatrix> {
    let rows: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| {
            let f = &o.features;
            vec![f.width_px, f.length_px, f.avg_height_m, f.volume]
        })
        .collect();
    let y: Vec<f64> = obs.iter().map(|o| o.weight_kg).collect();
    DesignMatrix::from_rows(
        &rows,
        &y,
        obs.iter().map(|o| o.features.cow_id.clone()).collect(),
        obs.iter().map(|o| o.time_index() as f64).collect(),
        &PREDICTORS,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Mode {
    /// `1 - SS_res / SS_tot`; negative when worse than the mean.
    #[default]
    Residual,
    /// Squared Pearson correlation between truth and prediction.
    SquaredCorrelation,
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch(y.len(), yhat.len()));
    }
    Ok(())
}

pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64> {
    r_squared_with(y, yhat, R2Mode::Residual)
}

pub fn r_squared_with(y: &[f64], yhat: &[f64], mode: R2Mode) -> Result<f64> {
    check_lengths(y, yhat)?;
    if y.len() < 2 {
        return Err(Error::EmptyInput("r_squared needs at least two values"));
    }
    match mode {
        R2Mode::Residual => {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let total: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            if total == 0.0 {
                return Err(Error::ZeroVariance);
            }
            let resid: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
            Ok(1.0 - resid / total)
        }
        R2Mode::SquaredCorrelation => Ok(pearson(y, yhat)?.powi(2)),
    }
}

/// Mean absolute percentage error, in percent.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    if y.is_empty() {
        return Err(Error::EmptyInput("mape"));
    }
    let mut sum = 0.0;
    for (i, (a, b)) in y.iter().zip(yhat).enumerate() {
        if *a == 0.0 {
            return Err(Error::ZeroTruth(i));
        }
        sum += ((a - b) / a).abs();
    }
    Ok(100.0 * sum / y.len() as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    let n = x.len() as f64;
    if x.len() < 2 {
        return Err(Error::EmptyInput("pearson needs at least two values"));
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Overall,
    PerDay,
    PerPeriod,
    /// Mean of the per-day correlations.
    DailyMean,
}

impl std::str::FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overall" => Ok(Self::Overall),
            "per_day" => Ok(Self::PerDay),
            "per_period" => Ok(Self::PerPeriod),
            "daily_mean" => Ok(Self::DailyMean),
            _ => Err(Error::InvalidArgument(format!("unknown grouping {s:?}"))),
        }
    }
}

/// Minimum group size for a correlation row.
pub const MIN_GROUP: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub group: String,
    pub n: usize,
    /// Pearson r with weight for each of [`FEATURES`]; `None` when undefined.
    pub r: Vec<Option<f64>>,
    pub warning: Option<String>,
}

impl CorrelationRow {
    /// Feature with the largest |r|.
    pub fn strongest(&self) -> Option<&'static str> {
        self.r
            .iter()
            .zip(FEATURES)
            .filter_map(|(r, name)| r.map(|v| (v.abs(), name)))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, name)| name)
    }
}

fn correlation_row(group: String, obs: &[&Observation]) -> CorrelationRow {
    if obs.len() < MIN_GROUP {
        return CorrelationRow {
            group,
            n: obs.len(),
            r: vec![None; FEATURES.len()],
            warning: Some(format!("insufficient group: {} observations", obs.len())),
        };
    }
    let weights: Vec<f64> = obs.iter().map(|o| o.weight_kg).collect();
    let mut undefined = Vec::new();
    let r = (0..FEATURES.len())
        .map(|j| {
            let column: Vec<f64> = obs.iter().map(|o| o.feature_values()[j]).collect();
            let r = pearson(&column, &weights).ok();
            if r.is_none() {
                undefined.push(FEATURES[j]);
            }
            r
        })
        .collect();
    CorrelationRow {
        group,
        n: obs.len(),
        r,
        warning: (!undefined.is_empty())
            .then(|| format!("zero variance: {}", undefined.join(" "))),
    }
}

/// Pearson correlation of weight with each feature, one row per group.
pub fn pearson_table(obs: &[Observation], grouping: Grouping) -> Vec<CorrelationRow> {
    let mut by_day: BTreeMap<u32, Vec<&Observation>> = BTreeMap::new();
    let mut by_period: BTreeMap<(u32, Period), Vec<&Observation>> = BTreeMap::new();
    for o in obs {
        by_day.entry(o.features.day).or_default().push(o);
        by_period
            .entry((o.features.day, o.features.period))
            .or_default()
            .push(o);
    }
    match grouping {
        Grouping::Overall => vec![correlation_row("overall".into(), &obs.iter().collect::<Vec<_>>())],
        Grouping::PerDay => by_day
            .into_iter()
            .map(|(day, g)| correlation_row(format!("day {day}"), &g))
            .collect(),
        Grouping::PerPeriod => by_period
            .into_iter()
            .map(|((day, period), g)| correlation_row(format!("day {day} {period}"), &g))
            .collect(),
        Grouping::DailyMean => {
            let days: Vec<CorrelationRow> = by_day
                .into_iter()
                .map(|(day, g)| correlation_row(format!("day {day}"), &g))
                .collect();
            let r = (0..FEATURES.len())
                .map(|j| {
                    let vals: Vec<f64> = days.iter().filter_map(|d| d.r[j]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            let skipped = days.iter().filter(|d| d.warning.is_some()).count();
            vec![CorrelationRow {
                group: "daily_mean".into(),
                n: obs.len(),
                r,
                warning: (skipped > 0).then(|| format!("{skipped} day groups incomplete")),
            }]
        }
    }
}

pub fn correlation_csv(rows: &[CorrelationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["group", "n"];
    header.extend(FEATURES);
    header.push("warning");
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        let mut rec = vec![row.group.clone(), row.n.to_string()];
        rec.extend(row.r.iter().map(|r| r.map(|v| v.to_string()).unwrap_or_default()));
        rec.push(row.warning.clone().unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}
