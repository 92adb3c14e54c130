use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::splits::{forecast_splits, leave_k_cows_out, Split};
use super::{csv_err, design_matrix, finish_csv, mape, r_squared_with, Observation, R2Mode};
use crate::error::{Error, Result};
use crate::regress::{fit_model, DesignMatrix, FitOptions, RegressionMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// Fit and score on the full data.
    GoodnessOfFit,
    /// Train on the earliest time points; one scenario per percentage.
    Forecast { train_pcts: Vec<u32> },
    /// Every k-subset of cows held out once.
    LeaveKOut { k: usize },
}

impl Design {
    pub fn name(&self) -> &'static str {
        match self {
            Design::GoodnessOfFit => "goodness_of_fit",
            Design::Forecast { .. } => "forecast",
            Design::LeaveKOut { .. } => "leave_k_out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: Design,
    pub methods: Vec<RegressionMethod>,
    pub fit: FitOptions,
    pub r2_mode: R2Mode,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::EmptyInput("regression methods"));
        }
        if matches!(self.design, Design::LeaveKOut { .. })
            && self.methods.contains(&RegressionMethod::Lmm)
        {
            return Err(Error::IncompatibleDesign(
                "LMM needs every test cow in training; it cannot run under leave_k_out".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub segmentation: String,
    pub regression: RegressionMethod,
    pub scenario: String,
    pub fold: String,
    pub n_train: usize,
    pub n_test: usize,
    pub r2: Option<f64>,
    pub mape_pct: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub segmentation: String,
    pub regression: RegressionMethod,
    pub scenario: String,
    /// Mean over successful folds.
    pub r2: Option<f64>,
    pub mape_pct: Option<f64>,
    pub folds: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub design: String,
    pub r2_mode: R2Mode,
    pub rows: Vec<SummaryRow>,
    pub folds: Vec<FoldResult>,
}

struct Task<'a> {
    segmentation: &'a str,
    data: &'a DesignMatrix,
    method: RegressionMethod,
    scenario: String,
    split: Split,
}

fn scenario_splits(design: &Design, d: &DesignMatrix) -> Result<Vec<(String, std::result::Result<Split, Error>)>> {
    Ok(match design {
        Design::GoodnessOfFit => {
            let all: Vec<usize> = (0..d.n()).collect();
            vec![(
                "full".to_string(),
                Ok(Split {
                    train: all.clone(),
                    test: all,
                    label: "all".into(),
                }),
            )]
        }
        Design::Forecast { train_pcts } => {
            let times: Vec<u32> = d.time.iter().map(|&t| t as u32).collect();
            train_pcts
                .iter()
                .map(|&p| {
                    let label = format!("{p}:{}", 100u32.saturating_sub(p));
                    let split = forecast_splits(&times, &[p]).map(|mut v| v.remove(0));
                    (label, split)
                })
                .collect()
        }
        Design::LeaveKOut { k } => {
            let scenario = format!("leave_{k}_out");
            leave_k_cows_out(&d.cow_ids, *k)?
                .into_iter()
                .map(|s| (scenario.clone(), Ok(s)))
                .collect()
        }
    })
}

fn run_fold(task: &Task<'_>, cfg: &ExperimentConfig) -> FoldResult {
    let (train, test) = (task.data.subset(&task.split.train), task.data.subset(&task.split.test));
    let outcome = fit_model(&train, task.method, &cfg.fit, cfg.seed).and_then(|model| {
        let pred = model.predict(&test)?;
        let (y, yhat) = (test.y.as_slice(), pred.as_slice());
        Ok((r_squared_with(y, yhat, cfg.r2_mode)?, mape(y, yhat)?))
    });
    let (r2, mape_pct, error) = match outcome {
        Ok((r2, m)) => (Some(r2), Some(m), None),
        Err(e) => {
            log::warn!(
                "{} {} {} {}: {e}",
                task.segmentation, task.method, task.scenario, task.split.label
            );
            (None, None, Some(e.to_string()))
        }
    };
    FoldResult {
        segmentation: task.segmentation.to_string(),
        regression: task.method,
        scenario: task.scenario.clone(),
        fold: task.split.label.clone(),
        n_train: task.split.train.len(),
        n_test: task.split.test.len(),
        r2,
        mape_pct,
        error,
    }
}

/// Runs every (segmentation, method, scenario, fold) combination.
/// `datasets` pairs a segmentation method name with its observations.
pub fn run_experiment(datasets: &[(String, Vec<Observation>)], cfg: &ExperimentConfig) -> Result<CvReport> {
    cfg.validate()?;
    let designs: Vec<(&str, DesignMatrix)> = datasets
        .iter()
        .map(|(name, obs)| Ok((name.as_str(), design_matrix(obs)?)))
        .collect::<Result<_>>()?;
    let mut tasks = Vec::new();
    let mut failed_scenarios = Vec::new();
    for (name, d) in &designs {
        let scenarios = scenario_splits(&cfg.design, d)?;
        for &method in &cfg.methods {
            for (scenario, split) in &scenarios {
                match split {
                    Ok(split) => tasks.push(Task {
                        segmentation: name,
                        data: d,
                        method,
                        scenario: scenario.clone(),
                        split: split.clone(),
                    }),
                    Err(e) => failed_scenarios.push(FoldResult {
                        segmentation: name.to_string(),
                        regression: method,
                        scenario: scenario.clone(),
                        fold: scenario.clone(),
                        n_train: 0,
                        n_test: 0,
                        r2: None,
                        mape_pct: None,
                        error: Some(e.to_string()),
                    }),
                }
            }
        }
    }
    let mut folds: Vec<FoldResult> = tasks.par_iter().map(|t| run_fold(t, cfg)).collect();
    folds.extend(failed_scenarios);

    // summary rows in first-seen order of (segmentation, method, scenario)
    let mut order: Vec<(String, RegressionMethod, String)> = Vec::new();
    let mut groups: BTreeMap<(String, RegressionMethod, String), Vec<&FoldResult>> = BTreeMap::new();
    for f in &folds {
        let key = (f.segmentation.clone(), f.regression, f.scenario.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(f);
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let rows = order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            SummaryRow {
                r2: mean(g.iter().filter_map(|f| f.r2).collect()),
                mape_pct: mean(g.iter().filter_map(|f| f.mape_pct).collect()),
                folds: g.len(),
                failed: g.iter().filter(|f| f.error.is_some()).count(),
                segmentation: key.0,
                regression: key.1,
                scenario: key.2,
            }
        })
        .collect();
    Ok(CvReport {
        design: cfg.design.name().to_string(),
        r2_mode: cfg.r2_mode,
        rows,
        folds,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl CvReport {
    /// One row per segmentation method and scenario, one column pair per
    /// regression method.
    pub fn wide_csv(&self) -> Result<String> {
        let mut methods: Vec<RegressionMethod> = self.rows.iter().map(|r| r.regression).collect();
        methods.sort();
        methods.dedup();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["segmentation".to_string(), "scenario".to_string()];
        for m in &methods {
            header.push(format!("{m}_r2"));
            header.push(format!("{m}_mape_pct"));
        }
        w.write_record(&header).map_err(csv_err)?;
        let mut lines: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            let key = (r.segmentation.as_str(), r.scenario.as_str());
            if !lines.contains(&key) {
                lines.push(key);
            }
        }
        for (seg, scenario) in lines {
            let mut rec = vec![seg.to_string(), scenario.to_string()];
            for m in &methods {
                let row = self
                    .rows
                    .iter()
                    .find(|r| r.segmentation == seg && r.scenario == scenario && r.regression == *m);
                rec.push(cell(row.and_then(|r| r.r2)));
                rec.push(cell(row.and_then(|r| r.mape_pct)));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Long format: one line per fold.
    pub fn folds_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "segmentation", "regression", "scenario", "fold", "n_train", "n_test", "r2", "mape_pct", "error",
        ])
        .map_err(csv_err)?;
        for f in &self.folds {
            w.write_record([
                f.segmentation.clone(),
                f.regression.to_string(),
                f.scenario.clone(),
                f.fold.clone(),
                f.n_train.to_string(),
                f.n_test.to_string(),
                cell(f.r2),
                cell(f.mape_pct),
                f.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Writes `table.csv`, `folds.csv` and `report.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("table.csv", self.wide_csv()?),
            ("folds.csv", self.folds_csv()?),
            ("report.json", self.to_json()?),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
