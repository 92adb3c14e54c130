//! Run configuration, read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use dairyweight::biometrics::CameraConfig;
use dairyweight::evaluate::{Design, ExperimentConfig, Grouping, R2Mode, PAPER_RATIOS};
use dairyweight::ingest::PixelRect;
use dairyweight::pipeline::{PipelineConfig, SingleThreshold};
use dairyweight::regress::{FitOptions, LmmCriterion, LmmOptions, RegressionMethod};
use dairyweight::segment::{HeadSide, NeckConfig, SegmentationMethod, CORNER_MARGIN, NECK_RATIO};
use dairyweight::synth::DatasetSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root: manifest, exclusions and one directory per video.
    pub dataset: Option<PathBuf>,
    /// Directory holding `features_<method>.csv` tables.
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub segmentation: SegmentationSection,
    pub regression: RegressionSection,
    pub crossval: CrossvalSection,
    pub correlate: CorrelateSection,
    pub synth: DatasetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationSection {
    pub methods: Vec<SegmentationMethod>,
    /// `[x, y, width, height]`
    pub crop: Option<[usize; 4]>,
    pub head_side: HeadSide,
    /// Unset: on for thresholding methods, off for external masks.
    pub neck_removal: Option<bool>,
    pub neck_ratio: f64,
    pub margin: usize,
    pub camera_height_m: f64,
    pub skip: usize,
    pub stride: usize,
    /// `"pooled"`, `"per_image"` or `{ fixed = <hue> }`.
    pub single_threshold: SingleThreshold,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        Self {
            methods: vec![SegmentationMethod::Single, SegmentationMethod::Adaptive, SegmentationMethod::External],
            crop: None,
            head_side: HeadSide::Right,
            neck_removal: None,
            neck_ratio: NECK_RATIO,
            margin: CORNER_MARGIN,
            camera_height_m: CameraConfig::default().camera_height_m,
            skip: 0,
            stride: 1,
            single_threshold: SingleThreshold::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    pub methods: Vec<RegressionMethod>,
    pub tuning_folds: usize,
    pub lambda_grid: Option<Vec<f64>>,
    pub lmm_criterion: LmmCriterion,
}

impl Default for RegressionSection {
    fn default() -> Self {
        Self {
            methods: RegressionMethod::ALL.to_vec(),
            tuning_folds: 5,
            lambda_grid: None,
            lmm_criterion: LmmCriterion::Reml,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    GoodnessOfFit,
    Forecast,
    LeaveKOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalSection {
    pub design: DesignKind,
    /// Training percentages for the forecast design.
    pub ratios: Vec<u32>,
    pub k: usize,
    pub r2_mode: R2Mode,
}

impl Default for CrossvalSection {
    fn default() -> Self {
        Self {
            design: DesignKind::Forecast,
            ratios: PAPER_RATIOS.to_vec(),
            k: 3,
            r2_mode: R2Mode::Residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateSection {
    pub groupings: Vec<Grouping>,
}

impl Default for CorrelateSection {
    fn default() -> Self {
        Self {
            groupings: vec![Grouping::Overall, Grouping::PerDay, Grouping::DailyMean],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.features, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory: set `out` or pass --out".into()))
    }

    /// The dataset root, which must contain a manifest.
    pub fn dataset_dir(&self) -> Result<&Path, CliError> {
        let root = self
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::Config("`dataset` is not set".into()))?;
        if !root.join("manifest.csv").is_file() {
            return Err(CliError::Config(format!("no manifest.csv under {}", root.display())));
        }
        Ok(root)
    }

    pub fn features_dir(&self) -> Result<&Path, CliError> {
        let dir = self
            .features
            .as_deref()
            .ok_or_else(|| CliError::Config("`features` is not set".into()))?;
        if !dir.is_dir() {
            return Err(CliError::Config(format!("features directory {} does not exist", dir.display())));
        }
        Ok(dir)
    }

    pub fn pipeline(&self, method: SegmentationMethod) -> Result<PipelineConfig, CliError> {
        let s = &self.segmentation;
        if s.stride == 0 {
            return Err(CliError::Config("segmentation.stride must be at least 1".into()));
        }
        let base = PipelineConfig::for_method(method);
        Ok(PipelineConfig {
            method,
            crop: s.crop.map(|[x, y, w, h]| PixelRect::new(x, y, w, h)),
            neck: s.neck_removal.unwrap_or(base.neck.is_some()).then_some(NeckConfig {
                ratio: s.neck_ratio,
                head_side: s.head_side,
            }),
            margin: s.margin,
            camera: CameraConfig {
                camera_height_m: s.camera_height_m,
            },
            skip: s.skip,
            stride: s.stride,
            single_threshold: s.single_threshold,
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        let r = &self.regression;
        FitOptions {
            lambda_grid: r.lambda_grid.clone(),
            tuning_folds: r.tuning_folds,
            lmm: LmmOptions {
                criterion: r.lmm_criterion,
                ..LmmOptions::default()
            },
        }
    }

    /// The experiment, validated so that impossible designs fail up front.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let cv = &self.crossval;
        let design = match cv.design {
            DesignKind::GoodnessOfFit => Design::GoodnessOfFit,
            DesignKind::Forecast => Design::Forecast {
                train_pcts: cv.ratios.clone(),
            },
            DesignKind::LeaveKOut => Design::LeaveKOut { k: cv.k },
        };
        let cfg = ExperimentConfig {
            design,
            methods: self.regression.methods.clone(),
            fit: self.fit_options(),
            r2_mode: cv.r2_mode,
            seed: self.seed(),
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}
