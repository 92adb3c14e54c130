//! Python bindings. Results that are plain records come back as dicts by way
//! of their JSON form.

use std::path::{Path, PathBuf};

use dairyweight::biometrics::{frame_features as features_of, CameraConfig, FeatureRow};
use dairyweight::evaluate::{
    join_weights, run_experiment, Design, ExperimentConfig, Observation, R2Mode, PAPER_RATIOS,
};
use dairyweight::geometry::{min_area_rect as rect_of, Point};
use dairyweight::ingest::{load_exclusions, load_frame_pair, load_manifest, rgb_to_hue};
use dairyweight::pipeline::{extract_features as extract, PipelineConfig, SingleThreshold};
use dairyweight::regress::{fit_model, DesignMatrix, FitOptions, Model as CoreModel, RegressionMethod};
use dairyweight::segment::{
    adaptive_segment, external_segment, read_mask_png, single_segment, HeadSide, NeckConfig,
    SegmentationMethod, SegmentationResult, CORNER_MARGIN,
};
use dairyweight::synth::{generate_dataset as generate, DatasetLayout, DatasetSpec};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(dairyweight, DairyweightError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    DairyweightError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn neck(removal: bool, head_side: &str) -> PyResult<Option<NeckConfig>> {
    let head_side = match head_side {
        "left" => HeadSide::Left,
        "right" => HeadSide::Right,
        other => return Err(err(format!("head_side must be left or right, got {other:?}"))),
    };
    Ok(removal.then_some(NeckConfig {
        head_side,
        ..NeckConfig::default()
    }))
}

fn segment_one(
    png: &Path,
    csv: &Path,
    method: &str,
    threshold: Option<u8>,
    mask: Option<PathBuf>,
    neck: Option<NeckConfig>,
) -> PyResult<(SegmentationResult, dairyweight::ingest::DepthFrame)> {
    let frame = load_frame_pair(png, csv).map_err(err)?;
    let hue = rgb_to_hue(&frame);
    let seg = match method.parse::<SegmentationMethod>().map_err(err)? {
        SegmentationMethod::Adaptive => adaptive_segment(&hue, CORNER_MARGIN, neck.as_ref()),
        SegmentationMethod::Single => {
            let t = threshold.ok_or_else(|| err("the single method needs a threshold"))?;
            single_segment(&hue, t, neck.as_ref())
        }
        SegmentationMethod::External => {
            let path = mask.ok_or_else(|| err("the external method needs a mask path"))?;
            external_segment(&read_mask_png(&path).map_err(err)?, neck.as_ref())
        }
    }
    .map_err(err)?;
    Ok((seg, frame))
}

/// Segments one PNG+CSV frame pair and returns its features.
#[pyfunction]
#[pyo3(signature = (png, csv, method="adaptive", threshold=None, mask=None, neck_removal=None, head_side="right", camera_height_m=2.95))]
#[allow(clippy::too_many_arguments)]
fn frame_features<'py>(
    py: Python<'py>,
    png: PathBuf,
    csv: PathBuf,
    method: &str,
    threshold: Option<u8>,
    mask: Option<PathBuf>,
    neck_removal: Option<bool>,
    head_side: &str,
    camera_height_m: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let removal = neck_removal.unwrap_or(method != "external");
    let (seg, frame) = segment_one(&png, &csv, method, threshold, mask, neck(removal, head_side)?)?;
    let cam = CameraConfig { camera_height_m };
    let f = features_of(&seg, &frame.depth, &cam).map_err(err)?;
    let out = to_py(py, &f)?;
    out.set_item("threshold", seg.threshold_used)?;
    out.set_item("body_pixels", seg.mask.as_slice().iter().filter(|&&v| v != 0).count())?;
    Ok(out)
}

/// Minimum-area rotated rectangle of `(x, y)` points.
#[pyfunction]
fn min_area_rect<'py>(py: Python<'py>, points: Vec<(f64, f64)>) -> PyResult<Bound<'py, PyAny>> {
    let pts: Vec<Point> = points.into_iter().map(|(x, y)| Point::new(x, y)).collect();
    let r = rect_of(&pts).map_err(err)?;
    to_py(py, &r)
}

/// Writes a synthetic dataset under `root`; keyword arguments override the
/// dataset defaults (n_cows, n_days, frames_per_video, width, height, ...).
#[pyfunction]
#[pyo3(signature = (root, **spec))]
fn generate_dataset<'py>(
    py: Python<'py>,
    root: PathBuf,
    spec: Option<&Bound<'py, pyo3::types::PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let spec: DatasetSpec = match spec {
        Some(d) => {
            let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&text).map_err(err)?
        }
        None => DatasetSpec::default(),
    };
    let summary = generate(&spec, &CameraConfig::default(), &root).map_err(err)?;
    to_py(py, &summary)
}

fn open_manifest(root: &PathBuf) -> PyResult<(DatasetLayout, dairyweight::ingest::Manifest)> {
    let layout = DatasetLayout::new(root);
    let exclusions = if layout.exclusions().is_file() {
        load_exclusions(&layout.exclusions()).map_err(err)?
    } else {
        Vec::new()
    };
    let manifest = load_manifest(&layout.manifest(), &exclusions).map_err(err)?;
    Ok((layout, manifest))
}

/// One feature row per video of the dataset under `root`, plus the list of
/// skipped frames. `single_threshold` is "pooled", "per_image" or a hue.
#[pyfunction]
#[pyo3(signature = (root, method="adaptive", neck_removal=None, head_side="right", skip=0, stride=1, single_threshold=None))]
#[allow(clippy::too_many_arguments)]
fn extract_features<'py>(
    py: Python<'py>,
    root: PathBuf,
    method: &str,
    neck_removal: Option<bool>,
    head_side: &str,
    skip: usize,
    stride: usize,
    single_threshold: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let (layout, manifest) = open_manifest(&root)?;
    let method: SegmentationMethod = method.parse().map_err(err)?;
    let base = PipelineConfig::for_method(method);
    let single_threshold = match single_threshold {
        None => SingleThreshold::Pooled,
        Some(v) => match v.extract::<u8>() {
            Ok(t) => SingleThreshold::Fixed(t),
            Err(_) => match v.extract::<String>()?.as_str() {
                "pooled" => SingleThreshold::Pooled,
                "per_image" => SingleThreshold::PerImage,
                other => return Err(err(format!("unknown single_threshold {other:?}"))),
            },
        },
    };
    let cfg = PipelineConfig {
        neck: neck(neck_removal.unwrap_or(base.neck.is_some()), head_side)?,
        skip,
        stride,
        single_threshold,
        ..base
    };
    let (rows, issues) = py.detach(|| extract(&layout, &manifest, &cfg));
    Ok((to_py(py, &rows)?, to_py(py, &issues)?))
}

fn design(
    x: Vec<Vec<f64>>,
    y: Option<Vec<f64>>,
    cow_ids: Option<Vec<String>>,
    time: Option<Vec<f64>>,
) -> PyResult<DesignMatrix> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    DesignMatrix::from_rows(
        &x,
        &y.unwrap_or_else(|| vec![0.0; n]),
        cow_ids.unwrap_or_else(|| vec![String::new(); n]),
        time.unwrap_or_else(|| vec![0.0; n]),
        &names,
    )
    .map_err(err)
}

/// A fitted regression model. Rows of `x` hold predictors without the
/// intercept column.
#[pyclass(name = "Model")]
struct PyModel {
    inner: CoreModel,
}

#[pymethods]
impl PyModel {
    /// Fits `OLS`, `RR`, `LASSO` or `LMM`; the mixed model needs cow ids and
    /// times.
    #[staticmethod]
    #[pyo3(signature = (x, y, method="OLS", cow_ids=None, time=None, seed=0))]
    fn fit(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        method: &str,
        cow_ids: Option<Vec<String>>,
        time: Option<Vec<f64>>,
        seed: u64,
    ) -> PyResult<Self> {
        let method: RegressionMethod = method.parse().map_err(err)?;
        let d = design(x, Some(y), cow_ids, time)?;
        let inner = py
            .detach(|| fit_model(&d, method, &FitOptions::default(), seed))
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (x, cow_ids=None, time=None))]
    fn predict(&self, x: Vec<Vec<f64>>, cow_ids: Option<Vec<String>>, time: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let d = design(x, None, cow_ids, time)?;
        Ok(self.inner.predict(&d).map_err(err)?.iter().copied().collect())
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method().to_string()
    }

    /// Coefficients, intercept first, on the original predictor scale.
    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta().to_vec()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreModel::from_json(text).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Model(method={}, beta={:?})", self.inner.method(), self.inner.beta())
    }
}

/// Runs a cross-validation design on feature rows (as returned by
/// `extract_features`) joined with the weights of the dataset manifest.
#[pyfunction]
#[pyo3(signature = (root, features, design="forecast", ratios=None, k=3, methods=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn crossval<'py>(
    py: Python<'py>,
    root: PathBuf,
    features: &Bound<'py, pyo3::types::PyDict>,
    design: &str,
    ratios: Option<Vec<u32>>,
    k: usize,
    methods: Option<Vec<String>>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let (_, manifest) = open_manifest(&root)?;
    let json = py.import("json")?;
    let mut data: Vec<(String, Vec<Observation>)> = Vec::new();
    for (name, rows) in features.iter() {
        let text: String = json.call_method1("dumps", (rows,))?.extract()?;
        let rows: Vec<FeatureRow> = serde_json::from_str(&text).map_err(err)?;
        let (obs, _) = join_weights(&rows, &manifest).map_err(err)?;
        data.push((name.extract()?, obs));
    }
    let design = match design {
        "goodness_of_fit" => Design::GoodnessOfFit,
        "forecast" => Design::Forecast {
            train_pcts: ratios.unwrap_or_else(|| PAPER_RATIOS.to_vec()),
        },
        "leave_k_out" => Design::LeaveKOut { k },
        other => return Err(err(format!("unknown design {other:?}"))),
    };
    let methods = match methods {
        Some(m) => m.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(err)?,
        None => RegressionMethod::ALL.to_vec(),
    };
    let cfg = ExperimentConfig {
        design,
        methods,
        fit: FitOptions::default(),
        r2_mode: R2Mode::Residual,
        seed,
    };
    let report = py.detach(|| run_experiment(&data, &cfg)).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn r_squared(y: Vec<f64>, yhat: Vec<f64>) -> PyResult<f64> {
    dairyweight::evaluate::r_squared(&y, &yhat).map_err(err)
}

#[pyfunction]
fn mape(y: Vec<f64>, yhat: Vec<f64>) -> PyResult<f64> {
    dairyweight::evaluate::mape(&y, &yhat).map_err(err)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    dairyweight::evaluate::pearson(&x, &y).map_err(err)
}

#[pymodule]
#[pyo3(name = "dairyweight")]
pub fn dairyweight_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DairyweightError", m.py().get_type::<DairyweightError>())?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(frame_features, m)?)?;
    m.add_function(wrap_pyfunction!(min_area_rect, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(crossval, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    Ok(())
}
