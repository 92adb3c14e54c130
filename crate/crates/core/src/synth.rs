//! Synthetic top-view scenes with closed-form biometrics, whole datasets in
//! the on-disk layout the pipeline reads, and longitudinal weight data drawn
//! from the mixed model.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biometrics::CameraConfig;
use crate::error::{Error, Result};
use crate::ingest::{
    pixel_hue, write_color_png, write_depth_csv, write_exclusions, DepthFrame, Exclusion,
    Period, PixelRect, DEFAULT_EXCLUSIONS,
};
use crate::raster::Grid;
use crate::regress::{DesignMatrix, PREDICTORS};
use crate::segment::{write_mask_png, BinaryMask, HeadSide, BLACK, WHITE};

/// Heights at or above this render with the top hue.
pub const MAX_RENDER_HEIGHT_M: f64 = 2.0;
/// Hue of bare floor.
pub const FLOOR_HUE: u8 = 10;
pub const TOP_HUE: u8 = 170;

/// Table whose entry `k` is a saturated color with hue exactly `k`.
pub fn colormap() -> &'static [[u8; 3]; 180] {
    static TABLE: OnceLock<[[u8; 3]; 180]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [[0u8; 3]; 180];
        let mut found = [false; 180];
        // walk the saturated hue circle: one channel 255, one 0, one ramping
        for sector in 0..6 {
            for ramp in 0..=255u8 {
                let down = 255 - ramp;
                let rgb = match sector {
                    0 => [255, ramp, 0],
                    1 => [down, 255, 0],
                    2 => [0, 255, ramp],
                    3 => [0, down, 255],
                    4 => [ramp, 0, 255],
                    _ => [255, 0, down],
                };
                let h = pixel_hue(rgb) as usize;
                if !found[h] {
                    found[h] = true;
                    table[h] = rgb;
                }
            }
        }
        assert!(found.iter().all(|&f| f), "hue circle has gaps");
        table
    })
}

/// Hue for a surface `height_m` above the floor plane of the camera.
pub fn height_to_hue(height_m: f64) -> u8 {
    let frac = (height_m / MAX_RENDER_HEIGHT_M).clamp(0.0, 1.0);
    FLOOR_HUE + ((TOP_HUE - FLOOR_HUE) as f64 * frac).round() as u8
}

/// Colorizes one depth reading; missing readings (0) are black.
pub fn colorize(depth_m: f64, cam: &CameraConfig) -> [u8; 3] {
    if depth_m == 0.0 {
        [0, 0, 0]
    } else {
        colormap()[height_to_hue(cam.camera_height_m - depth_m) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeckSpec {
    pub length_px: f64,
    pub radius_px: f64,
    pub height_m: f64,
    /// Which end of the body's long axis carries the neck (right = +x at yaw 0).
    pub side: HeadSide,
}

impl NeckSpec {
    /// Neck narrow enough (0.4 of body width) for the 0.3 width-ratio rule.
    pub fn for_body(a_px: f64, b_px: f64, c_m: f64) -> Self {
        Self {
            length_px: 0.35 * a_px,
            radius_px: 0.2 * b_px,
            height_m: 0.6 * c_m,
            side: HeadSide::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RailSpec {
    pub rect: PixelRect,
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Body center `(x, y)` in pixels.
    pub center: (f64, f64),
    pub a_px: f64,
    pub b_px: f64,
    pub c_m: f64,
    /// Rotation of the long axis from +x, degrees (toward +y).
    pub yaw_deg: f64,
    pub neck: Option<NeckSpec>,
    /// Defaults to the camera height (floor at zero height).
    pub floor_depth_m: Option<f64>,
    pub rails: Vec<RailSpec>,
    pub noise_sd_m: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Noiseless, neckless body at the image center with yaw 0.
    pub fn centered(width: usize, height: usize, a_px: f64, b_px: f64, c_m: f64) -> Self {
        Self {
            width,
            height,
            center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            a_px,
            b_px,
            c_m,
            yaw_deg: 0.0,
            neck: None,
            floor_depth_m: None,
            rails: Vec::new(),
            noise_sd_m: 0.0,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    /// Stripes of `rows` pixels along the top and bottom edges.
    pub fn with_edge_rails(mut self, rows: usize, height_m: f64) -> Self {
        for y in [0, self.height.saturating_sub(rows)] {
            self.rails.push(RailSpec {
                rect: PixelRect::new(0, y, self.width, rows.min(self.height)),
                height_m,
            });
        }
        self
    }

    fn axes(&self) -> ((f64, f64), (f64, f64)) {
        let t = self.yaw_deg.to_radians();
        ((t.cos(), t.sin()), (-t.sin(), t.cos()))
    }

    fn validate(&self, cam: &CameraConfig) -> Result<f64> {
        let bad = |msg: String| Err(Error::SpecOutOfFrame(msg));
        if !(self.a_px > 0.0 && self.b_px > 0.0 && self.c_m > 0.0) {
            return bad("body semi-axes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) || self.noise_sd_m < 0.0 {
            return bad("dropout must be in [0, 1) and noise non-negative".into());
        }
        let floor = self.floor_depth_m.unwrap_or(cam.camera_height_m);
        if floor > cam.camera_height_m || self.c_m >= floor {
            return bad(format!("body height {} does not fit under the camera", self.c_m));
        }
        let (u, v) = self.axes();
        let (cx, cy) = self.center;
        let mut extremes = Vec::new();
        for k in 0..72 {
            let t = k as f64 * PI / 36.0;
            let (p, q) = (self.a_px * t.cos(), self.b_px * t.sin());
            extremes.push((cx + p * u.0 + q * v.0, cy + p * u.1 + q * v.1));
        }
        if let Some(n) = &self.neck {
            let dir = if n.side == HeadSide::Right { 1.0 } else { -1.0 };
            let tip = dir * (self.a_px + n.length_px);
            for side in [-n.radius_px, n.radius_px] {
                extremes.push((cx + tip * u.0 + side * v.0, cy + tip * u.1 + side * v.1));
            }
            if n.height_m >= floor {
                return bad("neck taller than the floor depth".into());
            }
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if extremes
            .iter()
            .any(|&(x, y)| x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0)
        {
            return bad(format!("body does not fit in {}x{}", self.width, self.height));
        }
        Ok(floor)
    }

    /// Height of the body or neck surface above the floor at pixel center `(x, y)`.
    fn surface_height(&self, x: f64, y: f64) -> Option<f64> {
        let (u, v) = self.axes();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (pu, pv) = (dx * u.0 + dy * u.1, dx * v.0 + dy * v.1);
        let s = (pu / self.a_px).powi(2) + (pv / self.b_px).powi(2);
        let body = (s < 1.0).then(|| self.c_m * (1.0 - s).sqrt());
        let neck = self.neck.as_ref().and_then(|n| {
            let along = if n.side == HeadSide::Right { pu } else { -pu };
            // starts where the ellipse narrows to the neck width
            let start = self.a_px * (1.0 - (n.radius_px / self.b_px).min(1.0).powi(2)).sqrt();
            let r = (pv / n.radius_px).powi(2);
            (along >= start && along <= self.a_px + n.length_px && r < 1.0)
                .then(|| n.height_m * (1.0 - r).sqrt())
        });
        match (body, neck) {
            (Some(b), Some(n)) => Some(b.max(n)),
            (b, n) => b.or(n),
        }
    }
}

/// Closed-form biometrics of the ellipsoid body (neck excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub length_px: f64,
    pub width_px: f64,
    pub max_height_m: f64,
    pub avg_height_m: f64,
    pub volume: f64,
    /// Long-axis direction folded into `[0, 90)`.
    pub angle_deg: f64,
}

impl SceneTruth {
    pub fn of(spec: &SceneSpec, cam: &CameraConfig) -> Self {
        let base = cam.camera_height_m - spec.floor_depth_m.unwrap_or(cam.camera_height_m);
        let footprint = PI * spec.a_px * spec.b_px;
        let (long, short) = if spec.a_px >= spec.b_px {
            (spec.a_px, spec.b_px)
        } else {
            (spec.b_px, spec.a_px)
        };
        Self {
            length_px: 2.0 * long,
            width_px: 2.0 * short,
            max_height_m: base + spec.c_m,
            avg_height_m: base + 2.0 / 3.0 * spec.c_m,
            volume: base * footprint + 2.0 / 3.0 * footprint * spec.c_m,
            angle_deg: spec.yaw_deg.rem_euclid(90.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame: DepthFrame,
    pub truth: SceneTruth,
    /// Exact body + neck footprint.
    pub mask: BinaryMask,
}

pub fn generate_scene(spec: &SceneSpec, cam: &CameraConfig) -> Result<Scene> {
    let floor = spec.validate(cam)?;
    let (w, h) = (spec.width, spec.height);
    let mut depth = Grid::filled(w, h, floor);
    let mut mask = Grid::filled(w, h, BLACK);
    for rail in &spec.rails {
        let Some(r) = rail.rect.intersect(&PixelRect::full(w, h)) else {
            continue;
        };
        for i in r.y..r.y + r.h {
            for j in r.x..r.x + r.w {
                depth.set(i, j, floor - rail.height_m);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd_m).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut dropped = Grid::filled(w, h, false);
    for i in 0..h {
        for j in 0..w {
            let Some(z) = spec.surface_height(j as f64, i as f64) else {
                continue;
            };
            mask.set(i, j, WHITE);
            let mut d = floor - z;
            if spec.noise_sd_m > 0.0 {
                d = (d + noise.sample(&mut rng)).max(1e-3);
            }
            if spec.dropout_rate > 0.0 && rng.random::<f64>() < spec.dropout_rate {
                d = 0.0;
                dropped.set(i, j, true);
            }
            depth.set(i, j, d);
        }
    }
    let color = Grid::from_fn(w, h, |i, j| colorize(*depth.get(i, j), cam));
    let frame = DepthFrame::new(color, depth)?;
    Ok(Scene {
        frame,
        truth: SceneTruth::of(spec, cam),
        mask,
    })
}

/// Settings for a synthetic multi-cow, multi-day dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_cows: usize,
    pub n_days: u32,
    pub frames_per_video: usize,
    pub width: usize,
    pub height: usize,
    pub noise_sd_m: f64,
    pub dropout_rate: f64,
    pub neck: bool,
    pub rails: bool,
    /// Coefficients of weight on `[1, width, length, avg_height, volume]`
    /// of the true (unjittered) session body.
    pub weight_coefficients: [f64; 5],
    pub weight_noise_sd_kg: f64,
    pub exclusions: Vec<Exclusion>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_cows: 12,
            n_days: 6,
            frames_per_video: 3,
            width: 424,
            height: 240,
            noise_sd_m: 0.0,
            dropout_rate: 0.0,
            neck: false,
            rails: false,
            weight_coefficients: [100.0, 1.0, 0.5, 50.0, 0.02],
            weight_noise_sd_kg: 0.0,
            exclusions: DEFAULT_EXCLUSIONS.to_vec(),
            seed: 7,
        }
    }
}

/// Paths of the dataset layout rooted at `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn exclusions(&self) -> PathBuf {
        self.root.join("exclusions.csv")
    }

    pub fn video_dir(&self, video_id: &str) -> PathBuf {
        self.root.join("videos").join(video_id)
    }

    pub fn frame_png(&self, video_id: &str, frame: usize) -> PathBuf {
        self.video_dir(video_id).join(format!("frame_{frame:05}.png"))
    }

    pub fn frame_csv(&self, video_id: &str, frame: usize) -> PathBuf {
        self.video_dir(video_id).join(format!("frame_{frame:05}.csv"))
    }

    pub fn mask_png(&self, video_id: &str, frame: usize) -> PathBuf {
        self.root
            .join("masks")
            .join(video_id)
            .join(format!("frame_{frame:05}.png"))
    }

    pub fn truth_json(&self, video_id: &str, frame: usize) -> PathBuf {
        self.root
            .join("truth")
            .join(video_id)
            .join(format!("frame_{frame:05}.json"))
    }

    /// Sorted frame indices with a color PNG in the video directory.
    pub fn frame_indices(&self, video_id: &str) -> Result<Vec<usize>> {
        let dir = self.video_dir(video_id);
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(idx) = name
                .strip_prefix("frame_")
                .and_then(|s| s.strip_suffix(".png"))
                .and_then(|s| s.parse().ok())
            {
                out.push(idx);
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

pub fn video_id(cow: usize, day: u32, period: Period) -> String {
    format!("c{cow:02}_d{day:02}_{period}")
}

/// Body dimensions of one cow at one session before per-frame jitter.
#[derive(Debug, Clone, Copy)]
struct SessionBody {
    a: f64,
    b: f64,
    c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub videos: usize,
    pub frames: usize,
}

/// Renders every session's frames, masks and truth sidecars plus the
/// manifest and exclusion files under `root`.
pub fn generate_dataset(spec: &DatasetSpec, cam: &CameraConfig, root: &Path) -> Result<DatasetSummary> {
    if spec.n_cows == 0 || spec.n_days == 0 || spec.frames_per_video == 0 {
        return Err(Error::InvalidArgument("dataset counts must be positive".into()));
    }
    let layout = DatasetLayout::new(root);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let sizes: Vec<(f64, f64, f64)> = (0..spec.n_cows)
        .map(|_| {
            (
                rng.random_range(0.26..0.30) * w,
                rng.random_range(0.22..0.26) * h,
                rng.random_range(1.3..1.5),
            )
        })
        .collect();

    let mut sessions = Vec::new();
    for (cow, &(a0, b0, c0)) in sizes.iter().enumerate() {
        for day in 0..spec.n_days {
            for period in [Period::AM, Period::PM] {
                let grow = 1.0 + 0.002 * day as f64 + if period == Period::PM { 0.001 } else { 0.0 };
                sessions.push((cow, day, period, SessionBody { a: a0 * grow, b: b0 * grow, c: c0 * grow.sqrt() }));
            }
        }
    }

    let weight_noise = Normal::new(0.0, spec.weight_noise_sd_kg)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut manifest = String::from("video_id,cow_id,day,period,body_weight_kg\n");
    for &(cow, day, period, body) in &sessions {
        let probe = SceneSpec::centered(spec.width, spec.height, body.a, body.b, body.c);
        let t = SceneTruth::of(&probe, cam);
        let k = &spec.weight_coefficients;
        let mut weight = k[0] + k[1] * t.width_px + k[2] * t.length_px + k[3] * t.avg_height_m + k[4] * t.volume;
        if spec.weight_noise_sd_kg > 0.0 {
            weight += weight_noise.sample(&mut rng);
        }
        manifest.push_str(&format!(
            "{},cow{cow:02},{day},{period},{weight}\n",
            video_id(cow, day, period)
        ));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = layout.manifest();
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    write_exclusions(&spec.exclusions, &layout.exclusions())?;

    let frames: usize = sessions
        .par_iter()
        .enumerate()
        .map(|(idx, &(cow, day, period, body))| {
            let vid = video_id(cow, day, period);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(idx as u64 + 1);
            for dir in [
                layout.video_dir(&vid),
                layout.mask_png(&vid, 0).parent().unwrap().to_path_buf(),
                layout.truth_json(&vid, 0).parent().unwrap().to_path_buf(),
            ] {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            for f in 0..spec.frames_per_video {
                let mut scene = SceneSpec::centered(spec.width, spec.height, body.a, body.b, body.c);
                scene.center.0 += rng.random_range(-3.0..3.0);
                scene.center.1 += rng.random_range(-3.0..3.0);
                scene.yaw_deg = rng.random_range(-5.0..5.0);
                if spec.neck {
                    scene.neck = Some(NeckSpec::for_body(body.a, body.b, body.c));
                    scene.center.0 -= 0.15 * body.a;
                }
                if spec.rails {
                    scene = scene.with_edge_rails(4, 0.05);
                }
                scene.noise_sd_m = spec.noise_sd_m;
                scene.dropout_rate = spec.dropout_rate;
                scene.seed = rng.random();
                let out = generate_scene(&scene, cam)?;
                write_color_png(&out.frame.color, &layout.frame_png(&vid, f))?;
                write_depth_csv(&out.frame.depth, &layout.frame_csv(&vid, f))?;
                write_mask_png(&out.mask, &layout.mask_png(&vid, f))?;
                let truth = layout.truth_json(&vid, f);
                let text = serde_json::to_string_pretty(&out.truth)
                    .map_err(|e| Error::Serialization(e.to_string()))?;
                std::fs::write(&truth, text).map_err(|e| Error::io(&truth, e))?;
            }
            Ok(spec.frames_per_video)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(DatasetSummary {
        videos: sessions.len(),
        frames,
    })
}

/// Generative settings for [`generate_longitudinal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalSpec {
    pub n_cows: usize,
    pub n_sessions: usize,
    /// Coefficients on `[1, width, length, avg_height, volume]`.
    pub beta: [f64; 5],
    pub var_intercept: f64,
    /// Slope variance per session step.
    pub var_slope: f64,
    pub cov_int_slope: f64,
    pub var_resid: f64,
    pub seed: u64,
}

impl Default for LongitudinalSpec {
    fn default() -> Self {
        Self {
            n_cows: 50,
            n_sessions: 40,
            beta: [-400.0, 1.5, 0.5, 150.0, 0.006],
            var_intercept: 400.0,
            var_slope: 4.0,
            cov_int_slope: 0.0,
            var_resid: 25.0,
            seed: 1,
        }
    }
}

/// Features and weights for `n_cows` over sessions `t = 0..n_sessions`;
/// `y = x'beta + u0 + u1 * t + e`.
pub fn generate_longitudinal(spec: &LongitudinalSpec) -> Result<DesignMatrix> {
    let (v0, v1, c01) = (spec.var_intercept, spec.var_slope, spec.cov_int_slope);
    if spec.n_cows == 0 || spec.n_sessions == 0 {
        return Err(Error::InvalidArgument("counts must be positive".into()));
    }
    if v0 < 0.0 || v1 < 0.0 || spec.var_resid < 0.0 || c01 * c01 > v0 * v1 * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument("covariance is not positive semidefinite".into()));
    }
    let l00 = v0.sqrt();
    let l10 = if l00 > 0.0 { c01 / l00 } else { 0.0 };
    let l11 = (v1 - l10 * l10).max(0.0).sqrt();
    let sd_e = spec.var_resid.sqrt();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let n = spec.n_cows * spec.n_sessions;
    let mut x = DMatrix::from_element(n, 5, 1.0);
    let (mut y, mut ids, mut time) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for cow in 0..spec.n_cows {
        let size: f64 = rng.random_range(0.9..1.1);
        let (z0, z1): (f64, f64) = (std.sample(&mut rng), std.sample(&mut rng));
        let (u0, u1) = (l00 * z0, l10 * z0 + l11 * z1);
        for t in 0..spec.n_sessions {
            let row = cow * spec.n_sessions + t;
            let grow = size * (1.0 + 0.001 * t as f64);
            let width = 180.0 * grow + 3.0 * std.sample(&mut rng);
            let length = 420.0 * grow + 6.0 * std.sample(&mut rng);
            let avg_h = 1.35 + 0.5 * (size - 1.0) + 0.01 * std.sample(&mut rng);
            let volume = 0.785 * width * length * avg_h + 1500.0 * std.sample(&mut rng);
            let feats = [width, length, avg_h, volume];
            let mut w = spec.beta[0] + u0 + u1 * t as f64 + sd_e * std.sample(&mut rng);
            for (j, v) in feats.iter().enumerate() {
                x[(row, j + 1)] = *v;
                w += spec.beta[j + 1] * v;
            }
            y.push(w);
            ids.push(format!("cow{cow:02}"));
            time.push(t as f64);
        }
    }
    let mut columns = vec!["intercept".to_string()];
    columns.extend(PREDICTORS.iter().map(|s| s.to_string()));
    DesignMatrix::new(x, nalgebra::DVector::from_vec(y), ids, time, columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biometrics::frame_features;
    use crate::ingest::{load_frame_pair, rgb_to_hue};
    use crate::segment::{adaptive_segment, external_segment, CORNER_MARGIN};

    fn cam() -> CameraConfig {
        CameraConfig::default()
    }

    #[test]
    fn colormap_round_trips_and_is_monotone() {
        let table = colormap();
        for (k, rgb) in table.iter().enumerate() {
            assert_eq!(pixel_hue(*rgb) as usize, k);
        }
        let mut prev = 0u8;
        for step in 0..=400 {
            let h = pixel_hue(colorize(2.95 - step as f64 * 0.005, &cam()));
            assert!(h >= prev);
            prev = h;
        }
        assert_eq!(pixel_hue(colorize(2.95, &cam())), FLOOR_HUE);
        assert_eq!(pixel_hue(colorize(0.0, &cam())), 0);
    }

    #[test]
    fn noiseless_scene_matches_truth() {
        let spec = SceneSpec::centered(320, 200, 110.0, 55.0, 1.4);
        let scene = generate_scene(&spec, &cam()).unwrap();
        let seg = adaptive_segment(&rgb_to_hue(&scene.frame), CORNER_MARGIN, None).unwrap();
        assert_eq!(seg.mask, scene.mask);
        let f = frame_features(&seg, &scene.frame.depth, &cam()).unwrap();
        let t = scene.truth;
        assert!((f.length_px - t.length_px).abs() <= 1.0, "{} vs {}", f.length_px, t.length_px);
        assert!((f.width_px - t.width_px).abs() <= 1.0, "{} vs {}", f.width_px, t.width_px);
        assert!((f.avg_height_m / t.avg_height_m - 1.0).abs() < 0.01);
        assert!((f.volume / t.volume - 1.0).abs() < 0.02);
        assert!((f.centroid_height_m - t.max_height_m).abs() < 1e-3);
    }

    #[test]
    fn yawed_scene_angle() {
        let mut spec = SceneSpec::centered(320, 240, 110.0, 50.0, 1.4);
        spec.yaw_deg = 30.0;
        let scene = generate_scene(&spec, &cam()).unwrap();
        let seg = external_segment(&scene.mask, None).unwrap();
        let rect = crate::geometry::min_area_rect(&seg.contour.to_points()).unwrap();
        assert!((rect.angle - 30.0).abs() < 1.0, "{}", rect.angle);
    }

    #[test]
    fn dropout_within_three_percent() {
        for seed in 0..10 {
            let mut spec = SceneSpec::centered(320, 200, 110.0, 55.0, 1.4);
            spec.dropout_rate = 0.2;
            spec.seed = seed;
            let scene = generate_scene(&spec, &cam()).unwrap();
            let seg = adaptive_segment(&rgb_to_hue(&scene.frame), CORNER_MARGIN, None).unwrap();
            let f = frame_features(&seg, &scene.frame.depth, &cam()).unwrap();
            let t = scene.truth;
            for (got, want) in [
                (f.length_px, t.length_px),
                (f.width_px, t.width_px),
                (f.avg_height_m, t.avg_height_m),
                (f.volume, t.volume),
            ] {
                assert!((got / want - 1.0).abs() < 0.03, "seed {seed}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn neck_changes_footprint_only_on_head_side() {
        let mut spec = SceneSpec::centered(320, 200, 90.0, 50.0, 1.4);
        spec.center.0 -= 20.0;
        spec.neck = Some(NeckSpec::for_body(90.0, 50.0, 1.4));
        let with = generate_scene(&spec, &cam()).unwrap();
        spec.neck = None;
        let without = generate_scene(&spec, &cam()).unwrap();
        let cx = spec.center.0 as usize;
        for (i, j, v) in with.mask.indexed() {
            if j <= cx {
                assert_eq!(v, without.mask.get(i, j));
            }
        }
        assert!(with.mask.as_slice().iter().filter(|&&v| v != 0).count()
            > without.mask.as_slice().iter().filter(|&&v| v != 0).count());
    }

    #[test]
    fn rails_touch_edges_and_are_near_floor() {
        let spec = SceneSpec::centered(200, 120, 60.0, 30.0, 1.2).with_edge_rails(3, 0.05);
        let scene = generate_scene(&spec, &cam()).unwrap();
        assert!((scene.frame.depth.get(0, 0) - 2.90).abs() < 1e-12);
        assert!((scene.frame.depth.get(119, 199) - 2.90).abs() < 1e-12);
        assert_eq!(*scene.mask.get(0, 0), BLACK);
    }

    #[test]
    fn out_of_frame_rejected() {
        let spec = SceneSpec::centered(100, 100, 60.0, 30.0, 1.2);
        assert!(matches!(generate_scene(&spec, &cam()), Err(Error::SpecOutOfFrame(_))));
        let mut tall = SceneSpec::centered(200, 100, 60.0, 30.0, 1.2);
        tall.c_m = 3.0;
        assert!(matches!(generate_scene(&tall, &cam()), Err(Error::SpecOutOfFrame(_))));
    }

    #[test]
    fn raised_floor_truth() {
        let mut spec = SceneSpec::centered(320, 200, 110.0, 55.0, 1.2);
        spec.floor_depth_m = Some(2.75);
        let t = SceneTruth::of(&spec, &cam());
        assert!((t.avg_height_m - (0.2 + 0.8)).abs() < 1e-12);
        let scene = generate_scene(&spec, &cam()).unwrap();
        let seg = external_segment(&scene.mask, None).unwrap();
        let f = frame_features(&seg, &scene.frame.depth, &cam()).unwrap();
        assert!((f.volume / t.volume - 1.0).abs() < 0.02);
    }

    #[test]
    fn longitudinal_noiseless_is_linear() {
        let spec = LongitudinalSpec {
            n_cows: 4,
            n_sessions: 5,
            var_intercept: 0.0,
            var_slope: 0.0,
            var_resid: 0.0,
            ..Default::default()
        };
        let d = generate_longitudinal(&spec).unwrap();
        let fitted = &d.x * nalgebra::DVector::from_row_slice(&spec.beta);
        assert!((fitted - &d.y).amax() < 1e-9);
        assert_eq!(generate_longitudinal(&spec).unwrap(), d);
    }

    #[test]
    fn longitudinal_weights_in_paper_band() {
        let d = generate_longitudinal(&LongitudinalSpec::default()).unwrap();
        let mean = d.y.mean();
        assert!((550.0..950.0).contains(&mean), "{mean}");
    }

    #[test]
    fn dataset_layout_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            n_cows: 2,
            n_days: 1,
            frames_per_video: 2,
            width: 160,
            height: 100,
            ..Default::default()
        };
        let summary = generate_dataset(&spec, &cam(), dir.path()).unwrap();
        assert_eq!(summary, DatasetSummary { videos: 4, frames: 8 });
        let layout = DatasetLayout::new(dir.path());
        let vid = video_id(1, 0, Period::PM);
        assert_eq!(layout.frame_indices(&vid).unwrap(), vec![0, 1]);
        let frame = load_frame_pair(&layout.frame_png(&vid, 1), &layout.frame_csv(&vid, 1)).unwrap();
        assert_eq!(frame.dims(), (160, 100));
        let m = crate::ingest::load_manifest(&layout.manifest(), &[]).unwrap();
        assert_eq!(m.videos.len(), 4);

        let again = tempfile::tempdir().unwrap();
        generate_dataset(&spec, &cam(), again.path()).unwrap();
        let a = std::fs::read(layout.frame_csv(&vid, 1)).unwrap();
        let b = std::fs::read(DatasetLayout::new(again.path()).frame_csv(&vid, 1)).unwrap();
        assert_eq!(a, b);
    }
}
