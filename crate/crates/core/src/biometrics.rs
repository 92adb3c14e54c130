//! Per-frame biometric measurements and per-video median aggregation.
//!
//! Lengths are in pixels, heights in meters. Volume is the sum of per-pixel
//! heights over the body and is therefore in meter-pixels; no camera
//! intrinsics are applied.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, min_area_rect};
use crate::ingest::{Period, SessionKey};
use crate::raster::Grid;
use crate::segment::SegmentationResult;

pub const CAMERA_HEIGHT_M: f64 = 2.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub camera_height_m: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            camera_height_m: CAMERA_HEIGHT_M,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    /// Long side of the minimum-area rectangle (dorsal length).
    pub length_px: f64,
    /// Short side of the minimum-area rectangle (abdominal width).
    pub width_px: f64,
    pub centroid_height_m: f64,
    pub avg_height_m: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFeatures {
    pub video_id: String,
    pub length_px: f64,
    pub width_px: f64,
    pub centroid_height_m: f64,
    pub avg_height_m: f64,
    pub volume: f64,
    pub n_frames_used: usize,
}

pub fn frame_features(
    seg: &SegmentationResult,
    depth: &Grid<f64>,
    cam: &CameraConfig,
) -> Result<FrameFeatures> {
    if seg.mask.dims() != depth.dims() {
        return Err(Error::DimensionMismatch {
            expected: seg.mask.dims(),
            actual: depth.dims(),
        });
    }
    let rect = min_area_rect(&seg.contour.to_points())?;

    let (mut sum, mut nonzero, mut body) = (0.0, 0usize, 0usize);
    for (&m, &d) in seg.mask.as_slice().iter().zip(depth.as_slice()) {
        if m != 0 {
            body += 1;
            if d != 0.0 {
                sum += d;
                nonzero += 1;
            }
        }
    }
    if body == 0 {
        return Err(Error::NoForeground);
    }
    if nonzero == 0 {
        return Err(Error::AllDepthMissing);
    }
    let fill = sum / nonzero as f64;
    let replaced = |d: f64| if d == 0.0 { fill } else { d };

    let cam_h = cam.camera_height_m;
    let (mut depth_sum, mut volume) = (0.0, 0.0);
    for (&m, &d) in seg.mask.as_slice().iter().zip(depth.as_slice()) {
        if m != 0 {
            let d = replaced(d);
            depth_sum += d;
            volume += (cam_h - d).max(0.0);
        }
    }

    let (cx, cy) = centroid(&seg.mask)?;
    let col = (cx.round() as usize).min(depth.width() - 1);
    let row = (cy.round() as usize).min(depth.height() - 1);
    let centroid_depth = replaced(*depth.get(row, col));

    Ok(FrameFeatures {
        length_px: rect.side_a,
        width_px: rect.side_b,
        centroid_height_m: cam_h - centroid_depth,
        avg_height_m: cam_h - depth_sum / body as f64,
        volume,
    })
}

/// Median with the even-count rule (mean of the two central values).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn aggregate_video(features: &[FrameFeatures], video_id: &str) -> Result<VideoFeatures> {
    if features.is_empty() {
        return Err(Error::EmptyInput("frame features"));
    }
    let field = |f: fn(&FrameFeatures) -> f64| {
        median(&features.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
    };
    Ok(VideoFeatures {
        video_id: video_id.to_string(),
        length_px: field(|f| f.length_px),
        width_px: field(|f| f.width_px),
        centroid_height_m: field(|f| f.centroid_height_m),
        avg_height_m: field(|f| f.avg_height_m),
        volume: field(|f| f.volume),
        n_frames_used: features.len(),
    })
}

/// One row of the feature table written by the `features` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub video_id: String,
    pub cow_id: String,
    pub day: u32,
    pub period: Period,
    pub length_px: f64,
    pub width_px: f64,
    pub centroid_height_m: f64,
    pub avg_height_m: f64,
    pub volume: f64,
    pub n_frames_used: usize,
}

impl FeatureRow {
    pub fn new(video: &VideoFeatures, session: &SessionKey) -> Self {
        Self {
            video_id: video.video_id.clone(),
            cow_id: session.cow_id.clone(),
            day: session.day,
            period: session.period,
            length_px: video.length_px,
            width_px: video.width_px,
            centroid_height_m: video.centroid_height_m,
            avg_height_m: video.avg_height_m,
            volume: video.volume,
            n_frames_used: video.n_frames_used,
        }
    }

    pub fn session(&self) -> SessionKey {
        SessionKey {
            cow_id: self.cow_id.clone(),
            day: self.day,
            period: self.period,
        }
    }
}

pub fn write_feature_table(rows: &[FeatureRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_table(path: &Path) -> Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Serialization(format!("{}: {e}", path.display()))))
        .collect()
}
