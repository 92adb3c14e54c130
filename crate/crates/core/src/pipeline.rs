//! Dataset-level feature extraction: frames on disk to one feature row per
//! video, with frame-level failures skipped and reported.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biometrics::{aggregate_video, frame_features, CameraConfig, FeatureRow, FrameFeatures};
use crate::error::{Error, Result};
use crate::ingest::{
    crop_frame, load_frame_pair, rgb_to_hue, subsample_frames, DepthFrame, HueImage, Manifest, PixelRect, SessionKey,
};
use crate::segment::{
    adaptive_segment, external_segment, mean_hue_threshold, read_mask_png, single_segment,
    NeckConfig, SegmentationMethod, SegmentationResult, CORNER_MARGIN,
};
use crate::synth::DatasetLayout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: SegmentationMethod,
    pub crop: Option<PixelRect>,
    /// `None` disables neck removal.
    pub neck: Option<NeckConfig>,
    pub margin: usize,
    pub camera: CameraConfig,
    pub skip: usize,
    pub stride: usize,
    pub single_threshold: SingleThreshold,
}

/// How the single method picks its hue threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleThreshold {
    /// Mean hue pooled over every sampled frame; across the whole dataset in
    /// [`extract_features`], across one video in [`video_segmentations`].
    #[default]
    Pooled,
    /// Mean hue of each frame on its own.
    PerImage,
    Fixed(u8),
}

impl PipelineConfig {
    /// Defaults for `method`; external masks skip neck removal.
    pub fn for_method(method: SegmentationMethod) -> Self {
        Self {
            method,
            neck: (method != SegmentationMethod::External).then(NeckConfig::default),
            ..Self::default()
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: SegmentationMethod::Adaptive,
            crop: None,
            neck: Some(NeckConfig::default()),
            margin: CORNER_MARGIN,
            camera: CameraConfig::default(),
            skip: 0,
            stride: 1,
            single_threshold: SingleThreshold::Pooled,
        }
    }
}

/// A frame that was skipped, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIssue {
    pub video_id: String,
    pub frame: Option<usize>,
    pub error: String,
}

struct Loaded {
    index: usize,
    frame: DepthFrame,
    hue: HueImage,
}

fn load(layout: &DatasetLayout, video_id: &str, index: usize, cfg: &PipelineConfig) -> Result<Loaded> {
    let frame = load_frame_pair(&layout.frame_png(video_id, index), &layout.frame_csv(video_id, index))?
        .with_origin(video_id, index);
    let frame = match cfg.crop {
        Some(rect) => crop_frame(&frame, rect)?,
        None => frame,
    };
    let hue = rgb_to_hue(&frame);
    Ok(Loaded { index, frame, hue })
}

fn segment(
    layout: &DatasetLayout,
    video_id: &str,
    item: &Loaded,
    threshold: Option<u8>,
    cfg: &PipelineConfig,
) -> Result<SegmentationResult> {
    let neck = cfg.neck.as_ref();
    match cfg.method {
        SegmentationMethod::Single => {
            single_segment(&item.hue, threshold.expect("threshold resolved for single"), neck)
        }
        SegmentationMethod::Adaptive => adaptive_segment(&item.hue, cfg.margin, neck),
        SegmentationMethod::External => {
            let raw = read_mask_png(&layout.mask_png(video_id, item.index))?;
            let raw = match cfg.crop {
                Some(r) => {
                    let (w, h) = raw.dims();
                    if r.x + r.w > w || r.y + r.h > h {
                        return Err(Error::OutOfBounds { rect: (r.x, r.y, r.w, r.h), width: w, height: h });
                    }
                    raw.window(r.x, r.y, r.w, r.h)
                }
                None => raw,
            };
            if raw.dims() != item.hue.dims() {
                return Err(Error::DimensionMismatch { expected: item.hue.dims(), actual: raw.dims() });
            }
            external_segment(&raw, neck)
        }
    }
}

/// A sampled frame (cropped if configured) and its segmentation.
#[derive(Debug, Clone)]
pub struct SegmentedFrame {
    pub index: usize,
    pub frame: DepthFrame,
    pub segmentation: SegmentationResult,
}

fn frame_issue(video_id: &str, frame: Option<usize>, e: &Error) -> FrameIssue {
    FrameIssue {
        video_id: video_id.to_string(),
        frame,
        error: e.to_string(),
    }
}

/// Segments the sampled frames of one video.
pub fn video_segmentations(
    layout: &DatasetLayout,
    video_id: &str,
    cfg: &PipelineConfig,
) -> Result<(Vec<SegmentedFrame>, Vec<FrameIssue>)> {
    if cfg.stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let all = layout.frame_indices(video_id)?;
    let mut issues = Vec::new();
    let mut loaded = Vec::new();
    for pos in subsample_frames(all.len(), cfg.skip, cfg.stride) {
        match load(layout, video_id, all[pos], cfg) {
            Ok(item) => loaded.push(item),
            Err(e) => issues.push(frame_issue(video_id, Some(all[pos]), &e)),
        }
    }
    let pooled = match (cfg.method, cfg.single_threshold) {
        (SegmentationMethod::Single, SingleThreshold::Pooled) if !loaded.is_empty() => {
            Some(mean_hue_threshold(loaded.iter().map(|l| &l.hue))?)
        }
        (SegmentationMethod::Single, SingleThreshold::Fixed(t)) => Some(t),
        _ => None,
    };
    let mut out = Vec::new();
    for item in loaded {
        let threshold = match (cfg.method, cfg.single_threshold) {
            (SegmentationMethod::Single, SingleThreshold::PerImage) => {
                Some(mean_hue_threshold(std::iter::once(&item.hue))?)
            }
            _ => pooled,
        };
        match segment(layout, video_id, &item, threshold, cfg) {
            Ok(segmentation) => out.push(SegmentedFrame {
                index: item.index,
                frame: item.frame,
                segmentation,
            }),
            Err(e) => issues.push(frame_issue(video_id, Some(item.index), &e)),
        }
    }
    Ok((out, issues))
}

/// Per-frame features of the sampled frames of one video.
pub fn video_frame_features(
    layout: &DatasetLayout,
    video_id: &str,
    cfg: &PipelineConfig,
) -> Result<(Vec<(usize, FrameFeatures)>, Vec<FrameIssue>)> {
    let (frames, mut issues) = video_segmentations(layout, video_id, cfg)?;
    let mut out = Vec::new();
    for f in &frames {
        match frame_features(&f.segmentation, &f.frame.depth, &cfg.camera) {
            Ok(feat) => out.push((f.index, feat)),
            Err(e) => issues.push(frame_issue(video_id, Some(f.index), &e)),
        }
    }
    Ok((out, issues))
}

/// Rounded mean hue over every loadable sampled frame of `videos`.
fn dataset_mean_hue(layout: &DatasetLayout, videos: &[(&String, &SessionKey)], cfg: &PipelineConfig) -> Option<u8> {
    let (sum, count) = videos
        .par_iter()
        .map(|(vid, _)| {
            let Ok(all) = layout.frame_indices(vid) else {
                return (0u64, 0u64);
            };
            subsample_frames(all.len(), cfg.skip, cfg.stride.max(1))
                .into_iter()
                .filter_map(|pos| load(layout, vid, all[pos], cfg).ok())
                .fold((0, 0), |(s, n), l| {
                    let px = l.hue.as_slice();
                    (s + px.iter().map(|&h| h as u64).sum::<u64>(), n + px.len() as u64)
                })
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    (count > 0).then(|| ((sum as f64 / count as f64).round() as u64).min(179) as u8)
}

/// One feature row per manifest video that yields at least one usable frame.
pub fn extract_features(
    layout: &DatasetLayout,
    manifest: &Manifest,
    cfg: &PipelineConfig,
) -> (Vec<FeatureRow>, Vec<FrameIssue>) {
    let videos: Vec<(&String, _)> = manifest.videos.iter().collect();
    let pooled;
    let cfg = if cfg.method == SegmentationMethod::Single && cfg.single_threshold == SingleThreshold::Pooled {
        pooled = PipelineConfig {
            single_threshold: dataset_mean_hue(layout, &videos, cfg).map_or(SingleThreshold::Pooled, SingleThreshold::Fixed),
            ..cfg.clone()
        };
        &pooled
    } else {
        cfg
    };
    let results: Vec<(Option<FeatureRow>, Vec<FrameIssue>)> = videos
        .par_iter()
        .map(|(vid, key)| {
            let fail = |e: Error| frame_issue(vid, None, &e);
            match video_frame_features(layout, vid, cfg) {
                Ok((frames, mut issues)) => {
                    let feats: Vec<FrameFeatures> = frames.into_iter().map(|(_, f)| f).collect();
                    match aggregate_video(&feats, vid) {
                        Ok(v) => (Some(FeatureRow::new(&v, key)), issues),
                        Err(e) => {
                            issues.push(fail(e));
                            (None, issues)
                        }
                    }
                }
                Err(e) => (None, vec![fail(e)]),
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut issues = Vec::new();
    for (row, mut iss) in results {
        rows.extend(row);
        issues.append(&mut iss);
    }
    for i in &issues {
        log::warn!("{} frame {:?}: {}", i.video_id, i.frame, i.error);
    }
    (rows, issues)
}
