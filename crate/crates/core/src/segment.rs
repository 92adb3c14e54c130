//! Body segmentation from hue images: fixed and adaptive hue thresholds,
//! largest-contour isolation with hole filling, width-ratio neck removal,
//! and ingestion of externally produced masks.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{axis_aligned_bbox, Aabb};
use crate::ingest::HueImage;
use crate::raster::Grid;

/// Cells are 0 (background) or 255 (body).
pub type BinaryMask = Grid<u8>;

pub const WHITE: u8 = 255;
pub const BLACK: u8 = 0;

/// Default width ratio below which a column counts as neck.
pub const NECK_RATIO: f64 = 0.3;
/// Default corner margin for the adaptive threshold search.
pub const CORNER_MARGIN: usize = 5;

/// One closed outer boundary, traced in pixel coordinates `(x, y) = (col, row)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<(i32, i32)>,
    /// Polygon (shoelace) area enclosed by `points`.
    pub area_px: f64,
}

impl Contour {
    pub fn bbox(&self) -> Aabb {
        axis_aligned_bbox(&self.points).expect("contours are never empty")
    }

    pub fn to_points(&self) -> Vec<crate::geometry::Point> {
        self.points.iter().map(|&p| p.into()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationMethod {
    Single,
    Adaptive,
    External,
}

impl SegmentationMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SegmentationMethod::Single => "single",
            SegmentationMethod::Adaptive => "adaptive",
            SegmentationMethod::External => "external",
        }
    }
}

impl std::str::FromStr for SegmentationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "adaptive" => Ok(Self::Adaptive),
            "external" => Ok(Self::External),
            other => Err(Error::InvalidArgument(format!(
                "unknown segmentation method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub mask: BinaryMask,
    pub contour: Contour,
    pub threshold_used: Option<u8>,
    pub method: SegmentationMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeckConfig {
    pub ratio: f64,
    pub head_side: HeadSide,
}

impl Default for NeckConfig {
    fn default() -> Self {
        Self {
            ratio: NECK_RATIO,
            head_side: HeadSide::Right,
        }
    }
}

/// Rounded mean of every hue value across `images`.
pub fn mean_hue_threshold<'a>(images: impl IntoIterator<Item = &'a HueImage>) -> Result<u8> {
    let mut sum = 0u64;
    let mut count = 0u64;
    let mut any = false;
    for img in images {
        any = true;
        if img.is_empty() {
            return Err(Error::EmptyInput("hue image"));
        }
        sum += img.as_slice().iter().map(|&h| h as u64).sum::<u64>();
        count += img.as_slice().len() as u64;
    }
    if !any {
        return Err(Error::EmptyInput("hue image collection"));
    }
    Ok(((sum as f64 / count as f64).round() as u64).min(179) as u8)
}

/// Hue strictly above `t` becomes white.
pub fn threshold(hue: &HueImage, t: u8) -> BinaryMask {
    hue.map(|&h| if h > t { WHITE } else { BLACK })
}

// Screen-clockwise neighbor ring (row grows downward).
const RING: [(i64, i64); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

struct Components {
    labels: Vec<u32>,
    /// Raster-first pixel `(row, col)` and pixel count per label (label - 1).
    starts: Vec<(usize, usize)>,
    sizes: Vec<usize>,
}

fn label_components(mask: &BinaryMask) -> Components {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut starts = Vec::new();
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    let src = mask.as_slice();
    for start in 0..w * h {
        if src[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = starts.len() as u32 + 1;
        starts.push((start / w, start % w));
        labels[start] = label;
        stack.push(start);
        let mut size = 0;
        while let Some(k) = stack.pop() {
            size += 1;
            let (i, j) = ((k / w) as i64, (k % w) as i64);
            for (di, dj) in RING {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                    continue;
                }
                let nk = ni as usize * w + nj as usize;
                if src[nk] != 0 && labels[nk] == 0 {
                    labels[nk] = label;
                    stack.push(nk);
                }
            }
        }
        sizes.push(size);
    }
    Components {
        labels,
        starts,
        sizes,
    }
}

/// Outer border following from the component's raster-first pixel.
fn trace_outer(labels: &[u32], w: usize, h: usize, label: u32, start: (usize, usize)) -> Vec<(i32, i32)> {
    let inside = |i: i64, j: i64| {
        i >= 0 && j >= 0 && i < h as i64 && j < w as i64 && labels[i as usize * w + j as usize] == label
    };
    let dir_of = |from: (i64, i64), to: (i64, i64)| {
        let d = (to.0 - from.0, to.1 - from.1);
        RING.iter().position(|&r| r == d).expect("neighbors are adjacent")
    };
    let s = (start.0 as i64, start.1 as i64);
    // the west neighbor of the raster-first pixel is background
    let west = 4;
    let first = (0..8)
        .map(|k| (west + k) % 8)
        .map(|d| (s.0 + RING[d].0, s.1 + RING[d].1))
        .find(|&(i, j)| inside(i, j));
    let Some(first) = first else {
        return vec![(s.1 as i32, s.0 as i32)];
    };

    let mut points = Vec::new();
    let mut prev = first;
    let mut cur = s;
    loop {
        let back = dir_of(cur, prev);
        let mut next = None;
        for k in 1..=8 {
            let d = (back + 8 - k) % 8;
            let cand = (cur.0 + RING[d].0, cur.1 + RING[d].1);
            if inside(cand.0, cand.1) {
                next = Some(cand);
                break;
            }
        }
        let next = next.expect("component has at least two pixels");
        points.push((cur.1 as i32, cur.0 as i32));
        if next == s && cur == first {
            break;
        }
        prev = cur;
        cur = next;
    }
    points
}

fn shoelace(points: &[(i32, i32)]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let twice: i64 = (0..n)
        .map(|k| {
            let (x0, y0) = points[k];
            let (x1, y1) = points[(k + 1) % n];
            x0 as i64 * y1 as i64 - x1 as i64 * y0 as i64
        })
        .sum();
    (twice as f64 / 2.0).abs()
}

struct Largest {
    label: u32,
    contour: Contour,
}

/// Component whose outer contour encloses the largest area; ties go to the
/// component starting first in raster order.
fn largest_component(mask: &BinaryMask, comps: &Components) -> Result<Largest> {
    let (w, h) = mask.dims();
    let mut best: Option<(f64, usize, u32, Vec<(i32, i32)>)> = None;
    for (idx, &start) in comps.starts.iter().enumerate() {
        let label = idx as u32 + 1;
        let size = comps.sizes[idx];
        let points = trace_outer(&comps.labels, w, h, label, start);
        let area = shoelace(&points);
        let better = match &best {
            None => true,
            Some((barea, _, _, _)) => area > *barea,
        };
        if better {
            best = Some((area, size, label, points));
        }
    }
    let (area, _, label, points) = best.ok_or(Error::NoForeground)?;
    if area <= 0.0 || points.len() < 3 {
        return Err(Error::DegenerateInput("largest foreground region encloses no area"));
    }
    Ok(Largest {
        label,
        contour: Contour {
            points,
            area_px: area,
        },
    })
}

/// Component plus every region it encloses (4-connected background that
/// cannot reach the image border).
fn fill_component(labels: &[u32], w: usize, h: usize, label: u32) -> BinaryMask {
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |k: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if labels[k] != label && !outside[k] {
            outside[k] = true;
            queue.push_back(k);
        }
    };
    for j in 0..w {
        seed(j, &mut outside, &mut queue);
        seed((h - 1) * w + j, &mut outside, &mut queue);
    }
    for i in 0..h {
        seed(i * w, &mut outside, &mut queue);
        seed(i * w + w - 1, &mut outside, &mut queue);
    }
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k / w, k % w);
        let mut visit = |nk: usize| {
            if labels[nk] != label && !outside[nk] {
                outside[nk] = true;
                queue.push_back(nk);
            }
        };
        if i > 0 {
            visit(k - w);
        }
        if i + 1 < h {
            visit(k + w);
        }
        if j > 0 {
            visit(k - 1);
        }
        if j + 1 < w {
            visit(k + 1);
        }
    }
    Grid::from_vec(
        w,
        h,
        outside.iter().map(|&o| if o { BLACK } else { WHITE }).collect(),
    )
    .expect("same dimensions")
}

/// Keeps the largest-area region of `mask`, with its holes filled.
pub fn extract_body(mask: &BinaryMask) -> Result<(BinaryMask, Contour)> {
    let comps = label_components(mask);
    let largest = largest_component(mask, &comps)?;
    let (w, h) = mask.dims();
    let filled = fill_component(&comps.labels, w, h, largest.label);
    Ok((filled, largest.contour))
}

/// Blackens the head-side columns from the first column, scanning out from
/// the image center, whose white count is below `ratio` of the widest
/// column.
pub fn remove_neck(mask: &BinaryMask, neck: &NeckConfig) -> Result<BinaryMask> {
    if !(neck.ratio > 0.0 && neck.ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "neck ratio must lie in (0, 1), got {}",
            neck.ratio
        )));
    }
    let (w, _) = mask.dims();
    let mut counts = vec![0usize; w];
    for row in mask.rows() {
        for (j, &v) in row.iter().enumerate() {
            if v != 0 {
                counts[j] += 1;
            }
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::NoForeground);
    }
    let center = w / 2;
    let below = |c: usize| (counts[c] as f64) / (max as f64) < neck.ratio;
    let cut = match neck.head_side {
        HeadSide::Right => (center..w).find(|&c| below(c)).map(|c| c..w),
        HeadSide::Left => (0..=center).rev().find(|&c| below(c)).map(|c| 0..c + 1),
    };
    let mut out = mask.clone();
    if let Some(cols) = cut {
        for i in 0..out.height() {
            for j in cols.clone() {
                out.set(i, j, BLACK);
            }
        }
    }
    Ok(out)
}

fn finish(
    filled: BinaryMask,
    contour: Contour,
    neck: Option<&NeckConfig>,
) -> Result<(BinaryMask, Contour)> {
    match neck {
        None => Ok((filled, contour)),
        Some(cfg) => extract_body(&remove_neck(&filled, cfg)?),
    }
}

/// Fixed-threshold segmentation: threshold, keep the largest body, then
/// optionally cut the neck.
pub fn single_segment(
    hue: &HueImage,
    t: u8,
    neck: Option<&NeckConfig>,
) -> Result<SegmentationResult> {
    let (filled, contour) = extract_body(&threshold(hue, t))?;
    let (mask, contour) = finish(filled, contour, neck)?;
    Ok(SegmentationResult {
        mask,
        contour,
        threshold_used: Some(t),
        method: SegmentationMethod::Single,
    })
}

/// Raises the hue threshold from the image minimum until the largest
/// region's bounding box sits more than `margin` pixels inside every edge.
pub fn adaptive_segment(
    hue: &HueImage,
    margin: usize,
    neck: Option<&NeckConfig>,
) -> Result<SegmentationResult> {
    let (w, h) = hue.dims();
    if w <= 2 * margin || h <= 2 * margin {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} image is too small for a {margin}-pixel margin"
        )));
    }
    let min = *hue.as_slice().iter().min().ok_or(Error::EmptyInput("hue image"))?;
    let max = *hue.as_slice().iter().max().expect("non-empty");
    // everything is black once t reaches the maximum hue
    for t in min..max {
        let mask = threshold(hue, t);
        let comps = label_components(&mask);
        let Ok(largest) = largest_component(&mask, &comps) else {
            continue;
        };
        if largest.contour.bbox().edge_clearance(w, h) <= margin as i64 {
            continue;
        }
        let filled = fill_component(&comps.labels, w, h, largest.label);
        let (mask, contour) = finish(filled, largest.contour, neck)?;
        return Ok(SegmentationResult {
            mask,
            contour,
            threshold_used: Some(t),
            method: SegmentationMethod::Adaptive,
        });
    }
    Err(Error::NoValidThreshold { min, margin })
}

/// Wraps an externally produced mask (nonzero = body).
pub fn external_segment(raw: &Grid<u8>, neck: Option<&NeckConfig>) -> Result<SegmentationResult> {
    let binary = raw.map(|&v| if v != 0 { WHITE } else { BLACK });
    let (filled, contour) = extract_body(&binary)?;
    let (mask, contour) = finish(filled, contour, neck)?;
    Ok(SegmentationResult {
        mask,
        contour,
        threshold_used: None,
        method: SegmentationMethod::External,
    })
}

/// Loads a single-channel mask PNG of the given `(width, height)`.
pub fn load_external_mask(
    path: &Path,
    dims: (usize, usize),
    neck: Option<&NeckConfig>,
) -> Result<SegmentationResult> {
    let raw = read_mask_png(path)?;
    if raw.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: raw.dims(),
        });
    }
    external_segment(&raw, neck)
}

pub fn read_mask_png(path: &Path) -> Result<Grid<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Grid::from_vec(w, h, img.into_raw())
}

pub fn write_mask_png(mask: &Grid<u8>, path: &Path) -> Result<()> {
    image::save_buffer(
        path,
        mask.as_slice(),
        mask.width() as u32,
        mask.height() as u32,
        image::ColorType::L8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
