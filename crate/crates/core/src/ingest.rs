//! Frame loading, cropping, hue conversion, frame subsampling and the
//! dataset manifest.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;

/// Native capture resolution of the depth camera, `(width, height)`.
pub const NATIVE_DIMS: (usize, usize) = (848, 480);

/// Hue on the 8-bit half-degree scale, `0..=179`.
pub type HueImage = Grid<u8>;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub color: Grid<[u8; 3]>,
    /// Distance to the camera in meters; `0.0` marks a missing reading.
    pub depth: Grid<f64>,
    pub frame_index: usize,
    pub video_id: String,
}

impl DepthFrame {
    pub fn new(color: Grid<[u8; 3]>, depth: Grid<f64>) -> Result<Self> {
        if color.dims() != depth.dims() {
            return Err(Error::DimensionMismatch {
                expected: color.dims(),
                actual: depth.dims(),
            });
        }
        check_depth(&depth)?;
        Ok(Self {
            color,
            depth,
            frame_index: 0,
            video_id: String::new(),
        })
    }

    pub fn with_origin(mut self, video_id: impl Into<String>, frame_index: usize) -> Self {
        self.video_id = video_id.into();
        self.frame_index = frame_index;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        self.color.dims()
    }
}

fn check_depth(depth: &Grid<f64>) -> Result<()> {
    for (row, col, &value) in depth.indexed() {
        if !value.is_finite() {
            return Err(Error::MalformedCsv {
                line: row + 1,
                message: format!("non-finite depth at column {}", col + 1),
            });
        }
        if value < 0.0 {
            return Err(Error::NegativeDepth { row, col, value });
        }
    }
    Ok(())
}

/// Axis-aligned pixel rectangle: top-left `(x, y)`, size `w`x`h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelRect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn intersect(&self, other: &PixelRect) -> Option<PixelRect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        (x1 > x0 && y1 > y0).then(|| PixelRect::new(x0, y0, x1 - x0, y1 - y0))
    }
}

pub fn load_frame_pair(png_path: &Path, csv_path: &Path) -> Result<DepthFrame> {
    let color = read_color_png(png_path)?;
    let depth = read_depth_csv(csv_path)?;
    if depth.dims() != color.dims() {
        return Err(Error::DimensionMismatch {
            expected: color.dims(),
            actual: depth.dims(),
        });
    }
    DepthFrame::new(color, depth)
}

pub fn read_color_png(path: &Path) -> Result<Grid<[u8; 3]>> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::io(path, source),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0).collect();
    Grid::from_vec(w, h, data)
}

/// Parses a header-less depth map: one line per pixel row, comma-separated
/// meters.
pub fn read_depth_csv(path: &Path) -> Result<Grid<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_depth_csv(file)
}

pub fn parse_depth_csv<R: std::io::Read>(reader: R) -> Result<Grid<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut width = None;
    let mut data = Vec::new();
    let mut height = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedCsv {
            line: i + 1,
            message: e.to_string(),
        })?;
        // tolerate a trailing comma at the end of each row
        let n = if record.iter().next_back() == Some("") {
            record.len() - 1
        } else {
            record.len()
        };
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(Error::MalformedCsv {
                    line: i + 1,
                    message: format!("row has {n} cells, expected {w}"),
                })
            }
            _ => {}
        }
        for (j, cell) in record.iter().take(n).enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::MalformedCsv {
                line: i + 1,
                message: format!("column {}: {cell:?} is not a number", j + 1),
            })?;
            if !value.is_finite() {
                return Err(Error::MalformedCsv {
                    line: i + 1,
                    message: format!("column {}: non-finite value", j + 1),
                });
            }
            if value < 0.0 {
                return Err(Error::NegativeDepth {
                    row: i,
                    col: j,
                    value,
                });
            }
            data.push(value);
        }
        height += 1;
    }
    let width = width.ok_or(Error::MalformedCsv {
        line: 0,
        message: "empty depth map".into(),
    })?;
    Grid::from_vec(width, height, data)
}

pub fn write_depth_csv(depth: &Grid<f64>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in depth.rows() {
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_color_png(color: &Grid<[u8; 3]>, path: &Path) -> Result<()> {
    let buf: Vec<u8> = color.as_slice().iter().flatten().copied().collect();
    image::save_buffer(
        path,
        &buf,
        color.width() as u32,
        color.height() as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn crop_frame(frame: &DepthFrame, rect: PixelRect) -> Result<DepthFrame> {
    let (width, height) = frame.dims();
    if rect.w == 0 || rect.h == 0 || rect.x + rect.w > width || rect.y + rect.h > height {
        return Err(Error::OutOfBounds {
            rect: (rect.x, rect.y, rect.w, rect.h),
            width,
            height,
        });
    }
    Ok(DepthFrame {
        color: frame.color.window(rect.x, rect.y, rect.w, rect.h),
        depth: frame.depth.window(rect.x, rect.y, rect.w, rect.h),
        frame_index: frame.frame_index,
        video_id: frame.video_id.clone(),
    })
}

/// 8-bit RGB to hue on the half-degree scale (OpenCV `COLOR_RGB2HSV`
/// convention). Achromatic pixels get hue 0.
pub fn pixel_hue([r, g, b]: [u8; 3]) -> u8 {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let diff = max - min;
    if diff == 0.0 {
        return 0;
    }
    let h = if max == r {
        30.0 * (g - b) / diff
    } else if max == g {
        60.0 + 30.0 * (b - r) / diff
    } else {
        120.0 + 30.0 * (r - g) / diff
    };
    let mut h = h.round() as i32;
    if h < 0 {
        h += 180;
    }
    h.clamp(0, 179) as u8
}

pub fn rgb_to_hue(frame: &DepthFrame) -> HueImage {
    frame.color.map(|&px| pixel_hue(px))
}

/// Indices `skip, skip + stride, ...` below `frame_count`.
pub fn subsample_frames(frame_count: usize, skip: usize, stride: usize) -> Vec<usize> {
    assert!(stride >= 1, "stride must be at least 1");
    (skip..frame_count).step_by(stride).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Period {
    AM,
    PM,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Period::AM => "AM",
            Period::PM => "PM",
        })
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AM" => Ok(Period::AM),
            "PM" => Ok(Period::PM),
            other => Err(Error::MalformedManifest(format!(
                "period must be AM or PM, got {other:?}"
            ))),
        }
    }
}

/// `(cow_id, day, period)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionKey {
    pub cow_id: String,
    pub day: u32,
    pub period: Period,
}

impl SessionKey {
    /// Chronological session ordinal: two sessions per day, AM first.
    pub fn time_index(&self) -> u32 {
        time_index(self.day, self.period)
    }
}

pub fn time_index(day: u32, period: Period) -> u32 {
    day * 2 + matches!(period, Period::PM) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub cow_id: String,
    pub day: u32,
    pub period: Period,
    pub body_weight_kg: Option<f64>,
}

impl Session {
    pub fn key(&self) -> SessionKey {
        SessionKey {
            cow_id: self.cow_id.clone(),
            day: self.day,
            period: self.period,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Exclusion {
    pub day: u32,
    pub period: Period,
}

/// The scale error recorded on the morning of day 5.
pub const DEFAULT_EXCLUSIONS: [Exclusion; 1] = [Exclusion {
    day: 5,
    period: Period::AM,
}];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub sessions: Vec<Session>,
    pub videos: BTreeMap<String, SessionKey>,
    pub exclusions: Vec<Exclusion>,
}

const MANIFEST_HEADER: [&str; 5] = ["video_id", "cow_id", "day", "period", "body_weight_kg"];

impl Manifest {
    pub fn session_for(&self, video_id: &str) -> Result<&Session> {
        let key = self
            .videos
            .get(video_id)
            .ok_or_else(|| Error::UnknownVideoReference(video_id.to_string()))?;
        self.sessions
            .iter()
            .find(|s| s.cow_id == key.cow_id && s.day == key.day && s.period == key.period)
            .ok_or_else(|| Error::UnknownVideoReference(video_id.to_string()))
    }

    pub fn cows(&self) -> Vec<String> {
        let mut cows: Vec<_> = self.sessions.iter().map(|s| s.cow_id.clone()).collect();
        cows.sort();
        cows.dedup();
        cows
    }

    /// Serializes in manifest CSV form, rows ordered by video id.
    pub fn to_csv_string(&self) -> String {
        let mut out = MANIFEST_HEADER.join(",");
        out.push('\n');
        for (video_id, key) in &self.videos {
            let weight = self
                .session_for(video_id)
                .ok()
                .and_then(|s| s.body_weight_kg)
                .map(|w| w.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{video_id},{},{},{},{weight}\n",
                key.cow_id, key.day, key.period
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: &Path, exclusions: &[Exclusion]) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, exclusions)
}

pub fn parse_manifest(text: &str, exclusions: &[Exclusion]) -> Result<Manifest> {
    if text.trim().is_empty() {
        return Err(Error::MalformedManifest("empty manifest".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::MalformedManifest(e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::MalformedManifest(format!(
            "expected header {}, got {}",
            MANIFEST_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let excluded: HashSet<Exclusion> = exclusions.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut manifest = Manifest {
        exclusions: exclusions.to_vec(),
        ..Default::default()
    };
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record =
            record.map_err(|e| Error::MalformedManifest(format!("line {line}: {e}")))?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let video_id = field(0).to_string();
        let cow_id = field(1).to_string();
        if video_id.is_empty() || cow_id.is_empty() {
            return Err(Error::MalformedManifest(format!(
                "line {line}: video_id and cow_id are required"
            )));
        }
        let day: u32 = field(2)
            .parse()
            .map_err(|_| Error::MalformedManifest(format!("line {line}: bad day {:?}", field(2))))?;
        let period: Period = field(3).parse()?;
        let body_weight_kg = match field(4) {
            "" => None,
            w => {
                let w: f64 = w.parse().map_err(|_| {
                    Error::MalformedManifest(format!("line {line}: bad weight {w:?}"))
                })?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::MalformedManifest(format!(
                        "line {line}: body weight must be positive"
                    )));
                }
                Some(w)
            }
        };
        let key = SessionKey {
            cow_id: cow_id.clone(),
            day,
            period,
        };
        if !seen.insert(key.clone()) {
            return Err(Error::DuplicateSession {
                cow_id,
                day,
                period: period.to_string(),
            });
        }
        if manifest.videos.contains_key(&video_id) {
            return Err(Error::MalformedManifest(format!(
                "line {line}: video {video_id} listed twice"
            )));
        }
        if excluded.contains(&Exclusion { day, period }) {
            continue;
        }
        manifest.videos.insert(video_id, key);
        manifest.sessions.push(Session {
            cow_id,
            day,
            period,
            body_weight_kg,
        });
    }
    Ok(manifest)
}

/// Reads a `day,period` list of sessions to drop.
pub fn load_exclusions(path: &Path) -> Result<Vec<Exclusion>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::MalformedManifest(e.to_string()))?;
        let day = record
            .get(0)
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::MalformedManifest("bad exclusion day".into()))?;
        let period = record.get(1).unwrap_or("").parse()?;
        out.push(Exclusion { day, period });
    }
    Ok(out)
}

pub fn write_exclusions(exclusions: &[Exclusion], path: &Path) -> Result<()> {
    let mut text = String::from("day,period\n");
    for e in exclusions {
        text.push_str(&format!("{},{}\n", e.day, e.period));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
