//! Convex hull, minimum-area rotated rectangle, bounding box and area
//! moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

impl From<(i32, i32)> for Point {
    fn from((x, y): (i32, i32)) -> Self {
        Point::new(x as f64, y as f64)
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Monotone-chain convex hull.
///
/// The result winds with positive signed area, has no collinear vertices
/// and starts at the vertex with the smallest `y` (then smallest `x`).
pub fn convex_hull(points: &[Point]) -> Result<Vec<Point>> {
    let mut pts: Vec<Point> = points.to_vec();
    if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::DegenerateInput("non-finite point"));
    }
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateInput("fewer than three distinct points"));
    }

    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(Error::DegenerateInput("all points are collinear"));
    }

    let start = hull
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    hull.rotate_left(start);
    Ok(hull)
}

/// Rotated rectangle with the long side first.
///
/// `angle` is the rectangle orientation folded into `[0, 90)` degrees;
/// `long_axis_angle` keeps the direction of `side_a` in `[0, 180)` so the
/// corners stay recoverable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: Point,
    pub side_a: f64,
    pub side_b: f64,
    pub angle: f64,
    pub long_axis_angle: f64,
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        self.side_a * self.side_b
    }

    pub fn corners(&self) -> [Point; 4] {
        let t = self.long_axis_angle.to_radians();
        let (ux, uy) = (t.cos() * self.side_a / 2.0, t.sin() * self.side_a / 2.0);
        let (vx, vy) = (-t.sin() * self.side_b / 2.0, t.cos() * self.side_b / 2.0);
        let c = self.center;
        [
            Point::new(c.x - ux - vx, c.y - uy - vy),
            Point::new(c.x + ux - vx, c.y + uy - vy),
            Point::new(c.x + ux + vx, c.y + uy + vy),
            Point::new(c.x - ux + vx, c.y - uy + vy),
        ]
    }

    /// Whether `p` lies inside the rectangle, allowing `tol` pixels of slack.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let t = self.long_axis_angle.to_radians();
        let d = p.sub(self.center);
        let u = d.x * t.cos() + d.y * t.sin();
        let v = -d.x * t.sin() + d.y * t.cos();
        u.abs() <= self.side_a / 2.0 + tol && v.abs() <= self.side_b / 2.0 + tol
    }
}

fn fold_angle(deg: f64, period: f64) -> f64 {
    let a = deg.rem_euclid(period);
    if period - a < 1e-9 {
        0.0
    } else {
        a
    }
}

/// Minimum-area enclosing rectangle by rotating calipers over the hull.
pub fn min_area_rect(points: &[Point]) -> Result<RotatedRect> {
    let hull = convex_hull(points)?;
    let n = hull.len();
    let at = |i: usize| hull[i % n];

    let edge_dir = |i: usize| {
        let d = at(i + 1).sub(at(i));
        let len = d.x.hypot(d.y);
        Point::new(d.x / len, d.y / len)
    };

    // Calipers: `right` maximizes projection on the edge direction, `top`
    // maximizes distance from the edge line, `left` minimizes projection.
    let mut right = 1;
    let mut top = 1;
    let mut left = 1;
    let mut best: Option<(f64, usize, f64, f64, f64)> = None;

    for i in 0..n {
        let e = edge_dir(i);
        let nrm = Point::new(-e.y, e.x);
        let origin = at(i);
        let proj_e = |k: usize| at(k).sub(origin).dot(e);
        let proj_n = |k: usize| at(k).sub(origin).dot(nrm);

        if i == 0 {
            right = i + 1;
        }
        let mut guard = 0;
        while proj_e(right + 1) > proj_e(right) && guard < n {
            right += 1;
            guard += 1;
        }
        if i == 0 {
            top = right;
        }
        guard = 0;
        while proj_n(top + 1) > proj_n(top) && guard < n {
            top += 1;
            guard += 1;
        }
        if i == 0 {
            left = top;
        }
        guard = 0;
        while proj_e(left + 1) < proj_e(left) && guard < n {
            left += 1;
            guard += 1;
        }

        let (min_e, max_e, max_n) = (proj_e(left), proj_e(right), proj_n(top));
        let area = (max_e - min_e) * max_n;
        if best.is_none_or(|b| area < b.0) {
            best = Some((area, i, min_e, max_e, max_n));
        }
    }

    let (_, i, min_e, max_e, max_n) = best.expect("hull has at least three edges");
    let e = edge_dir(i);
    let nrm = Point::new(-e.y, e.x);
    let origin = at(i);
    let mid_e = (min_e + max_e) / 2.0;
    let center = Point::new(
        origin.x + e.x * mid_e + nrm.x * max_n / 2.0,
        origin.y + e.y * mid_e + nrm.y * max_n / 2.0,
    );
    let len_e = max_e - min_e;
    let (side_a, side_b, dir) = if len_e >= max_n {
        (len_e, max_n, e)
    } else {
        (max_n, len_e, nrm)
    };
    let long_axis_angle = fold_angle(dir.y.atan2(dir.x).to_degrees(), 180.0);
    Ok(RotatedRect {
        center,
        side_a,
        side_b,
        angle: fold_angle(long_axis_angle, 90.0),
        long_axis_angle,
    })
}

/// Inclusive pixel bounding box: `w = max_x - min_x + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aabb {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Aabb {
    pub fn area(&self) -> i64 {
        self.w * self.h
    }

    /// Smallest distance from any box corner to any image edge.
    pub fn edge_clearance(&self, width: usize, height: usize) -> i64 {
        let right = width as i64 - (self.x + self.w);
        let bottom = height as i64 - (self.y + self.h);
        self.x.min(self.y).min(right).min(bottom)
    }
}

pub fn axis_aligned_bbox(points: &[(i32, i32)]) -> Result<Aabb> {
    let first = points
        .first()
        .ok_or(Error::DegenerateInput("empty point set"))?;
    let (mut x0, mut y0, mut x1, mut y1) = (first.0, first.1, first.0, first.1);
    for &(x, y) in points {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    Ok(Aabb {
        x: x0 as i64,
        y: y0 as i64,
        w: (x1 - x0) as i64 + 1,
        h: (y1 - y0) as i64 + 1,
    })
}

/// Area-moment centroid `(m10 / m00, m01 / m00)` of the nonzero cells.
pub fn centroid(mask: &Grid<u8>) -> Result<(f64, f64)> {
    let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
    for (i, j, &v) in mask.indexed() {
        if v != 0 {
            m00 += 1.0;
            m10 += j as f64;
            m01 += i as f64;
        }
    }
    if m00 == 0.0 {
        return Err(Error::NoForeground);
    }
    Ok((m10 / m00, m01 / m00))
}
