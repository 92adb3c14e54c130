//! Acceptance criteria, one test per criterion. Each prints a single
//! `acceptance N ... PASS|FAIL` line; run with `--nocapture` to see them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;

use dairyweight::biometrics::{frame_features, CameraConfig, FeatureRow};
use dairyweight::evaluate::{
    forecast_splits, join_weights, leave_k_cows_out, pearson_table, run_experiment, Design,
    ExperimentConfig, Grouping, Observation, R2Mode, PAPER_RATIOS,
};
use dairyweight::geometry::{centroid, convex_hull, min_area_rect, Point};
use dairyweight::ingest::{
    load_exclusions, load_manifest, parse_manifest, rgb_to_hue, DEFAULT_EXCLUSIONS,
};
use dairyweight::pipeline::{extract_features, PipelineConfig};
use dairyweight::regress::{
    fit_lasso, fit_lmm, fit_ols, fit_ridge, DesignMatrix, FitOptions, RegressionMethod,
};
use dairyweight::segment::{
    adaptive_segment, extract_body, remove_neck, threshold, HeadSide, NeckConfig,
    SegmentationMethod, CORNER_MARGIN,
};
use dairyweight::synth::{
    generate_dataset, generate_longitudinal, generate_scene, DatasetLayout, DatasetSpec,
    LongitudinalSpec, RailSpec, SceneSpec,
};
use dairyweight::ingest::PixelRect;
use dairyweight::Grid;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Checks {
    items: Vec<(String, bool)>,
}

impl Checks {
    fn new() -> Self {
        Self { items: Vec::new() }
    }

    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.items.push((name.into(), ok));
    }

    fn finish(mut self, id: u32, title: &str, start: Instant, budget_s: f64) {
        let elapsed = start.elapsed().as_secs_f64();
        self.check(format!("runtime {elapsed:.2} s < {budget_s} s"), elapsed < budget_s);
        let failed: Vec<&str> = self
            .items
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(n, _)| n.as_str())
            .collect();
        let verdict = if failed.is_empty() { "PASS" } else { "FAIL" };
        println!(
            "acceptance {id} {title}: {verdict} ({} checks, {elapsed:.2} s)",
            self.items.len()
        );
        for f in &failed {
            println!("    failed: {f}");
        }
        assert!(failed.is_empty(), "acceptance {id} failed: {failed:?}");
    }
}

fn cam() -> CameraConfig {
    CameraConfig::default()
}

// ---------------------------------------------------------------- 1

fn brute_rect_area(points: &[Point]) -> f64 {
    (0..900)
        .map(|k| {
            let t = (k as f64 * 0.1).to_radians();
            let (c, s) = (t.cos(), t.sin());
            let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in points {
                let (u, v) = (p.x * c + p.y * s, -p.x * s + p.y * c);
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
            (u1 - u0) * (v1 - v0)
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_points(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let n = rng.random_range(3..60);
    let spread: f64 = rng.random_range(5.0..400.0);
    let aspect: f64 = rng.random_range(0.2..1.0);
    (0..n)
        .map(|_| Point {
            x: rng.random_range(0.0..spread),
            y: rng.random_range(0.0..spread * aspect),
        })
        .collect()
}

fn random_blob(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Grid<u8> {
    let (cx, cy) = (rng.random_range(10.0..w as f64 - 10.0), rng.random_range(10.0..h as f64 - 10.0));
    let (a, b) = (rng.random_range(3.0..25.0), rng.random_range(3.0..25.0));
    let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
    Grid::from_fn(w, h, |i, j| {
        let (dx, dy) = (j as f64 - cx, i as f64 - cy);
        let (u, v) = (dx * t.cos() + dy * t.sin(), -dx * t.sin() + dy * t.cos());
        let wobble = 1.0 + 0.15 * (3.0 * v.atan2(u)).sin();
        if (u / a).powi(2) + (v / b).powi(2) < wobble { 255 } else { 0 }
    })
}

#[test]
fn acceptance_1_geometry() {
    let start = Instant::now();
    let mut c = Checks::new();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let (mut worst, mut below) = (0.0f64, 0);
    for k in 0..100 {
        // half random point clouds, half traced contours
        let pts = if k % 2 == 0 {
            random_points(&mut rng)
        } else {
            let blob = random_blob(&mut rng, 80, 80);
            extract_body(&blob).unwrap().1.to_points()
        };
        let Ok(rect) = min_area_rect(&pts) else {
            continue;
        };
        let brute = brute_rect_area(&pts);
        if brute <= 1e-9 {
            continue;
        }
        worst = worst.max((rect.area() - brute).abs() / brute);
        if rect.area() > brute * (1.0 + 1e-9) {
            below += 1;
        }
    }
    c.check(format!("min-area rect within 0.5% of 0.1 deg sweep (worst {:.4}%)", 100.0 * worst), worst <= 0.005);
    c.check(format!("exact rect never larger than the sweep ({below} cases)"), below == 0);

    let mut hull_bad = 0;
    for _ in 0..100 {
        let pts = random_points(&mut rng);
        let Ok(hull) = convex_hull(&pts) else {
            continue;
        };
        let m = hull.len();
        let cross = |a: Point, b: Point, p: Point| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        let scale = pts.iter().map(|p| p.x.abs().max(p.y.abs())).fold(1.0, f64::max);
        let inside = pts.iter().all(|&p| (0..m).all(|e| cross(hull[e], hull[(e + 1) % m], p) >= -1e-9 * scale * scale));
        let from_input = hull.iter().all(|h| pts.contains(h));
        let convex = (0..m).all(|e| cross(hull[e], hull[(e + 1) % m], hull[(e + 2) % m]) > 0.0);
        if !(inside && from_input && convex) {
            hull_bad += 1;
        }
    }
    c.check(format!("hull brute-force membership ({hull_bad} bad sets)"), hull_bad == 0);

    let mut worst_centroid = 0.0f64;
    for _ in 0..100 {
        let blob = random_blob(&mut rng, 60, 50);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for i in 0..blob.height() {
            for j in 0..blob.width() {
                if *blob.get(i, j) != 0 {
                    sx += j as f64;
                    sy += i as f64;
                    n += 1.0;
                }
            }
        }
        let (cx, cy) = centroid(&blob).unwrap();
        worst_centroid = worst_centroid.max((cx - sx / n).abs()).max((cy - sy / n).abs());
    }
    c.check(format!("centroid equals pixel mean (worst {worst_centroid:e})"), worst_centroid <= 1e-9);
    c.finish(1, "geometry oracle suite", start, 10.0);
}

// ---------------------------------------------------------------- 2

/// Largest 8-connected white component by pixel count, as its inclusive bbox.
fn largest_bbox(mask: &Grid<u8>) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut best: Option<(usize, (usize, usize, usize, usize))> = None;
    for start in 0..w * h {
        if seen[start] || mask.as_slice()[start] == 0 {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let (mut n, mut x0, mut y0, mut x1, mut y1) = (0, usize::MAX, usize::MAX, 0, 0);
        while let Some(p) = queue.pop_front() {
            let (i, j) = (p / w, p % w);
            n += 1;
            x0 = x0.min(j);
            x1 = x1.max(j);
            y0 = y0.min(i);
            y1 = y1.max(i);
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                        continue;
                    }
                    let q = ni as usize * w + nj as usize;
                    if !seen[q] && mask.as_slice()[q] != 0 {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        if best.is_none_or(|(m, _)| n > m) {
            best = Some((n, (x0, y0, x1, y1)));
        }
    }
    best.map(|(_, b)| b)
}

fn sweep_threshold(hue: &Grid<u8>, margin: usize) -> Option<u8> {
    let (w, h) = hue.dims();
    (0..180u16).map(|t| t as u8).find(|&t| {
        largest_bbox(&threshold(hue, t)).is_some_and(|(x0, y0, x1, y1)| {
            let clearance = x0.min(y0).min(w - 1 - x1).min(h - 1 - y1);
            clearance > margin
        })
    })
}

fn dumbbell(rng: &mut ChaCha8Rng, side: HeadSide) -> (Grid<u8>, usize) {
    let (w, h) = (240, 160);
    let body_top = rng.random_range(20..40);
    let x0 = rng.random_range(20..60);
    let x1 = rng.random_range(130..150);
    let x2 = x1 + rng.random_range(10..30);
    let x3 = (x2 + rng.random_range(15..40)).min(w - 5);
    let neck_top = body_top + rng.random_range(10..70);
    let head_top = body_top + rng.random_range(0..30);
    let mask = Grid::from_fn(w, h, |i, j| {
        let body = (x0..x1).contains(&j) && (body_top..body_top + 100).contains(&i);
        let neck = (x1..x2).contains(&j) && (neck_top..neck_top + 20).contains(&i);
        let head = (x2..x3).contains(&j) && (head_top..head_top + 60).contains(&i);
        if body || neck || head { 255 } else { 0 }
    });
    match side {
        HeadSide::Right => (mask, x1),
        HeadSide::Left => {
            let flipped = Grid::from_fn(w, h, |i, j| *mask.get(i, w - 1 - j));
            (flipped, w - x1)
        }
    }
}

#[test]
fn acceptance_2_segmentation() {
    let start = Instant::now();
    let mut c = Checks::new();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    let mut mismatches = Vec::new();
    let mut raised = 0;
    for k in 0..50 {
        let (w, h) = (200, 140);
        let mut spec = SceneSpec::centered(w, h, rng.random_range(50.0..70.0), rng.random_range(25.0..35.0), rng.random_range(1.0..1.6));
        spec.center.0 += rng.random_range(-10.0..10.0);
        spec.center.1 += rng.random_range(-5.0..5.0);
        spec.yaw_deg = rng.random_range(-20.0..20.0);
        spec.noise_sd_m = if k % 3 == 0 { 0.01 } else { 0.0 };
        spec.seed = k;
        // a stripe from the top edge into the body, sometimes edge rails too
        let sx = (spec.center.0 as usize).saturating_sub(3);
        spec.rails.push(RailSpec {
            rect: PixelRect::new(sx, 0, 6, spec.center.1 as usize),
            height_m: rng.random_range(0.02..0.6),
        });
        if k % 2 == 0 {
            spec = spec.with_edge_rails(4, rng.random_range(0.01..0.3));
        }
        let scene = generate_scene(&spec, &cam()).unwrap();
        let hue = rgb_to_hue(&scene.frame);
        let expected = sweep_threshold(&hue, CORNER_MARGIN);
        let got = adaptive_segment(&hue, CORNER_MARGIN, None).ok().and_then(|s| s.threshold_used);
        if got != expected {
            mismatches.push((k, got, expected));
        }
        let min = *hue.as_slice().iter().min().unwrap();
        if expected.is_some_and(|t| t > min) {
            raised += 1;
        }
    }
    c.check(format!("adaptive threshold equals exhaustive sweep on 50 scenes {mismatches:?}"), mismatches.is_empty());
    c.check(format!("search raised the threshold above the minimum in {raised} scenes"), raised >= 25);

    let mut violations = 0;
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
        let hue = Grid::from_fn(w, h, |_, _| rng.random_range(0..180u8));
        let t1 = rng.random_range(0..180u8);
        let t2 = rng.random_range(t1..=179);
        let (lo, hi) = (threshold(&hue, t1), threshold(&hue, t2));
        if hi.as_slice().iter().zip(lo.as_slice()).any(|(&a, &b)| a != 0 && b == 0) {
            violations += 1;
        }
    }
    c.check(format!("threshold monotone on 1000 random hue images ({violations} violations)"), violations == 0);

    let mut neck_bad = 0;
    for k in 0..50 {
        let side = if k % 2 == 0 { HeadSide::Right } else { HeadSide::Left };
        let (mask, first_neck) = dumbbell(&mut rng, side);
        let cut = remove_neck(&mask, &NeckConfig { ratio: 0.3, head_side: side }).unwrap();
        let expected = Grid::from_fn(mask.width(), mask.height(), |i, j| {
            let removed = match side {
                HeadSide::Right => j >= first_neck,
                HeadSide::Left => j < first_neck,
            };
            if removed { 0 } else { *mask.get(i, j) }
        });
        if cut != expected {
            neck_bad += 1;
        }
    }
    c.check(format!("neck removal matches column-scan oracle on 50 dumbbells ({neck_bad} bad)"), neck_bad == 0);
    c.finish(2, "segmentation oracle suite", start, 30.0);
}

// ---------------------------------------------------------------- 3

fn biometric_scene(rng: &mut ChaCha8Rng, yaw_deg: f64) -> SceneSpec {
    let mut spec = SceneSpec::centered(420, 340, rng.random_range(100.0..150.0), rng.random_range(50.0..70.0), rng.random_range(1.0..1.6));
    spec.center.0 += rng.random_range(-20.0..20.0);
    spec.center.1 += rng.random_range(-10.0..10.0);
    spec.yaw_deg = yaw_deg;
    spec
}

#[test]
fn acceptance_3_biometrics() {
    let start = Instant::now();
    let mut c = Checks::new();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // sizes and volume on axis-aligned bodies
    let (mut vol, mut avg, mut len, mut wid) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut bias = 0.0;
    for _ in 0..20 {
        let spec = biometric_scene(&mut rng, 0.0);
        let scene = generate_scene(&spec, &cam()).unwrap();
        let seg = adaptive_segment(&rgb_to_hue(&scene.frame), CORNER_MARGIN, None).unwrap();
        let f = frame_features(&seg, &scene.frame.depth, &cam()).unwrap();
        let t = scene.truth;
        vol = vol.max((f.volume / t.volume - 1.0).abs());
        avg = avg.max((f.avg_height_m / t.avg_height_m - 1.0).abs());
        len = len.max((f.length_px - t.length_px).abs());
        wid = wid.max((f.width_px - t.width_px).abs());
        bias += (f.length_px - t.length_px + f.width_px - t.width_px) / 40.0;
    }
    c.check(format!("volume within 2% (worst {:.3}%)", 100.0 * vol), vol <= 0.02);
    c.check(format!("avg height within 1% (worst {:.3}%)", 100.0 * avg), avg <= 0.01);
    c.check(format!("length within 1 px (worst {len:.3}, mean signed size error {bias:.3})"), len <= 1.0);
    c.check(format!("width within 1 px (worst {wid:.3})"), wid <= 1.0);

    // orientation over arbitrary yaw
    let mut angle_errors = Vec::new();
    for _ in 0..20 {
        let yaw = rng.random_range(0.0..180.0);
        let spec = biometric_scene(&mut rng, yaw);
        let scene = generate_scene(&spec, &cam()).unwrap();
        let seg = adaptive_segment(&rgb_to_hue(&scene.frame), CORNER_MARGIN, None).unwrap();
        let rect = min_area_rect(&seg.contour.to_points()).unwrap();
        let d = (rect.angle - scene.truth.angle_deg).rem_euclid(90.0);
        angle_errors.push(d.min(90.0 - d));
    }
    let worst = angle_errors.iter().copied().fold(0.0, f64::max);
    let over = angle_errors.iter().filter(|&&e| e > 1.0).count();
    c.check(format!("rect angle within 1 deg of yaw (worst {worst:.3}, {over}/20 over)"), worst <= 1.0);
    c.finish(3, "biometrics analytic suite", start, 20.0);
}

// ---------------------------------------------------------------- 4

fn random_design(n: usize, rng: &mut ChaCha8Rng) -> DesignMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..4).map(|j| rng.sample::<f64, _>(StandardNormal) * (1.0 + j as f64) + 3.0 * j as f64).collect())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| 20.0 + 2.0 * r[0] - r[1] + 0.5 * r[2] + 0.1 * r[3] + rng.sample::<f64, _>(StandardNormal))
        .collect();
    DesignMatrix::from_rows(&rows, &y, vec!["c".into(); n], vec![0.0; n], &["a", "b", "c", "d"]).unwrap()
}

/// Centered predictors with `Z'Z / n = I`.
fn orthonormal_design(n: usize, rng: &mut ChaCha8Rng) -> DesignMatrix {
    let mut x = DMatrix::from_fn(n, 5, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
    for j in 1..5 {
        for prev in 0..j {
            let q = x.column(prev).clone_owned();
            let col = x.column(j) - &q * (x.column(j).dot(&q) / q.dot(&q));
            x.set_column(j, &col);
        }
        let col = x.column(j) * ((n as f64).sqrt() / x.column(j).norm());
        x.set_column(j, &col);
    }
    let y = DVector::from_fn(n, |i, _| {
        7.0 + 3.0 * x[(i, 1)] - 0.4 * x[(i, 2)] + 1.5 * x[(i, 3)] + 0.05 * x[(i, 4)] + rng.sample::<f64, _>(StandardNormal)
    });
    let columns = ["intercept", "a", "b", "c", "d"].map(String::from).to_vec();
    DesignMatrix::new(x, y, vec!["c".into(); n], vec![0.0; n], columns).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn acceptance_4_regression() {
    let start = Instant::now();
    let mut c = Checks::new();
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    let mut worst_ols = 0.0f64;
    let mut worst_zero = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let d = random_design(50, &mut rng);
        let xtx = d.x.transpose() * &d.x;
        let oracle = xtx.lu().solve(&(d.x.transpose() * &d.y)).unwrap();
        let ols = fit_ols(&d).unwrap();
        worst_ols = worst_ols.max(rel_err(&ols.beta, oracle.as_slice()));
        worst_zero.0 = worst_zero.0.max(rel_err(&fit_ridge(&d, 0.0).unwrap().beta, &ols.beta));
        worst_zero.1 = worst_zero.1.max(rel_err(&fit_lasso(&d, 0.0).unwrap().beta, &ols.beta));
    }
    c.check(format!("OLS matches normal equations (worst {worst_ols:e})"), worst_ols <= 1e-8);
    c.check(format!("ridge at lambda 0 matches OLS (worst {:e})", worst_zero.0), worst_zero.0 <= 1e-8);
    c.check(format!("LASSO at lambda 0 matches OLS (worst {:e})", worst_zero.1), worst_zero.1 <= 1e-6);

    let (mut worst_ridge, mut worst_lasso, mut nonzero) = (0.0f64, 0.0f64, 0);
    for _ in 0..10 {
        let d = orthonormal_design(60, &mut rng);
        let ols = fit_ols(&d).unwrap();
        for lambda in [0.01, 0.1, 0.5, 1.0, 2.0, 5.0] {
            let ridge = fit_ridge(&d, lambda).unwrap();
            let lasso = fit_lasso(&d, lambda).unwrap();
            for j in 1..5 {
                let b = ols.beta[j];
                worst_ridge = worst_ridge.max((ridge.beta[j] - b / (1.0 + lambda)).abs() / b.abs().max(1.0));
                let soft = b.signum() * (b.abs() - lambda).max(0.0);
                worst_lasso = worst_lasso.max((lasso.beta[j] - soft).abs());
            }
        }
        // penalty at which every slope is zero: max |Z'(y - ybar)| / n
        let n = d.n() as f64;
        let ybar = d.y.mean();
        let top = (1..5)
            .map(|j| {
                let col = d.x.column(j);
                let (m, sd) = (col.mean(), col.variance().sqrt());
                col.iter().zip(d.y.iter()).map(|(x, y)| (x - m) / sd * (y - ybar)).sum::<f64>().abs() / n
            })
            .fold(0.0, f64::max);
        let fit = fit_lasso(&d, top * (1.0 + 1e-9)).unwrap();
        nonzero += fit.beta[1..].iter().filter(|&&b| b != 0.0).count();
    }
    c.check(format!("ridge matches b/(1+lambda) on orthonormal designs (worst {worst_ridge:e})"), worst_ridge <= 1e-8);
    c.check(format!("LASSO matches soft threshold on orthonormal designs (worst {worst_lasso:e})"), worst_lasso <= 1e-6);
    c.check(format!("LASSO zeroes all slopes at lambda_max ({nonzero} nonzero)"), nonzero == 0);
    c.finish(4, "regression oracle suite", start, 10.0);
}

// ---------------------------------------------------------------- 5

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

#[test]
fn acceptance_5_lmm_recovery() {
    let start = Instant::now();
    let mut c = Checks::new();
    let truth = LongitudinalSpec::default();
    assert_eq!((truth.n_cows, truth.n_sessions), (50, 40));
    let (mut v0, mut v1, mut ve) = (vec![], vec![], vec![]);
    let mut z: Vec<Vec<f64>> = vec![vec![]; 5];
    for rep in 0..10 {
        let spec = LongitudinalSpec { seed: 500 + rep, ..truth.clone() };
        let d = generate_longitudinal(&spec).unwrap();
        let fit = fit_lmm(&d).unwrap();
        v0.push(fit.var_intercept);
        v1.push(fit.var_slope);
        ve.push(fit.var_resid);
        for j in 0..5 {
            z[j].push((fit.beta[j] - truth.beta[j]).abs() / fit.beta_se[j]);
        }
    }
    for (name, vals, want) in [("intercept", v0, 400.0), ("slope", v1, 4.0), ("residual", ve, 25.0)] {
        let m = median(vals);
        c.check(format!("median {name} variance {m:.3} within 20% of {want}"), (m / want - 1.0).abs() <= 0.2);
    }
    for (j, zs) in z.into_iter().enumerate() {
        let worst = zs.iter().copied().fold(0.0, f64::max);
        let m = median(zs);
        c.check(format!("beta[{j}] median |error| {m:.2} SE (worst {worst:.2}) within 3 SE"), m <= 3.0);
    }

    let flat = LongitudinalSpec {
        var_intercept: 0.0,
        var_slope: 0.0,
        cov_int_slope: 0.0,
        seed: 599,
        ..truth.clone()
    };
    let d = generate_longitudinal(&flat).unwrap();
    let fit = fit_lmm(&d).unwrap();
    let ols = fit_ols(&d).unwrap();
    let gap = fit
        .beta
        .iter()
        .zip(&ols.beta)
        .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
        .fold(0.0, f64::max);
    c.check(format!("zero-variance fit matches OLS beta (gap {gap:e})"), gap <= 1e-3);
    c.check("zero-variance fit flagged at boundary", fit.boundary);
    c.finish(5, "LMM recovery", start, 120.0);
}

// ---------------------------------------------------------------- 6

fn paper_manifest_text() -> String {
    let mut text = String::from("video_id,cow_id,day,period,body_weight_kg\n");
    for cow in 0..12 {
        for day in 0..28 {
            for period in ["AM", "PM"] {
                text.push_str(&format!("v{cow:02}_{day:02}_{period},cow{cow:02},{day},{period},\n"));
            }
        }
    }
    text
}

/// Observations for every manifest session, features drawn per cow and
/// session with a method-specific measurement error.
fn paper_observations(method: usize) -> Vec<Observation> {
    let manifest = parse_manifest(&paper_manifest_text(), &DEFAULT_EXCLUSIONS).unwrap();
    let spec = LongitudinalSpec {
        n_cows: 12,
        n_sessions: 56,
        seed: 606,
        ..Default::default()
    };
    let d = generate_longitudinal(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(60 + method as u64);
    let noise = rand_distr::Normal::new(0.0, 1.0 + method as f64).unwrap();
    manifest
        .videos
        .iter()
        .map(|(vid, key)| {
            let cow: usize = key.cow_id[3..].parse().unwrap();
            let row = cow * 56 + key.time_index() as usize;
            let f = |j: usize| d.x[(row, j)];
            Observation {
                features: FeatureRow {
                    video_id: vid.clone(),
                    cow_id: key.cow_id.clone(),
                    day: key.day,
                    period: key.period,
                    length_px: f(2) + noise.sample(&mut rng),
                    width_px: f(1) + noise.sample(&mut rng),
                    centroid_height_m: f(3) + 0.1,
                    avg_height_m: f(3),
                    volume: f(4) * (1.0 + 0.001 * noise.sample(&mut rng)),
                    n_frames_used: 10,
                },
                weight_kg: d.y[row],
            }
        })
        .collect()
}

#[test]
fn acceptance_6_cv_structure() {
    let start = Instant::now();
    let mut c = Checks::new();
    let manifest = parse_manifest(&paper_manifest_text(), &DEFAULT_EXCLUSIONS).unwrap();
    c.check(format!("manifest has 12 cows x 55 sessions ({} rows)", manifest.videos.len()), manifest.videos.len() == 12 * 55);

    let data: Vec<(String, Vec<Observation>)> = ["single", "adaptive", "external"]
        .iter()
        .enumerate()
        .map(|(m, name)| (name.to_string(), paper_observations(m)))
        .collect();
    let obs = &data[0].1;
    let times: Vec<u32> = obs.iter().map(|o| o.time_index()).collect();
    let sessions: BTreeSet<u32> = times.iter().copied().collect();
    c.check(format!("55 distinct time points ({})", sessions.len()), sessions.len() == 55);

    let splits = forecast_splits(&times, &PAPER_RATIOS).unwrap();
    let labels: Vec<&str> = splits.iter().map(|s| s.label.as_str()).collect();
    c.check(format!("five forecast ratios {labels:?}"), labels == ["90:10", "80:20", "70:30", "60:40", "50:50"]);
    let mut shape_ok = true;
    for (s, want) in splits.iter().zip([50usize, 44, 39, 33, 28]) {
        let train_t: BTreeSet<u32> = s.train.iter().map(|&i| times[i]).collect();
        let test_t: BTreeSet<u32> = s.test.iter().map(|&i| times[i]).collect();
        let ordered = train_t.iter().max() < test_t.iter().min();
        shape_ok &= train_t.len() == want && ordered && train_t.is_disjoint(&test_t)
            && s.train.len() + s.test.len() == obs.len();
    }
    c.check("forecast splits partition by time point (50/44/39/33/28 train points)", shape_ok);

    let cow_ids: Vec<String> = obs.iter().map(|o| o.features.cow_id.clone()).collect();
    let folds = leave_k_cows_out(&cow_ids, 3).unwrap();
    let mut held: BTreeMap<&str, usize> = BTreeMap::new();
    for f in &folds {
        let cows: BTreeSet<&str> = f.test.iter().map(|&i| cow_ids[i].as_str()).collect();
        for cow in cows {
            *held.entry(cow).or_default() += 1;
        }
    }
    c.check(format!("leave-3-out yields 220 folds ({})", folds.len()), folds.len() == 220);
    c.check("each cow held out exactly 55 times", held.len() == 12 && held.values().all(|&n| n == 55));

    let all = RegressionMethod::ALL.to_vec();
    let gof = run_experiment(&data, &cfg(Design::GoodnessOfFit, all.clone())).unwrap();
    let table1 = gof.wide_csv().unwrap();
    let t1: Vec<&str> = table1.lines().collect();
    c.check(
        "goodness-of-fit table: 3 methods x 4 models",
        t1.len() == 4 && t1[0] == "segmentation,scenario,OLS_r2,OLS_mape_pct,RR_r2,RR_mape_pct,LASSO_r2,LASSO_mape_pct,LMM_r2,LMM_mape_pct"
            && gof.rows.iter().all(|r| r.failed == 0),
    );

    let forecast = run_experiment(&data, &cfg(Design::Forecast { train_pcts: PAPER_RATIOS.to_vec() }, all)).unwrap();
    let table2 = forecast.wide_csv().unwrap();
    let failed: usize = forecast.rows.iter().map(|r| r.failed).sum();
    c.check(
        format!("forecast table: 3 methods x 5 scenarios x 4 models ({} rows, {failed} failed)", forecast.rows.len()),
        forecast.rows.len() == 60 && table2.lines().count() == 16 && failed == 0,
    );

    let fixed = vec![RegressionMethod::Ols, RegressionMethod::Ridge, RegressionMethod::Lasso];
    let loo = run_experiment(&data, &cfg(Design::LeaveKOut { k: 3 }, fixed)).unwrap();
    let mut per_pair: BTreeMap<(String, RegressionMethod), usize> = BTreeMap::new();
    for f in &loo.folds {
        *per_pair.entry((f.segmentation.clone(), f.regression)).or_default() += 1;
    }
    c.check(
        format!("leave-3-out report: 220 fold rows per method/model pair ({} pairs)", per_pair.len()),
        per_pair.len() == 9 && per_pair.values().all(|&n| n == 220) && loo.folds.iter().all(|f| f.error.is_none()),
    );
    let long = loo.folds_csv().unwrap();
    c.check("long-format fold table has 1980 rows", long.lines().count() == 1 + 1980);
    let lmm_rejected = run_experiment(&data, &cfg(Design::LeaveKOut { k: 3 }, vec![RegressionMethod::Lmm])).is_err();
    c.check("LMM rejected under leave-k-out", lmm_rejected);
    c.finish(6, "CV structure replication", start, 360.0);
}

fn cfg(design: Design, methods: Vec<RegressionMethod>) -> ExperimentConfig {
    ExperimentConfig {
        design,
        methods,
        fit: FitOptions::default(),
        r2_mode: R2Mode::Residual,
        seed: 2024,
    }
}

// ---------------------------------------------------------------- 7

#[test]
fn acceptance_7_end_to_end() {
    let start = Instant::now();
    let mut c = Checks::new();
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        n_cows: 12,
        n_days: 6,
        frames_per_video: 2,
        width: 424,
        height: 240,
        // manifest weights are exact in the true width, length, avg height, volume
        weight_coefficients: [100.0, 1.0, 0.5, 50.0, 0.02],
        weight_noise_sd_kg: 0.0,
        ..Default::default()
    };
    generate_dataset(&spec, &cam(), dir.path()).unwrap();
    let layout = DatasetLayout::new(dir.path());
    let exclusions = load_exclusions(&layout.exclusions()).unwrap();
    let manifest = load_manifest(&layout.manifest(), &exclusions).unwrap();

    let mut data = Vec::new();
    for method in [SegmentationMethod::Single, SegmentationMethod::Adaptive, SegmentationMethod::External] {
        let pcfg = PipelineConfig { method, neck: None, ..Default::default() };
        let (rows, issues) = extract_features(&layout, &manifest, &pcfg);
        c.check(format!("{} extracts all 132 videos ({} rows, {} issues)", method.name(), rows.len(), issues.len()), rows.len() == 132 && issues.is_empty());
        let (obs, dropped) = join_weights(&rows, &manifest).unwrap();
        assert_eq!(dropped, 0);
        data.push((method.name().to_string(), obs));
    }

    let all = RegressionMethod::ALL.to_vec();
    let fixed = all[..3].to_vec();
    for (design, methods) in [
        (Design::GoodnessOfFit, all.clone()),
        (Design::Forecast { train_pcts: PAPER_RATIOS.to_vec() }, all),
        (Design::LeaveKOut { k: 3 }, fixed),
    ] {
        let name = design.name();
        let report = run_experiment(&data, &cfg(design, methods)).unwrap();
        let out = dir.path().join("reports").join(name);
        report.write_dir(&out).unwrap();
        let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
        let mut rdr = csv::Reader::from_reader(table.as_bytes());
        let header = rdr.headers().unwrap().clone();
        let (mut worst_r2, mut worst_mape, mut cells) = (f64::INFINITY, 0.0f64, 0);
        for rec in rdr.records() {
            let rec = rec.unwrap();
            for (h, v) in header.iter().zip(rec.iter()).skip(2) {
                let v: f64 = v.parse().unwrap_or(f64::NAN);
                cells += 1;
                if h.ends_with("_r2") {
                    worst_r2 = worst_r2.min(v);
                } else {
                    worst_mape = worst_mape.max(v);
                }
            }
        }
        c.check(format!("{name}: R2 >= 0.999 in every cell (worst {worst_r2:.6}, {cells} cells)"), worst_r2 >= 0.999);
        c.check(format!("{name}: MAPE <= 0.1% in every cell (worst {worst_mape:.5}%)"), worst_mape <= 0.1);
    }
    c.finish(7, "end-to-end noiseless sanity", start, 120.0);
}

// ---------------------------------------------------------------- 8

#[test]
fn acceptance_8_volume_top_correlated() {
    let start = Instant::now();
    let mut c = Checks::new();
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        n_cows: 12,
        n_days: 3,
        frames_per_video: 1,
        width: 200,
        height: 120,
        weight_coefficients: [150.0, 0.0, 0.0, 0.0, 0.1],
        weight_noise_sd_kg: 5.0,
        seed: 808,
        ..Default::default()
    };
    generate_dataset(&spec, &cam(), dir.path()).unwrap();
    let layout = DatasetLayout::new(dir.path());
    let manifest = load_manifest(&layout.manifest(), &[]).unwrap();
    let (rows, _) = extract_features(&layout, &manifest, &PipelineConfig { neck: None, ..Default::default() });
    let (obs, _) = join_weights(&rows, &manifest).unwrap();
    let overall = &pearson_table(&obs, Grouping::Overall)[0];
    let r: Vec<String> = overall.r.iter().map(|v| format!("{:.3}", v.unwrap_or(f64::NAN))).collect();
    c.check(format!("volume is the top-correlated feature overall (r = {r:?})"), overall.strongest() == Some("volume"));
    let per_day = pearson_table(&obs, Grouping::PerDay);
    let wins = per_day.iter().filter(|row| row.strongest() == Some("volume")).count();
    c.check(format!("volume tops {wins} of {} per-day tables", per_day.len()), wins * 2 > per_day.len());
    c.finish(8, "qualitative paper echo", start, 30.0);
}
