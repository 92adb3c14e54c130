use std::path::Path;

use dairyweight::biometrics::{read_feature_table, write_feature_table, FeatureRow};
use dairyweight::evaluate::{
    correlation_csv, design_matrix, join_weights, mape, pearson_table, r_squared, run_experiment, Grouping,
    Observation,
};
use dairyweight::ingest::{load_exclusions, load_manifest, Manifest};
use dairyweight::pipeline::{extract_features, video_segmentations, FrameIssue};
use dairyweight::regress::fit_model;
use dairyweight::segment::{write_mask_png, SegmentationMethod};
use dairyweight::synth::{generate_dataset, DatasetLayout};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn open_dataset(cfg: &RunConfig) -> Result<(DatasetLayout, Manifest), CliError> {
    let layout = DatasetLayout::new(cfg.dataset_dir()?);
    let exclusions = if layout.exclusions().is_file() {
        load_exclusions(&layout.exclusions())?
    } else {
        Vec::new()
    };
    let manifest = load_manifest(&layout.manifest(), &exclusions)?;
    Ok((layout, manifest))
}

fn features_path(dir: &Path, method: SegmentationMethod) -> std::path::PathBuf {
    dir.join(format!("features_{}.csv", method.name()))
}

/// Feature tables joined with manifest weights, one dataset per method.
fn load_observations(cfg: &RunConfig) -> Result<Vec<(String, Vec<Observation>)>, CliError> {
    let dir = cfg.features_dir()?;
    let (_, manifest) = open_dataset(cfg)?;
    let mut out = Vec::new();
    for &method in &cfg.segmentation.methods {
        let rows = read_feature_table(&features_path(dir, method))?;
        let (obs, dropped) = join_weights(&rows, &manifest)?;
        if dropped > 0 {
            log::warn!("{}: {dropped} videos have no weight and were left out", method.name());
        }
        out.push((method.name().to_string(), obs));
    }
    Ok(out)
}

fn write_issues(path: &Path, issues: &[(SegmentationMethod, FrameIssue)]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["method", "video_id", "frame", "error"]).map_err(io)?;
    for (m, i) in issues {
        let frame = i.frame.map(|f| f.to_string()).unwrap_or_default();
        w.write_record([m.name(), &i.video_id, &frame, &i.error]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn summarize(what: &str, items: usize, issues: &[(SegmentationMethod, FrameIssue)]) {
    let frames = issues.iter().filter(|(_, i)| i.frame.is_some()).count();
    let videos = issues.len() - frames;
    eprintln!("{what}: {items} written, {frames} frames skipped, {videos} videos without usable frames");
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let mut spec = cfg.synth.clone();
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    let camera = cfg.pipeline(SegmentationMethod::Adaptive)?.camera;
    let summary = generate_dataset(&spec, &camera, out)?;
    eprintln!("synth: {} videos, {} frames under {}", summary.videos, summary.frames, out.display());
    Ok(())
}

pub fn segment(cfg: &RunConfig) -> Result<(), CliError> {
    let (layout, manifest) = open_dataset(cfg)?;
    let out = cfg.out_dir()?;
    let mut table = String::from("method,video_id,frame,threshold,body_pixels\n");
    let mut issues = Vec::new();
    let mut written = 0;
    for &method in &cfg.segmentation.methods {
        let pcfg = cfg.pipeline(method)?;
        let videos: Vec<&String> = manifest.videos.keys().collect();
        let results: Vec<_> = videos
            .par_iter()
            .map(|vid| -> Result<(String, Vec<FrameIssue>, usize), CliError> {
                let (frames, mut found) = match video_segmentations(&layout, vid, &pcfg) {
                    Ok(r) => r,
                    Err(e) => {
                        let issue = FrameIssue { video_id: vid.to_string(), frame: None, error: e.to_string() };
                        return Ok((String::new(), vec![issue], 0));
                    }
                };
                let dir = out.join("masks").join(method.name()).join(vid);
                if !frames.is_empty() {
                    create_dir(&dir)?;
                }
                let mut rows = String::new();
                for f in &frames {
                    let seg = &f.segmentation;
                    write_mask_png(&seg.mask, &dir.join(format!("frame_{:05}.png", f.index)))?;
                    let pixels = seg.mask.as_slice().iter().filter(|&&v| v != 0).count();
                    let t = seg.threshold_used.map(|t| t.to_string()).unwrap_or_default();
                    rows.push_str(&format!("{},{vid},{},{t},{pixels}\n", method.name(), f.index));
                }
                found.iter().for_each(|i| log::warn!("{} frame {:?}: {}", i.video_id, i.frame, i.error));
                let n = frames.len();
                Ok((rows, std::mem::take(&mut found), n))
            })
            .collect();
        for r in results {
            let (rows, found, n) = r?;
            table.push_str(&rows);
            issues.extend(found.into_iter().map(|i| (method, i)));
            written += n;
        }
    }
    create_dir(out)?;
    write_text(&out.join("segmentation.csv"), &table)?;
    write_issues(&out.join("issues.csv"), &issues)?;
    summarize("segment", written, &issues);
    Ok(())
}

pub fn features(cfg: &RunConfig) -> Result<(), CliError> {
    let (layout, manifest) = open_dataset(cfg)?;
    let out = cfg.out_dir()?;
    let pipelines: Vec<_> = cfg
        .segmentation
        .methods
        .iter()
        .map(|&m| cfg.pipeline(m).map(|p| (m, p)))
        .collect::<Result<_, _>>()?;
    create_dir(out)?;
    let mut issues = Vec::new();
    let mut written = 0;
    for (method, pcfg) in pipelines {
        let (rows, found): (Vec<FeatureRow>, _) = extract_features(&layout, &manifest, &pcfg);
        write_feature_table(&rows, &features_path(out, method))?;
        written += rows.len();
        issues.extend(found.into_iter().map(|i| (method, i)));
    }
    write_issues(&out.join("issues.csv"), &issues)?;
    summarize("features", written, &issues);
    Ok(())
}

pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let opts = cfg.fit_options();
    let data = load_observations(cfg)?;
    create_dir(out)?;
    let mut table = String::from("segmentation,regression,n,r2,mape_pct\n");
    for (seg, obs) in &data {
        let d = design_matrix(obs)?;
        for &method in &cfg.regression.methods {
            let model = fit_model(&d, method, &opts, cfg.seed())?;
            let yhat = model.predict(&d)?;
            let y = d.y.as_slice();
            let (r2, err) = (r_squared(y, yhat.as_slice())?, mape(y, yhat.as_slice())?);
            model.save(&out.join(format!("model_{seg}_{method}.json")))?;
            table.push_str(&format!("{seg},{method},{},{r2},{err}\n", d.n()));
        }
    }
    write_text(&out.join("fit.csv"), &table)?;
    eprintln!("fit: {} models written", data.len() * cfg.regression.methods.len());
    Ok(())
}

pub fn crossval(cfg: &RunConfig) -> Result<(), CliError> {
    // reject impossible designs before reading anything
    let experiment = cfg.experiment()?;
    let out = cfg.out_dir()?;
    let data = load_observations(cfg)?;
    let report = run_experiment(&data, &experiment)?;
    report.write_dir(out)?;
    let failed: usize = report.rows.iter().map(|r| r.failed).sum();
    eprintln!(
        "crossval: {} summary rows, {} folds, {failed} failed folds",
        report.rows.len(),
        report.folds.len()
    );
    Ok(())
}

fn grouping_name(g: Grouping) -> &'static str {
    match g {
        Grouping::Overall => "overall",
        Grouping::PerDay => "per_day",
        Grouping::PerPeriod => "per_period",
        Grouping::DailyMean => "daily_mean",
    }
}

pub fn correlate(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let data = load_observations(cfg)?;
    create_dir(out)?;
    let mut n = 0;
    for (seg, obs) in &data {
        for &g in &cfg.correlate.groupings {
            let rows = pearson_table(obs, g);
            write_text(&out.join(format!("correlation_{seg}_{}.csv", grouping_name(g))), &correlation_csv(&rows)?)?;
            n += 1;
        }
    }
    eprintln!("correlate: {n} tables written");
    Ok(())
}
