//! Score prediction directories against ground-truth depth. Predictions and
//! ground truth pair up by file stem; each method's maps are evaluated in
//! parallel and aggregated into a ranked comparison.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use photodepth::depth::DepthMap;
use photodepth::eval::{
    abs_rel, align_lstsq, aligned_depth, delta_acc, fscore, improvement, rank, MetricColumn,
    MetricTable,
};
use photodepth::image::BoolMask;
use photodepth::Intrinsics;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AlignmentMode, AppConfig, EvalConfig};
use crate::{io, CliError};

struct ImageMetrics {
    abs_rel: f64,
    delta_acc: f64,
    fscore: Option<f64>,
    scale: f64,
    shift: f64,
    residual: Option<f64>,
    fallback_median: bool,
    clamped: usize,
}

/// Flat clone of [`ImageMetrics`] with the identifying columns up front; the
/// CSV serializer cannot flatten nested structs.
#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    image: &'a str,
    abs_rel: f64,
    delta_acc: f64,
    fscore: Option<f64>,
    scale: f64,
    shift: f64,
    residual: Option<f64>,
    fallback_median: bool,
    clamped: usize,
}

#[derive(Serialize)]
struct MethodSummary {
    images: usize,
    abs_rel: f64,
    delta_acc: f64,
    fscore: Option<f64>,
}

#[derive(Serialize)]
struct EvalSummary {
    alignment: AlignmentMode,
    delta_threshold: f64,
    fscore_threshold: f64,
    images: Vec<String>,
    methods: Vec<String>,
    aggregates: BTreeMap<String, MethodSummary>,
    /// Mean ordinal rank across metrics; absent for a single method.
    mean_rank: Option<BTreeMap<String, f64>>,
    /// Mean signed relative gain over the first method, percent; absent for a
    /// single method or when a baseline metric is exactly zero.
    improvement_over_baseline: Option<BTreeMap<String, f64>>,
}

/// Sorted stems of the `.fmap` files directly inside `dir`.
fn fmap_stems(dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?
            .path();
        if path.extension().and_then(|e| e.to_str()) == Some("fmap") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn eval_err(method: &str, image: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{method}/{image}: {e}"))
}

/// Least-squares protocol: predictions are affine-ambiguous disparities,
/// mapped onto ground-truth inverse depth before scoring.
fn score_lstsq(
    pred: &io::FloatMap,
    gt: &DepthMap,
    k: Option<&Intrinsics>,
    cfg: &EvalConfig,
) -> Result<ImageMetrics, photodepth::eval::EvalError> {
    let finite: Vec<bool> = pred.values.iter().map(|v| v.is_finite()).collect();
    let mask = BoolMask::new(pred.height, pred.width, finite);
    let alignment = align_lstsq(&pred.values, gt, &mask)?;
    let (aligned, clamped) = aligned_depth(&pred.values, pred.height, pred.width, &alignment);
    Ok(ImageMetrics {
        abs_rel: abs_rel(&aligned, gt, &mask)?,
        delta_acc: delta_acc(&aligned, gt, &mask, cfg.delta_threshold)?,
        fscore: k
            .map(|k| fscore(&aligned, gt, k, cfg.fscore_threshold))
            .transpose()?,
        scale: alignment.scale,
        shift: alignment.shift,
        residual: Some(alignment.residual),
        fallback_median: alignment.fallback_median,
        clamped,
    })
}

/// Median protocol: predictions are scale-ambiguous depths, rescaled by the
/// ratio of medians over jointly valid pixels.
fn score_median(
    pred: &io::FloatMap,
    gt: &DepthMap,
    k: Option<&Intrinsics>,
    cfg: &EvalConfig,
) -> Result<ImageMetrics, photodepth::eval::EvalError> {
    let valid: Vec<bool> = pred
        .values
        .iter()
        .map(|&v| v > 0.0 && v.is_finite())
        .collect();
    let mask = BoolMask::new(pred.height, pred.width, valid);
    let pred_depth = DepthMap::with_mask(pred.height, pred.width, pred.values.clone(), mask)
        .expect("mask admits only positive finite entries");

    let mut ps = Vec::new();
    let mut gs = Vec::new();
    for r in 0..gt.height() {
        for c in 0..gt.width() {
            if pred_depth.is_valid(r, c) && gt.is_valid(r, c) && gt.get(r, c) > 0.0 {
                ps.push(pred_depth.get(r, c));
                gs.push(gt.get(r, c));
            }
        }
    }
    if ps.is_empty() {
        return Err(photodepth::eval::EvalError::NoValidPixels);
    }
    let scale = median(gs) / median(ps);

    let scaled_values: Vec<f64> = pred_depth
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (r, c) = (i / pred.width, i % pred.width);
            if pred_depth.is_valid(r, c) {
                v * scale
            } else {
                0.0
            }
        })
        .collect();
    let mask = pred_depth
        .validity()
        .cloned()
        .unwrap_or_else(|| BoolMask::all_true(pred.height, pred.width));
    let scaled = DepthMap::with_mask(pred.height, pred.width, scaled_values, mask)
        .expect("positive scale preserves validity");

    let all = BoolMask::all_true(gt.height(), gt.width());
    Ok(ImageMetrics {
        abs_rel: abs_rel(&scaled, gt, &all)?,
        delta_acc: delta_acc(&scaled, gt, &all, cfg.delta_threshold)?,
        fscore: k
            .map(|k| fscore(&scaled, gt, k, cfg.fscore_threshold))
            .transpose()?,
        scale,
        shift: 0.0,
        residual: None,
        fallback_median: false,
        clamped: 0,
    })
}

fn evaluate_image(
    method: &str,
    stem: &str,
    pred_dir: &Path,
    gt_dir: &Path,
    k: Option<&Intrinsics>,
    cfg: &EvalConfig,
) -> Result<ImageMetrics, CliError> {
    let gt = io::read_depth_fmap(&gt_dir.join(format!("{stem}.fmap")))?;
    let pred_path = pred_dir.join(format!("{stem}.fmap"));
    let pred = io::read_fmap(&pred_path)?;
    if pred.channels != 1 {
        return Err(eval_err(
            method,
            stem,
            format!("prediction must have 1 channel, found {}", pred.channels),
        ));
    }
    if (pred.height, pred.width) != (gt.height(), gt.width()) {
        return Err(eval_err(
            method,
            stem,
            format!(
                "prediction is {}x{} but ground truth is {}x{}",
                pred.height,
                pred.width,
                gt.height(),
                gt.width()
            ),
        ));
    }
    match cfg.alignment {
        AlignmentMode::Lstsq => score_lstsq(&pred, &gt, k, cfg),
        AlignmentMode::Median => score_median(&pred, &gt, k, cfg),
    }
    .map_err(|e| eval_err(method, stem, e))
}

pub fn run(
    preds: &[PathBuf],
    gt_dir: &Path,
    intrinsics: Option<&Path>,
    config: &AppConfig,
    out: &Path,
    jobs: usize,
) -> Result<(), CliError> {
    let stems = fmap_stems(gt_dir)?;
    if stems.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no .fmap ground-truth maps found",
            gt_dir.display()
        )));
    }

    let methods: Vec<String> = preds.iter().map(|p| p.display().to_string()).collect();
    for (i, name) in methods.iter().enumerate() {
        if methods[..i].contains(name) {
            return Err(CliError::Input(format!(
                "prediction directory {name} given more than once"
            )));
        }
    }

    // Every ground-truth stem must be predicted by every method; partial
    // coverage would silently skew the comparison.
    let mut missing = Vec::new();
    for (dir, method) in preds.iter().zip(&methods) {
        for stem in &stems {
            let path = dir.join(format!("{stem}.fmap"));
            if !path.is_file() {
                missing.push(format!("{method}/{stem}.fmap"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Input(format!(
            "missing predictions: {}",
            missing.join(", ")
        )));
    }

    let k = match intrinsics {
        Some(path) => Some(io::read_intrinsics_json(path)?),
        None => {
            let fallback = gt_dir.join("intrinsics.json");
            if fallback.is_file() {
                Some(io::read_intrinsics_json(&fallback)?)
            } else {
                None
            }
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Input(format!("worker pool: {e}")))?;

    let mut per_method: Vec<Vec<ImageMetrics>> = Vec::with_capacity(preds.len());
    for (dir, method) in preds.iter().zip(&methods) {
        let rows: Result<Vec<ImageMetrics>, CliError> = pool.install(|| {
            stems
                .par_iter()
                .map(|stem| {
                    evaluate_image(method, stem, dir, gt_dir, k.as_ref(), &config.eval)
                })
                .collect()
        });
        per_method.push(rows?);
    }

    let mut writer = io::csv_writer(&out.join("per_image.csv"))?;
    for (method, rows) in methods.iter().zip(&per_method) {
        for (stem, metrics) in stems.iter().zip(rows) {
            writer
                .serialize(CsvRow {
                    method,
                    image: stem,
                    abs_rel: metrics.abs_rel,
                    delta_acc: metrics.delta_acc,
                    fscore: metrics.fscore,
                    scale: metrics.scale,
                    shift: metrics.shift,
                    residual: metrics.residual,
                    fallback_median: metrics.fallback_median,
                    clamped: metrics.clamped,
                })
                .map_err(|e| CliError::Input(format!("per_image.csv: {e}")))?;
        }
    }
    writer
        .flush()
        .map_err(|e| CliError::Input(format!("per_image.csv: {e}")))?;

    let n = stems.len() as f64;
    let mut aggregates = BTreeMap::new();
    let mut agg_rows = Vec::new();
    for (method, rows) in methods.iter().zip(&per_method) {
        let mean_abs_rel = rows.iter().map(|m| m.abs_rel).sum::<f64>() / n;
        let mean_delta = rows.iter().map(|m| m.delta_acc).sum::<f64>() / n;
        let mean_fscore = k
            .as_ref()
            .map(|_| rows.iter().map(|m| m.fscore.expect("scored with intrinsics")).sum::<f64>() / n);
        agg_rows.push((mean_abs_rel, mean_delta, mean_fscore));
        aggregates.insert(
            method.clone(),
            MethodSummary {
                images: stems.len(),
                abs_rel: mean_abs_rel,
                delta_acc: mean_delta,
                fscore: mean_fscore,
            },
        );
    }

    let (mean_rank, improvement_over_baseline) = if methods.len() >= 2 {
        let dataset = gt_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "gt".to_string());
        let column = |metric: &str, lower: bool| MetricColumn {
            dataset: dataset.clone(),
            metric: metric.to_string(),
            lower_is_better: lower,
        };
        let mut columns = vec![column("abs_rel", true), column("delta_acc", false)];
        if k.is_some() {
            columns.push(column("fscore", false));
        }
        let values: Vec<Vec<f64>> = agg_rows
            .iter()
            .map(|(a, d, f)| {
                let mut row = vec![*a, *d];
                row.extend(f.iter());
                row
            })
            .collect();
        let table = MetricTable::new(methods.clone(), columns, values)
            .map_err(|e| CliError::Input(format!("metric table: {e}")))?;
        let ranks = rank(&table).map_err(|e| CliError::Input(format!("ranking: {e}")))?;
        let to_map = |vals: Vec<f64>| -> BTreeMap<String, f64> {
            methods.iter().cloned().zip(vals).collect()
        };
        // A zero baseline column (e.g. a perfect method with abs_rel 0) has
        // no well-defined relative improvement; omit the block instead.
        let gains = improvement(&table, 0).ok().map(to_map);
        (Some(to_map(ranks)), gains)
    } else {
        (None, None)
    };

    let summary = EvalSummary {
        alignment: config.eval.alignment,
        delta_threshold: config.eval.delta_threshold,
        fscore_threshold: config.eval.fscore_threshold,
        images: stems.clone(),
        methods: methods.clone(),
        aggregates,
        mean_rank,
        improvement_over_baseline,
    };
    io::write_json(&out.join("summary.json"), &summary)?;

    for method in &methods {
        let agg = &summary.aggregates[method];
        match agg.fscore {
            Some(f) => println!(
                "{method}: abs_rel {:.4} delta {:.2} fscore {:.2} over {} images",
                agg.abs_rel, agg.delta_acc, f, agg.images
            ),
            None => println!(
                "{method}: abs_rel {:.4} delta {:.2} over {} images",
                agg.abs_rel, agg.delta_acc, agg.images
            ),
        }
    }
    Ok(())
}
