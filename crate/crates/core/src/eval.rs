//! Depth evaluation: scale/shift alignment, per-image metrics, point-cloud
//! F-score, and cross-dataset summary metrics.
//!
//! Monocular predictions are only defined up to an affine transform of
//! disparity, so evaluation first aligns predictions to ground truth with a
//! closed-form least-squares fit in disparity space, then measures errors in
//! depth space. Metrics are reported as percentages.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Intrinsics;
use crate::depth::DepthMap;
use crate::grid::pixel_center;
use crate::image::BoolMask;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction shape {pred_h}x{pred_w} does not match ground truth {gt_h}x{gt_w}")]
    ShapeMismatch {
        pred_h: usize,
        pred_w: usize,
        gt_h: usize,
        gt_w: usize,
    },
    #[error("no valid pixels under the combined mask")]
    NoValidPixels,
    #[error("alignment needs at least two valid pixels with distinct ground-truth values")]
    DegenerateGroundTruth,
    #[error("point cloud is empty ({side})")]
    EmptyCloud { side: &'static str },
    #[error("metric table value for method {method} column {column} is not finite")]
    MissingValue { method: usize, column: usize },
    #[error("baseline value in column {column} is zero")]
    ZeroBaseline { column: usize },
    #[error("table has no {what}")]
    EmptyTable { what: &'static str },
    #[error("row {row} has {got} values, table has {expected} columns")]
    RowLengthMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("baseline index {index} out of range for {methods} methods")]
    BaselineOutOfRange { index: usize, methods: usize },
}

/// Aligned disparities are clamped below at this value before inversion, so
/// negative fitted disparities do not produce invalid depths.
pub const ALIGN_EPS: f64 = 1e-6;

/// Threshold for the default delta accuracy.
pub const DELTA_THRESHOLD: f64 = 1.25;

/// Default F-score correctness threshold in scene units.
pub const FSCORE_THRESHOLD: f64 = 0.10;

/// Point count above which the F-score switches to the grid-accelerated
/// neighbor search. Both paths return identical results.
const FSCORE_BRUTE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentSpace {
    Disparity,
}

/// Scale and shift mapping predicted disparities onto ground-truth disparity,
/// with the mean squared residual of the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub scale: f64,
    pub shift: f64,
    /// Mean squared disparity residual over the fitted pixels.
    pub residual: f64,
    pub space: AlignmentSpace,
    /// True when the least-squares system was degenerate (all predictions
    /// equal) and the fit fell back to median scaling.
    pub fallback_median: bool,
}

fn check_shapes(pred: &DepthMap, gt: &DepthMap, mask: &BoolMask) -> Result<(), EvalError> {
    if pred.height() != gt.height()
        || pred.width() != gt.width()
        || mask.height() != gt.height()
        || mask.width() != gt.width()
    {
        return Err(EvalError::ShapeMismatch {
            pred_h: pred.height(),
            pred_w: pred.width(),
            gt_h: gt.height(),
            gt_w: gt.width(),
        });
    }
    Ok(())
}

/// Pixels where the mask, both validity masks, and `gt > 0` all hold.
fn joint_valid(pred: &DepthMap, gt: &DepthMap, mask: &BoolMask, r: usize, c: usize) -> bool {
    mask.get(r, c) && pred.is_valid(r, c) && gt.is_valid(r, c) && gt.get(r, c) > 0.0
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-squares fit of `scale * pred + shift` to ground-truth disparity
/// (`1 / gt`) over valid pixels, via the centered 2x2 normal equations.
///
/// `pred` holds disparities in arbitrary affine units; entries under invalid
/// or masked-out pixels are ignored, as are pixels with nonpositive ground
/// truth. When every fitted prediction is (numerically) identical the system
/// has no unique solution and the fit falls back to median scaling, flagged in
/// the result.
pub fn align_lstsq(
    pred: &[f64],
    gt: &DepthMap,
    mask: &BoolMask,
) -> Result<AlignmentResult, EvalError> {
    let (h, w) = (gt.height(), gt.width());
    assert_eq!(pred.len(), h * w, "prediction length mismatch");
    assert_eq!(
        (mask.height(), mask.width()),
        (h, w),
        "mask shape mismatch"
    );

    let mut ps = Vec::new();
    let mut ds = Vec::new();
    let mut gt_min = f64::INFINITY;
    let mut gt_max = f64::NEG_INFINITY;
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) && gt.is_valid(r, c) && gt.get(r, c) > 0.0 {
                let g = gt.get(r, c);
                ps.push(pred[r * w + c]);
                ds.push(1.0 / g);
                gt_min = gt_min.min(g);
                gt_max = gt_max.max(g);
            }
        }
    }
    if ps.len() < 2 || gt_min == gt_max {
        return Err(EvalError::DegenerateGroundTruth);
    }

    let n = ps.len() as f64;
    let mean_p = ps.iter().sum::<f64>() / n;
    let mean_d = ds.iter().sum::<f64>() / n;
    let spread = ps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
        (lo.min(p), hi.max(p))
    });
    let degenerate = spread.1 - spread.0 <= 1e-12 * spread.1.abs().max(spread.0.abs()).max(1e-12);

    let (scale, shift, fallback_median) = if degenerate {
        // Constant predictions: match the medians instead.
        let med_p = median(&mut ps.clone());
        let med_d = median(&mut ds.clone());
        if med_p.abs() > 1e-12 {
            (med_d / med_p, 0.0, true)
        } else {
            (0.0, med_d, true)
        }
    } else {
        let var_p: f64 = ps.iter().map(|p| (p - mean_p).powi(2)).sum();
        let cov: f64 = ps
            .iter()
            .zip(&ds)
            .map(|(p, d)| (p - mean_p) * (d - mean_d))
            .sum();
        let scale = cov / var_p;
        (scale, mean_d - scale * mean_p, false)
    };

    let residual = ps
        .iter()
        .zip(&ds)
        .map(|(p, d)| (scale * p + shift - d).powi(2))
        .sum::<f64>()
        / n;
    Ok(AlignmentResult {
        scale,
        shift,
        residual,
        space: AlignmentSpace::Disparity,
        fallback_median,
    })
}

/// Depth map from aligned disparities: `1 / max(scale * pred + shift, eps)`.
/// Also returns how many pixels hit the clamp.
pub fn aligned_depth(
    pred: &[f64],
    height: usize,
    width: usize,
    alignment: &AlignmentResult,
) -> (DepthMap, usize) {
    assert_eq!(pred.len(), height * width, "prediction length mismatch");
    let mut clamped = 0;
    let values = pred
        .iter()
        .map(|&p| {
            let d = alignment.scale * p + alignment.shift;
            if d < ALIGN_EPS {
                clamped += 1;
            }
            1.0 / d.max(ALIGN_EPS)
        })
        .collect();
    (
        DepthMap::new(height, width, values).expect("clamped disparities invert to positive depth"),
        clamped,
    )
}

/// Mean absolute relative depth error over valid pixels, in percent.
pub fn abs_rel(pred: &DepthMap, gt: &DepthMap, mask: &BoolMask) -> Result<f64, EvalError> {
    check_shapes(pred, gt, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..gt.height() {
        for c in 0..gt.width() {
            if joint_valid(pred, gt, mask, r, c) {
                let g = gt.get(r, c);
                sum += (g - pred.get(r, c)).abs() / g;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(EvalError::NoValidPixels);
    }
    Ok(100.0 * sum / count as f64)
}

/// Fraction of valid pixels whose depth ratio `max(pred/gt, gt/pred)` lies
/// strictly below `threshold`, in percent.
pub fn delta_acc(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: &BoolMask,
    threshold: f64,
) -> Result<f64, EvalError> {
    check_shapes(pred, gt, mask)?;
    let mut hits = 0usize;
    let mut count = 0usize;
    for r in 0..gt.height() {
        for c in 0..gt.width() {
            if joint_valid(pred, gt, mask, r, c) {
                count += 1;
                let (p, g) = (pred.get(r, c), gt.get(r, c));
                if p > 0.0 && (p / g).max(g / p) < threshold {
                    hits += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(EvalError::NoValidPixels);
    }
    Ok(100.0 * hits as f64 / count as f64)
}

/// Median-scale-aligned absolute relative error, in percent: the prediction is
/// rescaled by `median(gt) / median(pred)` over valid pixels first. Useful
/// when predictions are correct only up to a global scale.
pub fn median_aligned_abs_rel(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: &BoolMask,
) -> Result<f64, EvalError> {
    check_shapes(pred, gt, mask)?;
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for r in 0..gt.height() {
        for c in 0..gt.width() {
            if joint_valid(pred, gt, mask, r, c) && pred.get(r, c) > 0.0 {
                preds.push(pred.get(r, c));
                gts.push(gt.get(r, c));
            }
        }
    }
    if preds.is_empty() {
        return Err(EvalError::NoValidPixels);
    }
    let scale = median(&mut gts.clone()) / median(&mut preds.clone());
    let sum: f64 = preds
        .iter()
        .zip(&gts)
        .map(|(p, g)| (g - scale * p).abs() / g)
        .sum();
    Ok(100.0 * sum / preds.len() as f64)
}

fn cloud(depth: &DepthMap, k: &Intrinsics) -> Vec<[f64; 3]> {
    let mut points = Vec::new();
    for r in 0..depth.height() {
        for c in 0..depth.width() {
            if depth.is_valid(r, c) && depth.get(r, c) > 0.0 {
                let (u, v) = pixel_center(r, c);
                let ray = k.ray(u, v);
                let z = depth.get(r, c);
                points.push([ray[0] * z, ray[1] * z, z]);
            }
        }
    }
    points
}

#[inline]
fn dist_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Fraction of `from` points lying within `threshold` of some `to` point,
/// by exhaustive nearest-neighbor search.
fn match_fraction_brute(from: &[[f64; 3]], to: &[[f64; 3]], threshold: f64) -> f64 {
    let t2 = threshold * threshold;
    let matched = from
        .iter()
        .filter(|&&p| to.iter().any(|&q| dist_sq(p, q) <= t2))
        .count();
    matched as f64 / from.len() as f64
}

/// Same fraction via a uniform grid with cell size `threshold`: any point
/// within the threshold of `p` lies in one of the 27 cells around `p`'s cell,
/// so the search is exact.
fn match_fraction_grid(from: &[[f64; 3]], to: &[[f64; 3]], threshold: f64) -> f64 {
    let t2 = threshold * threshold;
    let cell = |p: [f64; 3]| {
        [
            (p[0] / threshold).floor() as i64,
            (p[1] / threshold).floor() as i64,
            (p[2] / threshold).floor() as i64,
        ]
    };
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, &q) in to.iter().enumerate() {
        buckets.entry(cell(q)).or_default().push(i);
    }
    let matched = from
        .iter()
        .filter(|&&p| {
            let c = cell(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(bucket) = buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            if bucket.iter().any(|&i| dist_sq(p, to[i]) <= t2) {
                                return true;
                            }
                        }
                    }
                }
            }
            false
        })
        .count();
    matched as f64 / from.len() as f64
}

fn match_fraction(from: &[[f64; 3]], to: &[[f64; 3]], threshold: f64) -> f64 {
    if from.len().max(to.len()) <= FSCORE_BRUTE_LIMIT {
        match_fraction_brute(from, to, threshold)
    } else {
        match_fraction_grid(from, to, threshold)
    }
}

/// Point-cloud reconstruction F-score in percent: both maps are backprojected
/// through `k`, precision is the fraction of predicted points within
/// `threshold` of a ground-truth point, recall the symmetric fraction, and
/// `F = 2PR / (P + R)` (zero when both are zero).
pub fn fscore(
    pred: &DepthMap,
    gt: &DepthMap,
    k: &Intrinsics,
    threshold: f64,
) -> Result<f64, EvalError> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(EvalError::ShapeMismatch {
            pred_h: pred.height(),
            pred_w: pred.width(),
            gt_h: gt.height(),
            gt_w: gt.width(),
        });
    }
    let pred_cloud = cloud(pred, k);
    let gt_cloud = cloud(gt, k);
    if pred_cloud.is_empty() {
        return Err(EvalError::EmptyCloud { side: "prediction" });
    }
    if gt_cloud.is_empty() {
        return Err(EvalError::EmptyCloud {
            side: "ground truth",
        });
    }
    let precision = match_fraction(&pred_cloud, &gt_cloud, threshold);
    let recall = match_fraction(&gt_cloud, &pred_cloud, threshold);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// One table column: a (dataset, metric) pair and its better-direction flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricColumn {
    pub dataset: String,
    pub metric: String,
    pub lower_is_better: bool,
}

/// Methods x (dataset, metric) table of results, the input to the summary
/// metrics. Values are stored row-major, one row per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    methods: Vec<String>,
    columns: Vec<MetricColumn>,
    values: Vec<Vec<f64>>,
}

impl MetricTable {
    pub fn new(
        methods: Vec<String>,
        columns: Vec<MetricColumn>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, EvalError> {
        if methods.is_empty() {
            return Err(EvalError::EmptyTable { what: "methods" });
        }
        if columns.is_empty() {
            return Err(EvalError::EmptyTable { what: "columns" });
        }
        if values.len() != methods.len() {
            return Err(EvalError::RowLengthMismatch {
                row: values.len(),
                got: values.len(),
                expected: methods.len(),
            });
        }
        for (row, vals) in values.iter().enumerate() {
            if vals.len() != columns.len() {
                return Err(EvalError::RowLengthMismatch {
                    row,
                    got: vals.len(),
                    expected: columns.len(),
                });
            }
        }
        Ok(Self {
            methods,
            columns,
            values,
        })
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn columns(&self) -> &[MetricColumn] {
        &self.columns
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn get(&self, method: usize, column: usize) -> f64 {
        self.values[method][column]
    }

    fn check_finite(&self) -> Result<(), EvalError> {
        for (method, row) in self.values.iter().enumerate() {
            for (column, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(EvalError::MissingValue { method, column });
                }
            }
        }
        Ok(())
    }
}

/// Average ordinal rank per method: within each column methods are ranked
/// 1..n, best first according to the column's direction flag, ties receiving
/// the average of the positions they span; ranks are then averaged across
/// columns.
pub fn rank(table: &MetricTable) -> Result<Vec<f64>, EvalError> {
    table.check_finite()?;
    let n = table.methods.len();
    let mut totals = vec![0.0; n];
    for (ci, column) in table.columns.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (va, vb) = (table.get(a, ci), table.get(b, ci));
            if column.lower_is_better {
                va.partial_cmp(&vb).expect("finite values")
            } else {
                vb.partial_cmp(&va).expect("finite values")
            }
        });
        // Walk runs of equal values; each run shares the mean of its positions.
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && table.get(order[j + 1], ci) == table.get(order[i], ci) {
                j += 1;
            }
            let shared = (i + 1 + j + 1) as f64 / 2.0;
            for &m in &order[i..=j] {
                totals[m] += shared;
            }
            i = j + 1;
        }
    }
    let c = table.columns.len() as f64;
    Ok(totals.into_iter().map(|t| t / c).collect())
}

/// Mean signed relative change versus the baseline row, in percent: each
/// column contributes `(-1)^l * (M - M0) / M0 * 100` with `l = 1` for
/// lower-is-better columns, so positive output always means improvement.
pub fn improvement(table: &MetricTable, baseline: usize) -> Result<Vec<f64>, EvalError> {
    table.check_finite()?;
    if baseline >= table.methods.len() {
        return Err(EvalError::BaselineOutOfRange {
            index: baseline,
            methods: table.methods.len(),
        });
    }
    for (column, _) in table.columns.iter().enumerate() {
        if table.get(baseline, column) == 0.0 {
            return Err(EvalError::ZeroBaseline { column });
        }
    }
    let c = table.columns.len() as f64;
    Ok((0..table.methods.len())
        .map(|m| {
            table
                .columns
                .iter()
                .enumerate()
                .map(|(ci, column)| {
                    let m0 = table.get(baseline, ci);
                    let sign = if column.lower_is_better { -1.0 } else { 1.0 };
                    sign * (table.get(m, ci) - m0) / m0 * 100.0
                })
                .sum::<f64>()
                / c
        })
        .collect())
}
