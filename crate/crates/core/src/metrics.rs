//! Localization (IoU) and classification (AUC) evaluation.
//!
//! IoU is computed per positive label against the ground-truth masks, at a
//! threshold validated by sweeping 101 evenly spaced values in `[0, 1]`
//! and keeping the one with the best mean IoU (ties go to the smaller
//! threshold). The sweep thresholds pixels inclusively (`value >= t`), so
//! `t = 0` selects every pixel. AUC is the Mann-Whitney pairwise ranking
//! statistic with ties counted as one half; the rank-based implementation
//! agrees exactly with the brute-force all-pairs definition.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaze_heatmap::Heatmap;
use crate::grid::BinaryMask;
use crate::labeler::LabelId;

/// Number of thresholds swept over `[0, 1]`.
pub const THRESHOLD_SWEEP_POINTS: usize = 101;

/// Intersection over union of two masks. Both-empty masks score 1 by
/// convention (documented; never reached when evaluation is restricted to
/// positive-label images, whose ground truth is non-empty).
pub fn iou(prediction: &BinaryMask, ground_truth: &BinaryMask) -> Result<f64> {
    if !prediction.same_shape(ground_truth) {
        return Err(Error::DimensionMismatch {
            expected: (prediction.width(), prediction.height()),
            got: (ground_truth.width(), ground_truth.height()),
        });
    }
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (&a, &b) in prediction.bits().iter().zip(ground_truth.bits()) {
        intersection += usize::from(a && b);
        union += usize::from(a || b);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(intersection as f64 / union as f64)
}

/// The evenly spaced sweep thresholds.
pub fn sweep_thresholds() -> Vec<f64> {
    (0..THRESHOLD_SWEEP_POINTS)
        .map(|i| i as f64 / (THRESHOLD_SWEEP_POINTS - 1) as f64)
        .collect()
}

/// Per-pair sufficient statistics for the sweep: for each threshold index,
/// the number of predicted pixels, predicted-and-true pixels, and the
/// ground-truth count. Built with the same `value >= threshold` comparison
/// the naive sweep would use, via binary search over the sorted threshold
/// array, so the aggregated curve is bit-identical to thresholding one
/// threshold at a time.
struct SweepCurve {
    predicted: Vec<u64>,
    intersect: Vec<u64>,
    gt_count: u64,
}

fn sweep_curve(heatmap: &Heatmap, gt: &BinaryMask, thresholds: &[f64]) -> Result<SweepCurve> {
    if heatmap.width() != gt.width() || heatmap.height() != gt.height() {
        return Err(Error::DimensionMismatch {
            expected: (heatmap.width(), heatmap.height()),
            got: (gt.width(), gt.height()),
        });
    }
    let n = thresholds.len();
    // A heatmap without evidence predicts nothing at any threshold (the
    // inclusive comparison would otherwise select every pixel at t = 0).
    if heatmap.max_value() == 0.0 {
        return Ok(SweepCurve {
            predicted: vec![0; n],
            intersect: vec![0; n],
            gt_count: gt.bits().iter().map(|&b| u64::from(b)).sum(),
        });
    }
    let mut predicted_diff = vec![0i64; n + 1];
    let mut intersect_diff = vec![0i64; n + 1];
    let mut gt_count = 0u64;
    for (&v, &truth) in heatmap.values().iter().zip(gt.bits()) {
        gt_count += u64::from(truth);
        // Number of thresholds t with v >= t: thresholds are ascending, so
        // this is the partition point of (v >= t).
        let count = thresholds.partition_point(|&t| v >= t);
        if count > 0 {
            predicted_diff[0] += 1;
            predicted_diff[count] -= 1;
            if truth {
                intersect_diff[0] += 1;
                intersect_diff[count] -= 1;
            }
        }
    }
    let prefix = |diff: &[i64]| {
        let mut acc = 0i64;
        diff[..n]
            .iter()
            .map(|d| {
                acc += d;
                acc as u64
            })
            .collect::<Vec<u64>>()
    };
    Ok(SweepCurve {
        predicted: prefix(&predicted_diff),
        intersect: prefix(&intersect_diff),
        gt_count,
    })
}

/// Sweeps thresholds over validation (heatmap, ground-truth) pairs and
/// returns the threshold with the best mean IoU plus that IoU. Ties break
/// toward the smaller threshold.
pub fn validate_threshold(
    heatmaps: &[Heatmap],
    ground_truths: &[BinaryMask],
    thresholds: &[f64],
) -> Result<(f64, f64)> {
    if heatmaps.is_empty() || heatmaps.len() != ground_truths.len() {
        return Err(Error::NoPositiveExamples);
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("empty threshold sweep".into()));
    }
    let mut mean_iou = vec![0.0f64; thresholds.len()];
    for (heatmap, gt) in heatmaps.iter().zip(ground_truths) {
        let curve = sweep_curve(heatmap, gt, thresholds)?;
        for (i, iou_sum) in mean_iou.iter_mut().enumerate() {
            let intersection = curve.intersect[i];
            let union = curve.predicted[i] + curve.gt_count - intersection;
            let pair_iou = if union == 0 {
                1.0
            } else {
                intersection as f64 / union as f64
            };
            *iou_sum += pair_iou;
        }
    }
    let n_pairs = heatmaps.len() as f64;
    let mut best = 0usize;
    for (i, value) in mean_iou.iter().enumerate() {
        if *value > mean_iou[best] {
            best = i;
        }
    }
    Ok((thresholds[best], mean_iou[best] / n_pairs))
}

/// Applies one sweep threshold to a heatmap with the sweep's inclusive
/// comparison. A heatmap without evidence (identically zero) predicts
/// nothing, matching [`validate_threshold`]'s treatment.
pub fn apply_validated_threshold(heatmap: &Heatmap, threshold: f64) -> BinaryMask {
    let mut mask = BinaryMask::new(heatmap.width(), heatmap.height());
    if heatmap.max_value() == 0.0 {
        return mask;
    }
    for y in 0..heatmap.height() {
        for x in 0..heatmap.width() {
            if heatmap.get(x, y) >= threshold {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Mann-Whitney AUC over scores with boolean labels. Ties count one half.
///
/// Rank-based: positives' average ranks minus the minimum possible rank
/// sum, over the number of (positive, negative) pairs. All intermediate
/// quantities are half-integers, so the result equals the brute-force
/// pairwise statistic exactly.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: (scores.len(), 1),
            got: (labels.len(), 1),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels { n_pos, n_neg });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Average ranks across tied runs (1-based ranks).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let average_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += average_rank;
            }
        }
        i = j;
    }

    let min_rank_sum = (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok((rank_sum_pos - min_rank_sum) / (n_pos as f64 * n_neg as f64))
}

/// The literal all-pairs definition of the ranking statistic; the oracle
/// the rank implementation is verified against.
pub fn auc_brute_force(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let positives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter_map(|(&s, &l)| l.then_some(s))
        .collect();
    let negatives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter_map(|(&s, &l)| (!l).then_some(s))
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::DegenerateLabels {
            n_pos: positives.len(),
            n_neg: negatives.len(),
        });
    }
    let mut sum = 0.0f64;
    for &p in &positives {
        for &n in &negatives {
            if p > n {
                sum += 1.0;
            } else if p == n {
                sum += 0.5;
            }
        }
    }
    Ok(sum / (positives.len() * negatives.len()) as f64)
}

/// A normal-approximation confidence interval over per-seed values:
/// mean +/- 1.96 * sample std / sqrt(n). Only defined for n >= 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn confidence_interval(values: &[f64]) -> Option<ConfidenceInterval> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half_width = 1.96 * (variance / n).sqrt();
    Some(ConfidenceInterval {
        mean,
        lower: mean - half_width,
        upper: mean + half_width,
    })
}

/// Macro summary over per-label values: the unweighted mean of present
/// entries, with absent labels listed separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroSummary {
    pub mean: Option<f64>,
    pub n_labels: usize,
    pub absent: Vec<LabelId>,
}

pub fn summarize(per_label: &BTreeMap<LabelId, Option<f64>>) -> MacroSummary {
    let mut absent = Vec::new();
    let mut values = Vec::new();
    for (label, value) in per_label {
        match value {
            Some(v) => values.push(*v),
            None => absent.push(label.clone()),
        }
    }
    MacroSummary {
        mean: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
        n_labels: values.len(),
        absent,
    }
}

/// One label's localization result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IoUEntry {
    pub best_threshold: f64,
    pub iou: f64,
    pub n_positives: usize,
}

/// One label's classification result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucEntry {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}
