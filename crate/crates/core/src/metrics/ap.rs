//! Detection average precision.

use std::collections::HashMap;

use super::MetricsError;
use crate::geometry::iou;
use crate::mot_io::AnnotationRecord;

/// Number of recall sample points.
pub const AP_RECALL_POINTS: usize = 101;

/// Precision/recall after each prediction, in score-descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Greedy matching in descending score order: each prediction takes the
/// unmatched gt box of its frame with the highest IoU, if that IoU is at
/// least `iou_threshold`. Ties in score keep input order.
pub fn pr_curve(
    gt: &[AnnotationRecord],
    pred: &[AnnotationRecord],
    iou_threshold: f64,
) -> Result<PrCurve, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let mut by_frame: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, g) in gt.iter().enumerate() {
        by_frame.entry(g.frame).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].confidence.total_cmp(&pred[a].confidence));
    let mut used = vec![false; gt.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = PrCurve {
        precision: Vec::with_capacity(pred.len()),
        recall: Vec::with_capacity(pred.len()),
    };
    for i in order {
        let p = &pred[i];
        let mut best: Option<(usize, f64)> = None;
        for &g in by_frame.get(&p.frame).map(Vec::as_slice).unwrap_or(&[]) {
            if used[g] {
                continue;
            }
            let v = iou(&gt[g].bbox, &p.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                used[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.precision.push(tp as f64 / (tp + fp) as f64);
        curve.recall.push(tp as f64 / gt.len() as f64);
    }
    Ok(curve)
}

/// Mean of the interpolated precision at recall 0, 0.01, ..., 1, where the
/// interpolated precision at `r` is the best precision reached at recall
/// `>= r`.
pub fn interpolated_ap(curve: &PrCurve) -> f64 {
    let mut envelope = curve.precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..AP_RECALL_POINTS {
        let r = k as f64 / (AP_RECALL_POINTS - 1) as f64;
        // recall values are non-decreasing
        let idx = curve.recall.partition_point(|&x| x < r - 1e-12);
        if idx < envelope.len() {
            sum += envelope[idx];
        }
    }
    sum / AP_RECALL_POINTS as f64
}

/// Average precision at `iou_threshold` (0.5 for AP50). Predictions carry
/// their score in `confidence`.
pub fn detection_ap(
    gt: &[AnnotationRecord],
    pred: &[AnnotationRecord],
    iou_threshold: f64,
) -> Result<f64, MetricsError> {
    Ok(interpolated_ap(&pr_curve(gt, pred, iou_threshold)?))
}
