//! Identity metrics from one global gt/pred trajectory pairing.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::geometry::iou;
use crate::mot_io::{group_by_frame, AnnotationRecord};
use crate::tracker::hungarian;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdMetrics {
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl IdMetrics {
    /// Ratios from raw counts; each is 0 when its denominator is 0.
    pub fn from_counts(idtp: usize, idfp: usize, idfn: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Self {
            idf1: ratio(2 * idtp, 2 * idtp + idfp + idfn),
            idp: ratio(idtp, idtp + idfp),
            idr: ratio(idtp, idtp + idfn),
            idtp,
            idfp,
            idfn,
        }
    }
}

/// Number of frames in which each (gt id, pred id) pair overlaps with IoU at
/// or above `iou_threshold`.
pub fn pair_overlaps(
    gt: &[AnnotationRecord],
    pred: &[AnnotationRecord],
    iou_threshold: f64,
) -> BTreeMap<(u32, u32), usize> {
    let pred_frames = group_by_frame(pred);
    let mut out = BTreeMap::new();
    for (frame, gts) in group_by_frame(gt) {
        let Some(preds) = pred_frames.get(&frame) else { continue };
        for g in &gts {
            for p in preds {
                if iou(&g.bbox, &p.bbox) >= iou_threshold {
                    *out.entry((g.track_id, p.track_id)).or_default() += 1;
                }
            }
        }
    }
    out
}

/// Pairs gt and pred trajectories so that the total number of overlapping
/// frames is maximal, which minimizes IDFP + IDFN. Unpaired detections count
/// as IDFP, unpaired gt boxes as IDFN.
pub fn id_metrics(gt: &[AnnotationRecord], pred: &[AnnotationRecord], iou_threshold: f64) -> IdMetrics {
    let mut gt_ids: Vec<u32> = gt.iter().map(|r| r.track_id).collect();
    let mut pred_ids: Vec<u32> = pred.iter().map(|r| r.track_id).collect();
    gt_ids.sort_unstable();
    gt_ids.dedup();
    pred_ids.sort_unstable();
    pred_ids.dedup();
    let overlaps = pair_overlaps(gt, pred, iou_threshold);
    let idtp = if gt_ids.is_empty() || pred_ids.is_empty() {
        0
    } else {
        let cost: Vec<Vec<f64>> = gt_ids
            .iter()
            .map(|g| {
                pred_ids
                    .iter()
                    .map(|p| -(overlaps.get(&(*g, *p)).copied().unwrap_or(0) as f64))
                    .collect()
            })
            .collect();
        let a = hungarian(&cost).expect("finite rectangular cost");
        a.pairs()
            .map(|(r, c)| overlaps.get(&(gt_ids[r], pred_ids[c])).copied().unwrap_or(0))
            .sum()
    };
    IdMetrics::from_counts(idtp, pred.len() - idtp, gt.len() - idtp)
}
