//! Per-frame matching and CLEAR-MOT counts.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::MetricsError;
use crate::geometry::iou;
use crate::mot_io::AnnotationRecord;
use crate::tracker::gated_assignment;

/// Matches of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatching {
    /// `(gt_id, pred_id, iou)`, sorted by gt id.
    pub matches: Vec<(u32, u32, f64)>,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
}

/// Running CLEAR-MOT state over one sequence.
#[derive(Debug, Clone)]
pub struct EvalAccumulator {
    iou_threshold: f64,
    previous: HashMap<u32, u32>,
    last_match: HashMap<u32, u32>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
    pub total_gt: usize,
    pub total_pred: usize,
    gt_frames: BTreeMap<u32, usize>,
    gt_matched: BTreeMap<u32, usize>,
}

fn check_unique(records: &[AnnotationRecord], what: &str) -> Result<(), MetricsError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.track_id) {
            return Err(MetricsError::DuplicateId {
                what: what.to_string(),
                frame: r.frame,
                id: r.track_id,
            });
        }
    }
    Ok(())
}

impl EvalAccumulator {
    pub fn new(iou_threshold: f64) -> Self {
        Self {
            iou_threshold,
            previous: HashMap::new(),
            last_match: HashMap::new(),
            true_positives: 0,
            false_positives: 0,
            misses: 0,
            id_switches: 0,
            total_gt: 0,
            total_pred: 0,
            gt_frames: BTreeMap::new(),
            gt_matched: BTreeMap::new(),
        }
    }

    /// Matches one frame. Pairs matched in the previous frame are kept while
    /// their IoU stays at or above the threshold; the rest are assigned
    /// optimally on `1 - IoU` among pairs that clear the threshold. A gt id
    /// whose matched prediction differs from the one it was last matched to
    /// counts one identity switch.
    pub fn match_frame(
        &mut self,
        gt: &[AnnotationRecord],
        pred: &[AnnotationRecord],
    ) -> Result<FrameMatching, MetricsError> {
        check_unique(gt, "ground truth")?;
        check_unique(pred, "prediction")?;
        let mut gt: Vec<&AnnotationRecord> = gt.iter().collect();
        let mut pred: Vec<&AnnotationRecord> = pred.iter().collect();
        gt.sort_by_key(|r| r.track_id);
        pred.sort_by_key(|r| r.track_id);

        let mut matches = Vec::new();
        let mut gt_used = vec![false; gt.len()];
        let mut pred_used = vec![false; pred.len()];
        let pred_index: HashMap<u32, usize> = pred.iter().enumerate().map(|(i, r)| (r.track_id, i)).collect();
        for (gi, g) in gt.iter().enumerate() {
            if let Some(&pi) = self.previous.get(&g.track_id).and_then(|p| pred_index.get(p)) {
                let v = iou(&g.bbox, &pred[pi].bbox);
                if v >= self.iou_threshold {
                    gt_used[gi] = true;
                    pred_used[pi] = true;
                    matches.push((gi, pi, v));
                }
            }
        }

        let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
        let free_pred: Vec<usize> = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
        if !free_gt.is_empty() && !free_pred.is_empty() {
            let ious: Vec<Vec<f64>> = free_gt
                .iter()
                .map(|&g| free_pred.iter().map(|&p| iou(&gt[g].bbox, &pred[p].bbox)).collect())
                .collect();
            let cost: Vec<Vec<f64>> = ious.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
            let feasible: Vec<Vec<bool>> = ious
                .iter()
                .map(|r| r.iter().map(|&v| v >= self.iou_threshold).collect())
                .collect();
            for (r, c) in gated_assignment(&cost, &feasible).matches {
                matches.push((free_gt[r], free_pred[c], ious[r][c]));
            }
        }

        let mut out = FrameMatching::default();
        self.previous.clear();
        for &(gi, pi, v) in &matches {
            let (g, p) = (gt[gi].track_id, pred[pi].track_id);
            if let Some(&last) = self.last_match.get(&g) {
                if last != p {
                    out.id_switches += 1;
                }
            }
            self.last_match.insert(g, p);
            self.previous.insert(g, p);
            *self.gt_matched.entry(g).or_default() += 1;
            out.matches.push((g, p, v));
        }
        out.matches.sort_by_key(|m| m.0);
        for g in &gt {
            *self.gt_frames.entry(g.track_id).or_default() += 1;
        }
        out.misses = gt.len() - matches.len();
        out.false_positives = pred.len() - matches.len();

        self.true_positives += matches.len();
        self.false_positives += out.false_positives;
        self.misses += out.misses;
        self.id_switches += out.id_switches;
        self.total_gt += gt.len();
        self.total_pred += pred.len();
        Ok(out)
    }

    /// Fraction of frames each gt track was matched in, by gt id.
    pub fn coverage(&self) -> BTreeMap<u32, f64> {
        self.gt_frames
            .iter()
            .map(|(id, &n)| (*id, self.gt_matched.get(id).copied().unwrap_or(0) as f64 / n as f64))
            .collect()
    }

    pub fn clearmot(&self) -> Result<ClearMot, MetricsError> {
        clearmot(
            self.true_positives,
            self.false_positives,
            self.misses,
            self.id_switches,
            self.total_gt,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearMot {
    pub mota: f64,
    pub recall: f64,
    pub precision: f64,
    pub id_switches: usize,
    pub false_positives: usize,
    pub misses: usize,
}

/// `MOTA = 1 - (FN + FP + IDSW) / GT`, `Rcll = TP / GT`, `Prcn = TP / (TP + FP)`.
/// Precision is 0 when there are no predictions.
pub fn clearmot(tp: usize, fp: usize, misses: usize, idsw: usize, total_gt: usize) -> Result<ClearMot, MetricsError> {
    if total_gt == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let g = total_gt as f64;
    Ok(ClearMot {
        mota: 1.0 - (misses + fp + idsw) as f64 / g,
        recall: tp as f64 / g,
        precision: if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        id_switches: idsw,
        false_positives: fp,
        misses,
    })
}

/// Mostly tracked (coverage >= 0.8), partially tracked, mostly lost
/// (coverage <= 0.2).
pub fn track_quality(coverage: impl IntoIterator<Item = f64>) -> (usize, usize, usize) {
    let (mut mt, mut pt, mut ml) = (0, 0, 0);
    for c in coverage {
        if c >= 0.8 {
            mt += 1;
        } else if c <= 0.2 {
            ml += 1;
        } else {
            pt += 1;
        }
    }
    (mt, pt, ml)
}
