//! Tracking evaluation (CLEAR-MOT, identity metrics, track quality) and
//! detection AP.
//!
//! A sequence is evaluated into raw [`MotCounts`]; [`MotReport`] derives the
//! ratios. Several sequences aggregate by summing their counts, so the
//! aggregate weighs every sequence by its number of boxes.

mod ap;
mod clear;
mod identity;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ap::{detection_ap, interpolated_ap, pr_curve, PrCurve, AP_RECALL_POINTS};
pub use clear::{clearmot, track_quality, ClearMot, EvalAccumulator, FrameMatching};
pub use identity::{id_metrics, pair_overlaps, IdMetrics};

use crate::mot_io::{group_by_frame, AnnotationRecord};

/// IoU threshold used for evaluation unless configured otherwise.
pub const DEFAULT_EVAL_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("frame {frame}: duplicate {what} id {id}")]
    DuplicateId { what: String, frame: u32, id: u32 },
    #[error("no ground-truth boxes to evaluate against")]
    EmptyGroundTruth,
    #[error("IoU threshold {0} outside (0, 1]")]
    Threshold(f64),
}

/// Raw counts of one or more evaluated sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotCounts {
    pub gt_boxes: usize,
    pub pred_boxes: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    pub mostly_tracked: usize,
    pub partially_tracked: usize,
    pub mostly_lost: usize,
}

impl std::ops::Add for MotCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            gt_boxes: self.gt_boxes + o.gt_boxes,
            pred_boxes: self.pred_boxes + o.pred_boxes,
            true_positives: self.true_positives + o.true_positives,
            false_positives: self.false_positives + o.false_positives,
            misses: self.misses + o.misses,
            id_switches: self.id_switches + o.id_switches,
            idtp: self.idtp + o.idtp,
            idfp: self.idfp + o.idfp,
            idfn: self.idfn + o.idfn,
            mostly_tracked: self.mostly_tracked + o.mostly_tracked,
            partially_tracked: self.partially_tracked + o.partially_tracked,
            mostly_lost: self.mostly_lost + o.mostly_lost,
        }
    }
}

/// The twelve reported metrics. Ratios are fractions in `[0, 1]` (MOTA may
/// be negative); the text table shows them as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    #[serde(rename = "IDF1")]
    pub idf1: f64,
    #[serde(rename = "IDs")]
    pub ids: usize,
    #[serde(rename = "IDP")]
    pub idp: f64,
    #[serde(rename = "IDR")]
    pub idr: f64,
    #[serde(rename = "MT")]
    pub mt: usize,
    #[serde(rename = "PT")]
    pub pt: usize,
    #[serde(rename = "ML")]
    pub ml: usize,
    #[serde(rename = "Rcll")]
    pub rcll: f64,
    #[serde(rename = "Prcn")]
    pub prcn: f64,
    #[serde(rename = "MOTA")]
    pub mota: f64,
    #[serde(rename = "FP")]
    pub fp: usize,
    #[serde(rename = "FN")]
    pub fn_: usize,
}

impl MotReport {
    pub fn from_counts(c: &MotCounts) -> Result<Self, MetricsError> {
        let clear = clearmot(c.true_positives, c.false_positives, c.misses, c.id_switches, c.gt_boxes)?;
        let id = IdMetrics::from_counts(c.idtp, c.idfp, c.idfn);
        Ok(Self {
            idf1: id.idf1,
            ids: c.id_switches,
            idp: id.idp,
            idr: id.idr,
            mt: c.mostly_tracked,
            pt: c.partially_tracked,
            ml: c.mostly_lost,
            rcll: clear.recall,
            prcn: clear.precision,
            mota: clear.mota,
            fp: c.false_positives,
            fn_: c.misses,
        })
    }
}

fn check_threshold(t: f64) -> Result<(), MetricsError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::Threshold(t))
    }
}

/// Evaluates one sequence over the union of frames present in either input.
pub fn evaluate_counts(
    gt: &[AnnotationRecord],
    pred: &[AnnotationRecord],
    iou_threshold: f64,
) -> Result<MotCounts, MetricsError> {
    check_threshold(iou_threshold)?;
    let gt_frames = group_by_frame(gt);
    let pred_frames = group_by_frame(pred);
    let frames: BTreeSet<u32> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();
    let mut acc = EvalAccumulator::new(iou_threshold);
    for f in frames {
        let g = gt_frames.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let p = pred_frames.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        acc.match_frame(g, p)?;
    }
    let id = id_metrics(gt, pred, iou_threshold);
    let (mt, pt, ml) = track_quality(acc.coverage().into_values());
    Ok(MotCounts {
        gt_boxes: acc.total_gt,
        pred_boxes: acc.total_pred,
        true_positives: acc.true_positives,
        false_positives: acc.false_positives,
        misses: acc.misses,
        id_switches: acc.id_switches,
        idtp: id.idtp,
        idfp: id.idfp,
        idfn: id.idfn,
        mostly_tracked: mt,
        partially_tracked: pt,
        mostly_lost: ml,
    })
}

pub fn evaluate(
    gt: &[AnnotationRecord],
    pred: &[AnnotationRecord],
    iou_threshold: f64,
) -> Result<MotReport, MetricsError> {
    MotReport::from_counts(&evaluate_counts(gt, pred, iou_threshold)?)
}

/// Sums per-sequence counts into one report.
pub fn aggregate<'a>(counts: impl IntoIterator<Item = &'a MotCounts>) -> Result<MotReport, MetricsError> {
    let total = counts.into_iter().fold(MotCounts::default(), |a, b| a + *b);
    MotReport::from_counts(&total)
}

/// Column headers in report order.
pub const REPORT_COLUMNS: [&str; 12] = [
    "IDF1", "IDs", "IDP", "IDR", "MT", "PT", "ML", "Rcll", "Prcn", "MOTA", "FP", "FN",
];

/// Aligned plain-text table, one row per `(name, report)`. Ratios are
/// percentages with two decimals.
pub fn format_table(rows: &[(String, MotReport)]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            let pct = |v: f64| format!("{:.2}", 100.0 * v);
            vec![
                name.clone(),
                pct(r.idf1),
                r.ids.to_string(),
                pct(r.idp),
                pct(r.idr),
                r.mt.to_string(),
                r.pt.to_string(),
                r.ml.to_string(),
                pct(r.rcll),
                pct(r.prcn),
                pct(r.mota),
                r.fp.to_string(),
                r.fn_.to_string(),
            ]
        })
        .collect();
    let mut header = vec!["Sequence".to_string()];
    header.extend(REPORT_COLUMNS.iter().map(|s| s.to_string()));
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            cells
                .iter()
                .map(|r| r[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&cells) {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[i]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = widths[i]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
