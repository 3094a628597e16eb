//! IoU (optionally embedding-blended) association and the two-stage
//! high/low score variant.

use super::hungarian::hungarian;
use super::{Detection, TrackState, TrackStatus, TrackerConfig, TrackerMode};
use crate::geometry::{iou, BBox};

/// Cost given to infeasible pairs. It exceeds any feasible cost by far, so
/// the optimum first maximizes the number of feasible pairs and then
/// minimizes their total cost.
pub const GATE_COST: f64 = 1e6;

/// Indices into the track and detection slices passed in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssociationResult {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Optimal assignment restricted to `feasible` pairs.
pub fn gated_assignment(cost: &[Vec<f64>], feasible: &[Vec<bool>]) -> AssociationResult {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let gated: Vec<Vec<f64>> = cost
        .iter()
        .zip(feasible)
        .map(|(c, f)| {
            c.iter()
                .zip(f)
                .map(|(&c, &ok)| if ok { c } else { GATE_COST })
                .collect()
        })
        .collect();
    let assignment = hungarian(&gated).expect("gated costs are finite and rectangular");
    let mut matches = Vec::new();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for (r, c) in assignment.pairs() {
        if feasible[r][c] {
            matches.push((r, c));
            row_used[r] = true;
            col_used[c] = true;
        }
    }
    AssociationResult {
        matches,
        unmatched_tracks: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_detections: (0..cols).filter(|&c| !col_used[c]).collect(),
    }
}

/// `1 - IoU` for every (track box, detection box) pair.
pub fn iou_cost(tracks: &[BBox], detections: &[BBox]) -> Vec<Vec<f64>> {
    tracks
        .iter()
        .map(|t| detections.iter().map(|d| 1.0 - iou(t, d)).collect())
        .collect()
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Matches a subset of tracks against a subset of detections and maps the
/// result back to the caller's indices.
fn match_subset(
    tracks: &[TrackState],
    track_idx: &[usize],
    detections: &[Detection],
    det_idx: &[usize],
    cfg: &TrackerConfig,
    use_embeddings: bool,
) -> AssociationResult {
    if track_idx.is_empty() || det_idx.is_empty() {
        return AssociationResult {
            matches: Vec::new(),
            unmatched_tracks: track_idx.to_vec(),
            unmatched_detections: det_idx.to_vec(),
        };
    }
    let boxes: Vec<BBox> = track_idx.iter().map(|&i| tracks[i].predicted_bbox()).collect();
    let mut cost = Vec::with_capacity(track_idx.len());
    let mut feasible = Vec::with_capacity(track_idx.len());
    for (row, &ti) in track_idx.iter().enumerate() {
        let mut c = Vec::with_capacity(det_idx.len());
        let mut f = Vec::with_capacity(det_idx.len());
        for &di in det_idx {
            let det = &detections[di];
            let overlap = iou(&boxes[row], &det.bbox);
            let mut cost_val = 1.0 - overlap;
            let mut ok = overlap >= cfg.iou_gate;
            if use_embeddings {
                if let (Some(te), Some(de)) = (tracks[ti].embedding.as_deref(), det.embedding.as_deref()) {
                    let dist = cosine_distance(te, de);
                    cost_val = cfg.reid_weight * cost_val + (1.0 - cfg.reid_weight) * dist;
                    ok &= dist <= cfg.embedding_gate;
                }
            }
            c.push(cost_val);
            f.push(ok);
        }
        cost.push(c);
        feasible.push(f);
    }
    let local = gated_assignment(&cost, &feasible);
    AssociationResult {
        matches: local.matches.iter().map(|&(r, c)| (track_idx[r], det_idx[c])).collect(),
        unmatched_tracks: local.unmatched_tracks.iter().map(|&r| track_idx[r]).collect(),
        unmatched_detections: local.unmatched_detections.iter().map(|&c| det_idx[c]).collect(),
    }
}

fn high_detections(detections: &[Detection], cfg: &TrackerConfig) -> Vec<usize> {
    (0..detections.len())
        .filter(|&i| detections[i].score >= cfg.high_score_thresh)
        .collect()
}

/// Single-stage association of every track with the detections scoring at
/// least `high_score_thresh`. Lower-scoring detections are ignored and never
/// appear in the result. Embeddings are used only in `sort_reid` mode.
pub fn associate(tracks: &[TrackState], detections: &[Detection], cfg: &TrackerConfig) -> AssociationResult {
    let all: Vec<usize> = (0..tracks.len()).collect();
    let high = high_detections(detections, cfg);
    match_subset(tracks, &all, detections, &high, cfg, cfg.mode == TrackerMode::SortReid)
}

/// Two-stage association. Stage 1 is [`associate`] on the high-score
/// detections. Stage 2 matches the remaining confirmed or lost tracks to the
/// detections scoring in `[low, high)` by IoU alone. Only stage-1 leftovers
/// are reported as unmatched detections, so low-score boxes never spawn
/// tracks. Detections below `low` are discarded.
pub fn byte_associate(tracks: &[TrackState], detections: &[Detection], cfg: &TrackerConfig) -> AssociationResult {
    let first = associate(tracks, detections, cfg);
    let low: Vec<usize> = (0..detections.len())
        .filter(|&i| {
            let s = detections[i].score;
            s >= cfg.low_score_thresh && s < cfg.high_score_thresh
        })
        .collect();
    let (eligible, tentative): (Vec<usize>, Vec<usize>) = first
        .unmatched_tracks
        .iter()
        .partition(|&&t| tracks[t].status != TrackStatus::Tentative);
    let second = match_subset(tracks, &eligible, detections, &low, cfg, false);
    let mut matches = first.matches;
    matches.extend(second.matches);
    let mut unmatched_tracks = tentative;
    unmatched_tracks.extend(second.unmatched_tracks);
    unmatched_tracks.sort_unstable();
    AssociationResult {
        matches,
        unmatched_tracks,
        unmatched_detections: first.unmatched_detections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::hungarian::tests::brute_force;
    use crate::tracker::KalmanModel;
    use rand::{Rng, SeedableRng};

    fn bx(l: f64, t: f64, w: f64, h: f64) -> BBox {
        BBox::new(l, t, w, h).unwrap()
    }

    fn track(id: u32, b: BBox, status: TrackStatus) -> TrackState {
        let mut t = TrackState::new(id, &b, &KalmanModel::default(), None);
        t.status = status;
        t
    }

    #[test]
    fn gate_examples() {
        let cfg = TrackerConfig::default();
        let t = [track(1, bx(0.0, 0.0, 10.0, 10.0), TrackStatus::Confirmed)];
        // IoU 0.8
        let near = [Detection::new(bx(0.0, 0.0, 10.0, 8.0), 0.9)];
        let r = associate(&t, &near, &cfg);
        assert_eq!(r.matches, vec![(0, 0)]);
        // IoU about 0.05
        let far = [Detection::new(bx(0.0, 9.0, 10.0, 10.0), 0.9)];
        assert!((iou(&t[0].predicted_bbox(), &far[0].bbox) - 10.0 / 190.0).abs() < 1e-12);
        let r = associate(&t, &far, &cfg);
        assert!(r.matches.is_empty());
        assert_eq!((r.unmatched_tracks, r.unmatched_detections), (vec![0], vec![0]));
    }

    /// Exhaustive gated optimum: most feasible pairs, then least cost.
    fn brute_gated(cost: &[Vec<f64>], feasible: &[Vec<bool>]) -> (usize, f64) {
        let g: Vec<Vec<f64>> = cost
            .iter()
            .zip(feasible)
            .map(|(c, f)| {
                c.iter()
                    .zip(f)
                    .map(|(&c, &ok)| if ok { c - 10.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        // each feasible pair is worth -10 + cost < 0, infeasible 0
        let best = brute_force(&g);
        let n = (-best / 10.0).ceil() as usize;
        (n, best + 10.0 * n as f64)
    }

    #[test]
    fn gated_assignment_matches_exhaustive_optimum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let cost: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..3).map(|_| rng.random_range(0.0..0.7)).collect())
                .collect();
            let feasible: Vec<Vec<bool>> = (0..3).map(|_| (0..3).map(|_| rng.random_bool(0.6)).collect()).collect();
            let r = gated_assignment(&cost, &feasible);
            let total: f64 = r.matches.iter().map(|&(a, b)| cost[a][b]).sum();
            let (n, best) = brute_gated(&cost, &feasible);
            assert_eq!(r.matches.len(), n);
            assert!((total - best).abs() < 1e-9);
            assert_eq!(r.matches.len() + r.unmatched_tracks.len(), 3);
            assert_eq!(r.matches.len() + r.unmatched_detections.len(), 3);
        }
    }

    #[test]
    fn low_score_boxes_match_in_second_stage_only() {
        let cfg = TrackerConfig {
            mode: TrackerMode::Byte,
            ..Default::default()
        };
        let t = [track(1, bx(0.0, 0.0, 10.0, 10.0), TrackStatus::Confirmed)];
        let dets = [
            Detection::new(bx(1.0, 0.0, 10.0, 10.0), 0.3),
            Detection::new(bx(50.0, 50.0, 10.0, 10.0), 0.05),
        ];
        let r = byte_associate(&t, &dets, &cfg);
        assert_eq!(r.matches, vec![(0, 0)]);
        assert!(r.unmatched_detections.is_empty());
        let sort = associate(&t, &dets, &cfg);
        assert!(sort.matches.is_empty() && sort.unmatched_detections.is_empty());
    }

    #[test]
    fn tentative_tracks_skip_second_stage() {
        let cfg = TrackerConfig::default();
        let t = [track(1, bx(0.0, 0.0, 10.0, 10.0), TrackStatus::Tentative)];
        let dets = [Detection::new(bx(1.0, 0.0, 10.0, 10.0), 0.3)];
        let r = byte_associate(&t, &dets, &cfg);
        assert!(r.matches.is_empty());
        assert_eq!(r.unmatched_tracks, vec![0]);
    }

    #[test]
    fn empty_band_equals_single_stage() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let cfg = TrackerConfig::default();
        for _ in 0..100 {
            let tracks: Vec<TrackState> = (0..rng.random_range(0..6))
                .map(|i| {
                    let st =
                        [TrackStatus::Tentative, TrackStatus::Confirmed, TrackStatus::Lost][rng.random_range(0..3)];
                    track(
                        i + 1,
                        bx(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), 10.0, 10.0),
                        st,
                    )
                })
                .collect();
            let dets: Vec<Detection> = (0..rng.random_range(0..6))
                .map(|_| {
                    let score = if rng.random_bool(0.5) {
                        rng.random_range(0.6..=1.0)
                    } else {
                        rng.random_range(0.0..0.1)
                    };
                    Detection::new(
                        bx(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), 10.0, 10.0),
                        score,
                    )
                })
                .collect();
            assert_eq!(byte_associate(&tracks, &dets, &cfg), associate(&tracks, &dets, &cfg));
        }
    }

    #[test]
    fn embedding_gate_blocks_dissimilar_pairs() {
        let cfg = TrackerConfig {
            mode: TrackerMode::SortReid,
            ..Default::default()
        };
        let mut t = track(1, bx(0.0, 0.0, 10.0, 10.0), TrackStatus::Confirmed);
        t.embedding = Some(vec![1.0, 0.0]);
        let same = Detection::new(bx(0.0, 0.0, 10.0, 10.0), 0.9).with_embedding(vec![0.0, 1.0]);
        let r = associate(std::slice::from_ref(&t), std::slice::from_ref(&same), &cfg);
        assert!(r.matches.is_empty());
        let sort = associate(&[t], &[same], &TrackerConfig::default());
        assert_eq!(sort.matches.len(), 1);
    }
}
