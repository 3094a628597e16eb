//! Tracking by detection: Kalman prediction, optimal assignment on IoU cost,
//! SORT, ByteTrack-style two-stage association and an embedding-gated SORT.
//!
//! A [`Tracker`] is a sequential state machine fed one frame at a time. Track
//! lifecycle:
//!
//! * a detection left over after association spawns a **tentative** track
//! * a tentative track is **confirmed** after `n_init` hits; tracks spawned
//!   during the first `n_init` frames are confirmed immediately
//! * an unmatched tentative track is removed
//! * an unmatched confirmed track becomes **lost**, and a lost track is
//!   removed once `time_since_update` exceeds `max_age`
//! * a lost track that matches again is confirmed
//!
//! Only confirmed tracks matched in the current frame are emitted.

mod association;
mod hungarian;
mod kalman;

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use association::{associate, byte_associate, gated_assignment, iou_cost, AssociationResult, GATE_COST};
pub use hungarian::{hungarian, Assignment};
pub use kalman::{KalmanModel, Measurement, MeasurementCovariance, StateCovariance, StateVector};

use crate::geometry::BBox;
use crate::mot_io::AnnotationRecord;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("frame {frame} is not after the previous frame {previous}")]
    OutOfOrder { frame: u32, previous: u32 },
    #[error("invalid detection: {0}")]
    Detection(String),
    #[error("invalid tracker config: {0}")]
    Config(String),
    #[error("invalid cost matrix: {0}")]
    Cost(String),
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("non-finite filter state")]
    NonFiniteState,
}

/// One scored box from a detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    /// Unit-norm appearance feature, used only in `sort_reid` mode.
    pub embedding: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Self {
            bbox,
            score,
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    fn validate(&self, dim: Option<usize>) -> Result<(), TrackerError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(TrackerError::Detection(format!("score {} outside [0, 1]", self.score)));
        }
        if let Some(e) = &self.embedding {
            if let Some(d) = dim {
                if e.len() != d {
                    return Err(TrackerError::Detection(format!("embedding length {} != {d}", e.len())));
                }
            }
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(TrackerError::Detection(format!("embedding norm {norm} is not 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerMode {
    #[default]
    Sort,
    Byte,
    SortReid,
}

impl FromStr for TrackerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sort" => Ok(Self::Sort),
            "byte" => Ok(Self::Byte),
            "sort_reid" => Ok(Self::SortReid),
            other => Err(format!(
                "unknown tracker mode `{other}` (expected sort, byte or sort_reid)"
            )),
        }
    }
}

/// Which box an emitted track carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputBox {
    /// The detection matched in this frame.
    #[default]
    Detection,
    /// The filtered Kalman state after the update.
    State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub mode: TrackerMode,
    pub high_score_thresh: f64,
    pub low_score_thresh: f64,
    pub iou_gate: f64,
    pub max_age: u32,
    pub n_init: u32,
    /// Largest cosine distance allowed between a track and detection
    /// embedding in `sort_reid` mode.
    pub embedding_gate: f64,
    /// Weight of the IoU term in the blended `sort_reid` cost.
    pub reid_weight: f64,
    /// Share of the old embedding kept when a track's embedding is smoothed.
    pub embedding_momentum: f64,
    /// Required embedding length, if fixed.
    pub embedding_dim: Option<usize>,
    pub output: OutputBox,
    pub kalman: KalmanModel,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            mode: TrackerMode::Sort,
            high_score_thresh: 0.6,
            low_score_thresh: 0.1,
            iou_gate: 0.3,
            max_age: 30,
            n_init: 3,
            embedding_gate: 0.3,
            reid_weight: 0.98,
            embedding_momentum: 0.9,
            embedding_dim: None,
            output: OutputBox::Detection,
            kalman: KalmanModel::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let err = |m: &str| Err(TrackerError::Config(m.into()));
        if !(0.0 <= self.low_score_thresh
            && self.low_score_thresh < self.high_score_thresh
            && self.high_score_thresh <= 1.0)
        {
            return err("need 0 <= low_score_thresh < high_score_thresh <= 1");
        }
        if !(self.iou_gate > 0.0 && self.iou_gate < 1.0) {
            return err("iou_gate must lie in (0, 1)");
        }
        if self.n_init == 0 {
            return err("n_init must be at least 1");
        }
        if !(0.0..=2.0).contains(&self.embedding_gate) {
            return err("embedding_gate must lie in [0, 2]");
        }
        if !(0.0..=1.0).contains(&self.reid_weight) || !(0.0..=1.0).contains(&self.embedding_momentum) {
            return err("reid_weight and embedding_momentum must lie in [0, 1]");
        }
        self.kalman.validate().map_err(TrackerError::Config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TrackerError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrackerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("tracker config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
    Removed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub track_id: u32,
    pub mean: StateVector,
    pub covariance: StateCovariance,
    pub status: TrackStatus,
    pub hits: u32,
    pub time_since_update: u32,
    /// Smoothed unit-norm appearance feature.
    pub embedding: Option<Vec<f64>>,
    /// Box and score of the most recent matched detection.
    pub last_detection: Option<(BBox, f64)>,
}

impl TrackState {
    pub fn new(track_id: u32, bbox: &BBox, model: &KalmanModel, embedding: Option<Vec<f64>>) -> Self {
        let (mean, covariance) = model.initiate(bbox);
        Self {
            track_id,
            mean,
            covariance,
            status: TrackStatus::Tentative,
            hits: 1,
            time_since_update: 0,
            embedding,
            last_detection: None,
        }
    }

    /// Box of the current state. Falls back to the last detection if the
    /// state no longer describes a valid box.
    pub fn predicted_bbox(&self) -> BBox {
        BBox::from_xyah(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
            .ok()
            .or(self.last_detection.map(|(b, _)| b))
            .unwrap_or_else(|| BBox::new(0.0, 0.0, 1e-9, 1e-9).expect("tiny box is valid"))
    }

    fn smooth_embedding(&mut self, new: &[f64], momentum: f64) {
        let mixed: Vec<f64> = match &self.embedding {
            Some(old) if old.len() == new.len() => old
                .iter()
                .zip(new)
                .map(|(o, n)| momentum * o + (1.0 - momentum) * n)
                .collect(),
            _ => new.to_vec(),
        };
        let norm = mixed.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.embedding = Some(if norm > 0.0 {
            mixed.iter().map(|v| v / norm).collect()
        } else {
            new.to_vec()
        });
    }
}

/// One emitted box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BBox,
    pub score: f64,
}

impl TrackOutput {
    pub fn to_record(&self) -> AnnotationRecord {
        AnnotationRecord {
            confidence: self.score,
            ..AnnotationRecord::new(self.frame, self.track_id, self.bbox)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<TrackState>,
    next_id: u32,
    last_frame: Option<u32>,
    frames_seen: u32,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            frames_seen: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live (not removed) tracks.
    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Advances by one frame: predict, associate, update, age, spawn, emit.
    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<Vec<TrackOutput>, TrackerError> {
        if let Some(prev) = self.last_frame {
            if frame <= prev {
                return Err(TrackerError::OutOfOrder { frame, previous: prev });
            }
        }
        for d in detections {
            d.validate(self.config.embedding_dim)?;
        }
        self.last_frame = Some(frame);
        self.frames_seen += 1;
        let cfg = &self.config;
        let model = cfg.kalman;

        for t in &mut self.tracks {
            match model.predict(&t.mean, &t.covariance) {
                Ok((m, c)) => {
                    t.mean = m;
                    t.covariance = c;
                }
                Err(_) => t.status = TrackStatus::Removed,
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Removed);

        let result = match cfg.mode {
            TrackerMode::Byte => byte_associate(&self.tracks, detections, cfg),
            TrackerMode::Sort | TrackerMode::SortReid => associate(&self.tracks, detections, cfg),
        };

        for &(ti, di) in &result.matches {
            let t = &mut self.tracks[ti];
            let det = &detections[di];
            match model.update(&t.mean, &t.covariance, &det.bbox) {
                Ok((m, c)) => {
                    t.mean = m;
                    t.covariance = c;
                }
                Err(_) => {
                    t.status = TrackStatus::Removed;
                    continue;
                }
            }
            t.hits += 1;
            t.time_since_update = 0;
            t.last_detection = Some((det.bbox, det.score));
            if let Some(e) = &det.embedding {
                t.smooth_embedding(e, cfg.embedding_momentum);
            }
            t.status = match t.status {
                TrackStatus::Tentative if t.hits >= cfg.n_init => TrackStatus::Confirmed,
                TrackStatus::Lost => TrackStatus::Confirmed,
                s => s,
            };
        }
        for &ti in &result.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.time_since_update += 1;
            t.status = match t.status {
                TrackStatus::Tentative => TrackStatus::Removed,
                _ if t.time_since_update > cfg.max_age => TrackStatus::Removed,
                _ => TrackStatus::Lost,
            };
        }

        let warm_up = self.frames_seen <= cfg.n_init;
        for &di in &result.unmatched_detections {
            let det = &detections[di];
            let mut t = TrackState::new(self.next_id, &det.bbox, &model, det.embedding.clone());
            self.next_id += 1;
            t.last_detection = Some((det.bbox, det.score));
            if warm_up || cfg.n_init <= 1 {
                t.status = TrackStatus::Confirmed;
            }
            self.tracks.push(t);
        }
        self.tracks.retain(|t| t.status != TrackStatus::Removed);

        let mut out: Vec<TrackOutput> = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed && t.time_since_update == 0)
            .filter_map(|t| {
                let (det_box, score) = t.last_detection?;
                let bbox = match cfg.output {
                    OutputBox::Detection => det_box,
                    OutputBox::State => model.state_bbox(&t.mean).ok()?,
                };
                Some(TrackOutput {
                    frame,
                    track_id: t.track_id,
                    bbox,
                    score,
                })
            })
            .collect();
        out.sort_by_key(|o| o.track_id);
        Ok(out)
    }
}

/// Turns detection records (track ids ignored, confidence used as score)
/// into per-frame detections for frames `1..=frame_count`.
pub fn detections_by_frame(records: &[AnnotationRecord], frame_count: u32) -> BTreeMap<u32, Vec<Detection>> {
    let mut map: BTreeMap<u32, Vec<Detection>> = (1..=frame_count).map(|f| (f, Vec::new())).collect();
    for r in records {
        map.entry(r.frame)
            .or_default()
            .push(Detection::new(r.bbox, r.confidence));
    }
    map
}

/// Runs a fresh tracker over a whole sequence of detection records. Frames
/// without detections up to the last detection frame (or `frame_count`,
/// whichever is larger) are stepped too so that tracks age correctly.
pub fn track_records(
    records: &[AnnotationRecord],
    frame_count: u32,
    config: &TrackerConfig,
) -> Result<Vec<AnnotationRecord>, TrackerError> {
    let mut tracker = Tracker::new(config.clone())?;
    let mut out = Vec::new();
    for (frame, dets) in detections_by_frame(records, frame_count) {
        out.extend(tracker.step(frame, &dets)?.iter().map(TrackOutput::to_record));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
