//! Synthetic crowds: head trajectories with simple collision avoidance, and a
//! detector noise model that turns them into scored detections.
//!
//! All randomness comes from ChaCha8 streams seeded by the config `seed`, so
//! output is a pure function of the configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};
use crate::mot_io::{group_by_frame, AnnotationRecord, SequenceMeta, View};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("invalid noise model: {0}")]
    Noise(String),
    #[error("arena {width}x{height} cannot hold {agents} agents of size up to {size}")]
    ArenaTooSmall {
        width: f64,
        height: f64,
        agents: usize,
        size: f64,
    },
}

/// Explicit start state of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub x: f64,
    pub y: f64,
    /// Radians, 0 pointing along +x.
    pub heading: f64,
    pub speed: f64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `[width, height]` in pixels.
    pub arena: [f64; 2],
    pub agent_count: usize,
    /// Pixels per frame.
    pub speed_range: [f64; 2],
    /// Standard deviation of the per-frame heading change, radians.
    pub heading_sigma: f64,
    /// Side length of the square head box, pixels.
    pub head_size_range: [f64; 2],
    pub fps: f64,
    /// Number of frames.
    pub duration: u32,
    pub repulsion_radius: f64,
    pub repulsion_strength: f64,
    pub seed: u64,
    /// Start states; when set they replace random spawning and must number
    /// `agent_count`.
    pub placements: Option<Vec<Placement>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            arena: [320.0, 240.0],
            agent_count: 24,
            speed_range: [0.5, 2.0],
            heading_sigma: 0.1,
            head_size_range: [12.0, 20.0],
            fps: 25.0,
            duration: 200,
            repulsion_radius: 30.0,
            repulsion_strength: 10.0,
            seed: 0,
            placements: None,
        }
    }
}

fn valid_range(r: [f64; 2], min: f64) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: &str| Err(ScenarioError::Config(m.into()));
        if self.agent_count < 1 {
            return err("agent_count must be at least 1");
        }
        if !self.arena.iter().all(|v| v.is_finite() && *v > 0.0) {
            return err("arena sides must be positive");
        }
        if !valid_range(self.speed_range, 0.0) {
            return err("speed_range must be [lo, hi] with 0 <= lo <= hi");
        }
        if !valid_range(self.head_size_range, f64::MIN_POSITIVE) {
            return err("head_size_range must be [lo, hi] with 0 < lo <= hi");
        }
        if !(self.heading_sigma >= 0.0 && self.heading_sigma.is_finite()) {
            return err("heading_sigma must be non-negative");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return err("fps must be positive");
        }
        if self.duration < 1 {
            return err("duration must be at least 1 frame");
        }
        if !(self.repulsion_radius >= 0.0 && self.repulsion_strength >= 0.0) {
            return err("repulsion radius and strength must be non-negative");
        }
        if let Some(p) = &self.placements {
            if p.len() != self.agent_count {
                return err("placements must list agent_count entries");
            }
            if p.iter().any(|a| {
                !(a.size > 0.0 && a.speed >= 0.0 && a.x.is_finite() && a.y.is_finite() && a.heading.is_finite())
            }) {
                return err("placements need finite positions, speed >= 0 and size > 0");
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Probability that a gt box is not detected.
    pub miss_rate: f64,
    /// Mean number of false boxes per frame (Poisson).
    pub fp_rate: f64,
    /// Standard deviation of the center offset, pixels.
    pub center_jitter: f64,
    /// Standard deviation of the width and height offsets, pixels.
    pub size_jitter: f64,
    /// Uniform score range of detected gt boxes.
    pub tp_score: [f64; 2],
    /// Uniform score range of false boxes.
    pub fp_score: [f64; 2],
    /// Score multiplier for gt boxes overlapping another gt box.
    pub occlusion_drop: f64,
    /// IoU above which two gt boxes count as occluding each other.
    pub occlusion_iou: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::zero()
    }
}

impl NoiseModel {
    /// Every gt box detected exactly with score 1, nothing else.
    pub fn zero() -> Self {
        Self {
            miss_rate: 0.0,
            fp_rate: 0.0,
            center_jitter: 0.0,
            size_jitter: 0.0,
            tp_score: [1.0, 1.0],
            fp_score: [0.0, 0.0],
            occlusion_drop: 1.0,
            occlusion_iou: 0.3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: &str| Err(ScenarioError::Noise(m.into()));
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return err("miss_rate must lie in [0, 1]");
        }
        if !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return err("fp_rate must be non-negative");
        }
        if !(self.center_jitter >= 0.0 && self.size_jitter >= 0.0) {
            return err("jitter must be non-negative");
        }
        let score_ok = |r: [f64; 2]| r[0] >= 0.0 && r[1] <= 1.0 && r[0] <= r[1];
        if !score_ok(self.tp_score) || !score_ok(self.fp_score) {
            return err("score ranges must satisfy 0 <= lo <= hi <= 1");
        }
        if !(0.0..=1.0).contains(&self.occlusion_drop) || !(0.0..=1.0).contains(&self.occlusion_iou) {
            return err("occlusion_drop and occlusion_iou must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let n: Self = toml::from_str(text).map_err(|e| ScenarioError::Noise(e.to_string()))?;
        n.validate()?;
        Ok(n)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("noise model serializes")
    }
}

#[derive(Debug, Clone, Copy)]
struct Agent {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    size: f64,
}

fn spawn(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Agent>, ScenarioError> {
    if let Some(p) = &cfg.placements {
        return Ok(p
            .iter()
            .map(|a| Agent {
                x: a.x,
                y: a.y,
                heading: a.heading,
                speed: a.speed,
                size: a.size,
            })
            .collect());
    }
    let [w, h] = cfg.arena;
    let too_small = || ScenarioError::ArenaTooSmall {
        width: w,
        height: h,
        agents: cfg.agent_count,
        size: cfg.head_size_range[1],
    };
    let max_size = cfg.head_size_range[1];
    if max_size > w || max_size > h {
        return Err(too_small());
    }
    let mut agents: Vec<Agent> = Vec::with_capacity(cfg.agent_count);
    for _ in 0..cfg.agent_count {
        let size = rng.random_range(cfg.head_size_range[0]..=cfg.head_size_range[1]);
        let mut placed = None;
        for _ in 0..1000 {
            let x = rng.random_range(size / 2.0..=w - size / 2.0);
            let y = rng.random_range(size / 2.0..=h - size / 2.0);
            let clear = agents
                .iter()
                .all(|a| (a.x - x).abs() >= (a.size + size) / 2.0 || (a.y - y).abs() >= (a.size + size) / 2.0);
            if clear {
                placed = Some((x, y));
                break;
            }
        }
        let (x, y) = placed.ok_or_else(too_small)?;
        agents.push(Agent {
            x,
            y,
            heading: rng.random_range(-PI..PI),
            speed: rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]),
            size,
        });
    }
    Ok(agents)
}

fn agent_box(a: &Agent) -> BBox {
    BBox::from_center(a.x, a.y, a.size, a.size).expect("agents stay finite with positive size")
}

/// Ground-truth records (one track per agent, ids from 1, alive in every
/// frame) and matching sequence metadata.
pub fn simulate(cfg: &ScenarioConfig) -> Result<(Vec<AnnotationRecord>, SequenceMeta), ScenarioError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agents = spawn(cfg, &mut rng)?;
    let [w, h] = cfg.arena;
    for a in &mut agents {
        a.x = a.x.clamp(a.size / 2.0, w - a.size / 2.0);
        a.y = a.y.clamp(a.size / 2.0, h - a.size / 2.0);
    }
    let turn = Normal::new(0.0, cfg.heading_sigma).expect("sigma validated");
    let mut records = Vec::with_capacity(agents.len() * cfg.duration as usize);
    for frame in 1..=cfg.duration {
        for (i, a) in agents.iter().enumerate() {
            records.push(AnnotationRecord::new(frame, i as u32 + 1, agent_box(a)));
        }
        if frame == cfg.duration {
            break;
        }
        let snapshot = agents.clone();
        for (i, a) in agents.iter_mut().enumerate() {
            a.heading += turn.sample(&mut rng);
            let (mut vx, mut vy) = (a.speed * a.heading.cos(), a.speed * a.heading.sin());
            for (j, o) in snapshot.iter().enumerate() {
                if i == j {
                    continue;
                }
                let (dx, dy) = (a.x - o.x, a.y - o.y);
                let d = (dx * dx + dy * dy).sqrt();
                if d < cfg.repulsion_radius && d > 1e-9 {
                    let push = cfg.repulsion_strength * (1.0 / d - 1.0 / cfg.repulsion_radius);
                    vx += push * dx / d;
                    vy += push * dy / d;
                }
            }
            if vx != 0.0 || vy != 0.0 {
                a.heading = vy.atan2(vx);
            }
            a.x += vx;
            a.y += vy;
            let half = a.size / 2.0;
            if a.x < half || a.x > w - half {
                a.heading = PI - a.heading;
                a.x = a.x.clamp(half, w - half);
            }
            if a.y < half || a.y > h - half {
                a.heading = -a.heading;
                a.y = a.y.clamp(half, h - half);
            }
        }
    }
    let meta = SequenceMeta {
        name: format!("synthetic-{}", cfg.seed),
        fps: cfg.fps,
        frame_count: cfg.duration,
        width: w.ceil() as u32,
        height: h.ceil() as u32,
        view: View::Overhead,
    };
    Ok((records, meta))
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Scored detections for `gt`. Detection record ids are per-frame indices
/// from 1 and carry no identity; the score is stored in `confidence`.
/// False boxes are placed uniformly in the `meta` frame with sizes drawn
/// from the gt size range.
pub fn corrupt(
    gt: &[AnnotationRecord],
    meta: &SequenceMeta,
    noise: &NoiseModel,
) -> Result<Vec<AnnotationRecord>, ScenarioError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let center = Normal::new(0.0, noise.center_jitter).expect("validated");
    let size = Normal::new(0.0, noise.size_jitter).expect("validated");
    let fp_count = (noise.fp_rate > 0.0).then(|| Poisson::new(noise.fp_rate).expect("positive rate"));
    let (min_side, max_side) = gt.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
        (
            lo.min(r.bbox.width().min(r.bbox.height())),
            hi.max(r.bbox.width().max(r.bbox.height())),
        )
    });
    let side_range = if min_side.is_finite() {
        [min_side, max_side]
    } else {
        [10.0, 10.0]
    };
    let (fw, fh) = (meta.width as f64, meta.height as f64);

    let frames: BTreeMap<u32, Vec<AnnotationRecord>> = group_by_frame(gt);
    let last = frames.keys().max().copied().unwrap_or(0).max(meta.frame_count);
    let mut out = Vec::new();
    for frame in 1..=last {
        let mut boxes = frames.get(&frame).cloned().unwrap_or_default();
        boxes.sort_by_key(|r| r.track_id);
        let mut next = 1;
        for (i, g) in boxes.iter().enumerate() {
            // draw every variate so the stream does not depend on outcomes
            let dropped = rng.random_bool(noise.miss_rate);
            let (dx, dy, dw, dh) = (
                center.sample(&mut rng),
                center.sample(&mut rng),
                size.sample(&mut rng),
                size.sample(&mut rng),
            );
            let mut score = uniform(&mut rng, noise.tp_score);
            if dropped {
                continue;
            }
            let occluded = boxes
                .iter()
                .enumerate()
                .any(|(j, o)| j != i && iou(&g.bbox, &o.bbox) > noise.occlusion_iou);
            if occluded {
                score *= noise.occlusion_drop;
            }
            let (cx, cy) = g.bbox.center();
            let b = BBox::from_center(
                cx + dx,
                cy + dy,
                (g.bbox.width() + dw).max(1.0),
                (g.bbox.height() + dh).max(1.0),
            )
            .expect("finite jittered box");
            out.push(AnnotationRecord {
                confidence: score,
                ..AnnotationRecord::new(frame, next, b)
            });
            next += 1;
        }
        let n_fp = fp_count.map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_fp {
            let side = uniform(&mut rng, side_range);
            let cx = rng.random_range(0.0..=fw.max(side));
            let cy = rng.random_range(0.0..=fh.max(side));
            let b = BBox::from_center(cx, cy, side, side).expect("finite false box");
            out.push(AnnotationRecord {
                confidence: uniform(&mut rng, noise.fp_score),
                ..AnnotationRecord::new(frame, next, b)
            });
            next += 1;
        }
    }
    Ok(out)
}

/// A crowded scene with frequent overlaps where the detector reports
/// overlapping heads with a reduced score.
pub fn occlusion_scenario(seed: u64) -> (ScenarioConfig, NoiseModel) {
    let cfg = ScenarioConfig {
        arena: [200.0, 160.0],
        agent_count: 24,
        speed_range: [1.0, 2.5],
        heading_sigma: 0.05,
        head_size_range: [14.0, 18.0],
        duration: 200,
        repulsion_radius: 12.0,
        repulsion_strength: 0.5,
        seed,
        ..Default::default()
    };
    let noise = NoiseModel {
        miss_rate: 0.0,
        fp_rate: 0.0,
        center_jitter: 0.5,
        size_jitter: 0.3,
        tp_score: [0.7, 1.0],
        fp_score: [0.1, 0.5],
        occlusion_drop: 0.4,
        occlusion_iou: 0.3,
        seed: seed.wrapping_add(1000),
    };
    (cfg, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mot_io::{parse_annotations, write_annotations, FieldOrder};

    #[test]
    fn single_still_agent_never_moves() {
        let cfg = ScenarioConfig {
            agent_count: 1,
            speed_range: [0.0, 0.0],
            heading_sigma: 0.3,
            duration: 30,
            ..Default::default()
        };
        let (recs, meta) = simulate(&cfg).unwrap();
        assert_eq!(recs.len(), 30);
        assert_eq!(meta.frame_count, 30);
        assert!(recs.iter().all(|r| r.bbox == recs[0].bbox && r.track_id == 1));
    }

    #[test]
    fn same_seed_same_stream() {
        let cfg = ScenarioConfig {
            seed: 5,
            ..Default::default()
        };
        let a = write_annotations(&simulate(&cfg).unwrap().0, FieldOrder::Standard);
        let b = write_annotations(&simulate(&cfg).unwrap().0, FieldOrder::Standard);
        assert_eq!(a, b);
        let c = write_annotations(
            &simulate(&ScenarioConfig { seed: 6, ..cfg }).unwrap().0,
            FieldOrder::Standard,
        );
        assert_ne!(a, c);
    }

    #[test]
    fn boxes_stay_inside_and_round_trip() {
        for seed in 0..4 {
            let cfg = ScenarioConfig {
                seed,
                speed_range: [2.0, 4.0],
                ..Default::default()
            };
            let (recs, _) = simulate(&cfg).unwrap();
            assert_eq!(recs.len(), 24 * 200);
            for r in &recs {
                assert!(r.bbox.left() >= -1e-9 && r.bbox.top() >= -1e-9);
                assert!(r.bbox.right() <= cfg.arena[0] + 1e-9 && r.bbox.bottom() <= cfg.arena[1] + 1e-9);
            }
            let text = write_annotations(&recs, FieldOrder::IdFirst);
            let back = parse_annotations(&text, FieldOrder::IdFirst).unwrap();
            assert_eq!(write_annotations(&back, FieldOrder::IdFirst), text);
        }
    }

    fn min_distance(strength: f64) -> f64 {
        let place = |x, heading| Placement {
            x,
            y: 100.0,
            heading,
            speed: 2.0,
            size: 14.0,
        };
        let cfg = ScenarioConfig {
            arena: [300.0, 200.0],
            agent_count: 2,
            heading_sigma: 0.0,
            duration: 150,
            repulsion_strength: strength,
            placements: Some(vec![place(50.0, 0.0), place(250.0, PI)]),
            ..Default::default()
        };
        let (recs, _) = simulate(&cfg).unwrap();
        group_by_frame(&recs)
            .values()
            .map(|f| {
                let (a, b) = (f[0].bbox.center(), f[1].bbox.center());
                ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn repulsion_keeps_head_on_agents_apart() {
        let free = min_distance(0.0);
        let repelled = min_distance(2.0);
        assert!(free < 2.0, "{free}");
        assert!(repelled > free, "{repelled} vs {free}");
    }

    #[test]
    fn crowded_arena_is_an_error() {
        let cfg = ScenarioConfig {
            arena: [40.0, 40.0],
            agent_count: 50,
            ..Default::default()
        };
        assert!(matches!(simulate(&cfg), Err(ScenarioError::ArenaTooSmall { .. })));
        let tiny = ScenarioConfig {
            arena: [10.0, 10.0],
            agent_count: 1,
            ..Default::default()
        };
        assert!(simulate(&tiny).is_err());
    }

    #[test]
    fn config_files() {
        let cfg = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        let n = NoiseModel {
            miss_rate: 0.2,
            ..NoiseModel::zero()
        };
        assert_eq!(NoiseModel::from_toml_str(&n.to_toml_string()).unwrap(), n);
        assert!(ScenarioConfig::from_toml_str("agent_count = 0\n").is_err());
        assert!(ScenarioConfig::from_toml_str("speed_range = [2.0, 1.0]\n").is_err());
        assert!(NoiseModel::from_toml_str("miss_rate = 1.5\n").is_err());
        assert!(NoiseModel::from_toml_str("colour = 1\n").is_err());
    }

    #[test]
    fn zero_noise_echoes_gt() {
        let (gt, meta) = simulate(&ScenarioConfig::default()).unwrap();
        let dets = corrupt(&gt, &meta, &NoiseModel::zero()).unwrap();
        assert_eq!(dets.len(), gt.len());
        for (d, g) in dets.iter().zip(&gt) {
            assert_eq!((d.frame, d.bbox, d.confidence), (g.frame, g.bbox, 1.0));
        }
    }

    #[test]
    fn full_miss_rate_gives_nothing() {
        let (gt, meta) = simulate(&ScenarioConfig::default()).unwrap();
        let noise = NoiseModel {
            miss_rate: 1.0,
            ..NoiseModel::zero()
        };
        assert!(corrupt(&gt, &meta, &noise).unwrap().is_empty());
    }

    #[test]
    fn empirical_miss_rate() {
        let cfg = ScenarioConfig {
            agent_count: 50,
            duration: 200,
            arena: [640.0, 480.0],
            ..Default::default()
        };
        let (gt, meta) = simulate(&cfg).unwrap();
        assert_eq!(gt.len(), 10_000);
        let noise = NoiseModel {
            miss_rate: 0.1,
            seed: 3,
            ..NoiseModel::zero()
        };
        let kept = corrupt(&gt, &meta, &noise).unwrap().len();
        let dropped = 1.0 - kept as f64 / gt.len() as f64;
        assert!((dropped - 0.1).abs() <= 0.01, "{dropped}");
    }

    #[test]
    fn false_positives_and_occlusion_scores() {
        let (cfg, noise) = occlusion_scenario(1);
        let (gt, meta) = simulate(&cfg).unwrap();
        let noisy = NoiseModel {
            fp_rate: 2.0,
            ..noise.clone()
        };
        let dets = corrupt(&gt, &meta, &noisy).unwrap();
        let extra = dets.len() as f64 - gt.len() as f64;
        let expected = 2.0 * cfg.duration as f64;
        assert!((extra - expected).abs() < 0.2 * expected, "{extra}");
        let low = corrupt(&gt, &meta, &noise)
            .unwrap()
            .iter()
            .filter(|d| d.confidence < 0.6)
            .count();
        assert!(low > 0);
        for f in group_by_frame(&dets).values() {
            let ids: Vec<u32> = f.iter().map(|d| d.track_id).collect();
            assert_eq!(ids, (1..=f.len() as u32).collect::<Vec<_>>());
        }
    }
}
