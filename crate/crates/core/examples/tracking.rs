//! Simulate a crowded scene with occlusion-dependent detection scores and
//! compare the single-stage and two-stage trackers on it.

use headtrack::metrics::{evaluate, format_table};
use headtrack::scenario_sim::{corrupt, occlusion_scenario, simulate};
use headtrack::tracker::{track_records, TrackerConfig, TrackerMode};

pub fn run_example() -> anyhow::Result<String> {
    let (scenario, noise) = occlusion_scenario(1);
    let (gt, meta) = simulate(&scenario)?;
    let dets = corrupt(&gt, &meta, &noise)?;
    let mut rows = Vec::new();
    for (name, mode) in [("sort", TrackerMode::Sort), ("byte", TrackerMode::Byte)] {
        let cfg = TrackerConfig {
            mode,
            ..TrackerConfig::default()
        };
        let tracks = track_records(&dets, meta.frame_count, &cfg)?;
        rows.push((name.to_string(), evaluate(&gt, &tracks, 0.5)?));
    }
    Ok(format!(
        "{} frames, {} gt boxes, {} detections\n{}",
        meta.frame_count,
        gt.len(),
        dets.len(),
        format_table(&rows)
    ))
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
