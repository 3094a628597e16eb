//! Parse a small annotation file, print its statistics, then halve the
//! framerate and split it into train/test halves.

use headtrack::geometry::BBox;
use headtrack::mot_io::{
    compute_stats, parse_annotations, resample_framerate, split_train_test, write_annotations, AnnotationRecord,
    FieldOrder,
};

pub fn run_example() -> anyhow::Result<String> {
    let mut out = String::new();
    let text = "1, 1, 57, 86, 28, 32, 1, 1, 1\n\
                2, 1, 55, 87, 28, 32, 1, 1, 1\n\
                3, 1, 60, 85, 28, 32, 1, 1, 1\n\
                4, 1, 63, 85, 29, 31, 1, 1, 1\n";
    let mut records = parse_annotations(text, FieldOrder::IdFirst)?;
    // four heads walking right for nine more frames
    for frame in 2..=10 {
        for id in 1..=4u32 {
            let base = records[(id - 1) as usize].bbox;
            let bbox = BBox::new(
                base.left() + 2.0 * (frame - 1) as f64,
                base.top(),
                base.width(),
                base.height(),
            )?;
            records.push(AnnotationRecord::new(frame, id, bbox));
        }
    }
    out.push_str(&write_annotations(&records[..4], FieldOrder::IdFirst));

    let stats = compute_stats(&records, 10)?;
    out.push_str(&format!(
        "boxes {} frames {} density {:.2} tracks {}\n",
        stats.boxes, stats.frames, stats.density, stats.tracks
    ));
    out.push_str(&format!("h/w in [0.8, 1.4]: {:.2}\n", stats.ratio_mass_in(0.8, 1.4)));

    let half = resample_framerate(&records, 2)?;
    let frames = half.iter().map(|r| r.frame).max().unwrap_or(0);
    out.push_str(&format!(
        "after resampling by 2: {} boxes over {frames} frames\n",
        half.len()
    ));

    let (train, test) = split_train_test(&records, 10);
    out.push_str(&format!("train {} boxes, test {} boxes\n", train.len(), test.len()));
    Ok(out)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
