//! CLEAR-MOT, identity metrics and AP50 on a hand-made three-frame example:
//! two people, one missed box and one spurious box.

use headtrack::geometry::BBox;
use headtrack::metrics::{detection_ap, evaluate, format_table};
use headtrack::mot_io::AnnotationRecord;

fn rec(frame: u32, id: u32, left: f64, score: f64) -> anyhow::Result<AnnotationRecord> {
    Ok(AnnotationRecord {
        confidence: score,
        ..AnnotationRecord::new(frame, id, BBox::new(left, 0.0, 10.0, 10.0)?)
    })
}

pub fn run_example() -> anyhow::Result<String> {
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for f in 1..=3 {
        gt.push(rec(f, 1, 0.0, 1.0)?);
        gt.push(rec(f, 2, 50.0, 1.0)?);
        pred.push(rec(f, 11, 0.0, 0.9)?);
        if f != 3 {
            pred.push(rec(f, 12, 50.0, 0.8)?);
        }
    }
    pred.push(rec(2, 13, 100.0, 0.3)?);

    let report = evaluate(&gt, &pred, 0.5)?;
    let mut out = format_table(&[("toy".to_string(), report)]);
    out.push_str(&format!("MOTA {:.4}\n", report.mota));
    out.push_str(&format!("AP50 {:.4}\n", detection_ap(&gt, &pred, 0.5)?));
    out.push_str(&serde_json::to_string(&report)?);
    out.push('\n');
    Ok(out)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
