//! Minimum-cost assignment on a rectangular matrix, then the same costs with
//! an IoU gate that forbids one pairing.

use headtrack::geometry::BBox;
use headtrack::tracker::{gated_assignment, hungarian, iou_cost};

pub fn run_example() -> anyhow::Result<String> {
    let cost = vec![
        vec![4.0, 1.0, 3.0, 9.0],
        vec![2.0, 0.0, 5.0, 7.0],
        vec![3.0, 2.0, 2.0, 1.0],
    ];
    let a = hungarian(&cost)?;
    let mut out = format!("pairs {:?}, total {}\n", a.pairs().collect::<Vec<_>>(), a.total_cost);

    let tracks = [BBox::new(0.0, 0.0, 10.0, 10.0)?, BBox::new(40.0, 0.0, 10.0, 10.0)?];
    let dets = [BBox::new(1.0, 0.0, 10.0, 10.0)?, BBox::new(80.0, 0.0, 10.0, 10.0)?];
    let c = iou_cost(&tracks, &dets);
    let feasible: Vec<Vec<bool>> = c.iter().map(|row| row.iter().map(|&d| d <= 0.7).collect()).collect();
    let r = gated_assignment(&c, &feasible);
    out.push_str(&format!(
        "matches {:?}, unmatched tracks {:?}, unmatched detections {:?}\n",
        r.matches, r.unmatched_tracks, r.unmatched_detections
    ));
    Ok(out)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
