//! Difference, block-matching flow and box density on a synthetic pair of
//! frames where the texture moves two pixels to the right.

use headtrack::geometry::BBox;
use headtrack::motion_maps::{
    build_stack, density_from_boxes, frame_difference, optical_flow, ConstantProvider, DepthMode, FlowConfig,
    ImageFrame, SynthDepthProvider,
};

fn texture(w: usize, h: usize, shift: usize) -> anyhow::Result<ImageFrame> {
    Ok(ImageFrame::from_fn(w, h, |x, y| {
        let xs = (x + w - shift) % w;
        let mut z = (xs as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        z ^= z >> 29;
        z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z ^= z >> 32;
        (z % 256) as f32 / 255.0
    })?)
}

pub fn run_example() -> anyhow::Result<String> {
    let (w, h) = (48, 40);
    let prev = texture(w, h, 0)?;
    let curr = texture(w, h, 2)?;
    let mut out = String::new();

    let diff = frame_difference(&curr, &prev)?;
    out.push_str(&format!("mean |difference| {:.3}\n", diff.total() / (w * h) as f64));

    let cfg = FlowConfig::default();
    let flow = optical_flow(&curr, &prev, &cfg)?;
    // pixels the coarsest search window cannot see past the border are excluded
    let margin = cfg.block_size / 2 + cfg.search_radius * 4 + 2;
    let mut hits = 0;
    let mut total = 0;
    for y in margin..h - margin {
        for x in margin..w - margin {
            total += 1;
            if flow.at(x, y) == (2.0, 0.0) {
                hits += 1;
            }
        }
    }
    out.push_str(&format!("flow (+2, 0) on {hits}/{total} interior pixels\n"));

    let boxes = [BBox::new(5.0, 5.0, 10.0, 10.0)?, BBox::new(25.0, 20.0, 12.0, 12.0)?];
    let density = density_from_boxes(&boxes, w, h)?;
    out.push_str(&format!(
        "density mass {:.3} for {} boxes\n",
        density.total(),
        boxes.len()
    ));

    let depth = SynthDepthProvider(DepthMode::VerticalGradient);
    let stack = build_stack(&curr, Some(&prev), 2, &depth, &ConstantProvider(density), &cfg)?;
    out.push_str(&format!(
        "stack {}x{}, max flow {:.1}\n",
        stack.dims().0,
        stack.dims().1,
        stack.flow().max_magnitude()
    ));
    Ok(out)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
