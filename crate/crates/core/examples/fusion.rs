//! Forward pass of the fusion network on a random stack, the two identity
//! reductions of its fusion coefficients, and a finite-difference check of
//! the analytic gradients.

use headtrack::fusion::{
    conv_attention, extract_and_concat, grad_check, motion_static_fuse, project_branches, spatial_mask_fuse,
    split_regroup, ForwardTrace, FusionConfig, FusionParams,
};
use headtrack::motion_maps::{FlowField, ImageFrame, SourceStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stack(seed: u64, w: usize, h: usize) -> anyhow::Result<SourceStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = |c: usize| ImageFrame::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f32>()).collect());
    let (rgb, diff, depth, density) = (frame(3)?, frame(1)?, frame(1)?, frame(1)?);
    let flow = FlowField::zeros(w, h);
    Ok(SourceStack::new(rgb, diff, flow, depth, density)?)
}

pub fn run_example() -> anyhow::Result<String> {
    let stack = random_stack(7, 8, 6)?;
    let params = FusionParams::init_with_std(FusionConfig::default(), 7, 0.3);
    let mut out = format!("{} parameters\n", params.parameter_count());

    let trace = ForwardTrace::run(&stack, &params)?;
    let heat = trace.value(trace.heatmap);
    out.push_str(&format!("heatmap shape {:?}, sum {:.4}\n", heat.shape(), heat.sum()));

    // alpha = 0, beta = 1 turns both fusions into pass-throughs
    let h_cat = extract_and_concat(&stack, &params)?;
    let h_att = conv_attention(&h_cat, &params)?;
    let h_mask = spatial_mask_fuse(&h_att, &h_cat, 0.0, 1.0, &params)?;
    out.push_str(&format!("mask fusion is identity: {}\n", h_mask == h_cat));
    let (m, s) = split_regroup(&h_cat, &params)?;
    let (pm, ps) = project_branches(&m, &s, &params)?;
    let h_agg = motion_static_fuse(&ps, &pm, 0.0, 1.0)?;
    out.push_str(&format!("motion/static fusion keeps static path: {}\n", h_agg == ps));

    let small = random_stack(11, 5, 4)?;
    let report = grad_check(&params, &small, 5e-5, 2, 1)?;
    out.push_str(&format!(
        "grad check: {} coordinates, max relative error {:.1e}\n",
        report.checked, report.max_rel_error
    ));
    Ok(out)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
