//! Multi-source feature fusion at toy scale, in double precision.
//!
//! Five per-source extractors with one shared architecture feed a
//! concatenation, convolutional (coordinate + channel) attention, a learned
//! spatial mask, and a motion/static Hadamard fusion. A tape-based
//! reverse-mode layer ([`graph`]) differentiates the whole pipeline so it can
//! be checked against finite differences; there is no training loop.

pub mod graph;
mod network;
mod params;
mod tensor;

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use network::{
    conv_attention, extract_and_concat, forward, motion_static_fuse, project_branches, source_tensor, spatial_mask,
    spatial_mask_fuse, split_regroup, toy_head, ForwardTrace, Objective, ParamGrads,
};
pub use params::{BlobType, FusionConfig, FusionParams, COEFFICIENTS, INIT_STD};
pub use tensor::Tensor;

use crate::motion_maps::{Source, SourceStack};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("{source_name} extractor: {message}")]
    Source { source_name: &'static str, message: String },
    #[error("finite-difference step {0} outside [1e-6, 1e-4]")]
    Epsilon(f64),
    #[error("invalid parameter file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FusionError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        FusionError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub checked: usize,
}

/// The objective used by [`grad_check`]: squared error of the heatmap
/// against the stack's density map.
pub fn density_objective(stack: &SourceStack) -> Objective {
    Objective::SquaredError(source_tensor(stack, Source::Density))
}

fn loss_at(stack: &SourceStack, params: &FusionParams, objective: &Objective) -> Result<f64, FusionError> {
    let mut trace = ForwardTrace::run(stack, params)?;
    let l = trace.loss(objective)?;
    Ok(trace.value(l).item())
}

/// Compares reverse-mode gradients against central differences on up to
/// `per_param` randomly chosen coordinates of every parameter tensor.
///
/// The numeric derivative is the five-point central stencil with step
/// `epsilon`, probing `±epsilon` and `±2 epsilon`. Its truncation error is
/// fourth order, so a step large enough to keep loss roundoff small does not
/// trade it for curvature error.
pub fn grad_check(
    params: &FusionParams,
    stack: &SourceStack,
    epsilon: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, FusionError> {
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(FusionError::Epsilon(epsilon));
    }
    let objective = density_objective(stack);
    let mut trace = ForwardTrace::run(stack, params)?;
    let loss = trace.loss(&objective)?;
    let grads = trace.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut probe = params.clone();
    for (name, t) in params.iter() {
        let n = t.len();
        for idx in sample(&mut rng, n, per_param.min(n)).into_iter() {
            let orig = t.data()[idx];
            let mut at = |offset: f64| -> Result<f64, FusionError> {
                probe.get_mut(name).expect("same names").data_mut()[idx] = orig + offset;
                loss_at(stack, &probe, &objective)
            };
            let near = at(epsilon)? - at(-epsilon)?;
            let far = at(2.0 * epsilon)? - at(-2.0 * epsilon)?;
            probe.get_mut(name).expect("same names").data_mut()[idx] = orig;
            let numeric = (8.0 * near - far) / (12.0 * epsilon);
            let analytic = grads.get(name).expect("gradient for every parameter").data()[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if !rel.is_finite() {
                return Err(FusionError::NonFinite(format!("gradient check of {name}[{idx}]")));
            }
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = format!("{name}[{idx}]");
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
