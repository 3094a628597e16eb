//! The fusion pipeline, stage by stage.
//!
//! ```text
//! h_cat    = Cat(N1(diff), N2(flow), N3(rgb), N4(depth), N5(density))
//! h_att    = ChA(CoA(Conv(Conv(h_cat))))
//! h_mask   = a1 * Sigmoid(Conv(Conv(h_att))) ⊙ h_cat + b1 * h_cat
//! h_motion = Cat(Conv(Conv(g1)), Conv(Conv(g2)))        // g_i: channel groups of h_mask
//! h_static = Cat(Conv(Conv(g3)), Conv(Conv(g4)), Conv(Conv(g5)))
//! h_agg    = a2 * P_s(h_static) ⊙ P_m(h_motion) + b2 * P_s(h_static)
//! heatmap  = Sigmoid(Conv1x1(h_agg))
//! ```
//!
//! `P_m` and `P_s` are 1x1 projections to a common channel count, needed
//! because the motion branch has two groups and the static branch three.

use std::collections::BTreeMap;

use super::graph::{Grads, Graph, Var};
use super::params::FusionParams;
use super::tensor::Tensor;
use super::FusionError;
use crate::motion_maps::{Source, SourceStack};

/// Parameters placed on a graph as leaves.
pub(crate) struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub(crate) fn new(g: &mut Graph, params: &FusionParams) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_string(), g.leaf(t.clone())))
            .collect();
        Self { vars }
    }

    fn var(&self, name: &str) -> Result<Var, FusionError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| FusionError::MissingParam(name.to_string()))
    }

    fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

fn conv(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Result<Var, FusionError> {
    let w = b.var(&format!("{prefix}.weight"))?;
    let bias = b.var(&format!("{prefix}.bias"))?;
    g.conv2d(x, w, bias)
        .map_err(|e| FusionError::Shape(format!("{prefix}: {e}")))
}

/// Applies `prefix.0`, `prefix.1`, ... for as many layers as exist.
fn conv_chain(g: &mut Graph, b: &Bound, prefix: &str, mut x: Var) -> Result<Var, FusionError> {
    let mut i = 0;
    while b.has(&format!("{prefix}.{i}.weight")) {
        x = conv(g, b, &format!("{prefix}.{i}"), x)?;
        i += 1;
    }
    if i == 0 {
        return Err(FusionError::MissingParam(format!("{prefix}.0.weight")));
    }
    Ok(x)
}

/// One source of the stack as a `(c, h, w)` tensor.
pub fn source_tensor(stack: &SourceStack, source: Source) -> Tensor {
    let (w, h) = stack.dims();
    let c = stack.channels(source);
    Tensor::from_parts_unchecked(vec![c, h, w], stack.planes(source).into_iter().map(f64::from).collect())
}

fn stage_extract(g: &mut Graph, b: &Bound, inputs: &[(Source, Var)]) -> Result<Var, FusionError> {
    let mut feats = Vec::with_capacity(inputs.len());
    for &(source, x) in inputs {
        let out = conv_chain(g, b, &format!("extract.{}", source.name()), x).map_err(|e| FusionError::Source {
            source_name: source.name(),
            message: e.to_string(),
        })?;
        feats.push(out);
    }
    g.concat(&feats)
}

fn stage_attend(g: &mut Graph, b: &Bound, h_cat: Var) -> Result<Var, FusionError> {
    let x = conv(g, b, "attend.conv.0", h_cat)?;
    let x = conv(g, b, "attend.conv.1", x)?;
    // coordinate attention: row and column profiles share one 1x1 conv
    let rows = g.mean(x, 2)?;
    let cols = g.mean(x, 1)?;
    let rows = conv(g, b, "attend.coa", rows)?;
    let cols = conv(g, b, "attend.coa", cols)?;
    let a_rows = g.sigmoid(rows);
    let a_cols = g.sigmoid(cols);
    let x = g.mul(x, a_rows)?;
    let x = g.mul(x, a_cols)?;
    // channel attention: one weight per channel from the global mean
    let pooled = g.mean(x, 2)?;
    let pooled = g.mean(pooled, 1)?;
    let logits = conv(g, b, "attend.cha", pooled)?;
    let a_chan = g.sigmoid(logits);
    g.mul(x, a_chan)
}

/// Returns `(mask, fused)`.
fn stage_mask(
    g: &mut Graph,
    b: &Bound,
    h_att: Var,
    h_cat: Var,
    alpha: Var,
    beta: Var,
) -> Result<(Var, Var), FusionError> {
    let m = conv(g, b, "mask.conv.0", h_att)?;
    let m = conv(g, b, "mask.conv.1", m)?;
    let mask = g.sigmoid(m);
    let gated = g.mul(mask, h_cat)?;
    let gated = g.mul(alpha, gated)?;
    let kept = g.mul(beta, h_cat)?;
    Ok((mask, g.add(gated, kept)?))
}

fn stage_regroup(g: &mut Graph, b: &Bound, h: Var) -> Result<(Var, Var), FusionError> {
    let (c, _, _) = g.value(h).dims3()?;
    if c % 5 != 0 {
        return Err(FusionError::Shape(format!(
            "{c} channels cannot be split into five source groups"
        )));
    }
    let group = c / 5;
    let mut parts = Vec::with_capacity(5);
    for (i, source) in Source::ALL.iter().enumerate() {
        let slice = g.slice_channels(h, i * group, group)?;
        parts.push(conv_chain(g, b, &format!("regroup.{}", source.name()), slice)?);
    }
    let motion = g.concat(&parts[..2])?;
    let stat = g.concat(&parts[2..])?;
    Ok((motion, stat))
}

fn stage_motion_static(g: &mut Graph, h_static: Var, h_motion: Var, alpha: Var, beta: Var) -> Result<Var, FusionError> {
    if g.value(h_static).shape() != g.value(h_motion).shape() {
        return Err(FusionError::Shape(format!(
            "static {:?} and motion {:?} must have equal shapes",
            g.value(h_static).shape(),
            g.value(h_motion).shape()
        )));
    }
    let prod = g.mul(h_static, h_motion)?;
    let prod = g.mul(alpha, prod)?;
    let kept = g.mul(beta, h_static)?;
    g.add(prod, kept)
}

fn stage_head(g: &mut Graph, b: &Bound, h: Var) -> Result<Var, FusionError> {
    let logits = conv(g, b, "head", h)?;
    Ok(g.sigmoid(logits))
}

/// Runs the per-source extractors and concatenates their outputs in the
/// order diff, flow, rgb, depth, density.
pub fn extract_and_concat(stack: &SourceStack, params: &FusionParams) -> Result<Tensor, FusionError> {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params);
    let inputs: Vec<_> = Source::ALL
        .iter()
        .map(|&s| (s, g.leaf(source_tensor(stack, s))))
        .collect();
    let out = stage_extract(&mut g, &b, &inputs)?;
    Ok(g.value(out).clone())
}

/// Two convs, coordinate attention, then channel attention.
pub fn conv_attention(h_cat: &Tensor, params: &FusionParams) -> Result<Tensor, FusionError> {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params);
    let x = g.leaf(h_cat.clone());
    let out = stage_attend(&mut g, &b, x)?;
    Ok(g.value(out).clone())
}

/// `alpha1 * Sigmoid(Conv(Conv(h_att))) ⊙ h_cat + beta1 * h_cat`.
pub fn spatial_mask_fuse(
    h_att: &Tensor,
    h_cat: &Tensor,
    alpha1: f64,
    beta1: f64,
    params: &FusionParams,
) -> Result<Tensor, FusionError> {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params);
    let (x, c) = (g.leaf(h_att.clone()), g.leaf(h_cat.clone()));
    let (a, bt) = (g.leaf(Tensor::scalar(alpha1)), g.leaf(Tensor::scalar(beta1)));
    let (_, out) = stage_mask(&mut g, &b, x, c, a, bt)?;
    Ok(g.value(out).clone())
}

/// The sigmoid mask alone; every value lies in `(0, 1)`.
pub fn spatial_mask(h_att: &Tensor, params: &FusionParams) -> Result<Tensor, FusionError> {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params);
    let x = g.leaf(h_att.clone());
    let one = g.leaf(Tensor::scalar(1.0));
    let (mask, _) = stage_mask(&mut g, &b, x, x, one, one)?;
    Ok(g.value(mask).clone())
}

/// Splits into five channel groups, convolves each, and regroups them as
/// `(motion, static) = (groups 1-2, groups 3-5)`.
pub fn split_regroup(h: &Tensor, params: &FusionParams) -> Result<(Tensor, Tensor), FusionError> {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params);
    let x = g.leaf(h.clone());
    let (m, s) = stage_regroup(&mut g, &b, x)?;
    Ok((g.value(m).clone(), g.value(s).clone()))
}

/// 1x1 projections of both branches to the common fuse width.
pub fn project_branches(
    h_motion: &Tensor,
    h_static: &Tensor,
    params: &FusionParams,
) -> Result<(Tensor, Tensor), FusionError> {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params);
    let (m, s) = (g.leaf(h_motion.clone()), g.leaf(h_static.clone()));
    let m = conv(&mut g, &b, "project.motion", m)?;
    let s = conv(&mut g, &b, "project.static", s)?;
    Ok((g.value(m).clone(), g.value(s).clone()))
}

/// `alpha2 * h_static ⊙ h_motion + beta2 * h_static`.
pub fn motion_static_fuse(
    h_static: &Tensor,
    h_motion: &Tensor,
    alpha2: f64,
    beta2: f64,
) -> Result<Tensor, FusionError> {
    let mut g = Graph::new();
    let (s, m) = (g.leaf(h_static.clone()), g.leaf(h_motion.clone()));
    let (a, b) = (g.leaf(Tensor::scalar(alpha2)), g.leaf(Tensor::scalar(beta2)));
    let out = stage_motion_static(&mut g, s, m, a, b)?;
    Ok(g.value(out).clone())
}

/// One 1x1 conv and a sigmoid: a per-pixel head-center score.
pub fn toy_head(h_agg: &Tensor, params: &FusionParams) -> Result<Tensor, FusionError> {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params);
    let x = g.leaf(h_agg.clone());
    let out = stage_head(&mut g, &b, x)?;
    Ok(g.value(out).clone())
}

/// The full pipeline up to the fused features.
pub fn forward(stack: &SourceStack, params: &FusionParams) -> Result<Tensor, FusionError> {
    let trace = ForwardTrace::run(stack, params)?;
    Ok(trace.value(trace.h_agg).clone())
}

/// Training-style targets for [`ForwardTrace::loss`].
#[derive(Debug, Clone)]
pub enum Objective {
    /// Sum of the heatmap.
    Sum,
    /// `sum((heatmap - target)^2) / 2`, target shaped `(1, h, w)`.
    SquaredError(Tensor),
}

/// A forward pass kept on its graph so it can be differentiated.
pub struct ForwardTrace {
    graph: Graph,
    bound: Bound,
    pub h_cat: Var,
    pub h_att: Var,
    pub mask: Var,
    pub h_mask: Var,
    pub h_motion: Var,
    pub h_static: Var,
    pub h_agg: Var,
    pub heatmap: Var,
}

impl ForwardTrace {
    pub fn run(stack: &SourceStack, params: &FusionParams) -> Result<Self, FusionError> {
        params.validate()?;
        let mut g = Graph::new();
        let b = Bound::new(&mut g, params);
        let inputs: Vec<_> = Source::ALL
            .iter()
            .map(|&s| (s, g.leaf(source_tensor(stack, s))))
            .collect();
        let h_cat = stage_extract(&mut g, &b, &inputs)?;
        let h_att = stage_attend(&mut g, &b, h_cat)?;
        let (a1, b1) = (b.var("alpha1")?, b.var("beta1")?);
        let (mask, h_mask) = stage_mask(&mut g, &b, h_att, h_cat, a1, b1)?;
        let (h_motion, h_static) = stage_regroup(&mut g, &b, h_mask)?;
        let pm = conv(&mut g, &b, "project.motion", h_motion)?;
        let ps = conv(&mut g, &b, "project.static", h_static)?;
        let (a2, b2) = (b.var("alpha2")?, b.var("beta2")?);
        let h_agg = stage_motion_static(&mut g, ps, pm, a2, b2)?;
        let heatmap = stage_head(&mut g, &b, h_agg)?;
        Ok(Self {
            graph: g,
            bound: b,
            h_cat,
            h_att,
            mask,
            h_mask,
            h_motion,
            h_static,
            h_agg,
            heatmap,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    /// The underlying graph, for building custom losses.
    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn loss(&mut self, objective: &Objective) -> Result<Var, FusionError> {
        let g = &mut self.graph;
        match objective {
            Objective::Sum => Ok(g.sum(self.heatmap)),
            Objective::SquaredError(target) => {
                let t = g.leaf(target.clone());
                let d = g.sub(self.heatmap, t)?;
                let sq = g.square(d);
                let s = g.sum(sq);
                let half = g.leaf(Tensor::scalar(0.5));
                g.mul(half, s)
            }
        }
    }

    /// Gradients of `loss` for every parameter. Parameters the loss does
    /// not reach get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads, FusionError> {
        let grads: Grads = self.graph.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, &var) in self.bound.iter() {
            let g = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.graph.value(var).shape()));
            out.insert(name.clone(), g);
        }
        Ok(ParamGrads(out))
    }
}

/// Gradient tensors keyed like [`FusionParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub BTreeMap<String, Tensor>);

impl ParamGrads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }
}
