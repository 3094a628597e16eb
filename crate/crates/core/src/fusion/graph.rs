//! A small tape for reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse and accumulates gradients into every node that
//! the loss depends on.

use super::tensor::{broadcast_map, broadcast_shape, Tensor};
use super::FusionError;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var },
    Sigmoid(Var),
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    Mean { x: Var, axis: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// `None` when the loss does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Stride-1, zero "same" padding convolution.
    /// `x: (ci, h, w)`, `w: (co, ci, k, k)` with odd `k`, `b: (co)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, FusionError> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        let (ci, h, wd) = xt.dims3()?;
        let &[co, wci, k, k2] = wt.shape() else {
            return Err(FusionError::Shape(format!(
                "conv weight must be rank 4, got {:?}",
                wt.shape()
            )));
        };
        if wci != ci || k != k2 || k % 2 == 0 {
            return Err(FusionError::Shape(format!(
                "conv weight {:?} does not fit input {:?}",
                wt.shape(),
                xt.shape()
            )));
        }
        if bt.shape() != [co] {
            return Err(FusionError::Shape(format!(
                "conv bias {:?} does not fit {co} outputs",
                bt.shape()
            )));
        }
        let p = k / 2;
        let (xd, wdt, bd) = (xt.data(), wt.data(), bt.data());
        let mut out = vec![0.0; co * h * wd];
        for o in 0..co {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = bd[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            let iy = y + ky;
                            if iy < p || iy - p >= h {
                                continue;
                            }
                            let iy = iy - p;
                            for kx in 0..k {
                                let ix = xx + kx;
                                if ix < p || ix - p >= wd {
                                    continue;
                                }
                                let ix = ix - p;
                                s += wdt[((o * ci + c) * k + ky) * k + kx] * xd[(c * h + iy) * wd + ix];
                            }
                        }
                    }
                    out[(o * h + y) * wd + xx] = s;
                }
            }
        }
        let t = Tensor::from_parts_unchecked(vec![co, h, wd], out);
        Ok(self.push(t, Op::Conv2d { x, w, b }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), t.data().iter().map(|&v| sigmoid(v)).collect());
        self.push(out, Op::Sigmoid(x))
    }

    /// Concatenation of rank-3 tensors along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, FusionError> {
        let first = self
            .value(
                *parts
                    .first()
                    .ok_or_else(|| FusionError::Shape("concat of nothing".into()))?,
            )
            .dims3()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, h, w) = self.value(p).dims3()?;
            if (h, w) != (first.1, first.2) {
                return Err(FusionError::Shape(format!(
                    "concat spatial mismatch: {:?} vs {:?}",
                    (h, w),
                    (first.1, first.2)
                )));
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::from_parts_unchecked(vec![channels, first.1, first.2], data);
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var, FusionError> {
        let t = self.value(x).channels(start, len)?;
        Ok(self.push(t, Op::SliceChannels { x, start }))
    }

    /// Mean over one axis, keeping it with size 1.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, FusionError> {
        let t = self.value(x);
        if axis >= t.shape().len() {
            return Err(FusionError::Shape(format!(
                "axis {axis} out of range for {:?}",
                t.shape()
            )));
        }
        let mut out_shape = t.shape().to_vec();
        let n = out_shape[axis] as f64;
        out_shape[axis] = 1;
        let map = broadcast_map(&out_shape, t.shape());
        let mut out = vec![0.0; out_shape.iter().product()];
        for (i, &v) in t.data().iter().enumerate() {
            out[map[i]] += v / n;
        }
        let t = Tensor::from_parts_unchecked(out_shape, out);
        Ok(self.push(t, Op::Mean { x, axis }))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, FusionError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(ta.shape(), tb.shape())?;
        let (ma, mb) = (broadcast_map(ta.shape(), &shape), broadcast_map(tb.shape(), &shape));
        let data = ma
            .iter()
            .zip(&mb)
            .map(|(&i, &j)| f(ta.data()[i], tb.data()[j]))
            .collect();
        let t = Tensor::from_parts_unchecked(shape, data);
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, FusionError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, FusionError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Broadcasting element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, FusionError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), t.data().iter().map(|v| v * v).collect());
        self.push(out, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads, FusionError> {
        if self.value(loss).len() != 1 {
            return Err(FusionError::Shape(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b } => {
                    let (xt, wt) = (self.value(*x), self.value(*w));
                    let (ci, h, wd) = xt.dims3()?;
                    let (co, k) = (wt.shape()[0], wt.shape()[2]);
                    let p = k / 2;
                    let (xd, wdt, dyd) = (xt.data(), wt.data(), dy.data());
                    let mut dx = vec![0.0; xd.len()];
                    let mut dw = vec![0.0; wdt.len()];
                    let mut db = vec![0.0; co];
                    for o in 0..co {
                        for y in 0..h {
                            for xx in 0..wd {
                                let g = dyd[(o * h + y) * wd + xx];
                                if g == 0.0 {
                                    continue;
                                }
                                db[o] += g;
                                for c in 0..ci {
                                    for ky in 0..k {
                                        let iy = y + ky;
                                        if iy < p || iy - p >= h {
                                            continue;
                                        }
                                        let iy = iy - p;
                                        for kx in 0..k {
                                            let ix = xx + kx;
                                            if ix < p || ix - p >= wd {
                                                continue;
                                            }
                                            let ix = ix - p;
                                            let wi = ((o * ci + c) * k + ky) * k + kx;
                                            let xi = (c * h + iy) * wd + ix;
                                            dx[xi] += wdt[wi] * g;
                                            dw[wi] += xd[xi] * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let (xs, ws, bs) = (xt.shape().to_vec(), wt.shape().to_vec(), vec![co]);
                    accumulate(&mut grads[x.0], &xs, |g| {
                        g.iter_mut().zip(&dx).for_each(|(a, b)| *a += b)
                    });
                    accumulate(&mut grads[w.0], &ws, |g| {
                        g.iter_mut().zip(&dw).for_each(|(a, b)| *a += b)
                    });
                    accumulate(&mut grads[b.0], &bs, |g| {
                        g.iter_mut().zip(&db).for_each(|(a, b)| *a += b)
                    });
                }
                Op::Sigmoid(x) => {
                    let s = node.value.data();
                    let shape = node.value.shape().to_vec();
                    accumulate(&mut grads[x.0], &shape, |g| {
                        for ((gi, &si), &d) in g.iter_mut().zip(s).zip(dy.data()) {
                            *gi += d * si * (1.0 - si);
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.value(*p).shape().to_vec();
                        let n = self.value(*p).len();
                        let chunk = &dy.data()[offset..offset + n];
                        accumulate(&mut grads[p.0], &shape, |g| {
                            g.iter_mut().zip(chunk).for_each(|(a, b)| *a += b)
                        });
                        offset += n;
                    }
                }
                Op::SliceChannels { x, start } => {
                    let xt = self.value(*x);
                    let (_, h, w) = xt.dims3()?;
                    let off = start * h * w;
                    let shape = xt.shape().to_vec();
                    accumulate(&mut grads[x.0], &shape, |g| {
                        g[off..off + dy.len()]
                            .iter_mut()
                            .zip(dy.data())
                            .for_each(|(a, b)| *a += b)
                    });
                }
                Op::Mean { x, axis } => {
                    let xt = self.value(*x);
                    let n = xt.shape()[*axis] as f64;
                    let map = broadcast_map(node.value.shape(), xt.shape());
                    let shape = xt.shape().to_vec();
                    accumulate(&mut grads[x.0], &shape, |g| {
                        for (gi, &m) in g.iter_mut().zip(&map) {
                            *gi += dy.data()[m] / n;
                        }
                    });
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let out_shape = node.value.shape();
                    let (ma, mb) = (
                        broadcast_map(ta.shape(), out_shape),
                        broadcast_map(tb.shape(), out_shape),
                    );
                    let mut da = vec![0.0; ta.len()];
                    let mut dbv = vec![0.0; tb.len()];
                    for (k, &d) in dy.data().iter().enumerate() {
                        let (i, j) = (ma[k], mb[k]);
                        match &node.op {
                            Op::Add(..) => {
                                da[i] += d;
                                dbv[j] += d;
                            }
                            Op::Sub(..) => {
                                da[i] += d;
                                dbv[j] -= d;
                            }
                            _ => {
                                da[i] += d * tb.data()[j];
                                dbv[j] += d * ta.data()[i];
                            }
                        }
                    }
                    let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
                    accumulate(&mut grads[a.0], &sa, |g| {
                        g.iter_mut().zip(&da).for_each(|(x, y)| *x += y)
                    });
                    accumulate(&mut grads[b.0], &sb, |g| {
                        g.iter_mut().zip(&dbv).for_each(|(x, y)| *x += y)
                    });
                }
                Op::Square(x) => {
                    let xt = self.value(*x);
                    let shape = xt.shape().to_vec();
                    accumulate(&mut grads[x.0], &shape, |g| {
                        for ((gi, &xi), &d) in g.iter_mut().zip(xt.data()).zip(dy.data()) {
                            *gi += 2.0 * xi * d;
                        }
                    });
                }
                Op::Sum(x) => {
                    let d = dy.item();
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads[x.0], &shape, |g| g.iter_mut().for_each(|gi| *gi += d));
                }
            }
            if grads[i].is_none() {
                grads[i] = Some(dy);
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.data().iter().any(|v| !v.is_finite()) {
                    return Err(FusionError::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        Ok(Grads { grads })
    }
}
