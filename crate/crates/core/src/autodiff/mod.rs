//! Reverse-mode differentiation over the tensor kernels.
//!
//! A [`Tape`] records each operation together with its forward value; the
//! backward pass walks the record in reverse and applies each operation's
//! vector-Jacobian product. Tapes are rebuilt per forward call and are
//! single-threaded; distinct tapes may run on distinct threads.

pub mod gradcheck;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::tensor::kernels::{self, Activation};
use crate::tensor::Tensor;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Reference to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    GlobalAvgPool { x: NodeId },
    Activation { x: NodeId, kind: Activation },
    SoftmaxOverLevels { m: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    Resize { x: NodeId },
    ConcatChannels { xs: Vec<NodeId> },
    SplitChunk { x: NodeId, chunk: usize, groups: usize },
    Conv2d { x: NodeId, weight: NodeId, stride: usize, pad: usize },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    ScaleChannels { x: NodeId, s: NodeId },
    Scale { x: NodeId, factor: f64 },
    Transpose { m: NodeId },
    SelectRow { m: NodeId, row: usize },
    Reshape { x: NodeId },
    SumAll { x: NodeId },
}

struct Node {
    op: Op,
    value: Tensor<f64>,
}

/// Append-only record of a forward computation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor.
    pub fn leaf(&mut self, t: Tensor<f64>) -> NodeId {
        self.push(Op::Leaf, t)
    }

    /// Forward value stored for a node.
    pub fn value(&self, id: NodeId) -> Result<&Tensor<f64>> {
        self.own(id)?;
        Ok(&self.nodes[id.index].value)
    }

    fn own(&self, id: NodeId) -> Result<usize> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "node {}#{} does not belong to tape {}",
                id.tape, id.index, self.id
            )));
        }
        Ok(id.index)
    }

    fn push(&mut self, op: Op, value: Tensor<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn val(&self, id: NodeId) -> &Tensor<f64> {
        &self.nodes[id.index].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.own(a)?;
        self.own(b)?;
        let v = kernels::matmul(self.val(a), self.val(b))?;
        Ok(self.push(Op::Matmul { a, b }, v))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.own(x)?;
        let v = kernels::global_avg_pool(self.val(x))?;
        Ok(self.push(Op::GlobalAvgPool { x }, v))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        self.own(x)?;
        let v = kernels::activation(self.val(x), kind)?;
        Ok(self.push(Op::Activation { x, kind }, v))
    }

    pub fn softmax_over_levels(&mut self, m: NodeId) -> Result<NodeId> {
        self.own(m)?;
        let v = kernels::softmax_over_levels(self.val(m))?;
        Ok(self.push(Op::SoftmaxOverLevels { m }, v))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        self.own(x)?;
        self.own(gamma)?;
        self.own(beta)?;
        let v = kernels::layer_norm(self.val(x), self.val(gamma), self.val(beta), eps)?;
        Ok(self.push(Op::LayerNorm { x, gamma, beta, eps }, v))
    }

    pub fn resize(&mut self, x: NodeId, target_h: usize, target_w: usize) -> Result<NodeId> {
        self.own(x)?;
        let v = kernels::resize(self.val(x), target_h, target_w)?;
        Ok(self.push(Op::Resize { x }, v))
    }

    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        for &x in xs {
            self.own(x)?;
        }
        let tensors: Vec<Tensor<f64>> = xs.iter().map(|&x| self.val(x).clone()).collect();
        let v = kernels::concat_channels(&tensors)?;
        Ok(self.push(Op::ConcatChannels { xs: xs.to_vec() }, v))
    }

    pub fn split_channels(&mut self, x: NodeId, groups: usize) -> Result<Vec<NodeId>> {
        self.own(x)?;
        let parts = kernels::split_channels(self.val(x), groups)?;
        Ok(parts
            .into_iter()
            .enumerate()
            .map(|(chunk, v)| self.push(Op::SplitChunk { x, chunk, groups }, v))
            .collect())
    }

    pub fn conv2d(&mut self, x: NodeId, weight: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        self.own(x)?;
        self.own(weight)?;
        let v = kernels::conv2d(self.val(x), self.val(weight), stride, pad)?;
        Ok(self.push(Op::Conv2d { x, weight, stride, pad }, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.own(a)?;
        self.own(b)?;
        let v = kernels::add(self.val(a), self.val(b))?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.own(a)?;
        self.own(b)?;
        let v = kernels::mul(self.val(a), self.val(b))?;
        Ok(self.push(Op::Mul { a, b }, v))
    }

    pub fn scale_channels(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.own(x)?;
        self.own(s)?;
        let v = kernels::scale_channels(self.val(x), self.val(s))?;
        Ok(self.push(Op::ScaleChannels { x, s }, v))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.own(x)?;
        let v = kernels::scale(self.val(x), factor)?;
        Ok(self.push(Op::Scale { x, factor }, v))
    }

    pub fn transpose(&mut self, m: NodeId) -> Result<NodeId> {
        self.own(m)?;
        let v = kernels::transpose(self.val(m))?;
        Ok(self.push(Op::Transpose { m }, v))
    }

    pub fn select_row(&mut self, m: NodeId, row: usize) -> Result<NodeId> {
        self.own(m)?;
        let v = kernels::select_row(self.val(m), row)?;
        Ok(self.push(Op::SelectRow { m, row }, v))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.own(x)?;
        let v = self.val(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape { x }, v))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.own(x)?;
        let v = kernels::sum_all(self.val(x))?;
        Ok(self.push(Op::SumAll { x }, v))
    }

    /// Recompute a node's value from the leaves through the same kernels.
    /// Replay of a recorded forward is bit-identical to the eager forward.
    pub fn replay(&self, root: NodeId) -> Result<Tensor<f64>> {
        self.own(root)?;
        let mut values: Vec<Option<Tensor<f64>>> = vec![None; root.index + 1];
        for i in 0..=root.index {
            let got = |v: &Vec<Option<Tensor<f64>>>, id: NodeId| v[id.index].clone().unwrap();
            let value = match &self.nodes[i].op {
                Op::Leaf => self.nodes[i].value.clone(),
                Op::Matmul { a, b } => kernels::matmul(&got(&values, *a), &got(&values, *b))?,
                Op::GlobalAvgPool { x } => kernels::global_avg_pool(&got(&values, *x))?,
                Op::Activation { x, kind } => kernels::activation(&got(&values, *x), *kind)?,
                Op::SoftmaxOverLevels { m } => kernels::softmax_over_levels(&got(&values, *m))?,
                Op::LayerNorm { x, gamma, beta, eps } => kernels::layer_norm(
                    &got(&values, *x),
                    &got(&values, *gamma),
                    &got(&values, *beta),
                    *eps,
                )?,
                Op::Resize { x } => {
                    let s = self.nodes[i].value.shape3()?;
                    kernels::resize(&got(&values, *x), s.h, s.w)?
                }
                Op::ConcatChannels { xs } => {
                    let parts: Vec<Tensor<f64>> = xs.iter().map(|&x| got(&values, x)).collect();
                    kernels::concat_channels(&parts)?
                }
                Op::SplitChunk { x, chunk, groups } => {
                    kernels::split_channels(&got(&values, *x), *groups)?[*chunk].clone()
                }
                Op::Conv2d { x, weight, stride, pad } => kernels::conv2d(
                    &got(&values, *x),
                    &got(&values, *weight),
                    *stride,
                    *pad,
                )?,
                Op::Add { a, b } => kernels::add(&got(&values, *a), &got(&values, *b))?,
                Op::Mul { a, b } => kernels::mul(&got(&values, *a), &got(&values, *b))?,
                Op::ScaleChannels { x, s } => {
                    kernels::scale_channels(&got(&values, *x), &got(&values, *s))?
                }
                Op::Scale { x, factor } => kernels::scale(&got(&values, *x), *factor)?,
                Op::Transpose { m } => kernels::transpose(&got(&values, *m))?,
                Op::SelectRow { m, row } => kernels::select_row(&got(&values, *m), *row)?,
                Op::Reshape { x } => got(&values, *x).reshaped(self.nodes[i].value.shape())?,
                Op::SumAll { x } => kernels::sum_all(&got(&values, *x))?,
            };
            values[i] = Some(value);
        }
        Ok(values[root.index].take().unwrap())
    }

    /// Reverse sweep from a scalar root. Returns a cotangent for every node
    /// that the root depends on; leaves outside the dependency cone get zeros.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        self.own(root)?;
        if self.val(root).numel() != 1 {
            return Err(Error::Tape(format!(
                "backward root must be scalar-valued, got shape {:?}",
                self.val(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<f64>>> = vec![None; self.nodes.len()];
        grads[root.index] = Some(Tensor::scalar(1.0)?);

        for i in (0..=root.index).rev() {
            let Some(ct) = grads[i].clone() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let da = kernels::matmul(&ct, &kernels::transpose(self.val(*b))?)?;
                    let db = kernels::matmul(&kernels::transpose(self.val(*a))?, &ct)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::GlobalAvgPool { x } => {
                    let s = self.val(*x).shape3()?;
                    let inv = 1.0 / (s.h * s.w) as f64;
                    let mut dx = vec![0.0; s.numel()];
                    for c in 0..s.c {
                        let g = ct.data()[c] * inv;
                        for i in 0..s.h * s.w {
                            dx[c * s.h * s.w + i] = g;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![s.c, s.h, s.w], dx)?)?;
                }
                Op::Activation { x, kind } => {
                    let dx = match kind {
                        // sigma' = y * (1 - y) from the saved output.
                        Activation::Sigmoid => {
                            let y = self.val(NodeId { tape: self.id, index: i });
                            let data = ct
                                .data()
                                .iter()
                                .zip(y.data())
                                .map(|(&g, &yv)| g * yv * (1.0 - yv))
                                .collect();
                            Tensor::new(y.shape().to_vec(), data)?
                        }
                        // Derivative at exactly zero is zero.
                        Activation::Relu => {
                            let xin = self.val(*x);
                            let data = ct
                                .data()
                                .iter()
                                .zip(xin.data())
                                .map(|(&g, &xv)| if xv > 0.0 { g } else { 0.0 })
                                .collect();
                            Tensor::new(xin.shape().to_vec(), data)?
                        }
                    };
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::SoftmaxOverLevels { m } => {
                    let a = self.val(NodeId { tape: self.id, index: i });
                    let (l, c) = a.dims2()?;
                    let mut dm = vec![0.0; l * c];
                    for col in 0..c {
                        let mut dot = 0.0;
                        for row in 0..l {
                            dot += ct.data()[row * c + col] * a.data()[row * c + col];
                        }
                        for row in 0..l {
                            let av = a.data()[row * c + col];
                            dm[row * c + col] = av * (ct.data()[row * c + col] - dot);
                        }
                    }
                    accumulate(&mut grads, *m, Tensor::new(vec![l, c], dm)?)?;
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (dx, dgamma, dbeta) =
                        layer_norm_vjp(self.val(*x), self.val(*gamma), &ct, *eps)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *gamma, dgamma)?;
                    accumulate(&mut grads, *beta, dbeta)?;
                }
                Op::Resize { x } => {
                    let dx = resize_vjp(self.val(*x), &ct)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::ConcatChannels { xs } => {
                    let cs = ct.shape3()?;
                    let mut offset = 0;
                    for &xid in xs {
                        let s = self.val(xid).shape3()?;
                        let block = s.numel();
                        let dx = Tensor::new(
                            vec![s.c, s.h, s.w],
                            ct.data()[offset * cs.h * cs.w..offset * cs.h * cs.w + block].to_vec(),
                        )?;
                        accumulate(&mut grads, xid, dx)?;
                        offset += s.c;
                    }
                }
                Op::SplitChunk { x, chunk, groups } => {
                    let s = self.val(*x).shape3()?;
                    let per = s.c / groups;
                    let block = per * s.h * s.w;
                    let mut dx = vec![0.0; s.numel()];
                    dx[chunk * block..(chunk + 1) * block].copy_from_slice(ct.data());
                    accumulate(&mut grads, *x, Tensor::new(vec![s.c, s.h, s.w], dx)?)?;
                }
                Op::Conv2d { x, weight, stride, pad } => {
                    let (dx, dw) = conv2d_vjp(self.val(*x), self.val(*weight), &ct, *stride, *pad)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *weight, dw)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, ct.clone())?;
                    accumulate(&mut grads, *b, ct)?;
                }
                Op::Mul { a, b } => {
                    let da = kernels::mul(&ct, self.val(*b))?;
                    let db = kernels::mul(&ct, self.val(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::ScaleChannels { x, s } => {
                    let dx = kernels::scale_channels(&ct, self.val(*s))?;
                    let xs = self.val(*x).shape3()?;
                    let plane = xs.h * xs.w;
                    let mut ds = vec![0.0; xs.c];
                    for c in 0..xs.c {
                        let mut acc = 0.0;
                        for i in 0..plane {
                            acc += ct.data()[c * plane + i] * self.val(*x).data()[c * plane + i];
                        }
                        ds[c] = acc;
                    }
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *s, Tensor::new(vec![xs.c], ds)?)?;
                }
                Op::Scale { x, factor } => {
                    accumulate(&mut grads, *x, kernels::scale(&ct, *factor)?)?;
                }
                Op::Transpose { m } => {
                    accumulate(&mut grads, *m, kernels::transpose(&ct)?)?;
                }
                Op::SelectRow { m, row } => {
                    let (r, c) = self.val(*m).dims2()?;
                    let mut dm = vec![0.0; r * c];
                    dm[row * c..(row + 1) * c].copy_from_slice(ct.data());
                    accumulate(&mut grads, *m, Tensor::new(vec![r, c], dm)?)?;
                }
                Op::Reshape { x } => {
                    accumulate(&mut grads, *x, ct.reshaped(self.val(*x).shape())?)?;
                }
                Op::SumAll { x } => {
                    let g = ct.data()[0];
                    let dx = Tensor::filled(self.val(*x).shape(), g)?;
                    accumulate(&mut grads, *x, dx)?;
                }
            }
        }

        // Every leaf gets a gradient; unreached leaves get zeros.
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape())?);
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor<f64>>], id: NodeId, g: Tensor<f64>) -> Result<()> {
    grads[id.index] = Some(match grads[id.index].take() {
        Some(existing) => kernels::add(&existing, &g)?,
        None => g,
    });
    Ok(())
}

fn layer_norm_vjp(
    x: &Tensor<f64>,
    gamma: &Tensor<f64>,
    ct: &Tensor<f64>,
    eps: f64,
) -> Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
    let d = x.numel();
    let inv_d = 1.0 / d as f64;
    let mean = x.data().iter().sum::<f64>() * inv_d;
    let var = x.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
    let denom = (var + eps).sqrt();
    let xhat: Vec<f64> = x.data().iter().map(|&v| (v - mean) / denom).collect();

    let dbeta = ct.clone();
    let dgamma: Vec<f64> = ct.data().iter().zip(&xhat).map(|(&g, &h)| g * h).collect();

    let gproj: Vec<f64> = ct
        .data()
        .iter()
        .zip(gamma.data())
        .map(|(&g, &gm)| g * gm)
        .collect();
    let mean_g = gproj.iter().sum::<f64>() * inv_d;
    let mean_gx = gproj.iter().zip(&xhat).map(|(&g, &h)| g * h).sum::<f64>() * inv_d;
    let dx: Vec<f64> = gproj
        .iter()
        .zip(&xhat)
        .map(|(&g, &h)| (g - mean_g - h * mean_gx) / denom)
        .collect();

    Ok((
        Tensor::new(vec![d], dx)?,
        Tensor::new(vec![d], dgamma)?,
        dbeta,
    ))
}

fn resize_vjp(x: &Tensor<f64>, ct: &Tensor<f64>) -> Result<Tensor<f64>> {
    let s = x.shape3()?;
    let o = ct.shape3()?;
    let mut dx = vec![0.0; s.numel()];
    if o.h == s.h && o.w == s.w {
        return Ok(ct.clone());
    }
    if o.h >= s.h && o.w >= s.w {
        // Transposed interpolation: scatter each output's stencil weights.
        for c in 0..s.c {
            for dy in 0..o.h {
                let (y0, y1, fy) = crate::tensor::kernels::bilinear_stencil(dy, s.h, o.h);
                for dxp in 0..o.w {
                    let (x0, x1, fx) = crate::tensor::kernels::bilinear_stencil(dxp, s.w, o.w);
                    let g = ct.at3(o, c, dy, dxp);
                    let base = c * s.h * s.w;
                    dx[base + y0 * s.w + x0] += (1.0 - fy) * (1.0 - fx) * g;
                    dx[base + y0 * s.w + x1] += (1.0 - fy) * fx * g;
                    dx[base + y1 * s.w + x0] += fy * (1.0 - fx) * g;
                    dx[base + y1 * s.w + x1] += fy * fx * g;
                }
            }
        }
    } else {
        // Max pooling: route to the argmax, first in row-major scan order.
        let ky = s.h / o.h;
        let kx = s.w / o.w;
        for c in 0..s.c {
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = (0, 0);
                    for iy in oy * ky..(oy + 1) * ky {
                        for ix in ox * kx..(ox + 1) * kx {
                            let v = x.at3(s, c, iy, ix);
                            if v > best {
                                best = v;
                                best_at = (iy, ix);
                            }
                        }
                    }
                    dx[(c * s.h + best_at.0) * s.w + best_at.1] += ct.at3(o, c, oy, ox);
                }
            }
        }
    }
    Tensor::new(vec![s.c, s.h, s.w], dx)
}

fn conv2d_vjp(
    x: &Tensor<f64>,
    weight: &Tensor<f64>,
    ct: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let s = x.shape3()?;
    let o = ct.shape3()?;
    let k = weight.shape()[2];
    let c_out = weight.shape()[0];
    let c_in = weight.shape()[1];
    let mut dx = vec![0.0; s.numel()];
    let mut dw = vec![0.0; weight.numel()];
    let wd = weight.data();
    for oc in 0..c_out {
        for oy in 0..o.h {
            for ox in 0..o.w {
                let g = ct.at3(o, oc, oy, ox);
                for ic in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && iy < s.h as isize && ix >= 0 && ix < s.w as isize {
                                let (iy, ix) = (iy as usize, ix as usize);
                                let widx = ((oc * c_in + ic) * k + ky) * k + kx;
                                dx[(ic * s.h + iy) * s.w + ix] += g * wd[widx];
                                dw[widx] += g * x.at3(s, ic, iy, ix);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![s.c, s.h, s.w], dx)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
    ))
}

/// Cotangents produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Result<Option<&Tensor<f64>>> {
        if id.tape != self.tape || id.index >= self.grads.len() {
            return Err(Error::Tape(format!(
                "node {}#{} does not belong to the differentiated tape",
                id.tape, id.index
            )));
        }
        Ok(self.grads[id.index].as_ref())
    }
}

impl Backend for Tape {
    type Elem = f64;
    type Value = NodeId;

    fn lift(&mut self, t: Tensor<f64>) -> NodeId {
        self.leaf(t)
    }

    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::matmul(self, *a, *b)
    }
    fn global_avg_pool(&mut self, x: &NodeId) -> Result<NodeId> {
        Tape::global_avg_pool(self, *x)
    }
    fn activation(&mut self, x: &NodeId, kind: Activation) -> Result<NodeId> {
        Tape::activation(self, *x, kind)
    }
    fn softmax_over_levels(&mut self, m: &NodeId) -> Result<NodeId> {
        Tape::softmax_over_levels(self, *m)
    }
    fn layer_norm(&mut self, x: &NodeId, gamma: &NodeId, beta: &NodeId, eps: f64) -> Result<NodeId> {
        Tape::layer_norm(self, *x, *gamma, *beta, eps)
    }
    fn resize(&mut self, x: &NodeId, target_h: usize, target_w: usize) -> Result<NodeId> {
        Tape::resize(self, *x, target_h, target_w)
    }
    fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        Tape::concat_channels(self, xs)
    }
    fn split_channels(&mut self, x: &NodeId, groups: usize) -> Result<Vec<NodeId>> {
        Tape::split_channels(self, *x, groups)
    }
    fn conv2d(&mut self, x: &NodeId, weight: &NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        Tape::conv2d(self, *x, *weight, stride, pad)
    }
    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::add(self, *a, *b)
    }
    fn scale_channels(&mut self, x: &NodeId, s: &NodeId) -> Result<NodeId> {
        Tape::scale_channels(self, *x, *s)
    }
    fn scale(&mut self, x: &NodeId, factor: f64) -> Result<NodeId> {
        Tape::scale(self, *x, factor)
    }
    fn transpose(&mut self, m: &NodeId) -> Result<NodeId> {
        Tape::transpose(self, *m)
    }
    fn select_row(&mut self, m: &NodeId, row: usize) -> Result<NodeId> {
        Tape::select_row(self, *m, row)
    }
    fn reshape(&mut self, x: &NodeId, shape: &[usize]) -> Result<NodeId> {
        Tape::reshape(self, *x, shape)
    }
    fn sum_all(&mut self, x: &NodeId) -> Result<NodeId> {
        Tape::sum_all(self, *x)
    }
}
