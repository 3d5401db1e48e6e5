//! The dense kernel set.
//!
//! Every kernel is a pure function: identical inputs give bit-identical
//! outputs independent of the caller's thread count. Reductions run in a
//! fixed order (left to right over the contracted index), so results are
//! reproducible across platforms and are directly comparable against a
//! naive loop oracle.

use super::{Scalar, Shape3, Tensor};
use crate::error::{Error, Result};

/// Elementwise nonlinearity selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
}

/// Exact matrix product of `[m,k] x [k,n]`, accumulated left to right over `k`.
pub fn matmul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(
            "matmul",
            format!("inner extents differ: [{m},{k}] x [{k2},{n}]"),
        ));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = E::zero();
            for t in 0..k {
                acc = acc + ad[i * k + t] * bd[t * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::checked("matmul", vec![m, n], out)
}

/// Mean over the spatial extent of each channel.
pub fn global_avg_pool<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape3()?;
    let inv = E::from_f64(1.0 / (s.h * s.w) as f64);
    let d = x.data();
    let out = (0..s.c)
        .map(|c| {
            let mut acc = E::zero();
            for i in 0..s.h * s.w {
                acc = acc + d[c * s.h * s.w + i];
            }
            acc * inv
        })
        .collect();
    Tensor::checked("global_avg_pool", vec![s.c], out)
}

pub(crate) fn sigmoid_scalar<E: Scalar>(t: E) -> E {
    // Branch on sign so exp never overflows.
    if t >= E::zero() {
        E::one() / (E::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (E::one() + e)
    }
}

pub(crate) fn relu_scalar<E: Scalar>(t: E) -> E {
    if t > E::zero() {
        t
    } else {
        E::zero()
    }
}

/// Elementwise sigmoid or ReLU, shape preserved.
pub fn activation<E: Scalar>(x: &Tensor<E>, kind: Activation) -> Result<Tensor<E>> {
    let out = x
        .data()
        .iter()
        .map(|&t| match kind {
            Activation::Sigmoid => sigmoid_scalar(t),
            Activation::Relu => relu_scalar(t),
        })
        .collect();
    Tensor::checked("activation", x.shape().to_vec(), out)
}

/// Softmax down each column of an `[L, c]` matrix with max subtraction:
/// column sums are one and every entry lies in `(0, 1]`.
pub fn softmax_over_levels<E: Scalar>(m: &Tensor<E>) -> Result<Tensor<E>> {
    let (l, c) = m.dims2()?;
    let d = m.data();
    let mut out = vec![E::zero(); l * c];
    for col in 0..c {
        let mut max = d[col];
        for row in 1..l {
            let v = d[row * c + col];
            if v > max {
                max = v;
            }
        }
        let mut sum = E::zero();
        for row in 0..l {
            let e = (d[row * c + col] - max).exp();
            out[row * c + col] = e;
            sum = sum + e;
        }
        for row in 0..l {
            out[row * c + col] = out[row * c + col] / sum;
        }
    }
    Tensor::checked("softmax_over_levels", vec![l, c], out)
}

/// Layer normalization of a vector with population variance and affine.
pub fn layer_norm<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<Tensor<E>> {
    if x.shape().len() != 1 || x.shape() != gamma.shape() || x.shape() != beta.shape() {
        return Err(Error::dim(
            "layer_norm",
            format!(
                "expected matching vectors, got {:?}/{:?}/{:?}",
                x.shape(),
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let d = x.numel();
    let inv_d = E::from_f64(1.0 / d as f64);
    let mut mean = E::zero();
    for &v in x.data() {
        mean = mean + v;
    }
    mean = mean * inv_d;
    let mut var = E::zero();
    for &v in x.data() {
        let dv = v - mean;
        var = var + dv * dv;
    }
    var = var * inv_d;
    let denom = (var + E::from_f64(eps)).sqrt();
    let out = x
        .data()
        .iter()
        .zip(gamma.data().iter().zip(beta.data()))
        .map(|(&v, (&g, &b))| g * (v - mean) / denom + b)
        .collect();
    Tensor::checked("layer_norm", vec![d], out)
}

fn pow2_ratio(small: usize, large: usize) -> Option<usize> {
    if large % small == 0 && (large / small).is_power_of_two() {
        Some(large / small)
    } else {
        None
    }
}

/// Resize a `[c,h,w]` map to a new spatial size.
///
/// Equal size copies bit-exactly. Upsampling is bilinear with half-pixel
/// centers: the source coordinate for output index `d` is
/// `(d + 0.5) * src/dst - 0.5`, clamped to `[0, src-1]`, and the four
/// neighbors combine in nested-lerp form
/// `lerp(lerp(p00, p01, fx), lerp(p10, p11, fx), fy)` with
/// `lerp(a, b, t) = a + t*(b - a)`, which reproduces constants exactly.
/// Downsampling is non-overlapping max pooling with kernel == stride.
/// Each spatial ratio must be a power of two and both axes must move in the
/// same direction.
pub fn resize<E: Scalar>(x: &Tensor<E>, target_h: usize, target_w: usize) -> Result<Tensor<E>> {
    let s = x.shape3()?;
    if target_h == 0 || target_w == 0 {
        return Err(Error::dim("resize", "target extents must be >= 1".to_string()));
    }
    if target_h == s.h && target_w == s.w {
        return Ok(x.clone());
    }
    let unsupported = || Error::UnsupportedResize {
        from_h: s.h,
        from_w: s.w,
        to_h: target_h,
        to_w: target_w,
    };
    if target_h >= s.h && target_w >= s.w {
        pow2_ratio(s.h, target_h).ok_or_else(unsupported)?;
        pow2_ratio(s.w, target_w).ok_or_else(unsupported)?;
        bilinear_up(x, s, target_h, target_w)
    } else if target_h <= s.h && target_w <= s.w {
        let ky = pow2_ratio(target_h, s.h).ok_or_else(unsupported)?;
        let kx = pow2_ratio(target_w, s.w).ok_or_else(unsupported)?;
        max_pool_down(x, s, ky, kx)
    } else {
        Err(unsupported())
    }
}

/// Interpolation stencil for one output index: source cells and fraction.
/// Shared by the forward kernel and its transposed adjoint.
pub(crate) fn bilinear_stencil(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, src - lo as f64)
}

fn bilinear_up<E: Scalar>(x: &Tensor<E>, s: Shape3, th: usize, tw: usize) -> Result<Tensor<E>> {
    let mut out = Vec::with_capacity(s.c * th * tw);
    for c in 0..s.c {
        for dy in 0..th {
            let (y0, y1, fy) = bilinear_stencil(dy, s.h, th);
            let fy = E::from_f64(fy);
            for dx in 0..tw {
                let (x0, x1, fx) = bilinear_stencil(dx, s.w, tw);
                let fx = E::from_f64(fx);
                let p00 = x.at3(s, c, y0, x0);
                let p01 = x.at3(s, c, y0, x1);
                let p10 = x.at3(s, c, y1, x0);
                let p11 = x.at3(s, c, y1, x1);
                let top = p00 + fx * (p01 - p00);
                let bot = p10 + fx * (p11 - p10);
                out.push(top + fy * (bot - top));
            }
        }
    }
    Tensor::checked("resize", vec![s.c, th, tw], out)
}

fn max_pool_down<E: Scalar>(x: &Tensor<E>, s: Shape3, ky: usize, kx: usize) -> Result<Tensor<E>> {
    let (oh, ow) = (s.h / ky, s.w / kx);
    let mut out = Vec::with_capacity(s.c * oh * ow);
    for c in 0..s.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = x.at3(s, c, oy * ky, ox * kx);
                for iy in oy * ky..(oy + 1) * ky {
                    for ix in ox * kx..(ox + 1) * kx {
                        let v = x.at3(s, c, iy, ix);
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::checked("resize", vec![s.c, oh, ow], out)
}

/// Stack feature maps along the channel axis, input order preserved.
pub fn concat_channels<E: Scalar>(xs: &[Tensor<E>]) -> Result<Tensor<E>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::dim("concat_channels", "empty input list".to_string()))?
        .shape3()?;
    let mut total_c = 0;
    for x in xs {
        let s = x.shape3()?;
        if s.h != first.h || s.w != first.w {
            return Err(Error::dim(
                "concat_channels",
                format!("spatial mismatch: {}x{} vs {}x{}", s.h, s.w, first.h, first.w),
            ));
        }
        total_c += s.c;
    }
    let mut out = Vec::with_capacity(total_c * first.h * first.w);
    for x in xs {
        out.extend_from_slice(x.data());
    }
    Tensor::checked("concat_channels", vec![total_c, first.h, first.w], out)
}

/// Split into `groups` equal channel blocks; inverse of [`concat_channels`].
pub fn split_channels<E: Scalar>(x: &Tensor<E>, groups: usize) -> Result<Vec<Tensor<E>>> {
    let s = x.shape3()?;
    if groups == 0 || s.c % groups != 0 {
        return Err(Error::dim(
            "split_channels",
            format!("{} channels are not divisible into {groups} groups", s.c),
        ));
    }
    let per = s.c / groups;
    let block = per * s.h * s.w;
    (0..groups)
        .map(|g| {
            Tensor::checked(
                "split_channels",
                vec![per, s.h, s.w],
                x.data()[g * block..(g + 1) * block].to_vec(),
            )
        })
        .collect()
}

/// Cross-correlation with zero padding and no bias.
///
/// Kernel size 1 or 3, stride 1 or 2, padding 0 or 1. Accumulation order is
/// fixed: input channel, then kernel row, then kernel column.
pub fn conv2d<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let s = x.shape3()?;
    let wdims = weight.shape();
    let (c_out, c_in, k) = match *wdims {
        [co, ci, kh, kw] if kh == kw => (co, ci, kh),
        _ => {
            return Err(Error::dim(
                "conv2d",
                format!("weight must be [c_out, c_in, k, k], got {wdims:?}"),
            ))
        }
    };
    if !matches!(k, 1 | 3) || !matches!(stride, 1 | 2) || pad > 1 {
        return Err(Error::dim(
            "conv2d",
            format!("unsupported geometry k={k} stride={stride} pad={pad}"),
        ));
    }
    if c_in != s.c {
        return Err(Error::dim(
            "conv2d",
            format!("weight expects {c_in} input channels, tensor has {}", s.c),
        ));
    }
    let oh = (s.h + 2 * pad).checked_sub(k).map(|v| v / stride + 1);
    let ow = (s.w + 2 * pad).checked_sub(k).map(|v| v / stride + 1);
    let (oh, ow) = match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
        _ => {
            return Err(Error::dim(
                "conv2d",
                format!("output would be empty for input {}x{}", s.h, s.w),
            ))
        }
    };
    let wd = weight.data();
    let mut out = Vec::with_capacity(c_out * oh * ow);
    for oc in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = E::zero();
                for ic in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && iy < s.h as isize && ix >= 0 && ix < s.w as isize {
                                let xv = x.at3(s, ic, iy as usize, ix as usize);
                                let wv = wd[((oc * c_in + ic) * k + ky) * k + kx];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::checked("conv2d", vec![c_out, oh, ow], out)
}

fn same_shape<'a, E: Scalar>(
    op: &'static str,
    a: &'a Tensor<E>,
    b: &Tensor<E>,
) -> Result<&'a [usize]> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(a.shape())
}

/// Elementwise sum of two same-shape tensors.
pub fn add<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = same_shape("add", a, b)?.to_vec();
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::checked("add", shape, out)
}

/// Elementwise product of two same-shape tensors.
pub fn mul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = same_shape("mul", a, b)?.to_vec();
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::checked("mul", shape, out)
}

/// Channel-wise multiplication: every spatial position of channel `c` is
/// scaled by `s[c]`.
pub fn scale_channels<E: Scalar>(x: &Tensor<E>, s: &Tensor<E>) -> Result<Tensor<E>> {
    let sh = x.shape3()?;
    if s.shape() != [sh.c] {
        return Err(Error::dim(
            "scale_channels",
            format!("scale must be [{}], got {:?}", sh.c, s.shape()),
        ));
    }
    let sd = s.data();
    let plane = sh.h * sh.w;
    let out = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| sd[i / plane] * v)
        .collect();
    Tensor::checked("scale_channels", x.shape().to_vec(), out)
}

/// Multiply every element by a constant.
pub fn scale<E: Scalar>(x: &Tensor<E>, factor: f64) -> Result<Tensor<E>> {
    let f = E::from_f64(factor);
    let out = x.data().iter().map(|&v| f * v).collect();
    Tensor::checked("scale", x.shape().to_vec(), out)
}

/// Matrix transpose.
pub fn transpose<E: Scalar>(m: &Tensor<E>) -> Result<Tensor<E>> {
    let (r, c) = m.dims2()?;
    let d = m.data();
    let mut out = vec![E::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::checked("transpose", vec![c, r], out)
}

/// Copy one row of a matrix as a vector.
pub fn select_row<E: Scalar>(m: &Tensor<E>, row: usize) -> Result<Tensor<E>> {
    let (r, c) = m.dims2()?;
    if row >= r {
        return Err(Error::dim(
            "select_row",
            format!("row {row} out of range for {r} rows"),
        ));
    }
    Tensor::checked(
        "select_row",
        vec![c],
        m.data()[row * c..(row + 1) * c].to_vec(),
    )
}

/// Sum of all elements as a `[1]` tensor, accumulated in storage order.
pub fn sum_all<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let mut acc = E::zero();
    for &v in x.data() {
        acc = acc + v;
    }
    Tensor::checked("sum_all", vec![1], vec![acc])
}
