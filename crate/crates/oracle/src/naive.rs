//! Scalar-loop kernels over nested `Vec`s.
//!
//! These follow the written definitions directly and are used both by
//! [`crate::neck::reference_forward`] and by per-kernel equivalence tests in
//! the optimized library.

use crate::{ConvWeight, FeatureMap, Matrix};

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let m = a.len();
    let k = a[0].len();
    let n = b[0].len();
    assert_eq!(b.len(), k, "inner extents must match");
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn global_avg_pool(x: &FeatureMap) -> Vec<f64> {
    let h = x[0].len();
    let w = x[0][0].len();
    x.iter()
        .map(|plane| {
            let mut sum = 0.0;
            for row in plane {
                for &v in row {
                    sum += v;
                }
            }
            sum / (h * w) as f64
        })
        .collect()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn relu(t: f64) -> f64 {
    if t > 0.0 {
        t
    } else {
        0.0
    }
}

/// Softmax down each column of an `L x C` matrix, with max subtraction.
pub fn softmax_over_levels(m: &Matrix) -> Matrix {
    let l = m.len();
    let c = m[0].len();
    let mut out = vec![vec![0.0; c]; l];
    for col in 0..c {
        let mut max = f64::NEG_INFINITY;
        for row in m {
            if row[col] > max {
                max = row[col];
            }
        }
        let mut sum = 0.0;
        for row in 0..l {
            let e = (m[row][col] - max).exp();
            out[row][col] = e;
            sum += e;
        }
        for row in 0..l {
            out[row][col] /= sum;
        }
    }
    out
}

/// Layer normalization over a vector with population variance.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let denom = (var + eps).sqrt();
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&v, (&g, &b))| g * (v - mean) / denom + b)
        .collect()
}

/// Bilinear upsample with half-pixel centers and edge clamping.
///
/// Source coordinate for output index `d` is `(d + 0.5) * src/dst - 0.5`,
/// clamped to `[0, src-1]`; the four neighbors are combined in nested-lerp
/// form so constants are preserved exactly.
pub fn bilinear_up(x: &FeatureMap, th: usize, tw: usize) -> FeatureMap {
    let h = x[0].len();
    let w = x[0][0].len();
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    x.iter()
        .map(|plane| {
            (0..th)
                .map(|dy| {
                    let src_y = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
                    let y0 = src_y.floor() as usize;
                    let y1 = (y0 + 1).min(h - 1);
                    let fy = src_y - y0 as f64;
                    (0..tw)
                        .map(|dx| {
                            let src_x =
                                ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                            let x0 = src_x.floor() as usize;
                            let x1 = (x0 + 1).min(w - 1);
                            let fx = src_x - x0 as f64;
                            let top = plane[y0][x0] + fx * (plane[y0][x1] - plane[y0][x0]);
                            let bot = plane[y1][x0] + fx * (plane[y1][x1] - plane[y1][x0]);
                            top + fy * (bot - top)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Non-overlapping max pooling with kernel == stride.
pub fn max_pool_down(x: &FeatureMap, ky: usize, kx: usize) -> FeatureMap {
    let h = x[0].len();
    let w = x[0][0].len();
    x.iter()
        .map(|plane| {
            (0..h / ky)
                .map(|oy| {
                    (0..w / kx)
                        .map(|ox| {
                            let mut best = f64::NEG_INFINITY;
                            for iy in oy * ky..(oy + 1) * ky {
                                for ix in ox * kx..(ox + 1) * kx {
                                    if plane[iy][ix] > best {
                                        best = plane[iy][ix];
                                    }
                                }
                            }
                            best
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Resize dispatch: identity, bilinear up, or max-pool down.
pub fn resize(x: &FeatureMap, th: usize, tw: usize) -> Result<FeatureMap, String> {
    let h = x[0].len();
    let w = x[0][0].len();
    if th == h && tw == w {
        return Ok(x.clone());
    }
    if th >= h && tw >= w {
        if th % h != 0 || tw % w != 0 || !(th / h).is_power_of_two() || !(tw / w).is_power_of_two()
        {
            return Err(format!("unsupported resize {h}x{w} -> {th}x{tw}"));
        }
        Ok(bilinear_up(x, th, tw))
    } else if th <= h && tw <= w {
        if h % th != 0 || w % tw != 0 || !(h / th).is_power_of_two() || !(w / tw).is_power_of_two()
        {
            return Err(format!("unsupported resize {h}x{w} -> {th}x{tw}"));
        }
        Ok(max_pool_down(x, h / th, w / tw))
    } else {
        Err(format!("mixed-direction resize {h}x{w} -> {th}x{tw}"))
    }
}

pub fn concat_channels(xs: &[FeatureMap]) -> FeatureMap {
    let mut out = Vec::new();
    for x in xs {
        for plane in x {
            out.push(plane.clone());
        }
    }
    out
}

pub fn split_channels(x: &FeatureMap, groups: usize) -> Vec<FeatureMap> {
    let per = x.len() / groups;
    (0..groups)
        .map(|g| x[g * per..(g + 1) * per].to_vec())
        .collect()
}

/// Plain cross-correlation with zero padding and no bias.
///
/// Accumulation runs over `ky, kx, in_ch` — a different nesting from the
/// optimized kernel, on purpose.
pub fn conv2d(x: &FeatureMap, weight: &ConvWeight, stride: usize, pad: usize) -> FeatureMap {
    let c_in = x.len();
    let h = x[0].len() as isize;
    let w = x[0][0].len() as isize;
    let k = weight[0][0].len();
    let oh = ((h + 2 * pad as isize - k as isize) / stride as isize + 1) as usize;
    let ow = ((w + 2 * pad as isize - k as isize) / stride as isize + 1) as usize;
    weight
        .iter()
        .map(|wf| {
            (0..oh)
                .map(|oy| {
                    (0..ow)
                        .map(|ox| {
                            let mut acc = 0.0;
                            for ky in 0..k {
                                for kx in 0..k {
                                    for ic in 0..c_in {
                                        let iy =
                                            (oy * stride + ky) as isize - pad as isize;
                                        let ix =
                                            (ox * stride + kx) as isize - pad as isize;
                                        if iy >= 0 && iy < h && ix >= 0 && ix < w {
                                            acc += x[ic][iy as usize][ix as usize]
                                                * wf[ic][ky][kx];
                                        }
                                    }
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Apply a `1x1` convolution expressed as an `[out][in]` matrix.
pub fn project_1x1(x: &FeatureMap, weight: &Matrix) -> FeatureMap {
    let h = x[0].len();
    let w = x[0][0].len();
    weight
        .iter()
        .map(|row| {
            (0..h)
                .map(|y| {
                    (0..w)
                        .map(|xx| {
                            let mut acc = 0.0;
                            for (ic, &wv) in row.iter().enumerate() {
                                acc += wv * x[ic][y][xx];
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn add(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    a.iter()
        .zip(b)
        .map(|(pa, pb)| {
            pa.iter()
                .zip(pb)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| x + y).collect())
                .collect()
        })
        .collect()
}
