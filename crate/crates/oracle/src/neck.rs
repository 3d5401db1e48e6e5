//! Transliteration of the neck's forward pass, stage by stage.

use crate::naive;
use crate::{FeatureMap, Matrix};

/// Ordered per-level feature maps, lowest level first.
#[derive(Debug, Clone)]
pub struct Levels {
    pub l_min: usize,
    pub features: Vec<FeatureMap>,
}

/// One selective-combination branch.
#[derive(Debug, Clone)]
pub struct Branch {
    /// `[C/r x C]` compaction weight.
    pub w: Matrix,
    pub ln_gamma: Vec<f64>,
    pub ln_beta: Vec<f64>,
    /// `[LC x C/r]` expansion weight.
    pub v: Matrix,
}

/// All weights of the neck. The four non-local projections are `1x1`
/// convolutions stored as `[out][in]` matrices.
#[derive(Debug, Clone)]
pub struct Params {
    pub w1: Matrix,
    pub w2: Matrix,
    pub local_branches: Vec<Branch>,
    pub global_branch: Branch,
    pub theta: Matrix,
    pub phi: Matrix,
    pub g_proj: Matrix,
    pub w_z: Matrix,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub gather_level: usize,
    pub ln_eps: f64,
}

fn spatial(x: &FeatureMap) -> (usize, usize) {
    (x[0].len(), x[0][0].len())
}

/// Resize every level to the gather level's spatial size.
pub fn gather_ref(levels: &Levels, cfg: &Config) -> Result<Vec<FeatureMap>, String> {
    let pos = cfg
        .gather_level
        .checked_sub(levels.l_min)
        .filter(|&p| p < levels.features.len())
        .ok_or_else(|| format!("gather level {} out of range", cfg.gather_level))?;
    let (th, tw) = spatial(&levels.features[pos]);
    levels
        .features
        .iter()
        .map(|f| naive::resize(f, th, tw))
        .collect()
}

/// Concatenate, gate every channel with a two-layer sigmoid net, split back.
pub fn channel_rescale_ref(
    gathered: &[FeatureMap],
    w1: &Matrix,
    w2: &Matrix,
) -> Result<(Vec<FeatureMap>, Vec<f64>), String> {
    let stacked = naive::concat_channels(gathered);
    let pooled = naive::global_avg_pool(&stacked);
    let hidden: Vec<f64> = w1
        .iter()
        .map(|row| {
            naive::relu(
                row.iter()
                    .zip(&pooled)
                    .map(|(&wv, &xv)| wv * xv)
                    .sum::<f64>(),
            )
        })
        .collect();
    let gate: Vec<f64> = w2
        .iter()
        .map(|row| {
            naive::sigmoid(
                row.iter()
                    .zip(&hidden)
                    .map(|(&wv, &hv)| wv * hv)
                    .sum::<f64>(),
            )
        })
        .collect();
    if gate.len() != stacked.len() {
        return Err("gate length does not match channel count".into());
    }
    let rescaled: FeatureMap = stacked
        .iter()
        .zip(&gate)
        .map(|(plane, &s)| {
            plane
                .iter()
                .map(|row| row.iter().map(|&v| s * v).collect())
                .collect()
        })
        .collect();
    Ok((naive::split_channels(&rescaled, gathered.len()), gate))
}

/// Per-channel soft attention over levels; returns the fused map and the
/// `L x C` attention matrix.
pub fn selective_combine_ref(
    q: &[FeatureMap],
    branch: &Branch,
    ln_eps: f64,
) -> Result<(FeatureMap, Matrix), String> {
    let l = q.len();
    let c = q[0].len();
    let (h, w) = spatial(&q[0]);

    let mut summed = q[0].clone();
    for qi in &q[1..] {
        summed = naive::add(&summed, qi);
    }
    let context = naive::global_avg_pool(&summed);

    let compacted: Vec<f64> = branch
        .w
        .iter()
        .map(|row| {
            row.iter()
                .zip(&context)
                .map(|(&wv, &gv)| wv * gv)
                .sum::<f64>()
        })
        .collect();
    let normed = naive::layer_norm(&compacted, &branch.ln_gamma, &branch.ln_beta, ln_eps);
    let guide: Vec<f64> = normed.iter().map(|&v| naive::relu(v)).collect();

    let raw: Vec<f64> = branch
        .v
        .iter()
        .map(|row| {
            row.iter()
                .zip(&guide)
                .map(|(&wv, &zv)| wv * zv)
                .sum::<f64>()
        })
        .collect();
    if raw.len() != l * c {
        return Err("expansion weight rows do not match L*C".into());
    }
    // Level-major reshape: logits[i][ch] = raw[i*C + ch].
    let logits: Matrix = (0..l).map(|i| raw[i * c..(i + 1) * c].to_vec()).collect();
    let attention = naive::softmax_over_levels(&logits);

    let mut fused = vec![vec![vec![0.0; w]; h]; c];
    for (i, qi) in q.iter().enumerate() {
        for ch in 0..c {
            let a = attention[i][ch];
            for y in 0..h {
                for x in 0..w {
                    fused[ch][y][x] += a * qi[ch][y][x];
                }
            }
        }
    }
    Ok((fused, attention))
}

/// Embedded-Gaussian self-attention with residual output projection.
///
/// Position `i` attends to every position `j` with weight
/// `softmax_j(theta_i . phi_j / sqrt(C/2))`; an explicit `N x N` matrix is
/// built and applied with loops.
pub fn nonlocal_refine_ref(fg: &FeatureMap, p: &Params) -> Result<FeatureMap, String> {
    let c = fg.len();
    if c % 2 != 0 {
        return Err("non-local block needs an even channel count".into());
    }
    let (h, w) = spatial(fg);
    let n = h * w;
    let half = c / 2;

    let theta = naive::project_1x1(fg, &p.theta);
    let phi = naive::project_1x1(fg, &p.phi);
    let gproj = naive::project_1x1(fg, &p.g_proj);

    let flat = |m: &FeatureMap, ch: usize, pos: usize| m[ch][pos / w][pos % w];
    let scale = 1.0 / (half as f64).sqrt();

    let mut attn = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        let mut row = vec![0.0; n];
        for j in 0..n {
            let mut dot = 0.0;
            for ch in 0..half {
                dot += flat(&theta, ch, i) * flat(&phi, ch, j);
            }
            row[j] = dot * scale;
            if row[j] > max {
                max = row[j];
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            row[j] = (row[j] - max).exp();
            sum += row[j];
        }
        for j in 0..n {
            attn[i][j] = row[j] / sum;
        }
    }

    let mut aggregated = vec![vec![vec![0.0; w]; h]; half];
    for ch in 0..half {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += flat(&gproj, ch, j) * attn[i][j];
            }
            aggregated[ch][i / w][i % w] = acc;
        }
    }

    let projected = naive::project_1x1(&aggregated, &p.w_z);
    Ok(naive::add(fg, &projected))
}

/// Add the refined global feature to each local feature, resize back to each
/// level's native resolution and residual-add the original input.
pub fn fuse_scatter_ref(
    f_local: &[FeatureMap],
    g_feat: &FeatureMap,
    levels: &Levels,
) -> Result<Levels, String> {
    let mut out = Vec::with_capacity(levels.features.len());
    for (fl, input) in f_local.iter().zip(&levels.features) {
        let fused = naive::add(fl, g_feat);
        let (th, tw) = spatial(input);
        let scattered = naive::resize(&fused, th, tw)?;
        out.push(naive::add(&scattered, input));
    }
    Ok(Levels {
        l_min: levels.l_min,
        features: out,
    })
}

/// The whole forward pass: gather, rescale, combine per level and globally,
/// refine, fuse and scatter.
pub fn reference_forward(
    levels: &Levels,
    params: &Params,
    cfg: &Config,
) -> Result<Levels, String> {
    let gathered = gather_ref(levels, cfg)?;
    let (q, _gate) = channel_rescale_ref(&gathered, &params.w1, &params.w2)?;
    if params.local_branches.len() != q.len() {
        return Err("one local branch per level is required".into());
    }
    let mut f_local = Vec::with_capacity(q.len());
    for branch in &params.local_branches {
        let (fused, _a) = selective_combine_ref(&q, branch, cfg.ln_eps)?;
        f_local.push(fused);
    }
    let (f_global, _a) = selective_combine_ref(&q, &params.global_branch, cfg.ln_eps)?;
    let refined = nonlocal_refine_ref(&f_global, params)?;
    fuse_scatter_ref(&f_local, &refined, levels)
}
