//! The neck's forward pass, written once against [`Backend`] so the eager
//! evaluation and the differentiation tape run the exact same graph.

use crate::autodiff::gradcheck::{
    gradcheck, GradCheckReport, GradCheckSettings, ParamSet, ScalarObjective,
};
use crate::backend::{Backend, Eager};
use crate::error::{Error, Result};
use crate::neck::{CrParams, LevelSet, NonLocalParams, SfcBranchParams, SmslConfig, SmslParams};
use crate::tensor::kernels::Activation;
use crate::tensor::{Scalar, Shape3, Tensor};

pub(crate) struct BranchValues<V> {
    w: V,
    ln_gamma: V,
    ln_beta: V,
    v: V,
}

/// Neck weights lifted onto a backend.
pub(crate) struct NeckValues<V> {
    w1: V,
    w2: V,
    local: Vec<BranchValues<V>>,
    global: BranchValues<V>,
    theta: V,
    phi: V,
    g: V,
    w_z: V,
}

impl<V: Clone> NeckValues<V> {
    pub(crate) fn from_params<B>(backend: &mut B, params: &SmslParams<B::Elem>) -> Self
    where
        B: Backend<Value = V>,
    {
        let lift_branch = |b: &mut B, br: &SfcBranchParams<B::Elem>| BranchValues {
            w: b.lift(br.w.clone()),
            ln_gamma: b.lift(br.ln_gamma.clone()),
            ln_beta: b.lift(br.ln_beta.clone()),
            v: b.lift(br.v.clone()),
        };
        NeckValues {
            w1: backend.lift(params.cr.w1.clone()),
            w2: backend.lift(params.cr.w2.clone()),
            local: params
                .sfc_local
                .iter()
                .map(|br| lift_branch(backend, br))
                .collect(),
            global: lift_branch(backend, &params.sfc_global),
            theta: backend.lift(params.nonlocal.theta.clone()),
            phi: backend.lift(params.nonlocal.phi.clone()),
            g: backend.lift(params.nonlocal.g.clone()),
            w_z: backend.lift(params.nonlocal.w_z.clone()),
        }
    }

    /// Rebuild from the canonical named order of [`SmslParams::to_param_set`].
    /// Entries for the extra-level convolutions are tolerated and ignored;
    /// they sit outside the gathered forward.
    pub(crate) fn from_param_set(set: &ParamSet<V>, levels: usize) -> Result<Self> {
        let find = |key: &str| -> Result<V> {
            set.entries
                .iter()
                .find(|(name, _)| name == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Config(format!("missing parameter {key}")))
        };
        let branch = |prefix: &str| -> Result<BranchValues<V>> {
            Ok(BranchValues {
                w: find(&format!("{prefix}.w"))?,
                ln_gamma: find(&format!("{prefix}.ln_gamma"))?,
                ln_beta: find(&format!("{prefix}.ln_beta"))?,
                v: find(&format!("{prefix}.v"))?,
            })
        };
        Ok(NeckValues {
            w1: find("cr.w1")?,
            w2: find("cr.w2")?,
            local: (0..levels)
                .map(|i| branch(&format!("sfc_local.{i}")))
                .collect::<Result<_>>()?,
            global: branch("sfc_global")?,
            theta: find("nonlocal.theta")?,
            phi: find("nonlocal.phi")?,
            g: find("nonlocal.g")?,
            w_z: find("nonlocal.w_z")?,
        })
    }
}

/// Everything the forward produces besides the outputs: the per-branch
/// attention matrices (locals in level order, then the global branch) and
/// the channel gate.
pub(crate) struct ForwardArtifacts<V> {
    pub outputs: Vec<V>,
    pub attentions: Vec<V>,
    pub gate: V,
}

fn graph_gather<B: Backend>(
    b: &mut B,
    inputs: &[B::Value],
    shapes: &[Shape3],
    gather_pos: usize,
) -> Result<Vec<B::Value>> {
    let target = shapes[gather_pos];
    inputs
        .iter()
        .map(|x| b.resize(x, target.h, target.w))
        .collect()
}

fn graph_channel_rescale<B: Backend>(
    b: &mut B,
    gathered: &[B::Value],
    w1: &B::Value,
    w2: &B::Value,
    stacked_channels: usize,
) -> Result<(Vec<B::Value>, B::Value)> {
    let stacked = b.concat_channels(gathered)?;
    let pooled = b.global_avg_pool(&stacked)?;
    let col = b.reshape(&pooled, &[stacked_channels, 1])?;
    let pre = b.matmul(w1, &col)?;
    let hidden = b.activation(&pre, Activation::Relu)?;
    let logits = b.matmul(w2, &hidden)?;
    let gate_col = b.activation(&logits, Activation::Sigmoid)?;
    let gate = b.reshape(&gate_col, &[stacked_channels])?;
    let rescaled = b.scale_channels(&stacked, &gate)?;
    let q = b.split_channels(&rescaled, gathered.len())?;
    Ok((q, gate))
}

fn graph_selective_combine<B: Backend>(
    b: &mut B,
    q: &[B::Value],
    branch: &BranchValues<B::Value>,
    channels: usize,
    bottleneck: usize,
    ln_eps: f64,
) -> Result<(B::Value, B::Value)> {
    let levels = q.len();
    let mut summed = q[0].clone();
    for qi in &q[1..] {
        summed = b.add(&summed, qi)?;
    }
    let context = b.global_avg_pool(&summed)?;
    let col = b.reshape(&context, &[channels, 1])?;
    let compact_col = b.matmul(&branch.w, &col)?;
    let compact = b.reshape(&compact_col, &[bottleneck])?;
    let normed = b.layer_norm(&compact, &branch.ln_gamma, &branch.ln_beta, ln_eps)?;
    let guide = b.activation(&normed, Activation::Relu)?;
    let guide_col = b.reshape(&guide, &[bottleneck, 1])?;
    let raw = b.matmul(&branch.v, &guide_col)?;
    // Level-major reshape: logits[i][c] = raw[i*C + c].
    let logits = b.reshape(&raw, &[levels, channels])?;
    let attention = b.softmax_over_levels(&logits)?;

    let mut fused: Option<B::Value> = None;
    for (i, qi) in q.iter().enumerate() {
        let weights = b.select_row(&attention, i)?;
        let weighted = b.scale_channels(qi, &weights)?;
        fused = Some(match fused {
            Some(acc) => b.add(&acc, &weighted)?,
            None => weighted,
        });
    }
    Ok((fused.expect("at least one level"), attention))
}

fn graph_nonlocal<B: Backend>(
    b: &mut B,
    fg: &B::Value,
    proj: (&B::Value, &B::Value, &B::Value, &B::Value),
    shape: Shape3,
) -> Result<B::Value> {
    let (theta_w, phi_w, g_w, z_w) = proj;
    let half = shape.c / 2;
    let n = shape.h * shape.w;
    let flat = |b: &mut B, v: &B::Value| -> Result<B::Value> {
        let conv = b.conv2d(fg, v, 1, 0)?;
        b.reshape(&conv, &[half, n])
    };
    let theta = flat(b, theta_w)?;
    let phi = flat(b, phi_w)?;
    let g = flat(b, g_w)?;

    // logits[j, i] = theta_i . phi_j / sqrt(C/2); normalizing each column
    // over j gives every output position a distribution over sources.
    let phi_t = b.transpose(&phi)?;
    let raw = b.matmul(&phi_t, &theta)?;
    let logits = b.scale(&raw, 1.0 / (half as f64).sqrt())?;
    let attention = b.softmax_over_levels(&logits)?;
    let aggregated = b.matmul(&g, &attention)?;
    let spatial = b.reshape(&aggregated, &[half, shape.h, shape.w])?;
    let delta = b.conv2d(&spatial, z_w, 1, 0)?;
    b.add(fg, &delta)
}

fn graph_fuse_scatter<B: Backend>(
    b: &mut B,
    f_local: &[B::Value],
    g_feat: &B::Value,
    inputs: &[B::Value],
    shapes: &[Shape3],
) -> Result<Vec<B::Value>> {
    f_local
        .iter()
        .zip(inputs.iter().zip(shapes))
        .map(|(fl, (input, s))| {
            let fused = b.add(fl, g_feat)?;
            let scattered = b.resize(&fused, s.h, s.w)?;
            b.add(&scattered, input)
        })
        .collect()
}

pub(crate) fn forward_graph<B: Backend>(
    b: &mut B,
    inputs: &[B::Value],
    shapes: &[Shape3],
    params: &NeckValues<B::Value>,
    gather_pos: usize,
    r: usize,
    ln_eps: f64,
) -> Result<ForwardArtifacts<B::Value>> {
    let levels = inputs.len();
    let channels = shapes[0].c;
    let bottleneck = channels / r;
    let gather_shape = Shape3 {
        c: channels,
        h: shapes[gather_pos].h,
        w: shapes[gather_pos].w,
    };

    let gathered = graph_gather(b, inputs, shapes, gather_pos)?;
    let (q, gate) =
        graph_channel_rescale(b, &gathered, &params.w1, &params.w2, levels * channels)?;

    let mut attentions = Vec::with_capacity(levels + 1);
    let mut f_local = Vec::with_capacity(levels);
    for branch in &params.local {
        let (fused, attention) =
            graph_selective_combine(b, &q, branch, channels, bottleneck, ln_eps)?;
        f_local.push(fused);
        attentions.push(attention);
    }
    let (f_global, attention) =
        graph_selective_combine(b, &q, &params.global, channels, bottleneck, ln_eps)?;
    attentions.push(attention);

    let refined = graph_nonlocal(
        b,
        &f_global,
        (&params.theta, &params.phi, &params.g, &params.w_z),
        gather_shape,
    )?;
    let outputs = graph_fuse_scatter(b, &f_local, &refined, inputs, shapes)?;
    Ok(ForwardArtifacts {
        outputs,
        attentions,
        gate,
    })
}

fn shapes_of<E: Scalar>(tensors: &[Tensor<E>]) -> Result<Vec<Shape3>> {
    tensors.iter().map(Tensor::shape3).collect()
}

/// Generate the two extra top levels with stride-2 `3x3` convolutions: the
/// first from the highest backbone level, the second from the first.
pub fn make_extra_levels<E: Scalar>(
    c5: &Tensor<E>,
    conv6: &Tensor<E>,
    conv7: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let s = c5.shape3()?;
    if s.h % 4 != 0 || s.w % 4 != 0 {
        return Err(Error::dim(
            "make_extra_levels",
            format!("spatial size {}x{} must be divisible by 4", s.h, s.w),
        ));
    }
    let c6 = crate::tensor::kernels::conv2d(c5, conv6, 2, 1)?;
    let c7 = crate::tensor::kernels::conv2d(&c6, conv7, 2, 1)?;
    Ok((c6, c7))
}

/// Resize every level to the gather level's spatial size, lowest level first.
pub fn gather<E: Scalar>(levels: &LevelSet<E>, cfg: &SmslConfig) -> Result<Vec<Tensor<E>>> {
    let gather_level = cfg.resolve_gather_level(levels.l_min(), levels.l_max())?;
    let mut b = Eager::<E>::new();
    let shapes = shapes_of(levels.features())?;
    graph_gather(
        &mut b,
        levels.features(),
        &shapes,
        gather_level - levels.l_min(),
    )
}

/// Concatenate the gathered maps, gate every channel of the stack through the
/// bottlenecked sigmoid net, and split back into per-level groups.
pub fn channel_rescale<E: Scalar>(
    gathered: &[Tensor<E>],
    params: &CrParams<E>,
) -> Result<Vec<Tensor<E>>> {
    let first = gathered
        .first()
        .ok_or_else(|| Error::dim("channel_rescale", "empty level list".to_string()))?
        .shape3()?;
    let mut b = Eager::<E>::new();
    let (q, _gate) = graph_channel_rescale(
        &mut b,
        gathered,
        &params.w1,
        &params.w2,
        gathered.len() * first.c,
    )?;
    Ok(q)
}

/// Fuse same-shape rescaled maps with per-channel soft attention over levels.
pub fn selective_combine<E: Scalar>(
    q: &[Tensor<E>],
    branch: &SfcBranchParams<E>,
    ln_eps: f64,
) -> Result<Tensor<E>> {
    let first = q
        .first()
        .ok_or_else(|| Error::dim("selective_combine", "empty level list".to_string()))?
        .shape3()?;
    let bottleneck = branch.ln_gamma.numel();
    let mut b = Eager::<E>::new();
    let values = BranchValues {
        w: branch.w.clone(),
        ln_gamma: branch.ln_gamma.clone(),
        ln_beta: branch.ln_beta.clone(),
        v: branch.v.clone(),
    };
    let (fused, _attention) =
        graph_selective_combine(&mut b, q, &values, first.c, bottleneck, ln_eps)?;
    Ok(fused)
}

/// Refine a map with embedded-Gaussian self-attention plus a residual output
/// projection.
pub fn nonlocal_refine<E: Scalar>(
    fg: &Tensor<E>,
    params: &NonLocalParams<E>,
) -> Result<Tensor<E>> {
    let s = fg.shape3()?;
    if s.c % 2 != 0 {
        return Err(Error::Config(format!(
            "non-local block needs an even channel count, got {}",
            s.c
        )));
    }
    let mut b = Eager::<E>::new();
    graph_nonlocal(
        &mut b,
        fg,
        (&params.theta, &params.phi, &params.g, &params.w_z),
        s,
    )
}

/// Add the refined global feature to every local feature, resize each back to
/// its level's native size and residual-add the original input.
pub fn fuse_and_scatter<E: Scalar>(
    f_local: &[Tensor<E>],
    g_feat: &Tensor<E>,
    levels: &LevelSet<E>,
) -> Result<LevelSet<E>> {
    if f_local.len() != levels.count() {
        return Err(Error::dim(
            "fuse_and_scatter",
            format!(
                "{} fused maps for {} levels",
                f_local.len(),
                levels.count()
            ),
        ));
    }
    let mut b = Eager::<E>::new();
    let shapes = shapes_of(levels.features())?;
    let outputs = graph_fuse_scatter(&mut b, f_local, g_feat, levels.features(), &shapes)?;
    LevelSet::new(levels.l_min(), outputs)
}

/// Per-branch attention matrices and the channel gate of one forward pass.
#[derive(Debug, Clone)]
pub struct SmslTrace<E: Scalar = f64> {
    /// `L` local attention matrices in level order, then the global one;
    /// each is `[L, C]`.
    pub attentions: Vec<Tensor<E>>,
    /// Sigmoid gate over the `LC` stacked channels.
    pub gate: Tensor<E>,
}

/// The full neck: gather, channel-rescale, combine per level and globally,
/// non-local refinement, fuse and scatter. Pure function of its arguments.
pub fn smsl_forward<E: Scalar>(
    levels: &LevelSet<E>,
    params: &SmslParams<E>,
    cfg: &SmslConfig,
) -> Result<LevelSet<E>> {
    Ok(smsl_forward_traced(levels, params, cfg)?.0)
}

/// [`smsl_forward`] that also surfaces attention matrices and the gate.
pub fn smsl_forward_traced<E: Scalar>(
    levels: &LevelSet<E>,
    params: &SmslParams<E>,
    cfg: &SmslConfig,
) -> Result<(LevelSet<E>, SmslTrace<E>)> {
    params.validate(levels.count(), levels.channels(), cfg.r)?;
    let gather_level = cfg.resolve_gather_level(levels.l_min(), levels.l_max())?;
    let mut b = Eager::<E>::new();
    let shapes = shapes_of(levels.features())?;
    let values = NeckValues::from_params(&mut b, params);
    let art = forward_graph(
        &mut b,
        levels.features(),
        &shapes,
        &values,
        gather_level - levels.l_min(),
        cfg.r,
        cfg.ln_eps,
    )?;
    Ok((
        LevelSet::new(levels.l_min(), art.outputs)?,
        SmslTrace {
            attentions: art.attentions,
            gate: art.gate,
        },
    ))
}

/// Scalar objective for gradient checking: the sum of every output element
/// of the neck.
pub struct NeckSumLoss {
    levels: LevelSet<f64>,
    gather_pos: usize,
    r: usize,
    ln_eps: f64,
}

impl NeckSumLoss {
    pub fn new(levels: LevelSet<f64>, cfg: &SmslConfig) -> Result<Self> {
        let gather_level = cfg.resolve_gather_level(levels.l_min(), levels.l_max())?;
        Ok(NeckSumLoss {
            gather_pos: gather_level - levels.l_min(),
            levels,
            r: cfg.r,
            ln_eps: cfg.ln_eps,
        })
    }
}

impl ScalarObjective for NeckSumLoss {
    fn eval<B: Backend<Elem = f64>>(
        &self,
        b: &mut B,
        params: &ParamSet<B::Value>,
    ) -> Result<B::Value> {
        let inputs: Vec<B::Value> = self
            .levels
            .features()
            .iter()
            .map(|t| b.lift(t.clone()))
            .collect();
        let shapes = shapes_of(self.levels.features())?;
        let values = NeckValues::from_param_set(params, self.levels.count())?;
        let art = forward_graph(
            b,
            &inputs,
            &shapes,
            &values,
            self.gather_pos,
            self.r,
            self.ln_eps,
        )?;
        let mut loss: Option<B::Value> = None;
        for out in &art.outputs {
            let s = b.sum_all(out)?;
            loss = Some(match loss {
                Some(acc) => b.add(&acc, &s)?,
                None => s,
            });
        }
        Ok(loss.expect("at least one output level"))
    }
}

/// Check the tape gradients of the whole neck against central differences,
/// with the loss `sum` over all output elements.
pub fn gradcheck_smsl(
    levels: &LevelSet<f64>,
    params: &SmslParams<f64>,
    cfg: &SmslConfig,
    settings: &GradCheckSettings,
) -> Result<GradCheckReport> {
    params.validate(levels.count(), levels.channels(), cfg.r)?;
    let objective = NeckSumLoss::new(levels.clone(), cfg)?;
    gradcheck(&objective, &params.to_param_set(), settings)
}
