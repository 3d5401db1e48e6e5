//! The selective multi-scale neck: gather the pyramid to one level, rescale
//! channels with a sigmoid gate, fuse levels per target with soft attention,
//! add a non-locally refined global feature, and scatter back with residual
//! connections.

pub mod forward;
pub mod init;
pub mod manifest;

use crate::autodiff::gradcheck::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape3, Tensor};

/// Ordered per-level feature maps `l_min..=l_max`, equal channel counts,
/// spatial sizes halving exactly from one level to the next.
#[derive(Debug, Clone)]
pub struct LevelSet<E: Scalar = f64> {
    l_min: usize,
    features: Vec<Tensor<E>>,
}

impl<E: Scalar> LevelSet<E> {
    pub fn new(l_min: usize, features: Vec<Tensor<E>>) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::Config(format!(
                "a level set needs at least 2 levels, got {}",
                features.len()
            )));
        }
        let mut prev: Option<Shape3> = None;
        for (i, f) in features.iter().enumerate() {
            let s = f.shape3()?;
            if let Some(p) = prev {
                if s.c != p.c {
                    return Err(Error::Config(format!(
                        "channel count changes from {} to {} at level {}",
                        p.c,
                        s.c,
                        l_min + i
                    )));
                }
                if p.h != s.h * 2 || p.w != s.w * 2 {
                    return Err(Error::Config(format!(
                        "level {} is {}x{} but level {} is {}x{}; sizes must halve exactly",
                        l_min + i - 1,
                        p.h,
                        p.w,
                        l_min + i,
                        s.h,
                        s.w
                    )));
                }
            }
            prev = Some(s);
        }
        Ok(LevelSet { l_min, features })
    }

    pub fn l_min(&self) -> usize {
        self.l_min
    }

    pub fn l_max(&self) -> usize {
        self.l_min + self.features.len() - 1
    }

    /// Number of levels.
    pub fn count(&self) -> usize {
        self.features.len()
    }

    pub fn channels(&self) -> usize {
        self.features[0].shape3().map(|s| s.c).unwrap_or(0)
    }

    pub fn feature(&self, level: usize) -> Result<&Tensor<E>> {
        self.features
            .get(level.checked_sub(self.l_min).ok_or_else(|| {
                Error::Config(format!("level {level} below l_min {}", self.l_min))
            })?)
            .ok_or_else(|| Error::Config(format!("level {level} above l_max {}", self.l_max())))
    }

    pub fn features(&self) -> &[Tensor<E>] {
        &self.features
    }

    pub fn levels(&self) -> impl Iterator<Item = (usize, &Tensor<E>)> {
        self.features.iter().enumerate().map(|(i, f)| (self.l_min + i, f))
    }

    pub fn cast<F: Scalar>(&self) -> LevelSet<F> {
        LevelSet {
            l_min: self.l_min,
            features: self.features.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.l_min == other.l_min
            && self.features.len() == other.features.len()
            && self
                .features
                .iter()
                .zip(&other.features)
                .all(|(a, b)| a.bit_eq(b))
    }
}

/// Channel-rescaling gate weights: two fully connected layers bottlenecked
/// by the reduction ratio `r`.
#[derive(Debug, Clone)]
pub struct CrParams<E: Scalar = f64> {
    /// `[LC/r, LC]`
    pub w1: Tensor<E>,
    /// `[LC, LC/r]`
    pub w2: Tensor<E>,
    pub r: usize,
}

/// One selective-combination branch: compaction FC, layer-norm affine,
/// expansion FC back to one logit per (level, channel).
#[derive(Debug, Clone)]
pub struct SfcBranchParams<E: Scalar = f64> {
    /// `[C/r, C]`
    pub w: Tensor<E>,
    /// `[C/r]`
    pub ln_gamma: Tensor<E>,
    /// `[C/r]`
    pub ln_beta: Tensor<E>,
    /// `[LC, C/r]`
    pub v: Tensor<E>,
}

/// Embedded-Gaussian self-attention projections, all `1x1` convolutions with
/// embedding width `C/2`.
#[derive(Debug, Clone)]
pub struct NonLocalParams<E: Scalar = f64> {
    /// `[C/2, C, 1, 1]`
    pub theta: Tensor<E>,
    /// `[C/2, C, 1, 1]`
    pub phi: Tensor<E>,
    /// `[C/2, C, 1, 1]`
    pub g: Tensor<E>,
    /// `[C, C/2, 1, 1]`
    pub w_z: Tensor<E>,
}

/// Every learnable weight of the neck.
#[derive(Debug, Clone)]
pub struct SmslParams<E: Scalar = f64> {
    pub cr: CrParams<E>,
    /// One branch per target level, ordered `l_min..=l_max`.
    pub sfc_local: Vec<SfcBranchParams<E>>,
    pub sfc_global: SfcBranchParams<E>,
    pub nonlocal: NonLocalParams<E>,
    /// Stride-2 `3x3` generators for the two extra top levels, when present.
    pub extra_level_convs: Option<(Tensor<E>, Tensor<E>)>,
}

impl<E: Scalar> SmslParams<E> {
    /// Check that every sub-shape is consistent with a single `(L, C, r)`.
    pub fn validate(&self, levels: usize, channels: usize, r: usize) -> Result<()> {
        let lc = levels * channels;
        if r == 0 || lc % r != 0 || channels % r != 0 {
            return Err(Error::Config(format!(
                "reduction ratio {r} must divide C={channels} and LC={lc}"
            )));
        }
        if channels % 2 != 0 {
            return Err(Error::Config(format!(
                "non-local embedding needs an even channel count, got {channels}"
            )));
        }
        let expect = |t: &Tensor<E>, shape: &[usize], what: &str| -> Result<()> {
            if t.shape() != shape {
                return Err(Error::Config(format!(
                    "{what} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(())
        };
        expect(&self.cr.w1, &[lc / r, lc], "cr.w1")?;
        expect(&self.cr.w2, &[lc, lc / r], "cr.w2")?;
        if self.cr.r != r {
            return Err(Error::Config(format!(
                "cr.r is {}, expected {r}",
                self.cr.r
            )));
        }
        if self.sfc_local.len() != levels {
            return Err(Error::Config(format!(
                "{} local branches for {levels} levels",
                self.sfc_local.len()
            )));
        }
        for (i, branch) in self
            .sfc_local
            .iter()
            .chain(std::iter::once(&self.sfc_global))
            .enumerate()
        {
            let tag = if i < levels { "sfc_local" } else { "sfc_global" };
            expect(&branch.w, &[channels / r, channels], &format!("{tag}.w"))?;
            expect(&branch.ln_gamma, &[channels / r], &format!("{tag}.ln_gamma"))?;
            expect(&branch.ln_beta, &[channels / r], &format!("{tag}.ln_beta"))?;
            expect(&branch.v, &[lc, channels / r], &format!("{tag}.v"))?;
        }
        let half = channels / 2;
        expect(&self.nonlocal.theta, &[half, channels, 1, 1], "nonlocal.theta")?;
        expect(&self.nonlocal.phi, &[half, channels, 1, 1], "nonlocal.phi")?;
        expect(&self.nonlocal.g, &[half, channels, 1, 1], "nonlocal.g")?;
        expect(&self.nonlocal.w_z, &[channels, half, 1, 1], "nonlocal.w_z")?;
        if let Some((c6, c7)) = &self.extra_level_convs {
            expect(c6, &[channels, channels, 3, 3], "extra.c6")?;
            expect(c7, &[channels, channels, 3, 3], "extra.c7")?;
        }
        Ok(())
    }

    /// Flatten into named tensors in the canonical order used by the
    /// manifest, the initializer and the gradient checker.
    pub fn to_param_set(&self) -> ParamSet<Tensor<E>> {
        let mut entries = vec![
            ("cr.w1".to_string(), self.cr.w1.clone()),
            ("cr.w2".to_string(), self.cr.w2.clone()),
        ];
        for (i, b) in self.sfc_local.iter().enumerate() {
            entries.push((format!("sfc_local.{i}.w"), b.w.clone()));
            entries.push((format!("sfc_local.{i}.ln_gamma"), b.ln_gamma.clone()));
            entries.push((format!("sfc_local.{i}.ln_beta"), b.ln_beta.clone()));
            entries.push((format!("sfc_local.{i}.v"), b.v.clone()));
        }
        entries.push(("sfc_global.w".to_string(), self.sfc_global.w.clone()));
        entries.push(("sfc_global.ln_gamma".to_string(), self.sfc_global.ln_gamma.clone()));
        entries.push(("sfc_global.ln_beta".to_string(), self.sfc_global.ln_beta.clone()));
        entries.push(("sfc_global.v".to_string(), self.sfc_global.v.clone()));
        entries.push(("nonlocal.theta".to_string(), self.nonlocal.theta.clone()));
        entries.push(("nonlocal.phi".to_string(), self.nonlocal.phi.clone()));
        entries.push(("nonlocal.g".to_string(), self.nonlocal.g.clone()));
        entries.push(("nonlocal.w_z".to_string(), self.nonlocal.w_z.clone()));
        if let Some((c6, c7)) = &self.extra_level_convs {
            entries.push(("extra.c6".to_string(), c6.clone()));
            entries.push(("extra.c7".to_string(), c7.clone()));
        }
        ParamSet::new(entries)
    }

    /// Rebuild from the canonical flat order. `r` is taken at face value and
    /// validated against the tensor shapes.
    pub fn from_param_set(set: &ParamSet<Tensor<E>>, levels: usize, r: usize) -> Result<Self> {
        let mut map: std::collections::BTreeMap<&str, &Tensor<E>> = set
            .entries
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .collect();
        let has_extra = map.contains_key("extra.c6");
        let mut take = |key: &str| -> Result<Tensor<E>> {
            map.remove(key)
                .cloned()
                .ok_or_else(|| Error::Config(format!("missing parameter {key}")))
        };
        let cr = CrParams {
            w1: take("cr.w1")?,
            w2: take("cr.w2")?,
            r,
        };
        let mut sfc_local = Vec::with_capacity(levels);
        for i in 0..levels {
            sfc_local.push(SfcBranchParams {
                w: take(&format!("sfc_local.{i}.w"))?,
                ln_gamma: take(&format!("sfc_local.{i}.ln_gamma"))?,
                ln_beta: take(&format!("sfc_local.{i}.ln_beta"))?,
                v: take(&format!("sfc_local.{i}.v"))?,
            });
        }
        let sfc_global = SfcBranchParams {
            w: take("sfc_global.w")?,
            ln_gamma: take("sfc_global.ln_gamma")?,
            ln_beta: take("sfc_global.ln_beta")?,
            v: take("sfc_global.v")?,
        };
        let nonlocal = NonLocalParams {
            theta: take("nonlocal.theta")?,
            phi: take("nonlocal.phi")?,
            g: take("nonlocal.g")?,
            w_z: take("nonlocal.w_z")?,
        };
        let extra_level_convs = if has_extra {
            Some((take("extra.c6")?, take("extra.c7")?))
        } else {
            None
        };
        if !map.is_empty() {
            return Err(Error::Config(format!(
                "unexpected parameters: {:?}",
                map.keys().collect::<Vec<_>>()
            )));
        }
        Ok(SmslParams {
            cr,
            sfc_local,
            sfc_global,
            nonlocal,
            extra_level_convs,
        })
    }

    pub fn cast<F: Scalar>(&self) -> SmslParams<F> {
        SmslParams {
            cr: CrParams {
                w1: self.cr.w1.cast(),
                w2: self.cr.w2.cast(),
                r: self.cr.r,
            },
            sfc_local: self
                .sfc_local
                .iter()
                .map(|b| SfcBranchParams {
                    w: b.w.cast(),
                    ln_gamma: b.ln_gamma.cast(),
                    ln_beta: b.ln_beta.cast(),
                    v: b.v.cast(),
                })
                .collect(),
            sfc_global: SfcBranchParams {
                w: self.sfc_global.w.cast(),
                ln_gamma: self.sfc_global.ln_gamma.cast(),
                ln_beta: self.sfc_global.ln_beta.cast(),
                v: self.sfc_global.v.cast(),
            },
            nonlocal: NonLocalParams {
                theta: self.nonlocal.theta.cast(),
                phi: self.nonlocal.phi.cast(),
                g: self.nonlocal.g.cast(),
                w_z: self.nonlocal.w_z.cast(),
            },
            extra_level_convs: self
                .extra_level_convs
                .as_ref()
                .map(|(a, b)| (a.cast(), b.cast())),
        }
    }
}

/// Runtime knobs of the neck.
#[derive(Debug, Clone, Copy)]
pub struct SmslConfig {
    /// Level whose spatial size everything is gathered to. `None` picks
    /// `(l_min + l_max) / 2`, rounding down.
    pub gather_level: Option<usize>,
    pub r: usize,
    pub ln_eps: f64,
}

impl SmslConfig {
    pub fn with_r(r: usize) -> Self {
        SmslConfig {
            gather_level: None,
            r,
            ln_eps: 1e-5,
        }
    }

    pub fn resolve_gather_level(&self, l_min: usize, l_max: usize) -> Result<usize> {
        let level = self.gather_level.unwrap_or((l_min + l_max) / 2);
        if level < l_min || level > l_max {
            return Err(Error::Config(format!(
                "gather level {level} outside [{l_min}, {l_max}]"
            )));
        }
        Ok(level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level_set(l_min: usize, c: usize, base: usize, n: usize) -> LevelSet<f64> {
        let features = (0..n)
            .map(|i| Tensor::filled(&[c, base >> i, base >> i], 1.0).unwrap())
            .collect();
        LevelSet::new(l_min, features).unwrap()
    }

    #[test]
    fn level_set_accessors() {
        let ls = level_set(3, 4, 16, 3);
        assert_eq!(ls.l_min(), 3);
        assert_eq!(ls.l_max(), 5);
        assert_eq!(ls.count(), 3);
        assert_eq!(ls.channels(), 4);
        assert_eq!(ls.feature(4).unwrap().shape(), &[4, 8, 8]);
        assert!(ls.feature(6).is_err());
        assert!(ls.feature(2).is_err());
    }

    #[test]
    fn level_set_rejects_bad_structure() {
        let a = Tensor::<f64>::zeros(&[2, 8, 8]).unwrap();
        assert!(LevelSet::new(3, vec![a.clone()]).is_err());
        let wrong_halving = Tensor::<f64>::zeros(&[2, 5, 5]).unwrap();
        assert!(LevelSet::new(3, vec![a.clone(), wrong_halving]).is_err());
        let wrong_channels = Tensor::<f64>::zeros(&[3, 4, 4]).unwrap();
        assert!(LevelSet::new(3, vec![a, wrong_channels]).is_err());
    }

    #[test]
    fn default_gather_level_averages_and_rounds_down() {
        let cfg = SmslConfig::with_r(2);
        assert_eq!(cfg.resolve_gather_level(3, 7).unwrap(), 5);
        assert_eq!(cfg.resolve_gather_level(3, 6).unwrap(), 4);
        let fixed = SmslConfig {
            gather_level: Some(9),
            ..cfg
        };
        assert!(fixed.resolve_gather_level(3, 7).is_err());
    }

    #[test]
    fn param_set_round_trip_preserves_everything() {
        let p = init::init_params(3, 4, 2, 7, true).unwrap();
        let set = p.to_param_set();
        let back = SmslParams::from_param_set(&set, 3, 2).unwrap();
        back.validate(3, 4, 2).unwrap();
        assert!(back.cr.w1.bit_eq(&p.cr.w1));
        assert!(back.sfc_local[2].v.bit_eq(&p.sfc_local[2].v));
        assert!(back.nonlocal.w_z.bit_eq(&p.nonlocal.w_z));
        let (c6, c7) = back.extra_level_convs.as_ref().unwrap();
        let (e6, e7) = p.extra_level_convs.as_ref().unwrap();
        assert!(c6.bit_eq(e6) && c7.bit_eq(e7));
    }
}
