//! Central-difference verification of tape gradients.

use std::collections::BTreeSet;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::backend::{Backend, Eager};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors in a fixed order. The order defines the
/// coordinate space reported by the checker.
#[derive(Clone)]
pub struct ParamSet<V> {
    pub entries: Vec<(String, V)>,
}

impl<V> ParamSet<V> {
    pub fn new(entries: Vec<(String, V)>) -> Self {
        ParamSet { entries }
    }

    pub fn map<W>(&self, mut f: impl FnMut(&V) -> W) -> ParamSet<W> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(name, v)| (name.clone(), f(v)))
                .collect(),
        }
    }
}

/// A deterministic scalar-valued function of a parameter set, expressible on
/// any backend.
pub trait ScalarObjective {
    fn eval<B: Backend<Elem = f64>>(
        &self,
        backend: &mut B,
        params: &ParamSet<B::Value>,
    ) -> Result<B::Value>;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckSettings {
    /// Base step; the step for coordinate `i` is `base_step * max(1, |theta_i|)`.
    pub base_step: f64,
    /// Pass iff the max relative error stays at or below this.
    pub tol: f64,
    pub seed: u64,
    /// Random coordinates to sample on top of the small-tensor sweep.
    pub min_sampled: usize,
    /// Tensors with fewer elements than this are checked exhaustively.
    pub small_tensor_limit: usize,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            base_step: 1e-6,
            tol: 1e-5,
            seed: 0,
            min_sampled: 500,
            small_tensor_limit: 64,
        }
    }
}

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub n_params_checked: usize,
    pub passed: bool,
    /// Coordinate of the largest relative error when the check fails.
    pub failing_coordinate: Option<String>,
    /// Coordinates skipped because a ReLU kink sat between the probes.
    pub n_skipped: usize,
    pub tol: f64,
}

impl GradCheckReport {
    /// Line-oriented `key=value` form consumed by the CLI.
    pub fn to_kv_lines(&self) -> String {
        let mut out = format!(
            "max_abs_err={:e}\nmax_rel_err={:e}\nn_params_checked={}\nn_skipped={}\ntol={:e}\npassed={}\n",
            self.max_abs_err,
            self.max_rel_err,
            self.n_params_checked,
            self.n_skipped,
            self.tol,
            self.passed
        );
        if let Some(coord) = &self.failing_coordinate {
            out.push_str(&format!("failing_coordinate={coord}\n"));
        }
        out
    }
}

fn eval_eager(
    obj: &impl ScalarObjective,
    params: &ParamSet<Tensor<f64>>,
    coordinate: &str,
) -> Result<(f64, Vec<bool>)> {
    let mut backend = Eager::<f64>::with_relu_trace();
    let lifted = params.map(|t| t.clone());
    let out = obj.eval(&mut backend, &lifted)?;
    if out.numel() != 1 {
        return Err(Error::Tape(format!(
            "objective must be scalar-valued, got shape {:?}",
            out.shape()
        )));
    }
    let value = out.data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric {
            coordinate: coordinate.to_string(),
            detail: format!("objective evaluated to {value}"),
        });
    }
    Ok((value, backend.relu_signs.unwrap_or_default()))
}

/// Compare tape gradients against central differences
/// `(f(theta + h e_i) - f(theta - h e_i)) / 2h` on a seeded coordinate
/// subsample plus an exhaustive sweep of all small tensors.
///
/// Relative error uses `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
/// Coordinates whose probes land on different sides of a ReLU kink are
/// skipped and counted, since central differences are invalid across a kink.
pub fn gradcheck(
    obj: &impl ScalarObjective,
    params: &ParamSet<Tensor<f64>>,
    settings: &GradCheckSettings,
) -> Result<GradCheckReport> {
    // Analytic pass: record the objective once and differentiate.
    let mut tape = Tape::new();
    let taped = params.map(|t| tape.leaf(t.clone()));
    let root = obj.eval(&mut tape, &taped)?;
    let root_value = tape.value(root)?;
    if root_value.numel() != 1 {
        return Err(Error::Tape(format!(
            "objective must be scalar-valued, got shape {:?}",
            root_value.shape()
        )));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor<f64>> = taped
        .entries
        .iter()
        .map(|(_, id)| {
            grads
                .get(*id)
                .map(|g| g.cloned().unwrap_or_else(|| Tensor::zeros(tape.value(*id).unwrap().shape()).unwrap()))
        })
        .collect::<Result<_>>()?;

    // Coordinate selection: all coordinates of small tensors, plus a seeded
    // sample from the whole space.
    let sizes: Vec<usize> = params.entries.iter().map(|(_, t)| t.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (entry, &n) in sizes.iter().enumerate() {
        if n < settings.small_tensor_limit {
            for i in 0..n {
                chosen.insert((entry, i));
            }
        }
    }
    if total <= settings.min_sampled {
        for (entry, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                chosen.insert((entry, i));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let mut sampled = 0usize;
        while sampled < settings.min_sampled {
            let flat = (rng.next_u64() % total as u64) as usize;
            let mut rest = flat;
            let mut entry = 0;
            while rest >= sizes[entry] {
                rest -= sizes[entry];
                entry += 1;
            }
            if chosen.insert((entry, rest)) {
                sampled += 1;
            }
            if chosen.len() == total {
                break;
            }
        }
    }

    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut argmax_coord = None;
    let mut checked = 0usize;
    let mut skipped = 0usize;

    for &(entry, idx) in &chosen {
        let (name, base) = &params.entries[entry];
        let coord = format!("{name}[{idx}]");
        let theta = base.data()[idx];
        let h = settings.base_step * theta.abs().max(1.0);

        let probe = |delta: f64| -> Result<(f64, Vec<bool>)> {
            let mut data = base.data().to_vec();
            data[idx] = theta + delta;
            let perturbed = Tensor::new(base.shape().to_vec(), data)?;
            let mut set = params.clone();
            set.entries[entry].1 = perturbed;
            eval_eager(obj, &set, &coord)
        };

        let (f_plus, signs_plus) = probe(h)?;
        let (f_minus, signs_minus) = probe(-h)?;
        if signs_plus != signs_minus {
            skipped += 1;
            continue;
        }

        let numeric = (f_plus - f_minus) / (2.0 * h);
        let exact = analytic[entry].data()[idx];
        let abs = (numeric - exact).abs();
        let rel = abs / numeric.abs().max(exact.abs()).max(1.0);
        if abs > max_abs {
            max_abs = abs;
        }
        if rel > max_rel {
            max_rel = rel;
            argmax_coord = Some(coord);
        }
        checked += 1;
    }

    let passed = max_rel <= settings.tol;
    Ok(GradCheckReport {
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        n_params_checked: checked,
        passed,
        failing_coordinate: if passed { None } else { argmax_coord },
        n_skipped: skipped,
        tol: settings.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kernels::Activation;

    /// f(theta) = theta^T A theta for a fixed symmetric A.
    struct Quadratic {
        a: Tensor<f64>,
    }

    impl ScalarObjective for Quadratic {
        fn eval<B: Backend<Elem = f64>>(
            &self,
            b: &mut B,
            params: &ParamSet<B::Value>,
        ) -> Result<B::Value> {
            let theta = &params.entries[0].1;
            let a = b.lift(self.a.clone());
            let col = b.reshape(theta, &[self.a.shape()[0], 1])?;
            let row = b.transpose(&col)?;
            let ax = b.matmul(&a, &col)?;
            let quad = b.matmul(&row, &ax)?;
            b.reshape(&quad, &[1])
        }
    }

    #[test]
    fn quadratic_form_matches_to_roundoff() {
        let a = Tensor::new(
            vec![3, 3],
            vec![2.0, 0.5, -1.0, 0.5, 1.0, 0.3, -1.0, 0.3, 4.0],
        )
        .unwrap();
        let theta = Tensor::new(vec![3], vec![0.7, -1.2, 0.4]).unwrap();
        let params = ParamSet::new(vec![("theta".to_string(), theta)]);
        let report = gradcheck(
            &Quadratic { a },
            &params,
            &GradCheckSettings {
                seed: 42,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.n_params_checked, 3);
        assert_eq!(report.n_skipped, 0);
        // Central differences are exact for degree-2 polynomials.
        assert!(report.max_rel_err < 1e-8, "{report:?}");
    }

    /// f(theta) = sum(relu(theta)).
    struct ReluSum;

    impl ScalarObjective for ReluSum {
        fn eval<B: Backend<Elem = f64>>(
            &self,
            b: &mut B,
            params: &ParamSet<B::Value>,
        ) -> Result<B::Value> {
            let theta = &params.entries[0].1;
            let y = b.activation(theta, Activation::Relu)?;
            let m = b.reshape(&y, &[1, 3])?;
            let ones = b.lift(Tensor::filled(&[3, 1], 1.0).unwrap());
            let total = b.matmul(&m, &ones)?;
            b.reshape(&total, &[1])
        }
    }

    #[test]
    fn coordinate_on_a_relu_kink_is_skipped_and_reported() {
        let theta = Tensor::new(vec![3], vec![1.0, 0.0, -2.0]).unwrap();
        let params = ParamSet::new(vec![("theta".to_string(), theta)]);
        let report = gradcheck(&ReluSum, &params, &GradCheckSettings::default()).unwrap();
        assert_eq!(report.n_skipped, 1);
        assert_eq!(report.n_params_checked, 2);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn report_serializes_to_kv_lines() {
        let report = GradCheckReport {
            max_abs_err: 1e-9,
            max_rel_err: 2e-8,
            n_params_checked: 10,
            passed: true,
            failing_coordinate: None,
            n_skipped: 1,
            tol: 1e-5,
        };
        let text = report.to_kv_lines();
        assert!(text.contains("passed=true"));
        assert!(text.contains("n_params_checked=10"));
        assert!(!text.contains("failing_coordinate"));
    }
}
