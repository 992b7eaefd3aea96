use ndarray::{Array2, ArrayView2};

use crate::behavior::{evaluation_vectors, BehaviorModel, InputMode};
use crate::error::{ensure_len, Error, Result};
use crate::nnkit::Mlp;

/// The second summand of the estimator, if any.
#[derive(Debug, Clone, Copy)]
pub enum PerformativeTerm<'a> {
    None,
    /// Behavior model over evaluation vectors; the policy enters through `zeta`.
    Mediated(&'a BehaviorModel),
    /// Behavior model over `[v, theta]`; the policy enters through its raw parameters.
    EndToEnd(&'a BehaviorModel),
}

/// `(1/n) sum_i [ grad pi(x_i) tau_i + w pi(x_i) tau_i grad log q(u_i | ...) ]`.
///
/// `labels` are observed levels, `tau_hat` is treated as a constant and
/// `weight` scales the performative summand. Every policy-dependent term is
/// pushed through a single backward pass over the `n * levels` policy rows.
pub fn strategic_gradient(
    policy: &Mlp,
    v: ArrayView2<'_, f64>,
    labels: &[usize],
    tau_hat: &[f64],
    term: PerformativeTerm<'_>,
    weight: f64,
) -> Result<Vec<f64>> {
    let n = labels.len();
    ensure_len("gradient feature rows", n, v.nrows())?;
    ensure_len("gradient cate rows", n, tau_hat.len())?;
    if n == 0 {
        return Ok(vec![0.0; policy.param_count()]);
    }
    let levels = policy
        .input_dim()
        .checked_sub(v.ncols())
        .ok_or(Error::Shape {
            context: "policy input width",
            expected: v.ncols(),
            got: policy.input_dim(),
        })?;
    let (zeta, cache) = evaluation_vectors(policy, v, levels)?;
    let scale = 1.0 / n as f64;
    let mut coef = Array2::zeros((n * levels, 1));
    for (i, (&u, &tau)) in labels.iter().zip(tau_hat).enumerate() {
        if u >= levels {
            return Err(Error::Shape {
                context: "gradient label",
                expected: levels,
                got: u,
            });
        }
        coef[[i * levels + u, 0]] += tau * scale;
    }
    let pi_tau = |i: usize| zeta[[i, labels[i]]] * tau_hat[i] * scale * weight;

    let mut direct: Option<Vec<f64>> = None;
    match term {
        PerformativeTerm::None => {}
        PerformativeTerm::Mediated(model) => {
            if model.input_mode() == InputMode::VAndParams {
                return Err(Error::Behavior("mediated gradient needs a zeta-input behavior model".into()));
            }
            let x = model.inputs(zeta.view(), v, None)?;
            let (_, g) = model.log_prob_input_grad(x.view(), labels)?;
            for i in 0..n {
                let c = pi_tau(i);
                for w in 0..levels {
                    coef[[i * levels + w, 0]] += c * g[[i, w]];
                }
            }
        }
        PerformativeTerm::EndToEnd(model) => {
            if model.input_mode() != InputMode::VAndParams {
                return Err(Error::Behavior("end-to-end gradient needs a parameter-input behavior model".into()));
            }
            let x = model.inputs(zeta.view(), v, Some(policy.params()))?;
            let (_, g) = model.log_prob_input_grad(x.view(), labels)?;
            let dim_v = v.ncols();
            let mut acc = vec![0.0; policy.param_count()];
            for i in 0..n {
                let c = pi_tau(i);
                for (a, gk) in acc.iter_mut().zip(g.row(i).iter().skip(dim_v)) {
                    *a += c * gk;
                }
            }
            direct = Some(acc);
        }
    }

    let mut grad = policy.backward_batch(&cache, coef.view())?.params;
    if let Some(extra) = direct {
        grad.iter_mut().zip(&extra).for_each(|(g, e)| *g += e);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::BehaviorConfig;
    use crate::nnkit::OutputActivation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Mlp, Array2<f64>, Vec<usize>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = Mlp::new(&[7, 8, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
        let v = Array2::from_shape_fn((40, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let labels = (0..40).map(|_| rng.random_range(0..4)).collect();
        let tau = (0..40).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        (policy, v, labels, tau)
    }

    /// The surrogate whose gradient the estimator returns; `frozen_pi` holds
    /// the propensities that multiply `log q` fixed.
    fn objective(
        policy: &Mlp,
        v: &Array2<f64>,
        labels: &[usize],
        tau: &[f64],
        performative: Option<(&BehaviorModel, &[f64])>,
    ) -> f64 {
        let (zeta, _) = evaluation_vectors(policy, v.view(), 4).unwrap();
        let mut total = 0.0;
        for i in 0..labels.len() {
            total += zeta[[i, labels[i]]] * tau[i];
        }
        if let Some((m, frozen_pi)) = performative {
            let x = m.inputs(zeta.view(), v.view(), Some(policy.params())).unwrap();
            let (logp, _) = m.log_prob_input_grad(x.view(), labels).unwrap();
            for i in 0..labels.len() {
                total += frozen_pi[i] * tau[i] * logp[i];
            }
        }
        total / labels.len() as f64
    }

    fn check_fd(mode: InputMode) {
        let (policy, v, labels, tau) = setup(1);
        let cfg = BehaviorConfig {
            input_mode: mode,
            hidden: Some(6),
            ..BehaviorConfig::default()
        };
        let model = BehaviorModel::new(&cfg, 4, 3, policy.param_count(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let term = match mode {
            InputMode::VAndParams => PerformativeTerm::EndToEnd(&model),
            _ => PerformativeTerm::Mediated(&model),
        };
        let g = strategic_gradient(&policy, v.view(), &labels, &tau, term, 1.0).unwrap();
        let (zeta, _) = evaluation_vectors(&policy, v.view(), 4).unwrap();
        let frozen: Vec<f64> = (0..40).map(|i| zeta[[i, labels[i]]]).collect();
        let h = 1e-6;
        let mut probe = policy.clone();
        for k in 0..policy.param_count() {
            let p = policy.params()[k];
            probe.params_mut()[k] = p + h;
            let up = objective(&probe, &v, &labels, &tau, Some((&model, &frozen)));
            probe.params_mut()[k] = p - h;
            let down = objective(&probe, &v, &labels, &tau, Some((&model, &frozen)));
            probe.params_mut()[k] = p;
            let fd = (up - down) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "mode {mode:?} param {k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn vanilla_matches_finite_differences() {
        let (policy, v, labels, tau) = setup(3);
        let g = strategic_gradient(&policy, v.view(), &labels, &tau, PerformativeTerm::None, 1.0).unwrap();
        let h = 1e-6;
        let mut probe = policy.clone();
        for k in 0..policy.param_count() {
            let p = policy.params()[k];
            probe.params_mut()[k] = p + h;
            let up = objective(&probe, &v, &labels, &tau, None);
            probe.params_mut()[k] = p - h;
            let down = objective(&probe, &v, &labels, &tau, None);
            probe.params_mut()[k] = p;
            let fd = (up - down) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn mediated_matches_finite_differences() {
        check_fd(InputMode::ZetaAndV);
        check_fd(InputMode::ZetaOnly);
    }

    #[test]
    fn end_to_end_matches_finite_differences() {
        check_fd(InputMode::VAndParams);
    }

    #[test]
    fn zero_weight_is_bit_identical_to_vanilla() {
        let (policy, v, labels, tau) = setup(4);
        let model = BehaviorModel::new(&BehaviorConfig::default(), 4, 3, 0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let vanilla = strategic_gradient(&policy, v.view(), &labels, &tau, PerformativeTerm::None, 1.0).unwrap();
        let off = strategic_gradient(&policy, v.view(), &labels, &tau, PerformativeTerm::Mediated(&model), 0.0).unwrap();
        assert_eq!(vanilla, off);
    }

    #[test]
    fn zeta_blind_behavior_reduces_to_vanilla() {
        let (policy, v, labels, tau) = setup(6);
        let cfg = BehaviorConfig {
            hidden: Some(9),
            ..BehaviorConfig::default()
        };
        let mut model = BehaviorModel::new(&cfg, 4, 3, 0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        // first-layer weights on the zeta inputs
        for j in 0..9 {
            for w in 0..4 {
                model.net_mut().params_mut()[j * 7 + w] = 0.0;
            }
        }
        let vanilla = strategic_gradient(&policy, v.view(), &labels, &tau, PerformativeTerm::None, 1.0).unwrap();
        let full = strategic_gradient(&policy, v.view(), &labels, &tau, PerformativeTerm::Mediated(&model), 1.0).unwrap();
        assert_eq!(vanilla, full);
    }

    #[test]
    fn scaling_cate_scales_gradient() {
        let (policy, v, labels, tau) = setup(8);
        let model = BehaviorModel::new(&BehaviorConfig::default(), 4, 3, 0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let g = strategic_gradient(&policy, v.view(), &labels, &tau, PerformativeTerm::Mediated(&model), 1.0).unwrap();
        // powers of two keep the scaling exact
        for k in [4.0, 0.5, -2.0] {
            let scaled: Vec<f64> = tau.iter().map(|t| t * k).collect();
            let gk = strategic_gradient(&policy, v.view(), &labels, &scaled, PerformativeTerm::Mediated(&model), 1.0).unwrap();
            for (a, b) in g.iter().zip(&gk) {
                assert_eq!(a * k, *b);
            }
        }
        let k = 3.7;
        let scaled: Vec<f64> = tau.iter().map(|t| t * k).collect();
        let gk = strategic_gradient(&policy, v.view(), &labels, &scaled, PerformativeTerm::Mediated(&model), 1.0).unwrap();
        for (a, b) in g.iter().zip(&gk) {
            assert!((a * k - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_cate_gives_zero_gradient() {
        let (policy, v, labels, _) = setup(10);
        let model = BehaviorModel::new(&BehaviorConfig::default(), 4, 3, 0, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let g = strategic_gradient(&policy, v.view(), &labels, &[0.0; 40], PerformativeTerm::Mediated(&model), 1.0).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
