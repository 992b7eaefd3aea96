use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{finite_difference, relative_error};
use crate::behavior::{evaluation_vector, BehaviorConfig, BehaviorModel, InputMode};
use crate::error::Result;
use crate::learner::{strategic_gradient, PerformativeTerm};
use crate::nnkit::{Mlp, OutputActivation};

const H: f64 = 1e-6;

/// Central differences at `H` and `H / 4`. `None` when they disagree, which
/// means a ReLU kink lies within reach of the probe and the point is redrawn.
fn smooth_fd<F>(mut f: F, x: &[f64]) -> Result<Option<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let coarse = finite_difference(&mut f, x, H)?;
    let fine = finite_difference(&mut f, x, H / 4.0)?;
    Ok((relative_error(&coarse, &fine) <= 1e-6).then_some(fine))
}

/// Worst relative error of one family of randomized checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Draws discarded because they sat next to a kink.
    pub redrawn: usize,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn random_net<R: Rng + ?Sized>(dims: &[usize], head: OutputActivation, rng: &mut R) -> Result<Mlp> {
    let mut net = Mlp::zeros(dims, head)?;
    let p: Vec<f64> = (0..net.param_count()).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    net.set_params(&p)?;
    Ok(net)
}

fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn with_params(net: &Mlp, p: &[f64]) -> Result<Mlp> {
    let mut n = net.clone();
    n.set_params(p)?;
    Ok(n)
}

/// Sigmoid-headed network, scalar `sum_i w_i f(x_i)`.
fn policy_params<R: Rng + ?Sized>(rng: &mut R) -> Result<Option<f64>> {
    let depth = rng.random_range(1..=2);
    let mut dims = vec![rng.random_range(2..8)];
    dims.extend((0..depth).map(|_| rng.random_range(2..10)));
    dims.push(1);
    let net = random_net(&dims, OutputActivation::Sigmoid, rng)?;
    let x = random_matrix(4, dims[0], rng);
    let w = random_matrix(4, 1, rng);
    let cache = net.forward_batch(x.view())?;
    let analytic = net.backward_batch(&cache, w.view())?.params;
    let numeric = smooth_fd(|p| Ok((with_params(&net, p)?.predict_batch(x.view())? * &w).sum()), net.params())?;
    Ok(numeric.map(|n| relative_error(&analytic, &n)))
}

/// Softmax-headed network, scalar `sum_i log q(y_i | x_i)`, gradient in
/// both parameters and inputs.
fn behavior_log_likelihood<R: Rng + ?Sized>(rng: &mut R) -> Result<Option<f64>> {
    let (d, k) = (rng.random_range(2..7), rng.random_range(2..6));
    let net = random_net(&[d, 8, 8, k], OutputActivation::Softmax, rng)?;
    let x = random_matrix(3, d, rng);
    let y: Vec<usize> = (0..3).map(|_| rng.random_range(0..k)).collect();
    let loglik = |net: &Mlp, x: ArrayView2<'_, f64>| -> Result<f64> {
        let q = net.predict_batch(x)?;
        Ok(y.iter().enumerate().map(|(i, &u)| q[[i, u]].ln()).sum())
    };
    let cache = net.forward_batch(x.view())?;
    let q = cache.output();
    let mut g = Array2::zeros(q.raw_dim());
    for (i, &u) in y.iter().enumerate() {
        g[[i, u]] = 1.0 / q[[i, u]];
    }
    let grads = net.backward_batch(&cache, g.view())?;
    let numeric_p = smooth_fd(|p| loglik(&with_params(&net, p)?, x.view()), net.params())?;
    let flat: Vec<f64> = x.iter().copied().collect();
    let numeric_x = smooth_fd(
        |xs| loglik(&net, ArrayView2::from_shape(x.raw_dim(), xs).expect("same shape")),
        &flat,
    )?;
    let analytic_x: Vec<f64> = grads.input.iter().copied().collect();
    Ok(numeric_p
        .zip(numeric_x)
        .map(|(np, nx)| relative_error(&grads.params, &np).max(relative_error(&analytic_x, &nx))))
}

/// Vanilla estimator against `theta -> mean_i pi([e_{u_i}, v_i]) tau_i`,
/// with the policy input assembled by hand.
fn vanilla_estimator<R: Rng + ?Sized>(rng: &mut R) -> Result<Option<f64>> {
    let (k, dv, n) = (rng.random_range(2..6), rng.random_range(1..5), 6);
    let policy = random_net(&[k + dv, 7, 1], OutputActivation::Sigmoid, rng)?;
    let v = random_matrix(n, dv, rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let tau: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = Array2::zeros((n, k + dv));
    for i in 0..n {
        x[[i, labels[i]]] = 1.0;
        for j in 0..dv {
            x[[i, k + j]] = v[[i, j]];
        }
    }
    let analytic = strategic_gradient(&policy, v.view(), &labels, &tau, PerformativeTerm::None, 0.0)?;
    let numeric = smooth_fd(
        |p| {
            let pi = with_params(&policy, p)?.predict_batch(x.view())?;
            Ok(pi.column(0).iter().zip(&tau).map(|(a, t)| a * t).sum::<f64>() / n as f64)
        },
        policy.params(),
    )?;
    Ok(numeric.map(|n| relative_error(&analytic, &n)))
}

/// `grad_theta log q(u | zeta(v, pi_theta))` through the policy, for one input mode.
fn log_q_chain<R: Rng + ?Sized>(mode: InputMode, rng: &mut R) -> Result<Option<f64>> {
    let (k, dv) = (rng.random_range(2..6), rng.random_range(1..4));
    let policy = random_net(&[k + dv, 6, 1], OutputActivation::Sigmoid, rng)?;
    let cfg = BehaviorConfig {
        input_mode: mode,
        hidden: Some(8),
        ..BehaviorConfig::default()
    };
    let model = BehaviorModel::new(&cfg, k, dv, policy.param_count(), rng)?;
    let v: Vec<f64> = (0..dv).map(|_| rng.sample(StandardNormal)).collect();
    let label = rng.random_range(0..k);
    let v_row = ArrayView2::from_shape((1, dv), &v).expect("row vector");
    let analytic = model.grad_log_q(&policy, &v, label)?;
    let numeric = smooth_fd(
        |theta| {
            let pol = with_params(&policy, theta)?;
            let zeta = evaluation_vector(&pol, &v, k)?;
            let z = ArrayView2::from_shape((1, k), &zeta).expect("row vector");
            let x = model.inputs(z, v_row, Some(theta))?;
            Ok(model.probabilities(x.view())?[[0, label]].ln())
        },
        policy.params(),
    )?;
    Ok(numeric.map(|n| relative_error(&analytic, &n)))
}

/// Randomized analytic-versus-central-difference checks.
pub fn gradient_suite<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> Result<Vec<GradientCheck>> {
    let mut out = Vec::new();
    let mut family = |name: &'static str, tolerance: f64, f: &mut dyn FnMut(&mut R) -> Result<Option<f64>>| -> Result<()> {
        let (mut worst, mut done, mut redrawn) = (0.0f64, 0, 0);
        while done < trials {
            match f(rng)? {
                Some(e) => {
                    worst = worst.max(e);
                    done += 1;
                }
                None if redrawn < 10 * trials.max(1) => redrawn += 1,
                None => {
                    return Err(crate::error::Error::State(format!("{name}: too many draws next to a kink")))
                }
            }
        }
        out.push(GradientCheck {
            name,
            trials,
            max_rel_error: worst,
            tolerance,
            redrawn,
        });
        Ok(())
    };
    family("policy_params", 1e-4, &mut |r| policy_params(r))?;
    family("behavior_log_likelihood", 1e-4, &mut |r| behavior_log_likelihood(r))?;
    family("vanilla_estimator", 1e-4, &mut |r| vanilla_estimator(r))?;
    family("log_q_chain_zeta", 1e-3, &mut |r| log_q_chain(InputMode::ZetaOnly, r))?;
    family("log_q_chain_zeta_v", 1e-3, &mut |r| log_q_chain(InputMode::ZetaAndV, r))?;
    family("log_q_chain_params", 1e-3, &mut |r| log_q_chain(InputMode::VAndParams, r))?;
    Ok(out)
}
