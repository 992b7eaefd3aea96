//! Evaluation vectors and the behavior model `q(u' | zeta [, v])`.
//!
//! A policy reaches an agent only through its evaluation vector `zeta`, the
//! propensities it assigns to every level at the agent's fixed features. The
//! behavior model predicts the reported level from `zeta`, and the chain
//! `d log q / d theta = (d log q / d zeta) (d zeta / d theta)` turns it into
//! a policy gradient.

mod train;

pub use train::{BehaviorSamples, TrainReport};

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::nnkit::{Cache, Mlp, OutputActivation};

pub const DEFAULT_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    ZetaOnly,
    ZetaAndV,
    /// Fixed features and the raw policy parameters.
    VAndParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorConfig {
    pub input_mode: InputMode,
    /// Width of both hidden layers; defaults to `2 (dim_v + levels)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_passes: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub validation_fraction: f64,
    /// Passes over each fresh batch after warm-up; 0 trains once on the warm-up pool only.
    pub finetune_passes: usize,
    pub floor: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            input_mode: InputMode::ZetaAndV,
            hidden: None,
            learning_rate: 0.1,
            batch_size: 256,
            max_passes: 200,
            patience: 10,
            min_delta: 1e-4,
            validation_fraction: 0.2,
            finetune_passes: 3,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_passes == 0 {
            return Err(Error::Config(
                "behavior: learning_rate, batch_size and max_passes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("behavior: validation_fraction must lie in [0, 1)".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config("behavior: floor must be positive".into()));
        }
        Ok(())
    }
}

/// Policy inputs `[one_hot(w), v_i]` with row `i * levels + w`.
pub fn policy_inputs(v: ArrayView2<'_, f64>, levels: usize) -> Array2<f64> {
    let (n, dim_v) = v.dim();
    let mut x = Array2::zeros((n * levels, levels + dim_v));
    for i in 0..n {
        for w in 0..levels {
            let mut row = x.row_mut(i * levels + w);
            row[w] = 1.0;
            row.slice_mut(s![levels..]).assign(&v.row(i));
        }
    }
    x
}

fn check_policy(policy: &Mlp, levels: usize, dim_v: usize) -> Result<()> {
    ensure_len("policy input width", levels + dim_v, policy.input_dim())?;
    ensure_len("policy output width", 1, policy.output_dim())
}

/// Evaluation vectors of every agent (one row each) plus the forward trace of
/// the `n * levels` policy evaluations behind them.
pub fn evaluation_vectors(policy: &Mlp, v: ArrayView2<'_, f64>, levels: usize) -> Result<(Array2<f64>, Cache)> {
    check_policy(policy, levels, v.ncols())?;
    let cache = policy.forward_batch(policy_inputs(v, levels).view())?;
    let zeta = cache
        .output()
        .view()
        .into_shape_with_order((v.nrows(), levels))
        .expect("one output per row")
        .to_owned();
    Ok((zeta, cache))
}

/// `zeta[w] = pi(one_hot(w), v)` for one agent.
pub fn evaluation_vector(policy: &Mlp, v: &[f64], levels: usize) -> Result<Vec<f64>> {
    let view = ArrayView2::from_shape((1, v.len()), v).expect("row vector");
    Ok(evaluation_vectors(policy, view, levels)?.0.row(0).to_vec())
}

/// Row `w` is the parameter gradient of `pi(one_hot(w), v)`.
pub fn zeta_jacobian(policy: &Mlp, v: &[f64], levels: usize) -> Result<Array2<f64>> {
    let view = ArrayView2::from_shape((1, v.len()), v).expect("row vector");
    let (_, cache) = evaluation_vectors(policy, view, levels)?;
    let mut jac = Array2::zeros((levels, policy.param_count()));
    let mut seed = Array2::zeros((levels, 1));
    for w in 0..levels {
        seed.fill(0.0);
        seed[[w, 0]] = 1.0;
        // rows other than w get zero output gradient
        let g = policy.backward_batch(&cache, seed.view())?;
        jac.row_mut(w).assign(&ndarray::ArrayView1::from(&g.params));
    }
    Ok(jac)
}

#[derive(Debug, Clone)]
pub struct BehaviorModel {
    net: Mlp,
    mode: InputMode,
    levels: usize,
    dim_v: usize,
    param_dim: usize,
    floor: f64,
}

impl BehaviorModel {
    /// `param_dim` is only used by [`InputMode::VAndParams`].
    pub fn new<R: Rng + ?Sized>(
        cfg: &BehaviorConfig,
        levels: usize,
        dim_v: usize,
        param_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let input = match cfg.input_mode {
            InputMode::ZetaOnly => levels,
            InputMode::ZetaAndV => levels + dim_v,
            InputMode::VAndParams => dim_v + param_dim,
        };
        let hidden = cfg.hidden.unwrap_or(2 * (dim_v + levels));
        let net = Mlp::new(&[input, hidden, hidden, levels], OutputActivation::Softmax, rng)?;
        Ok(Self {
            net,
            mode: cfg.input_mode,
            levels,
            dim_v,
            param_dim,
            floor: cfg.floor,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn input_mode(&self) -> InputMode {
        self.mode
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Behavior-model inputs for a batch. `theta` is required for
    /// [`InputMode::VAndParams`] and ignored otherwise.
    pub fn inputs(&self, zeta: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, theta: Option<&[f64]>) -> Result<Array2<f64>> {
        let n = v.nrows();
        ensure_len("behavior zeta rows", n, zeta.nrows())?;
        ensure_len("behavior zeta width", self.levels, zeta.ncols())?;
        ensure_len("behavior feature width", self.dim_v, v.ncols())?;
        Ok(match self.mode {
            InputMode::ZetaOnly => zeta.to_owned(),
            InputMode::ZetaAndV => ndarray::concatenate![ndarray::Axis(1), zeta, v],
            InputMode::VAndParams => {
                let theta = theta.ok_or_else(|| Error::Behavior("end-to-end inputs need policy parameters".into()))?;
                ensure_len("behavior parameter width", self.param_dim, theta.len())?;
                let mut x = Array2::zeros((n, self.dim_v + self.param_dim));
                x.slice_mut(s![.., ..self.dim_v]).assign(&v);
                let t = ndarray::ArrayView1::from(theta);
                for mut row in x.rows_mut() {
                    row.slice_mut(s![self.dim_v..]).assign(&t);
                }
                x
            }
        })
    }

    /// Floored probabilities `(q + floor) / (1 + levels * floor)`.
    pub fn probabilities(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut q = self.net.predict_batch(inputs)?;
        let norm = 1.0 + self.levels as f64 * self.floor;
        q.mapv_inplace(|p| (p + self.floor) / norm);
        Ok(q)
    }

    /// Floored `log q(label_i | input_i)` and its gradient with respect to
    /// each input row. Behavior parameters are held fixed.
    pub fn log_prob_input_grad(&self, inputs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(Vec<f64>, Array2<f64>)> {
        ensure_len("behavior labels", inputs.nrows(), labels.len())?;
        let cache = self.net.forward_batch(inputs)?;
        let q = cache.output();
        let norm = 1.0 + self.levels as f64 * self.floor;
        let mut out_grad = Array2::zeros(q.raw_dim());
        let mut logp = Vec::with_capacity(labels.len());
        for (i, &u) in labels.iter().enumerate() {
            if u >= self.levels {
                return Err(Error::Shape {
                    context: "behavior label",
                    expected: self.levels,
                    got: u,
                });
            }
            let shifted = q[[i, u]] + self.floor;
            logp.push((shifted / norm).ln());
            out_grad[[i, u]] = 1.0 / shifted;
        }
        let grads = self.net.backward_batch(&cache, out_grad.view())?;
        Ok((logp, grads.input))
    }

    /// `grad_theta log q(u | zeta(v, pi_theta))` for one agent.
    pub fn grad_log_q(&self, policy: &Mlp, v: &[f64], label: usize) -> Result<Vec<f64>> {
        let v_row = ArrayView2::from_shape((1, v.len()), v).expect("row vector");
        match self.mode {
            InputMode::VAndParams => {
                let x = self.inputs(Array2::zeros((1, self.levels)).view(), v_row, Some(policy.params()))?;
                let (_, g) = self.log_prob_input_grad(x.view(), &[label])?;
                Ok(g.slice(s![0, self.dim_v..]).to_vec())
            }
            _ => {
                let zeta = evaluation_vector(policy, v, self.levels)?;
                let zeta = ArrayView2::from_shape((1, self.levels), &zeta[..]).expect("row vector");
                let x = self.inputs(zeta, v_row, None)?;
                let (_, g) = self.log_prob_input_grad(x.view(), &[label])?;
                let a = g.slice(s![0, ..self.levels]);
                let jac = zeta_jacobian(policy, v, self.levels)?;
                let out: ndarray::Array1<f64> = jac.t().dot(&a);
                Ok(out.to_vec())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::param_count;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs().max(b.abs())).max(1e-6)
    }

    fn policy(seed: u64, levels: usize, dim_v: usize) -> Mlp {
        Mlp::new(
            &[levels + dim_v, 2 * (levels + dim_v), 1],
            OutputActivation::Sigmoid,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    fn model(mode: InputMode, levels: usize, dim_v: usize, param_dim: usize, seed: u64) -> BehaviorModel {
        let cfg = BehaviorConfig {
            input_mode: mode,
            ..BehaviorConfig::default()
        };
        BehaviorModel::new(&cfg, levels, dim_v, param_dim, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn constant_policy_gives_flat_zeta() {
        let net = Mlp::zeros(&[25, 50, 1], OutputActivation::Sigmoid).unwrap();
        let zeta = evaluation_vector(&net, &[0.3; 20], 5).unwrap();
        assert_eq!(zeta, vec![0.5; 5]);
    }

    #[test]
    fn zeta_rows_match_single_forward_passes() {
        let net = policy(1, 5, 20);
        let v: Vec<f64> = (0..20).map(|k| (k as f64 * 0.7).sin()).collect();
        let zeta = evaluation_vector(&net, &v, 5).unwrap();
        for (w, z) in zeta.iter().enumerate() {
            let mut x = vec![0.0; 25];
            x[w] = 1.0;
            x[5..].copy_from_slice(&v);
            assert_eq!(net.forward(&x).unwrap().0[0], *z);
        }
    }

    #[test]
    fn zeta_sensitivity_to_v_matches_input_gradient() {
        let net = policy(2, 5, 20);
        let v: Vec<f64> = (0..20).map(|k| (k as f64 * 0.3).cos()).collect();
        let h = 1e-5;
        for w in 0..5 {
            let mut x = vec![0.0; 25];
            x[w] = 1.0;
            x[5..].copy_from_slice(&v);
            let (_, cache) = net.forward(&x).unwrap();
            let (_, input_grad) = net.backward(&cache, &[1.0]).unwrap();
            for k in 0..20 {
                let mut up = v.clone();
                let mut down = v.clone();
                up[k] += h;
                down[k] -= h;
                let fd = (evaluation_vector(&net, &up, 5).unwrap()[w] - evaluation_vector(&net, &down, 5).unwrap()[w]) / (2.0 * h);
                assert!(rel_err(input_grad[5 + k], fd) < 1e-4 || (input_grad[5 + k] - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn jacobian_shape_and_finite_differences() {
        let net = policy(3, 5, 20);
        let v: Vec<f64> = (0..20).map(|k| 0.1 * k as f64 - 1.0).collect();
        let jac = zeta_jacobian(&net, &v, 5).unwrap();
        assert_eq!(jac.dim(), (5, param_count(&[25, 50, 1])));
        assert_eq!(jac.ncols(), 1351);
        let h = 1e-5;
        let mut probe = net.clone();
        for k in (0..1351).step_by(37) {
            let base = net.params()[k];
            probe.params_mut()[k] = base + h;
            let up = evaluation_vector(&probe, &v, 5).unwrap();
            probe.params_mut()[k] = base - h;
            let down = evaluation_vector(&probe, &v, 5).unwrap();
            probe.params_mut()[k] = base;
            for w in 0..5 {
                let fd = (up[w] - down[w]) / (2.0 * h);
                assert!(rel_err(jac[[w, k]], fd) < 1e-4 || (jac[[w, k]] - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn frozen_policy_has_zero_jacobian() {
        // a saturated output unit passes no gradient back
        let mut net = policy(3, 3, 2);
        let n = net.param_count();
        net.params_mut()[n - 1] = 1e3;
        let jac = zeta_jacobian(&net, &[0.7, 0.1], 3).unwrap();
        assert!(jac.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_output_weights_block_hidden_gradients() {
        let mut net = policy(4, 3, 2);
        let n = net.param_count();
        let hidden = 2 * 5;
        let out_w = n - hidden - 1;
        net.params_mut()[out_w..n - 1].iter_mut().for_each(|p| *p = 0.0);
        let jac = zeta_jacobian(&net, &[0.2, -0.4], 3).unwrap();
        for w in 0..3 {
            for k in 0..out_w {
                assert_eq!(jac[[w, k]], 0.0, "entry ({w}, {k})");
            }
            // output layer: d sigma(b) / d (W, b) = sigma'(b) (h, 1)
            let x = [(w == 0) as u8 as f64, (w == 1) as u8 as f64, (w == 2) as u8 as f64, 0.2, -0.4];
            let (y, cache) = net.forward(&x).unwrap();
            let slope = y[0] * (1.0 - y[0]);
            let h = cache.activation(1).row(0).to_owned();
            for j in 0..hidden {
                assert!((jac[[w, out_w + j]] - slope * h[j]).abs() < 1e-15);
            }
            assert!((jac[[w, n - 1]] - slope).abs() < 1e-15);
        }
    }

    #[test]
    fn zeta_blind_model_gives_zero_gradient() {
        let mut m = model(InputMode::ZetaAndV, 5, 20, 0, 5);
        let first = 25 * 50;
        let weights = &mut m.net_mut().params_mut()[..first];
        for row in weights.chunks_mut(25) {
            row[..5].iter_mut().for_each(|w| *w = 0.0);
        }
        let net = policy(6, 5, 20);
        let g = m.grad_log_q(&net, &[0.5; 20], 2).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn grad_log_q_matches_finite_differences() {
        for mode in [InputMode::ZetaOnly, InputMode::ZetaAndV, InputMode::VAndParams] {
            let (levels, dim_v) = (4, 3);
            let net = policy(7, levels, dim_v);
            let m = model(mode, levels, dim_v, net.param_count(), 8);
            let v = [0.4, -1.1, 0.9];
            let log_q = |p: &Mlp| -> f64 {
                let zeta = evaluation_vector(p, &v, levels).unwrap();
                let z = ArrayView2::from_shape((1, levels), &zeta[..]).unwrap();
                let vr = ArrayView2::from_shape((1, dim_v), &v[..]).unwrap();
                let x = m.inputs(z, vr, Some(p.params())).unwrap();
                m.log_prob_input_grad(x.view(), &[1]).unwrap().0[0]
            };
            let g = m.grad_log_q(&net, &v, 1).unwrap();
            let h = 1e-5;
            let mut probe = net.clone();
            for k in 0..net.param_count() {
                let base = net.params()[k];
                probe.params_mut()[k] = base + h;
                let up = log_q(&probe);
                probe.params_mut()[k] = base - h;
                let down = log_q(&probe);
                probe.params_mut()[k] = base;
                let fd = (up - down) / (2.0 * h);
                assert!(rel_err(g[k], fd) < 1e-3 || (g[k] - fd).abs() < 1e-7, "{mode:?} k={k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn score_function_identity() {
        let m = model(InputMode::ZetaOnly, 5, 0, 0, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let zeta = Array2::from_shape_fn((1, 5), |_| rng.random::<f64>());
            let q = m.probabilities(zeta.view()).unwrap();
            let mut total = [0.0; 5];
            for u in 0..5 {
                let (_, g) = m.log_prob_input_grad(zeta.view(), &[u]).unwrap();
                for k in 0..5 {
                    total[k] += q[[0, u]] * g[[0, k]];
                }
            }
            assert!(total.iter().all(|t| t.abs() < 1e-6), "{total:?}");
        }
    }

    #[test]
    fn floor_bounds_probabilities() {
        let mut m = model(InputMode::ZetaOnly, 5, 0, 0, 11);
        // saturate one class so the raw softmax underflows elsewhere
        let n = m.net().param_count();
        m.net_mut().params_mut()[n - 5] = 1e3;
        let q = m.probabilities(Array2::from_elem((3, 5), 0.5).view()).unwrap();
        let bound = m.floor() / (1.0 + 5.0 * m.floor());
        for row in q.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= bound * (1.0 - 1e-12)));
        }
    }

    #[test]
    fn mediation_only_through_zeta_and_jacobian() {
        // Two policies that differ only in the incoming weights of a dead
        // hidden unit share zeta and its Jacobian everywhere.
        let m = model(InputMode::ZetaAndV, 3, 2, 0, 12);
        let mut a = policy(13, 3, 2);
        let mut b = a.clone();
        let (input, hidden) = (5, 10);
        let dead = 4;
        for (net, scale) in [(&mut a, 1.0), (&mut b, -3.0)] {
            let p = net.params_mut();
            for k in 0..input {
                p[dead * input + k] = scale * (k as f64 + 1.0) * 0.01;
            }
            p[hidden * input + dead] = -1e3;
        }
        assert_ne!(a.params(), b.params());
        let v = [0.3, -0.2];
        assert_eq!(evaluation_vector(&a, &v, 3).unwrap(), evaluation_vector(&b, &v, 3).unwrap());
        assert_eq!(zeta_jacobian(&a, &v, 3).unwrap(), zeta_jacobian(&b, &v, 3).unwrap());
        for label in 0..3 {
            assert_eq!(m.grad_log_q(&a, &v, label).unwrap(), m.grad_log_q(&b, &v, label).unwrap());
        }
    }
}
