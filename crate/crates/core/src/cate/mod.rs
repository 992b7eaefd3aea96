//! Conditional average treatment effect estimators.
//!
//! All backends are S-learners over `phi(x) = [one_hot(level), v]`: a single
//! outcome model `f(phi, z)` with `tau(x) = f(phi, 1) - f(phi, 0)`.

mod boosted;
mod linear;

pub use boosted::{BoostConfig, BoostedSLearner};
pub use linear::{LinearSLearner, LINEAR_RIDGE};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CateBackend {
    /// Ground truth from the environment.
    Oracle,
    Linear,
    Boosted,
}

/// `[one_hot(level), v]` for every row.
pub fn features(levels: &[usize], v: ArrayView2<'_, f64>, n_levels: usize) -> Array2<f64> {
    let (n, dim_v) = v.dim();
    let mut phi = Array2::zeros((n, n_levels + dim_v));
    for (i, mut row) in phi.rows_mut().into_iter().enumerate() {
        row[levels[i]] = 1.0;
        row.slice_mut(ndarray::s![n_levels..]).assign(&v.row(i));
    }
    phi
}

/// A fitted-or-fitting CATE estimator. The oracle variant holds no state;
/// callers answer it from the environment.
#[derive(Debug, Clone)]
pub enum CateModel {
    Oracle,
    Linear(LinearSLearner),
    Boosted(BoostedSLearner),
}

impl CateModel {
    pub fn new(backend: CateBackend, feature_dim: usize, boost: &BoostConfig, seed: u64) -> Self {
        match backend {
            CateBackend::Oracle => Self::Oracle,
            CateBackend::Linear => Self::Linear(LinearSLearner::new(feature_dim)),
            CateBackend::Boosted => Self::Boosted(BoostedSLearner::new(feature_dim, boost.clone(), seed)),
        }
    }

    pub fn backend(&self) -> CateBackend {
        match self {
            Self::Oracle => CateBackend::Oracle,
            Self::Linear(_) => CateBackend::Linear,
            Self::Boosted(_) => CateBackend::Boosted,
        }
    }

    /// Adds rows `(phi, z, y)` to the estimator's data.
    pub fn observe(&mut self, phi: ArrayView2<'_, f64>, z: &[bool], y: &[f64]) -> Result<()> {
        match self {
            Self::Oracle => Ok(()),
            Self::Linear(m) => m.observe(phi, z, y),
            Self::Boosted(m) => m.observe(phi, z, y),
        }
    }

    /// Refits on every row observed so far.
    pub fn refit(&mut self) -> Result<()> {
        match self {
            Self::Oracle => Ok(()),
            Self::Linear(m) => m.refit(),
            Self::Boosted(m) => m.refit(),
        }
    }

    pub fn predict_outcome(&self, phi: ArrayView2<'_, f64>, z: bool) -> Result<Vec<f64>> {
        match self {
            Self::Oracle => Err(oracle_needs_env()),
            Self::Linear(m) => m.predict_outcome(phi, z),
            Self::Boosted(m) => m.predict_outcome(phi, z),
        }
    }

    pub fn predict_cate(&self, phi: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match self {
            Self::Oracle => Err(oracle_needs_env()),
            Self::Linear(m) => m.predict_cate(phi),
            Self::Boosted(m) => m.predict_cate(phi),
        }
    }
}

fn oracle_needs_env() -> Error {
    Error::State("the oracle CATE is answered by the environment".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StrategicEnv;
    use crate::loanenv::{LoanConfig, LoanEnv};
    use crate::synthenv::{oracle_cate, realize_outcome, sample_agents, StructuralParams, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Sample {
        phi: Array2<f64>,
        z: Vec<bool>,
        y: Vec<f64>,
        tau: Vec<f64>,
    }

    fn synthetic(n: usize, noise: bool, seed: u64) -> Sample {
        let cfg = SynthConfig::default();
        let params = StructuralParams::generate(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = sample_agents(n, &params, &mut rng);
        let tau: Vec<f64> = (0..n).map(|i| oracle_cate(pop.u0[i], pop.v.row(i), &params)).collect();
        let z: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let y = (0..n).map(|i| realize_outcome(tau[i], z[i], noise, &mut rng)).collect();
        Sample {
            phi: features(&pop.u0, pop.v.view(), cfg.n_levels),
            z,
            y,
            tau,
        }
    }

    fn fitted(backend: CateBackend, s: &Sample) -> CateModel {
        let mut m = CateModel::new(backend, s.phi.ncols(), &BoostConfig::default(), 0);
        m.observe(s.phi.view(), &s.z, &s.y).unwrap();
        m.refit().unwrap();
        m
    }

    #[test]
    fn linear_recovers_noiseless_truth() {
        let s = synthetic(5000, false, 1);
        let m = fitted(CateBackend::Linear, &s);
        let fresh = synthetic(1000, false, 2);
        let pred = m.predict_cate(fresh.phi.view()).unwrap();
        let err = pred.iter().zip(&fresh.tau).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "max abs error {err}");
    }

    #[test]
    fn zero_outcomes_give_zero_effect() {
        let mut s = synthetic(500, true, 3);
        s.y.iter_mut().for_each(|y| *y = 0.0);
        for backend in [CateBackend::Linear, CateBackend::Boosted] {
            let m = fitted(backend, &s);
            assert!(m.predict_cate(s.phi.view()).unwrap().iter().all(|t| t.abs() < 1e-12));
        }
    }

    #[test]
    fn s_learner_identity() {
        let s = synthetic(2000, true, 4);
        for backend in [CateBackend::Linear, CateBackend::Boosted] {
            let m = fitted(backend, &s);
            let tau = m.predict_cate(s.phi.view()).unwrap();
            let y1 = m.predict_outcome(s.phi.view(), true).unwrap();
            let y0 = m.predict_outcome(s.phi.view(), false).unwrap();
            for i in 0..tau.len() {
                assert!((tau[i] - (y1[i] - y0[i])).abs() <= 1e-9 * (1.0 + tau[i].abs()));
            }
        }
    }

    #[test]
    fn single_arm_is_a_fit_error() {
        let mut s = synthetic(300, true, 5);
        s.z.iter_mut().for_each(|z| *z = true);
        for backend in [CateBackend::Linear, CateBackend::Boosted] {
            let mut m = CateModel::new(backend, s.phi.ncols(), &BoostConfig::default(), 0);
            m.observe(s.phi.view(), &s.z, &s.y).unwrap();
            assert!(matches!(m.refit(), Err(Error::Fit(_))));
        }
    }

    #[test]
    fn unfitted_and_oracle_predictions_are_state_errors() {
        let phi = Array2::zeros((2, 25));
        let linear = CateModel::new(CateBackend::Linear, 25, &BoostConfig::default(), 0);
        assert!(matches!(linear.predict_cate(phi.view()), Err(Error::State(_))));
        assert!(matches!(CateModel::Oracle.predict_cate(phi.view()), Err(Error::State(_))));
    }

    #[test]
    fn linear_error_shrinks_at_root_n() {
        let sizes = [500usize, 2000, 8000, 32000];
        let test = synthetic(2000, false, 99);
        let mut errs = Vec::new();
        for &n in &sizes {
            let reps = 8;
            let mut total = 0.0;
            for r in 0..reps {
                let m = fitted(CateBackend::Linear, &synthetic(n, true, 1000 + r));
                let pred = m.predict_cate(test.phi.view()).unwrap();
                let mse: f64 = pred.iter().zip(&test.tau).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64;
                total += mse.sqrt();
            }
            errs.push(total / reps as f64);
        }
        let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((-0.7..=-0.3).contains(&slope), "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn boosted_tracks_loan_oracle() {
        let env = LoanEnv::new(LoanConfig {
            surrogate_rows: 25_000,
            batch_size: Some(20_000),
            ..LoanConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pop = env.sample_batch(0, &mut rng).unwrap();
        let n = pop.len();
        // random reported levels so every level is represented
        let levels: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let z: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let y: Vec<f64> = (0..n).map(|i| env.outcome(&pop, i, levels[i], z[i], &mut rng)).collect();
        let phi = features(&levels, pop.v.view(), 10);
        let mut m = CateModel::new(CateBackend::Boosted, phi.ncols(), &BoostConfig::default(), 0);
        m.observe(phi.view(), &z, &y).unwrap();
        m.refit().unwrap();

        let eval = env.eval_population();
        let eval_levels: Vec<usize> = (0..eval.len()).map(|_| rng.random_range(0..10)).collect();
        let truth: Vec<f64> = (0..eval.len()).map(|i| env.oracle_cate(eval, i, eval_levels[i])).collect();
        let pred = m.predict_cate(features(&eval_levels, eval.v.view(), 10).view()).unwrap();
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let sse: f64 = pred.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum();
        let sst: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
        let r2 = 1.0 - sse / sst;
        assert!(r2 >= 0.8, "R^2 = {r2}");
    }
}
