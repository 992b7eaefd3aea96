//! Synthetic strategic environment.
//!
//! Fixed features `v ~ N(0, I)`, an original level drawn from
//! `Softmax(W v)`, and the linear outcome `Y(z) = (z + 1) <x, beta> + eps`
//! where `x = (one_hot(u), v)`. Agents respond to the deployed policy through
//! one of the [`Mechanism`]s, optionally on a finer grid of `true_levels`
//! than the principal observes.

mod mechanism;
mod piecewise;

pub use mechanism::{
    argmax_prefer_status_quo, best_response, coarsen, manipulate, softmax_choice_probs, Grid, Mechanism,
    SOFTMAX_MULTIPLIER,
};
pub use piecewise::{piecewise_policy, piecewise_policy_response, DEFAULT_MEASUREMENT_STEP};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{Population, StrategicEnv};
use crate::error::{Error, Result};

/// Stream ids carved out of the structural seed.
const STREAM_EVAL_POPULATION: u64 = 1;
const STREAM_EVAL_RESPONSE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dim_v: usize,
    /// Levels the principal observes.
    pub n_levels: usize,
    /// Levels agents actually choose among.
    pub true_levels: usize,
    pub batch_size: usize,
    pub eval_size: usize,
    pub cost: f64,
    pub mechanism: Mechanism,
    pub structural_seed: u64,
    /// Add N(0, 1) noise to realized outcomes.
    pub outcome_noise: bool,
    /// When set, moving across the whole true grid costs `cost * cost_span`
    /// instead of `cost * (true_levels - 1)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_span: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim_v: 20,
            n_levels: 5,
            true_levels: 5,
            batch_size: 3000,
            eval_size: 10_000,
            cost: 0.1,
            mechanism: Mechanism::BestResponse,
            structural_seed: DEFAULT_STRUCTURAL_SEED,
            outcome_noise: true,
            cost_span: None,
        }
    }
}

/// Structural seed used by the shipped presets. Under it the oracle cutoff
/// rule is worth about 2.9 at cost 0.1 on the default grid.
pub const DEFAULT_STRUCTURAL_SEED: u64 = 20;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_v == 0 || self.n_levels < 2 {
            return Err(Error::Config("synthetic: need dim_v >= 1 and n_levels >= 2".into()));
        }
        if self.true_levels < self.n_levels {
            return Err(Error::Config(format!(
                "synthetic: true_levels ({}) must be >= n_levels ({})",
                self.true_levels, self.n_levels
            )));
        }
        if !(self.cost >= 0.0) || !self.cost.is_finite() {
            return Err(Error::Config("synthetic: cost must be a finite nonnegative number".into()));
        }
        if self.batch_size == 0 || self.eval_size == 0 {
            return Err(Error::Config("synthetic: batch_size and eval_size must be positive".into()));
        }
        if let Some(span) = self.cost_span {
            if !(span > 0.0) {
                return Err(Error::Config("synthetic: cost_span must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        let spacing = match self.cost_span {
            Some(span) if self.true_levels > 1 => span / (self.true_levels - 1) as f64,
            _ => 1.0,
        };
        Grid {
            true_levels: self.true_levels,
            observed_levels: self.n_levels,
            spacing,
        }
    }
}

/// Ground-truth parameters, fixed for a whole session by the structural seed.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralParams {
    /// `true_levels x dim_v`, entries N(1, 1).
    pub w: Array2<f64>,
    /// Level effects, linearly spaced over [-5, 5].
    pub beta_u: Vec<f64>,
    /// Fixed-feature effects, N(0, 1).
    pub beta_v: Vec<f64>,
}

impl StructuralParams {
    /// `beta_v` is drawn before `W`, so configurations that differ only in
    /// `true_levels` share the same fixed-feature effects.
    pub fn generate(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.structural_seed);
        let beta_v: Vec<f64> = (0..cfg.dim_v).map(|_| rng.sample(StandardNormal)).collect();
        let shifted = Normal::new(1.0, 1.0).expect("valid normal");
        let w = Array2::from_shape_fn((cfg.true_levels, cfg.dim_v), |_| shifted.sample(&mut rng));
        Self {
            w,
            beta_u: linspace(-5.0, 5.0, cfg.true_levels),
            beta_v,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Draws `n` agents: `v ~ N(0, I)`, `u0 ~ Softmax(W v)`.
pub fn sample_agents<R: Rng + ?Sized>(n: usize, params: &StructuralParams, rng: &mut R) -> Population {
    let (m, dim_v) = params.w.dim();
    let v = Array2::from_shape_fn((n, dim_v), |_| rng.sample(StandardNormal));
    let logits = v.dot(&params.w.t());
    let mut u0 = Vec::with_capacity(n);
    let mut probs = vec![0.0; m];
    for row in logits.rows() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for (p, l) in probs.iter_mut().zip(row.iter()) {
            *p = (l - max).exp();
            total += *p;
        }
        let mut draw = rng.random::<f64>() * total;
        let mut chosen = m - 1;
        for (k, p) in probs.iter().enumerate() {
            if draw < *p {
                chosen = k;
                break;
            }
            draw -= p;
        }
        u0.push(chosen);
    }
    Population {
        v,
        u0,
        source_rows: Vec::new(),
    }
}

/// `tau(x) = beta_u[level] + <v, beta_v>`.
pub fn oracle_cate(level: usize, v: ArrayView1<'_, f64>, params: &StructuralParams) -> f64 {
    params.beta_u[level] + v.dot(&ArrayView1::from(&params.beta_v))
}

/// `Y(z) = (z + 1) <x, beta> + eps`, with `eps ~ N(0, 1)` when `noise` is set.
pub fn realize_outcome<R: Rng + ?Sized>(cate: f64, treated: bool, noise: bool, rng: &mut R) -> f64 {
    let eps = if noise { rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
    (treated as u8 as f64 + 1.0) * cate + eps
}

pub struct SynthEnv {
    cfg: SynthConfig,
    params: StructuralParams,
    eval: Population,
    // True levels grouped under each observed level.
    groups: Vec<Vec<usize>>,
}

impl SynthEnv {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let params = StructuralParams::generate(&cfg);
        let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.structural_seed);
        eval_rng.set_stream(STREAM_EVAL_POPULATION);
        let eval = sample_agents(cfg.eval_size, &params, &mut eval_rng);
        let mut groups = vec![Vec::new(); cfg.n_levels];
        for w in 0..cfg.true_levels {
            groups[coarsen(w, cfg.true_levels, cfg.n_levels)?].push(w);
        }
        Ok(Self {
            cfg,
            params,
            eval,
            groups,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn params(&self) -> &StructuralParams {
        &self.params
    }

    /// Oracle CATE of an observed level: the mean of its true levels' effects.
    pub fn observed_cate(&self, observed_level: usize, v: ArrayView1<'_, f64>) -> f64 {
        let group = &self.groups[observed_level];
        let level_effect = group.iter().map(|&w| self.params.beta_u[w]).sum::<f64>() / group.len() as f64;
        level_effect + v.dot(&ArrayView1::from(&self.params.beta_v))
    }
}

impl StrategicEnv for SynthEnv {
    fn n_levels(&self) -> usize {
        self.cfg.n_levels
    }

    fn true_levels(&self) -> usize {
        self.cfg.true_levels
    }

    fn dim_v(&self) -> usize {
        self.cfg.dim_v
    }

    fn sample_batch(&self, _epoch: usize, rng: &mut ChaCha8Rng) -> Result<Population> {
        Ok(sample_agents(self.cfg.batch_size, &self.params, rng))
    }

    fn eval_population(&self) -> &Population {
        &self.eval
    }

    fn eval_seed(&self) -> u64 {
        self.cfg.structural_seed ^ (STREAM_EVAL_RESPONSE << 56)
    }

    fn respond(&self, pop: &Population, zeta: ArrayView2<'_, f64>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        manipulate(&pop.u0, zeta, self.cfg.grid(), self.cfg.cost, self.cfg.mechanism, rng)
    }

    fn observe(&self, true_level: usize) -> usize {
        true_level * self.cfg.n_levels / self.cfg.true_levels
    }

    fn oracle_cate(&self, pop: &Population, agent: usize, true_level: usize) -> f64 {
        oracle_cate(true_level, pop.v.row(agent), &self.params)
    }

    fn cutoff_propensities(&self, pop: &Population, agent: usize) -> Vec<f64> {
        (0..self.cfg.n_levels)
            .map(|k| (self.observed_cate(k, pop.v.row(agent)) > 0.0) as u8 as f64)
            .collect()
    }

    fn outcome(&self, pop: &Population, agent: usize, true_level: usize, treated: bool, rng: &mut ChaCha8Rng) -> f64 {
        let cate = oracle_cate(true_level, pop.v.row(agent), &self.params);
        realize_outcome(cate, treated, self.cfg.outcome_noise, rng)
    }
}
