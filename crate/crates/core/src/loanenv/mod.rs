//! Semi-synthetic loan environment.
//!
//! The ordinary score, discretized into ten levels, is the manipulatable
//! feature. Moving it up is genuine improvement: the true repayment
//! probability blends the strong score with the reported level.

mod data;

pub use data::{generate_surrogate, ingest, standardize_columns, IngestReport, LoanDataset};

use std::path::PathBuf;

use ndarray::{ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Population, StrategicEnv};
use crate::error::{Error, Result};
use crate::synthenv::{manipulate, Grid, Mechanism};

pub const LOAN_LEVELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoanConfig {
    /// Weight of the strong score in the repayment probability.
    pub lambda: f64,
    /// Loss on default relative to the gain on repayment.
    pub loss_multiplier: f64,
    pub cost: f64,
    pub batches: usize,
    /// Applicants per batch; defaults to `rows / batches`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Applicants in the fixed evaluation subsample.
    pub eval_size: usize,
    /// CSV in the ingestion schema. When absent a surrogate is generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub surrogate_rows: usize,
    pub dim_v: usize,
    /// Seeds the surrogate draw, the batch order and the evaluation subsample.
    pub data_seed: u64,
}

impl Default for LoanConfig {
    fn default() -> Self {
        Self {
            lambda: 0.4,
            loss_multiplier: 4.0,
            cost: 0.1,
            batches: 300,
            batch_size: Some(1000),
            eval_size: 2000,
            data: None,
            surrogate_rows: 300_000,
            dim_v: 55,
            data_seed: 0,
        }
    }
}

impl LoanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("loan: lambda must lie in [0, 1]".into()));
        }
        if !(self.loss_multiplier > 0.0) {
            return Err(Error::Config("loan: loss_multiplier must be positive".into()));
        }
        if !(self.cost >= 0.0) || !self.cost.is_finite() {
            return Err(Error::Config("loan: cost must be a finite nonnegative number".into()));
        }
        if self.batches == 0 || self.eval_size == 0 || self.batch_size == Some(0) {
            return Err(Error::Config("loan: batches, batch_size and eval_size must be positive".into()));
        }
        Ok(())
    }
}

/// `floor(10 * score)`, with a score of exactly 1 mapped to the top level.
pub fn discretize_score(score: f64) -> usize {
    ((score * LOAN_LEVELS as f64).floor().max(0.0) as usize).min(LOAN_LEVELS - 1)
}

/// Bin midpoint standing in for a discrete level.
pub fn level_midpoint(level: usize) -> f64 {
    (level as f64 + 0.5) / LOAN_LEVELS as f64
}

/// True repayment probability after reporting `level`.
pub fn repayment_probability(level: usize, score_strong: f64, lambda: f64) -> f64 {
    lambda * score_strong + (1.0 - lambda) * level_midpoint(level)
}

/// Expected revenue of approving at repayment probability `g`.
pub fn revenue(g: f64, amt: f64, loss_multiplier: f64) -> f64 {
    (g - loss_multiplier * (1.0 - g)) * amt
}

/// Outcome of one applicant: zero when rejected, expected revenue when approved.
pub fn loan_outcome(level: usize, score_strong: f64, amt: f64, cfg: &LoanConfig, treated: bool) -> f64 {
    if !treated {
        return 0.0;
    }
    revenue(repayment_probability(level, score_strong, cfg.lambda), amt, cfg.loss_multiplier)
}

pub struct LoanEnv {
    cfg: LoanConfig,
    data: LoanDataset,
    order: Vec<usize>,
    batch_size: usize,
    eval: Population,
}

impl LoanEnv {
    /// Loads `cfg.data` or generates a surrogate.
    pub fn new(cfg: LoanConfig) -> Result<Self> {
        cfg.validate()?;
        let data = match &cfg.data {
            Some(path) => ingest(path)?.0,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
                generate_surrogate(cfg.surrogate_rows, cfg.dim_v, &mut rng)?
            }
        };
        Self::with_dataset(cfg, data)
    }

    pub fn with_dataset(cfg: LoanConfig, data: LoanDataset) -> Result<Self> {
        cfg.validate()?;
        if data.dim_v() != cfg.dim_v {
            return Err(Error::Config(format!(
                "loan: dataset has {} features, config expects {}",
                data.dim_v(),
                cfg.dim_v
            )));
        }
        let rows = data.len();
        let batch_size = cfg.batch_size.unwrap_or(rows / cfg.batches).clamp(1, rows);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        rng.set_stream(1);
        let order = index::sample(&mut rng, rows, rows).into_vec();
        rng.set_stream(2);
        let mut eval_rows = index::sample(&mut rng, rows, cfg.eval_size.min(rows)).into_vec();
        eval_rows.sort_unstable();
        let eval = population(&data, eval_rows);
        Ok(Self {
            cfg,
            data,
            order,
            batch_size,
            eval,
        })
    }

    pub fn config(&self) -> &LoanConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &LoanDataset {
        &self.data
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn tau(&self, row: usize, level: usize) -> f64 {
        loan_outcome(level, self.data.score_strong[row], self.data.amt[row], &self.cfg, true)
    }
}

fn population(data: &LoanDataset, rows: Vec<usize>) -> Population {
    Population {
        v: data.v.select(Axis(0), &rows),
        u0: rows.iter().map(|&r| discretize_score(data.score_ordinary[r])).collect(),
        source_rows: rows,
    }
}

impl StrategicEnv for LoanEnv {
    fn n_levels(&self) -> usize {
        LOAN_LEVELS
    }

    fn dim_v(&self) -> usize {
        self.cfg.dim_v
    }

    /// Batches follow a fixed shuffled order of the rows and wrap around.
    fn sample_batch(&self, epoch: usize, _rng: &mut ChaCha8Rng) -> Result<Population> {
        let rows = self.order.len();
        let start = (epoch * self.batch_size) % rows;
        let picked = (0..self.batch_size).map(|k| self.order[(start + k) % rows]).collect();
        Ok(population(&self.data, picked))
    }

    fn eval_population(&self) -> &Population {
        &self.eval
    }

    fn eval_seed(&self) -> u64 {
        self.cfg.data_seed
    }

    fn respond(&self, pop: &Population, zeta: ArrayView2<'_, f64>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        manipulate(
            &pop.u0,
            zeta,
            Grid::identity(LOAN_LEVELS),
            self.cfg.cost,
            Mechanism::BestResponse,
            rng,
        )
    }

    fn oracle_cate(&self, pop: &Population, agent: usize, true_level: usize) -> f64 {
        self.tau(pop.source_rows[agent], true_level)
    }

    fn cutoff_propensities(&self, pop: &Population, agent: usize) -> Vec<f64> {
        let row = pop.source_rows[agent];
        (0..LOAN_LEVELS).map(|k| (self.tau(row, k) > 0.0) as u8 as f64).collect()
    }

    fn outcome(&self, pop: &Population, agent: usize, true_level: usize, treated: bool, _rng: &mut ChaCha8Rng) -> f64 {
        let row = pop.source_rows[agent];
        loan_outcome(true_level, self.data.score_strong[row], self.data.amt[row], &self.cfg, treated)
    }
}
