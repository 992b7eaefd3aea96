//! The interface a learner needs from a strategic environment.

use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// A population of agents before manipulation.
#[derive(Debug, Clone)]
pub struct Population {
    /// Fixed features, one agent per row.
    pub v: Array2<f64>,
    /// Original manipulatable level on the environment's true grid.
    pub u0: Vec<usize>,
    /// Row of the backing dataset each agent came from (empty for generated agents).
    pub source_rows: Vec<usize>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }
}

pub trait StrategicEnv: Sync {
    /// Number of manipulatable levels the principal observes.
    fn n_levels(&self) -> usize;

    /// Number of levels agents actually choose among.
    fn true_levels(&self) -> usize {
        self.n_levels()
    }

    fn dim_v(&self) -> usize;

    /// Fresh agents for `epoch`.
    fn sample_batch(&self, epoch: usize, rng: &mut ChaCha8Rng) -> Result<Population>;

    /// Fixed population used to evaluate every deployed policy.
    fn eval_population(&self) -> &Population;

    /// Seed for the manipulation noise used during evaluation, so that
    /// evaluating the same policy twice gives the same value.
    fn eval_seed(&self) -> u64;

    /// Reported true-grid levels given each agent's evaluation vector
    /// (`zeta` has one row per agent, one column per observed level).
    fn respond(&self, pop: &Population, zeta: ArrayView2<'_, f64>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>>;

    /// Level the principal sees for a true-grid level.
    fn observe(&self, true_level: usize) -> usize {
        true_level
    }

    fn oracle_cate(&self, pop: &Population, agent: usize, true_level: usize) -> f64;

    /// Propensities of the oracle cutoff rule 1{tau > 0} over the observed levels.
    fn cutoff_propensities(&self, pop: &Population, agent: usize) -> Vec<f64>;

    fn outcome(&self, pop: &Population, agent: usize, true_level: usize, treated: bool, rng: &mut ChaCha8Rng) -> f64;
}
