use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::behavior::evaluation_vectors;
use crate::env::{Population, StrategicEnv};
use crate::error::Result;
use crate::nnkit::Mlp;

/// A treatment rule as deployed to agents.
#[derive(Debug, Clone, Copy)]
pub enum Rule<'a> {
    Policy(&'a Mlp),
    /// Oracle rule `1{tau > 0}` per observed level.
    Cutoff,
    /// The same propensity everywhere.
    Constant(f64),
}

/// Evaluation vectors of every agent in `pop` under `rule`.
pub fn deployed_zeta<E: StrategicEnv + ?Sized>(env: &E, pop: &Population, rule: Rule<'_>) -> Result<Array2<f64>> {
    let k = env.n_levels();
    Ok(match rule {
        Rule::Policy(policy) => evaluation_vectors(policy, pop.v.view(), k)?.0,
        Rule::Cutoff => {
            let mut zeta = Array2::zeros((pop.len(), k));
            for (i, mut row) in zeta.rows_mut().into_iter().enumerate() {
                for (dst, p) in row.iter_mut().zip(env.cutoff_propensities(pop, i)) {
                    *dst = p;
                }
            }
            zeta
        }
        Rule::Constant(p) => Array2::from_elem((pop.len(), k), p),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean of `pi(x') tau(x')` under the induced response.
    pub policy_value: f64,
    /// Percent of agents whose reported level differs from their original one.
    pub pct_change: f64,
    /// Mean signed level change, in true-grid steps.
    pub move_: f64,
    /// Reported true levels.
    pub levels: Vec<usize>,
}

/// Lets the fixed evaluation population respond to `rule` and scores the
/// result with the oracle CATE. Response noise is reseeded from the
/// environment every call, so a rule always gets the same value.
pub fn evaluate_policy<E: StrategicEnv + ?Sized>(env: &E, rule: Rule<'_>) -> Result<Evaluation> {
    let pop = env.eval_population();
    let zeta = deployed_zeta(env, pop, rule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(env.eval_seed());
    let levels = env.respond(pop, zeta.view(), &mut rng)?;
    let n = pop.len().max(1) as f64;
    let (mut value, mut changed, mut shift) = (0.0, 0usize, 0i64);
    for (i, &u) in levels.iter().enumerate() {
        value += zeta[[i, env.observe(u)]] * env.oracle_cate(pop, i, u);
        changed += (u != pop.u0[i]) as usize;
        shift += u as i64 - pop.u0[i] as i64;
    }
    Ok(Evaluation {
        policy_value: value / n,
        pct_change: 100.0 * changed as f64 / n,
        move_: shift as f64 / n,
        levels,
    })
}

/// Count of each level in `levels`.
pub fn histogram(levels: &[usize], n_levels: usize) -> Vec<usize> {
    let mut counts = vec![0; n_levels];
    for &u in levels {
        counts[u] += 1;
    }
    counts
}
