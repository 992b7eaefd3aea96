//! Agent response mechanisms over a discrete grid of levels.

use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logit multiplier of the softmax mechanism.
pub const SOFTMAX_MULTIPLIER: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    BestResponse,
    Noisy,
    Softmax,
}

/// How agents see the principal's levels and pay for moving.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    /// Levels agents choose among.
    pub true_levels: usize,
    /// Levels the principal's policy distinguishes.
    pub observed_levels: usize,
    /// Cost units per step of one true level.
    pub spacing: f64,
}

impl Grid {
    pub fn identity(levels: usize) -> Self {
        Self {
            true_levels: levels,
            observed_levels: levels,
            spacing: 1.0,
        }
    }
}

/// Equal-width grouping of `m` fine levels into `k` coarse ones.
pub fn coarsen(level_fine: usize, m: usize, k: usize) -> Result<usize> {
    if k > m || k < 1 {
        return Err(Error::Config(format!("cannot coarsen {m} levels into {k}")));
    }
    if level_fine >= m {
        return Err(Error::Config(format!("level {level_fine} out of range 0..{m}")));
    }
    Ok(level_fine * k / m)
}

/// Argmax of `utility` with status-quo tie-breaking: `u0` wins ties, then
/// the closer level, then the smaller one.
pub fn argmax_prefer_status_quo(utility: &[f64], u0: usize) -> usize {
    let mut best = u0;
    let mut best_val = utility[u0];
    for d in 1..utility.len() {
        if d <= u0 && utility[u0 - d] > best_val {
            best = u0 - d;
            best_val = utility[best];
        }
        if u0 + d < utility.len() && utility[u0 + d] > best_val {
            best = u0 + d;
            best_val = utility[best];
        }
    }
    best
}

/// Deterministic best response `argmax_u zeta[u] - cost * |u - u0|` on an
/// identity grid.
pub fn best_response(zeta: &[f64], u0: usize, cost: f64) -> usize {
    let utility: Vec<f64> = zeta
        .iter()
        .enumerate()
        .map(|(u, z)| z - cost * u.abs_diff(u0) as f64)
        .collect();
    argmax_prefer_status_quo(&utility, u0)
}

/// Reported true-grid levels for every agent.
///
/// `zeta` holds one row per agent with one propensity per observed level;
/// each true level inherits the propensity of the observed level it falls in.
pub fn manipulate<R: Rng + ?Sized>(
    u0: &[usize],
    zeta: ArrayView2<'_, f64>,
    grid: Grid,
    cost: f64,
    mechanism: Mechanism,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if zeta.ncols() == 0 || zeta.ncols() != grid.observed_levels {
        return Err(Error::Shape {
            context: "evaluation vector length",
            expected: grid.observed_levels,
            got: zeta.ncols(),
        });
    }
    if zeta.nrows() != u0.len() {
        return Err(Error::Shape {
            context: "evaluation vectors per agent",
            expected: u0.len(),
            got: zeta.nrows(),
        });
    }
    let m = grid.true_levels;
    let group: Vec<usize> = (0..m)
        .map(|w| coarsen(w, m, grid.observed_levels))
        .collect::<Result<_>>()?;
    let noise = match mechanism {
        Mechanism::Noisy if cost > 0.0 => Some(Normal::new(0.0, cost).expect("positive sd")),
        _ => None,
    };

    let mut utility = vec![0.0; m];
    let mut out = Vec::with_capacity(u0.len());
    for (i, &start) in u0.iter().enumerate() {
        if start >= m {
            return Err(Error::Config(format!("original level {start} out of range 0..{m}")));
        }
        let row = zeta.row(i);
        for (w, util) in utility.iter_mut().enumerate() {
            *util = row[group[w]] - cost * grid.spacing * w.abs_diff(start) as f64;
        }
        let chosen = match mechanism {
            Mechanism::BestResponse => argmax_prefer_status_quo(&utility, start),
            Mechanism::Noisy => {
                if let Some(noise) = &noise {
                    for util in utility.iter_mut() {
                        *util += noise.sample(rng);
                    }
                }
                argmax_prefer_status_quo(&utility, start)
            }
            Mechanism::Softmax => sample_softmax(&utility, SOFTMAX_MULTIPLIER, rng),
        };
        out.push(chosen);
    }
    Ok(out)
}

fn sample_softmax<R: Rng + ?Sized>(utility: &[f64], scale: f64, rng: &mut R) -> usize {
    let max = utility.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let weights: Vec<f64> = utility.iter().map(|u| (scale * (u - max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if draw < *w {
            return k;
        }
        draw -= w;
    }
    weights.len() - 1
}

/// Choice probabilities of the softmax mechanism for one agent on an identity grid.
pub fn softmax_choice_probs(zeta: &[f64], u0: usize, cost: f64) -> Vec<f64> {
    let logits: Vec<f64> = zeta
        .iter()
        .enumerate()
        .map(|(u, z)| SOFTMAX_MULTIPLIER * (z - cost * u.abs_diff(u0) as f64))
        .collect();
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
