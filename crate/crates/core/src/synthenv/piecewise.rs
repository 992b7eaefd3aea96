//! Continuous manipulatable feature under a piecewise-constant policy.

use crate::error::{Error, Result};

/// Default smallest measurable step of the continuous feature.
pub const DEFAULT_MEASUREMENT_STEP: f64 = 1e-3;

/// Propensity at `u` of the policy that takes `segment_values[j]` on
/// `[knots[j-1], knots[j])`. A knot belongs to the segment on its right.
pub fn piecewise_policy(u: f64, knots: &[f64], segment_values: &[f64]) -> f64 {
    let segment = knots.partition_point(|&k| k <= u);
    segment_values[segment]
}

fn validate(knots: &[f64], segment_values: &[f64], cost: f64, eps_u: f64) -> Result<()> {
    if segment_values.len() != knots.len() + 1 {
        return Err(Error::Config(format!(
            "{} knots need {} segment values, got {}",
            knots.len(),
            knots.len() + 1,
            segment_values.len()
        )));
    }
    if knots.iter().any(|&k| !(k > 0.0 && k < 1.0)) || knots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("knots must be strictly increasing inside (0, 1)".into()));
    }
    if !(eps_u > 0.0) {
        return Err(Error::Config("measurement step must be positive".into()));
    }
    if !(cost >= 0.0) {
        return Err(Error::Config("cost must be nonnegative".into()));
    }
    Ok(())
}

/// Best response of an agent at `u0` among `{u0} ∪ knots ∪ {knot - eps_u}`
/// under utility `pi(u) - cost * |u - u0|`.
///
/// Ties keep the status quo, then prefer the closer point, then the smaller one.
pub fn piecewise_policy_response(
    u0: f64,
    knots: &[f64],
    segment_values: &[f64],
    cost: f64,
    eps_u: f64,
) -> Result<f64> {
    validate(knots, segment_values, cost, eps_u)?;
    let utility = |u: f64| piecewise_policy(u, knots, segment_values) - cost * (u - u0).abs();
    let mut best = u0;
    let mut best_val = utility(u0);
    let candidates = knots
        .iter()
        .flat_map(|&k| [k, k - eps_u])
        .filter(|&u| (0.0..=1.0).contains(&u));
    for u in candidates {
        let val = utility(u);
        let closer = (u - u0).abs() < (best - u0).abs();
        let tie_wins = best != u0 && (closer || ((u - u0).abs() == (best - u0).abs() && u < best));
        if val > best_val || (val == best_val && tie_wins) {
            best = u;
            best_val = val;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_policy_keeps_status_quo() {
        let r = piecewise_policy_response(0.42, &[0.2, 0.6], &[0.3, 0.3, 0.3], 0.1, 1e-3).unwrap();
        assert_eq!(r, 0.42);
    }

    #[test]
    fn moves_to_nearest_profitable_knot() {
        let r = piecewise_policy_response(0.1, &[0.3, 0.7], &[0.0, 0.5, 0.5], 0.1, 1e-3).unwrap();
        assert_eq!(r, 0.3);
    }

    #[test]
    fn downward_mover_stops_just_below_knot() {
        let r = piecewise_policy_response(0.8, &[0.5], &[0.9, 0.1], 0.1, 1e-3).unwrap();
        assert_eq!(r, 0.5 - 1e-3);
    }

    #[test]
    fn unsorted_knots_rejected() {
        assert!(piecewise_policy_response(0.1, &[0.7, 0.3], &[0.0, 0.5, 0.5], 0.1, 1e-3).is_err());
        assert!(piecewise_policy_response(0.1, &[0.3], &[0.0], 0.1, 1e-3).is_err());
    }

    #[test]
    fn grid_search_never_beats_candidate_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let grid: Vec<f64> = (0..=10_000).map(|i| i as f64 * 1e-4).collect();
        let eps_u = DEFAULT_MEASUREMENT_STEP;
        for _ in 0..200 {
            let n_knots = rng.random_range(1..6);
            let mut knots: Vec<f64> = (0..n_knots).map(|_| rng.random_range(0.01..0.99)).collect();
            knots.sort_by(f64::total_cmp);
            knots.dedup();
            let values: Vec<f64> = (0..=knots.len()).map(|_| rng.random::<f64>()).collect();
            let cost = rng.random_range(0.0..0.5);
            let u0 = rng.random::<f64>();
            let util = |u: f64| piecewise_policy(u, &knots, &values) - cost * (u - u0).abs();
            let response = piecewise_policy_response(u0, &knots, &values, cost, eps_u).unwrap();
            let brute = grid.iter().map(|&u| util(u)).fold(f64::NEG_INFINITY, f64::max);
            assert!(brute <= util(response) + cost * eps_u + 1e-12);
        }
    }
}
