use rand::Rng;

use crate::error::Result;
use crate::synthenv::piecewise_policy_response;

/// Outcome of a batch of piecewise-constant instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotReport {
    pub instances: usize,
    pub movers: usize,
    pub at_knots: usize,
    /// Instances where the candidate-set response equals the lattice search.
    pub agreements: usize,
}

impl KnotReport {
    pub fn fraction(&self) -> f64 {
        if self.movers == 0 {
            1.0
        } else {
            self.at_knots as f64 / self.movers as f64
        }
    }
}

/// One piecewise-constant instance on the lattice `{0, 1/res, ..., 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeInstance {
    pub resolution: u32,
    /// Knot positions in lattice units, increasing in `1..resolution` and at
    /// least two steps apart.
    pub knots: Vec<u32>,
    pub values: Vec<f64>,
    pub cost: f64,
    pub start: u32,
}

impl LatticeInstance {
    pub fn random<R: Rng + ?Sized>(resolution: u32, max_knots: usize, zero_cost: bool, rng: &mut R) -> Self {
        let n = rng.random_range(1..=max_knots);
        let mut knots: Vec<u32> = (0..n).map(|_| rng.random_range(1..resolution)).collect();
        knots.sort_unstable();
        // Knots one step apart leave no room for `knot - eps` between them.
        knots.dedup_by(|k, prev| *k < *prev + 2);
        let values = (0..=knots.len()).map(|_| rng.random::<f64>()).collect();
        let cost = if zero_cost { 0.0 } else { rng.random_range(0.0..1.0) };
        Self {
            resolution,
            knots,
            values,
            cost,
            start: rng.random_range(0..=resolution),
        }
    }

    fn policy(&self, m: u32) -> f64 {
        self.values[self.knots.partition_point(|&k| k <= m)]
    }

    /// Exhaustive best response over every lattice point. Ties keep the
    /// status quo, then prefer the closer point, then the smaller one.
    pub fn lattice_response(&self) -> u32 {
        let res = self.resolution as f64;
        let utility = |m: u32| self.policy(m) - self.cost * m.abs_diff(self.start) as f64 / res;
        let mut best = self.start;
        let mut best_val = utility(best);
        for m in 0..=self.resolution {
            let val = utility(m);
            let (d, bd) = (m.abs_diff(self.start), best.abs_diff(self.start));
            let tie_wins = best != self.start && (d < bd || (d == bd && m < best));
            if val > best_val || (val == best_val && tie_wins) {
                best = m;
                best_val = val;
            }
        }
        best
    }
}

/// Movers under exhaustive search must land on a knot or one step below it.
pub fn prop2_check<R: Rng + ?Sized>(instances: usize, resolution: u32, zero_cost_share: f64, rng: &mut R) -> Result<KnotReport> {
    let mut report = KnotReport {
        instances,
        movers: 0,
        at_knots: 0,
        agreements: 0,
    };
    let eps = 1.0 / resolution as f64;
    for _ in 0..instances {
        let zero_cost = rng.random::<f64>() < zero_cost_share;
        let inst = LatticeInstance::random(resolution, 6, zero_cost, rng);
        let m = inst.lattice_response();
        if m != inst.start {
            report.movers += 1;
            if inst.knots.iter().any(|&k| m == k || m + 1 == k) {
                report.at_knots += 1;
            }
        }
        let knots: Vec<f64> = inst.knots.iter().map(|&k| k as f64 * eps).collect();
        let u0 = inst.start as f64 * eps;
        let r = piecewise_policy_response(u0, &knots, &inst.values, inst.cost, eps)?;
        if (r - m as f64 * eps).abs() < 1e-9 {
            report.agreements += 1;
        }
    }
    Ok(report)
}
