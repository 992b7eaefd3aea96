//! Numerical checks of the method's theory at desk scale.

mod gradients;
mod knots;
mod rkhs;
mod trend;

pub use gradients::{gradient_suite, GradientCheck};
pub use knots::{prop2_check, KnotReport, LatticeInstance};
pub use rkhs::{lemma1_ratio, lemma1_trials, RkhsFunction};
pub use trend::estimation_errors;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::loanenv::LOAN_LEVELS;
use crate::nnkit::param_count;
use crate::synthenv::SynthConfig;

/// Central differences, one coordinate at a time.
pub fn finite_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let mut y = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = f(&y)?;
        y[i] = x[i] - h;
        let down = f(&y)?;
        y[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("finite difference at coordinate {i}"),
            });
        }
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Lemma1,
    Prop2,
    Counts,
    Trend,
    All,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Gradients,
        Suite::Lemma1,
        Suite::Prop2,
        Suite::Counts,
        Suite::Trend,
        Suite::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Lemma1 => "lemma1",
            Suite::Prop2 => "prop2",
            Suite::Counts => "counts",
            Suite::Trend => "trend",
            Suite::All => "all",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check suite `{s}`")))
    }
}

/// One line of a check report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

pub const LEMMA1_TRIALS: usize = 1000;
pub const LEMMA1_TOLERANCE: f64 = 1e-8;
pub const PROP2_INSTANCES: usize = 10_000;
pub const SYNTHETIC_POLICY_PARAMS: usize = 1351;
pub const LOAN_POLICY_PARAMS: usize = 25_741;

/// Policy parameter counts of the two shipped architectures.
pub fn policy_counts() -> (usize, usize) {
    let synth = SynthConfig::default();
    let synthetic = param_count(&LearnerConfig::synthetic().policy_dims(synth.n_levels, synth.dim_v));
    let loan_dim_v = crate::loanenv::LoanConfig::default().dim_v;
    let loan = param_count(&LearnerConfig::loan().policy_dims(LOAN_LEVELS, loan_dim_v));
    (synthetic, loan)
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Counts {
        let (s, l) = policy_counts();
        out.push(CheckResult {
            name: "counts/synthetic".into(),
            passed: s == SYNTHETIC_POLICY_PARAMS,
            detail: format!("{s} parameters (expected {SYNTHETIC_POLICY_PARAMS})"),
        });
        out.push(CheckResult {
            name: "counts/loan".into(),
            passed: l == LOAN_POLICY_PARAMS,
            detail: format!("{l} parameters (expected {LOAN_POLICY_PARAMS})"),
        });
    }
    if all || suite == Suite::Gradients {
        for c in gradient_suite(20, &mut rng)? {
            out.push(CheckResult {
                name: format!("gradients/{}", c.name),
                passed: c.passed(),
                detail: format!(
                    "max relative error {:.3e} over {} trials (<= {:e}, {} redrawn at kinks)",
                    c.max_rel_error, c.trials, c.tolerance, c.redrawn
                ),
            });
        }
    }
    if all || suite == Suite::Lemma1 {
        let worst = lemma1_trials(LEMMA1_TRIALS, 5, 10, &mut rng)?;
        out.push(CheckResult {
            name: "lemma1/gaussian".into(),
            passed: worst <= 1.0 + LEMMA1_TOLERANCE,
            detail: format!("max gap/bound ratio {worst:.6} over {LEMMA1_TRIALS} pairs"),
        });
    }
    if all || suite == Suite::Prop2 {
        let r = prop2_check(PROP2_INSTANCES, 1000, 0.1, &mut rng)?;
        out.push(CheckResult {
            name: "prop2/knots".into(),
            passed: r.fraction() == 1.0 && r.movers > 0,
            detail: format!(
                "{:.1}% at knots ({} of {} movers, {} instances)",
                100.0 * r.fraction(),
                r.at_knots,
                r.movers,
                r.instances
            ),
        });
        out.push(CheckResult {
            name: "prop2/candidate_set".into(),
            passed: r.agreements == r.instances,
            detail: format!("candidate-set response equals lattice search in {} of {}", r.agreements, r.instances),
        });
    }
    if all || suite == Suite::Trend {
        let ns = [500, 2000, 8000];
        let e = estimation_errors(&ns, seed)?;
        out.push(CheckResult {
            name: "trend/behavior_error".into(),
            passed: e.windows(2).all(|w| w[1] <= w[0]),
            detail: format!(
                "mean total variation {} at n = {ns:?}",
                e.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
            ),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = [0.3, -1.2, 2.0];
        let g = finite_difference(|y| Ok(y.iter().map(|a| a * a).sum()), &x, 1e-4).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_is_exact_for_any_step() {
        let w = [0.5, -2.0, 3.25];
        for h in [1e-6, 1e-2, 1.0, 8.0] {
            let g = finite_difference(|y| Ok(y.iter().zip(&w).map(|(a, b)| a * b).sum()), &[1.0, 2.0, 4.0], h).unwrap();
            for (gi, wi) in g.iter().zip(&w) {
                assert!((gi - wi).abs() < 1e-9, "h = {h}");
            }
        }
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        assert!(matches!(
            finite_difference(|y| Ok(y[0].ln()), &[0.0], 1e-3),
            Err(Error::NonFinite { .. })
        ));
        assert!(finite_difference(|_| Ok(0.0), &[0.0], 0.0).is_err());
    }

    #[test]
    fn architecture_counts() {
        assert_eq!(policy_counts(), (SYNTHETIC_POLICY_PARAMS, LOAN_POLICY_PARAMS));
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("lemma2".parse::<Suite>().is_err());
    }
}
