//! The learning loop: deploy, let agents respond, allocate treatment,
//! observe outcomes, refit the CATE model and take one ascent step.
//!
//! Four methods share the loop. `Cutoff` deploys the oracle rule and never
//! learns. `Vanilla` ascends the plug-in value gradient. `Strategic` adds the
//! behavior-model term after a warm-up, and `End2end` does the same with a
//! behavior model that reads the raw policy parameters.

mod evaluate;
mod gradient;

pub use evaluate::{deployed_zeta, evaluate_policy, histogram, Evaluation, Rule};
pub use gradient::{strategic_gradient, PerformativeTerm};

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorConfig, BehaviorModel, BehaviorSamples, InputMode};
use crate::cate::{features, BoostConfig, CateBackend, CateModel};
use crate::env::StrategicEnv;
use crate::error::{Error, Result};
use crate::nnkit::{Direction, Mlp, Optimizer, OutputActivation};

/// RNG stream ids under a run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const AGENTS: u64 = 1;
    pub const MANIPULATION: u64 = 2;
    pub const TREATMENT: u64 = 3;
    pub const OUTCOME: u64 = 4;
    pub const BEHAVIOR: u64 = 5;
    pub const CATE: u64 = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cutoff,
    Vanilla,
    End2end,
    Strategic,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cutoff, Method::Vanilla, Method::End2end, Method::Strategic];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cutoff => "cutoff",
            Method::Vanilla => "vanilla",
            Method::End2end => "end2end",
            Method::Strategic => "strategic",
        }
    }

    fn uses_behavior(self) -> bool {
        matches!(self, Method::Strategic | Method::End2end)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub epochs: usize,
    pub warmup: usize,
    /// Adam step size during warm-up.
    pub lr_warm: f64,
    /// Adagrad step size afterwards.
    pub lr_full: f64,
    pub adam_betas: (f64, f64),
    /// Hidden widths of the policy network.
    pub policy_hidden: Vec<usize>,
    pub cate: CateBackend,
    /// Refit the CATE model every this many epochs (it always sees every row).
    pub cate_refit_every: usize,
    pub boost: BoostConfig,
    pub behavior: BehaviorConfig,
    /// Pass cap for the end-to-end behavior model on the warm-up pool.
    pub end2end_max_passes: usize,
    /// Multiplier on the behavior-model summand; 0 turns the strategic
    /// estimator into the vanilla one.
    pub performative_weight: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl LearnerConfig {
    pub fn synthetic() -> Self {
        Self {
            epochs: 100,
            warmup: 30,
            lr_warm: 0.05,
            lr_full: 0.05,
            adam_betas: (0.9, 0.999),
            policy_hidden: vec![50],
            cate: CateBackend::Linear,
            cate_refit_every: 1,
            boost: BoostConfig::default(),
            behavior: BehaviorConfig::default(),
            end2end_max_passes: 20,
            performative_weight: 1.0,
        }
    }

    pub fn loan() -> Self {
        Self {
            epochs: 300,
            warmup: 100,
            lr_warm: 0.01,
            lr_full: 0.01,
            adam_betas: (0.5, 0.9),
            policy_hidden: vec![130, 130],
            cate: CateBackend::Boosted,
            cate_refit_every: 5,
            boost: BoostConfig::default(),
            behavior: BehaviorConfig {
                learning_rate: 0.01,
                ..BehaviorConfig::default()
            },
            end2end_max_passes: 20,
            performative_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.warmup && self.warmup < self.epochs) {
            return Err(Error::Config(format!(
                "learner: need 0 < warmup < epochs, got warmup {} and epochs {}",
                self.warmup, self.epochs
            )));
        }
        if !(self.lr_warm > 0.0 && self.lr_full > 0.0) {
            return Err(Error::Config("learner: learning rates must be positive".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("learner: adam betas must lie in [0, 1)".into()));
        }
        if self.policy_hidden.contains(&0) {
            return Err(Error::Config("learner: policy hidden widths must be positive".into()));
        }
        if self.cate_refit_every == 0 || self.end2end_max_passes == 0 {
            return Err(Error::Config(
                "learner: cate_refit_every and end2end_max_passes must be positive".into(),
            ));
        }
        if !self.performative_weight.is_finite() {
            return Err(Error::Config("learner: performative_weight must be finite".into()));
        }
        self.behavior.validate()
    }

    /// Layer widths of the policy for a given environment.
    pub fn policy_dims(&self, levels: usize, dim_v: usize) -> Vec<usize> {
        let mut dims = vec![levels + dim_v];
        dims.extend(&self.policy_hidden);
        dims.push(1);
        dims
    }
}

/// Metrics after one epoch's update, evaluated on the fixed population.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub epoch: usize,
    pub method: Method,
    pub seed: u64,
    pub policy_value: f64,
    pub pct_change: f64,
    pub move_: f64,
    /// Validation cross-entropy of the most recent behavior fit.
    pub behavior_loss: Option<f64>,
    /// Root mean squared error of the CATE estimate on this epoch's batch.
    pub cate_rmse: Option<f64>,
    pub checksum: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<RunRecord>,
    /// Original true levels of the evaluation population, counted per level.
    pub initial_histogram: Vec<usize>,
    /// Reported true levels under the final policy.
    pub final_histogram: Vec<usize>,
    /// The behavior model failed to train and the run fell back to vanilla.
    pub degraded: bool,
}

impl RunOutput {
    pub fn best_value(&self) -> f64 {
        self.records.iter().map(|r| r.policy_value).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_record(&self) -> Option<&RunRecord> {
        self.records.last()
    }
}

/// Independent propensity draws `z_i ~ Bernoulli(pi_i)`.
pub fn allocate<R: Rng + ?Sized>(propensities: &[f64], rng: &mut R) -> Vec<bool> {
    propensities.iter().map(|&p| rng.random::<f64>() < p).collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// State of one run.
pub struct Learner<'e, E: StrategicEnv + ?Sized> {
    env: &'e E,
    cfg: LearnerConfig,
    method: Method,
    seed: u64,
    epoch: usize,
    policy: Option<Mlp>,
    optimizer: Optimizer,
    behavior: Option<BehaviorModel>,
    warm: Option<BehaviorSamples>,
    transitioned: bool,
    degraded: bool,
    behavior_loss: Option<f64>,
    cate: CateModel,
    cate_fitted: bool,
    agents: ChaCha8Rng,
    manipulation: ChaCha8Rng,
    treatment: ChaCha8Rng,
    outcome: ChaCha8Rng,
    behavior_rng: ChaCha8Rng,
}

impl<'e, E: StrategicEnv + ?Sized> Learner<'e, E> {
    pub fn new(env: &'e E, cfg: LearnerConfig, method: Method, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (levels, dim_v) = (env.n_levels(), env.dim_v());
        let policy = match method {
            Method::Cutoff => None,
            _ => Some(Mlp::new(
                &cfg.policy_dims(levels, dim_v),
                OutputActivation::Sigmoid,
                &mut stream(seed, streams::INIT),
            )?),
        };
        let mut behavior_rng = stream(seed, streams::BEHAVIOR);
        let behavior = if method.uses_behavior() {
            let mut bcfg = cfg.behavior.clone();
            match method {
                Method::End2end => bcfg.input_mode = InputMode::VAndParams,
                _ if bcfg.input_mode == InputMode::VAndParams => {
                    return Err(Error::Config(
                        "strategic behavior model reads evaluation vectors; use end2end for parameter inputs".into(),
                    ))
                }
                _ => {}
            }
            let param_dim = policy.as_ref().map_or(0, Mlp::param_count);
            Some(BehaviorModel::new(&bcfg, levels, dim_v, param_dim, &mut behavior_rng)?)
        } else {
            None
        };
        let cate_seed = stream(seed, streams::CATE).random::<u64>();
        let cate = CateModel::new(cfg.cate, levels + dim_v, &cfg.boost, cate_seed);
        Ok(Self {
            env,
            optimizer: Optimizer::adam(cfg.lr_warm, cfg.adam_betas),
            warm: method.uses_behavior().then(|| BehaviorSamples::new(levels, dim_v)),
            cfg,
            method,
            seed,
            epoch: 0,
            policy,
            behavior,
            transitioned: false,
            degraded: false,
            behavior_loss: None,
            cate,
            cate_fitted: false,
            agents: stream(seed, streams::AGENTS),
            manipulation: stream(seed, streams::MANIPULATION),
            treatment: stream(seed, streams::TREATMENT),
            outcome: stream(seed, streams::OUTCOME),
            behavior_rng,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn policy(&self) -> Option<&Mlp> {
        self.policy.as_ref()
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn behavior(&self) -> Option<&BehaviorModel> {
        self.behavior.as_ref()
    }

    /// Rows pooled for the warm-up fit so far.
    pub fn warm_rows(&self) -> usize {
        self.warm.as_ref().map_or(0, BehaviorSamples::len)
    }

    pub fn degraded(&self) -> bool {
        self.degraded
    }

    pub fn checksum(&self) -> u64 {
        self.policy.as_ref().map_or(0, Mlp::checksum)
    }

    fn rule(&self) -> Rule<'_> {
        match &self.policy {
            Some(p) => Rule::Policy(p),
            None => Rule::Cutoff,
        }
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate_policy(self.env, self.rule())
    }

    /// Trains the behavior model on the pooled warm-up data and swaps the
    /// optimizer for a fresh Adagrad. The policy is left untouched. Runs once;
    /// later calls are no-ops.
    pub fn warmup_transition(&mut self) -> Result<()> {
        if self.transitioned {
            return Ok(());
        }
        self.transitioned = true;
        if self.method == Method::Cutoff {
            return Ok(());
        }
        if let (Some(model), Some(warm)) = (self.behavior.as_mut(), self.warm.take()) {
            let passes = match self.method {
                Method::End2end => self.cfg.behavior.max_passes.min(self.cfg.end2end_max_passes),
                _ => self.cfg.behavior.max_passes,
            };
            match model.train(&warm, &self.cfg.behavior, passes, &mut self.behavior_rng) {
                Ok(report) => {
                    log::info!(
                        "{} seed {}: behavior model trained on {} rows, {} passes, validation loss {:.4}",
                        self.method,
                        self.seed,
                        warm.len(),
                        report.passes,
                        report.best_loss
                    );
                    self.behavior_loss = Some(report.best_loss);
                }
                Err(e) => {
                    log::warn!("{} seed {}: behavior training failed ({e}); using the vanilla gradient", self.method, self.seed);
                    self.degraded = true;
                    self.behavior = None;
                }
            }
        }
        self.optimizer = Optimizer::adagrad(self.cfg.lr_full);
        Ok(())
    }

    /// One full round of the protocol.
    pub fn run_epoch(&mut self) -> Result<RunRecord> {
        let t = self.epoch;
        if t >= self.cfg.epochs {
            return Err(Error::State(format!("run already finished after {} epochs", self.cfg.epochs)));
        }
        let env = self.env;
        let k = env.n_levels();
        let pop = env.sample_batch(t, &mut self.agents)?;
        let zeta = deployed_zeta(env, &pop, self.rule())?;
        let reported = env.respond(&pop, zeta.view(), &mut self.manipulation)?;
        let observed: Vec<usize> = reported.iter().map(|&u| env.observe(u)).collect();
        let pi: Vec<f64> = observed.iter().enumerate().map(|(i, &u)| zeta[[i, u]]).collect();
        let treated = allocate(&pi, &mut self.treatment);
        let outcomes: Vec<f64> = (0..pop.len())
            .map(|i| env.outcome(&pop, i, reported[i], treated[i], &mut self.outcome))
            .collect();

        let mut cate_rmse = None;
        if let Some(policy) = &self.policy {
            let truth: Vec<f64> = (0..pop.len()).map(|i| env.oracle_cate(&pop, i, reported[i])).collect();
            let tau_hat = if self.cate.backend() == CateBackend::Oracle {
                truth
            } else {
                let phi = features(&observed, pop.v.view(), k);
                self.cate.observe(phi.view(), &treated, &outcomes)?;
                if !self.cate_fitted || t % self.cfg.cate_refit_every == 0 {
                    self.cate.refit()?;
                    self.cate_fitted = true;
                }
                let tau_hat = self.cate.predict_cate(phi.view())?;
                let mse = tau_hat.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len().max(1) as f64;
                cate_rmse = Some(mse.sqrt());
                tau_hat
            };

            if let Some(warm) = self.warm.as_mut().filter(|_| t < self.cfg.warmup) {
                let theta = (self.method == Method::End2end).then(|| policy.params());
                warm.push(zeta.view(), pop.v.view(), &observed, theta)?;
            }
            if t == self.cfg.warmup {
                self.warmup_transition()?;
            }
            let policy = self.policy.as_ref().expect("gradient methods carry a policy");
            if t > self.cfg.warmup && self.cfg.behavior.finetune_passes > 0 {
                if let Some(model) = self.behavior.as_mut() {
                    let mut fresh = BehaviorSamples::new(k, env.dim_v());
                    let theta = (self.method == Method::End2end).then(|| policy.params());
                    fresh.push(zeta.view(), pop.v.view(), &observed, theta)?;
                    match model.train(&fresh, &self.cfg.behavior, self.cfg.behavior.finetune_passes, &mut self.behavior_rng) {
                        Ok(report) => self.behavior_loss = Some(report.best_loss),
                        Err(e) => log::warn!("{} seed {} epoch {t}: behavior fine-tune skipped ({e})", self.method, self.seed),
                    }
                }
            }

            let term = match (&self.behavior, self.method) {
                (Some(model), Method::Strategic) if t >= self.cfg.warmup => PerformativeTerm::Mediated(model),
                (Some(model), Method::End2end) if t >= self.cfg.warmup => PerformativeTerm::EndToEnd(model),
                _ => PerformativeTerm::None,
            };
            let grad = strategic_gradient(policy, pop.v.view(), &observed, &tau_hat, term, self.cfg.performative_weight)?;
            if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NumericAbort {
                    epoch: t,
                    message: format!("{} seed {}: gradient component {bad} is {}", self.method, self.seed, grad[bad]),
                });
            }
            let policy = self.policy.as_mut().expect("gradient methods carry a policy");
            self.optimizer.step(policy, &grad, Direction::Ascend)?;
        }

        let eval = self.evaluate()?;
        if !eval.policy_value.is_finite() {
            return Err(Error::NumericAbort {
                epoch: t,
                message: format!("{} seed {}: policy value is {}", self.method, self.seed, eval.policy_value),
            });
        }
        self.epoch += 1;
        Ok(RunRecord {
            epoch: t,
            method: self.method,
            seed: self.seed,
            policy_value: eval.policy_value,
            pct_change: eval.pct_change,
            move_: eval.move_,
            behavior_loss: self.behavior_loss,
            cate_rmse,
            checksum: self.checksum(),
        })
    }
}

/// A complete run of `cfg.epochs` epochs.
pub fn run<E: StrategicEnv + ?Sized>(env: &E, cfg: &LearnerConfig, method: Method, seed: u64) -> Result<RunOutput> {
    let mut learner = Learner::new(env, cfg.clone(), method, seed)?;
    let mut records = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        records.push(learner.run_epoch()?);
    }
    let levels = env.true_levels();
    let final_levels = learner.evaluate()?.levels;
    Ok(RunOutput {
        method,
        seed,
        records,
        initial_histogram: histogram(&env.eval_population().u0, levels),
        final_histogram: histogram(&final_levels, levels),
        degraded: learner.degraded,
    })
}
