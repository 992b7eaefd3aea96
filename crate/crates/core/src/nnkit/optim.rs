use serde::{Deserialize, Serialize};

use super::Mlp;
use crate::error::{ensure_len, Error, Result};

/// Floor added to adaptive-optimizer denominators.
pub const OPT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adagrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

#[derive(Debug, Clone)]
enum Accumulators {
    Sgd,
    Adam { first: Vec<f64>, second: Vec<f64> },
    Adagrad { sum_sq: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    learning_rate: f64,
    betas: (f64, f64),
    acc: Accumulators,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, betas: (f64, f64)) -> Self {
        let acc = match kind {
            OptimizerKind::Sgd => Accumulators::Sgd,
            OptimizerKind::Adam => Accumulators::Adam {
                first: Vec::new(),
                second: Vec::new(),
            },
            OptimizerKind::Adagrad => Accumulators::Adagrad { sum_sq: Vec::new() },
        };
        Self {
            learning_rate,
            betas,
            acc,
            step_count: 0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, (0.0, 0.0))
    }

    pub fn adam(learning_rate: f64, betas: (f64, f64)) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate, betas)
    }

    pub fn adagrad(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adagrad, learning_rate, (0.0, 0.0))
    }

    pub fn kind(&self) -> OptimizerKind {
        match self.acc {
            Accumulators::Sgd => OptimizerKind::Sgd,
            Accumulators::Adam { .. } => OptimizerKind::Adam,
            Accumulators::Adagrad { .. } => OptimizerKind::Adagrad,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> Option<&[f64]> {
        match &self.acc {
            Accumulators::Adam { first, .. } => Some(first),
            _ => None,
        }
    }

    pub fn second_moment(&self) -> Option<&[f64]> {
        match &self.acc {
            Accumulators::Adam { second, .. } => Some(second),
            Accumulators::Adagrad { sum_sq } => Some(sum_sq),
            Accumulators::Sgd => None,
        }
    }

    /// Zeroes every accumulator and the step counter. Model parameters are untouched.
    pub fn reset(&mut self) {
        self.step_count = 0;
        match &mut self.acc {
            Accumulators::Sgd => {}
            Accumulators::Adam { first, second } => {
                first.iter_mut().for_each(|x| *x = 0.0);
                second.iter_mut().for_each(|x| *x = 0.0);
            }
            Accumulators::Adagrad { sum_sq } => sum_sq.iter_mut().for_each(|x| *x = 0.0),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &[f64], direction: Direction) -> Result<()> {
        ensure_len("optimizer gradient", net.param_count(), grad.len())?;
        self.step_slice(net.params_mut(), grad, direction)
    }

    /// Applies one update to a raw parameter slice.
    pub fn step_slice(&mut self, params: &mut [f64], grad: &[f64], direction: Direction) -> Result<()> {
        ensure_len("optimizer gradient", params.len(), grad.len())?;
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient entry {k}"),
            });
        }
        let sign = match direction {
            Direction::Descend => 1.0,
            Direction::Ascend => -1.0,
        };
        self.step_count += 1;
        let lr = self.learning_rate;
        match &mut self.acc {
            Accumulators::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * sign * g;
                }
            }
            Accumulators::Adam { first, second } => {
                if first.len() != grad.len() {
                    *first = vec![0.0; grad.len()];
                    *second = vec![0.0; grad.len()];
                }
                let (b1, b2) = self.betas;
                let t = self.step_count as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(first.iter_mut()).zip(second.iter_mut()) {
                    let g = sign * g;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + OPT_EPS);
                }
            }
            Accumulators::Adagrad { sum_sq } => {
                if sum_sq.len() != grad.len() {
                    *sum_sq = vec![0.0; grad.len()];
                }
                for ((p, g), s) in params.iter_mut().zip(grad).zip(sum_sq.iter_mut()) {
                    let g = sign * g;
                    *s += g * g;
                    *p -= lr * g / (s.sqrt() + OPT_EPS);
                }
            }
        }
        Ok(())
    }
}
