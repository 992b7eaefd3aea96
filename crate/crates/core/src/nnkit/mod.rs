//! Minimal dense neural-network engine: ReLU MLPs with sigmoid, softmax or
//! identity heads, manual backpropagation, and SGD/Adam/Adagrad.

mod mlp;
mod optim;

pub use mlp::{param_count, sigmoid, Cache, Gradients, Mlp, OutputActivation};
pub use optim::{Direction, Optimizer, OptimizerKind, OPT_EPS};
