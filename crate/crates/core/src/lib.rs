pub mod behavior;
pub mod cate;
pub mod env;
pub mod error;
pub mod harness;
pub mod learner;
pub mod loanenv;
pub mod nnkit;
pub mod synthenv;
pub mod theorychecks;

pub use error::{Error, Result};
