pub mod autodiff;
pub mod error;
pub mod harness;
pub mod eval;
pub mod lm;
pub mod ppo;
pub mod reward;
pub mod stats;
pub mod tnd;

pub use error::{Error, Result};
