pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod env;
pub mod error;
pub mod ess;
pub mod experiment;
pub mod hdb;
pub mod nn;
pub mod ppo;

pub use error::{Error, Result};
