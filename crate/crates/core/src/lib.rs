pub mod analysis;
pub mod commands;
pub mod dist;
pub mod error;
pub mod power;
pub mod runner;
pub mod sampler;
pub mod state;
pub mod validate;

pub use error::{Error, Result};
