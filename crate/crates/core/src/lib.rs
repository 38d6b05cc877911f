pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod env;
pub mod eval;
mod error;
pub mod instance;
pub mod rng;
pub mod training;

pub use error::Error;
