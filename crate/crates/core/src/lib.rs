pub mod autodiff;
pub mod config;
pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod objectives;
pub mod parallel;
pub mod plot;
pub mod probe;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
