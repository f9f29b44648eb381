pub mod ann;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod model;
pub mod oracle;
pub mod planner;
pub mod searcher;
pub mod synth;

pub use error::{Error, Result};
