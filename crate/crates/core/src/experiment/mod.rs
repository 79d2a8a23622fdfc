//! Experiment configs and the pipelines behind the command-line tool.

mod config;
mod runner;
mod study;

pub use config::*;
pub use runner::*;
pub use study::*;
