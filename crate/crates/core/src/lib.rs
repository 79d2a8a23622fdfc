//! Evaluation toolkit for neural latent-variable models.
//!
//! The crate generates synthetic spike-count data from hidden Markov and
//! linear-Gaussian teachers, fits student models by EM, and scores them with
//! co-smoothing, few-shot co-smoothing, cross-decoding and cycle consistency.
//! The [`theory`] module holds closed-form few-shot predictions alongside
//! Monte Carlo estimators of the same quantities.
//!
//! Interchangeable algorithms (likelihood families, few-shot regressors,
//! cross-decoders) sit behind traits and are looked up by name from a
//! registry, so experiment configs can select them at runtime.

pub mod crossdecode;
mod csvout;
pub mod datamodel;
pub mod error;
pub mod experiment;
pub mod hmm;
pub mod latent;
pub mod lgssm;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod registry;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
