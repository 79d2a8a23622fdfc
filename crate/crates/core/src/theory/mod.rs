//! Closed-form few-shot predictions and matching Monte Carlo estimators.
//!
//! Three settings are covered: MLE of Bernoulli emissions for a good and a
//! bad two-state HMM student, minimum-norm regression on latents padded with
//! extraneous noise, and prototype classification with class-specific noise
//! blocks.
//!
//! Monte Carlo draws are split into fixed-size chunks, each with its own
//! random stream, and chunk summaries are merged in a fixed binary tree. The
//! result is identical for any thread count.

mod hmm;
mod prototype;
mod ridgeless;
mod sweep;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};
use crate::stats::Moments;

pub use hmm::{
    bernoulli_loglik, hmm_expected_loss_exact, hmm_expected_loss_mc, hmm_expected_loss_theory, HmmMc,
    HmmTheoryConfig, Student,
};
pub use prototype::{
    normal_tail, prototype_error_mc, prototype_error_sampled, prototype_error_theory, prototype_snr,
    PrototypeConfig,
};
pub use ridgeless::{
    ridgeless_risk_exact_underparam, ridgeless_risk_mc, ridgeless_risk_theory, RidgelessConfig, RiskParts,
};
pub use sweep::{run_sweep, HmmGrid, PrototypeGrid, RidgelessGrid, SweepRow, TheorySweep, SWEEP_HEADER};

/// Draws per random stream.
pub const MC_CHUNK: u64 = 1024;

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sem: f64,
    pub n: u64,
}

impl From<Moments> for Estimate {
    fn from(m: Moments) -> Self {
        Estimate {
            mean: m.mean,
            sem: m.sem(),
            n: m.n,
        }
    }
}

impl Estimate {
    /// |mean - target| in units of sem (infinite when sem is 0 and they differ).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.sem
        }
    }
}

pub(crate) trait Accumulator: Default + Send {
    fn merge(self, other: Self) -> Self;
}

impl Accumulator for Moments {
    fn merge(self, other: Self) -> Self {
        Moments::merge(&self, &other)
    }
}

/// Run `n_mc` draws of `draw` and merge the per-chunk accumulators.
pub(crate) fn monte_carlo<A, F>(n_mc: u64, seed: u64, tag: &str, draw: F) -> A
where
    A: Accumulator,
    F: Fn(&mut StreamRng, &mut A) + Sync,
{
    let n_chunks = n_mc.div_ceil(MC_CHUNK);
    let parts: Vec<A> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, tag, c);
            let mut acc = A::default();
            let len = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            for _ in 0..len {
                draw(&mut rng, &mut acc);
            }
            acc
        })
        .collect();
    tree_merge(parts)
}

fn tree_merge<A: Accumulator>(mut parts: Vec<A>) -> A {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}
