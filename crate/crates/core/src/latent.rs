use serde::{Deserialize, Serialize};

use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentKind {
    /// Posterior state probabilities of a discrete-state model.
    Pmf,
    /// Posterior means of a continuous-state model.
    Gaussian,
}

/// Per-trial, per-time latent vectors for a list of dataset trials.
///
/// `values` is `trials.len() x T x D`; row `p` belongs to dataset trial
/// `trials[p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectories {
    pub kind: LatentKind,
    pub trials: Vec<usize>,
    pub values: Tensor3<f64>,
}

impl LatentTrajectories {
    pub fn dim(&self) -> usize {
        self.values.dims()[2]
    }

    pub fn n_time(&self) -> usize {
        self.values.dims()[1]
    }

    /// Position of a dataset trial in this collection.
    pub fn position(&self, trial: usize) -> Option<usize> {
        self.trials.iter().position(|&i| i == trial)
    }

    /// Stack the latents of the given dataset trials as `(trial, time)` rows.
    ///
    /// Panics if a trial is missing.
    pub fn stack(&self, trials: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(trials.len() * self.n_time() * self.dim());
        for &i in trials {
            let p = self
                .position(i)
                .unwrap_or_else(|| panic!("trial {i} has no latents"));
            out.extend_from_slice(self.values.trial(p));
        }
        out
    }

    /// Restrict to a subset of trials, in the given order.
    pub fn subset(&self, trials: &[usize]) -> LatentTrajectories {
        let positions: Vec<usize> = trials
            .iter()
            .map(|&i| self.position(i).unwrap_or_else(|| panic!("trial {i} has no latents")))
            .collect();
        let all: Vec<usize> = (0..self.dim()).collect();
        LatentTrajectories {
            kind: self.kind,
            trials: trials.to_vec(),
            values: self.values.select(&positions, &all),
        }
    }
}
