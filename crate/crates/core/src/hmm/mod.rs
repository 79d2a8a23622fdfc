//! Hidden Markov models with Bernoulli emissions.

mod em;
mod graph;
mod inference;
mod readout;
mod sample;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::io::write_atomic;
use crate::error::{Error, Result};
use crate::rng;

pub use em::{fit_em, EmFit, EmOptions};
pub use graph::{traffic_graph, TrafficGraph, DEFAULT_PRUNE_THRESHOLD};
pub use inference::{forward_backward, smooth_trials, Posterior, SmoothedTrials};
pub use readout::{bernoulli_readout, fewshot_emission_mle, predict_rates, EmissionMle};
pub use sample::{sample_hmm, sample_paths};

/// Emission probabilities are kept inside `[EMISSION_CLIP, 1 - EMISSION_CLIP]`
/// by every estimator in this module.
pub const EMISSION_CLIP: f64 = 1e-6;

const STOCHASTIC_TOL: f64 = 1e-12;

pub fn clip_prob(p: f64) -> f64 {
    p.clamp(EMISSION_CLIP, 1.0 - EMISSION_CLIP)
}

/// Transition matrix `a[m][l] = p(z_{t+1} = l | z_t = m)`, emission
/// probabilities `b[m][n]` and initial distribution `pi`.
///
/// Emission column `n` describes dataset channel `channels[n]`; when
/// `channels` is `None` column `n` is channel `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmModel {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(flatten)]
    model: HmmModel,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Invalid(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL * p.len().max(1) as f64 {
        return Err(Error::Invalid(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl HmmModel {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, pi: Vec<f64>) -> Result<Self> {
        let model = HmmModel {
            a,
            b,
            pi,
            channels: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_channels(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_states();
        if m == 0 {
            return Err(Error::Invalid("model has no states".into()));
        }
        if self.a.len() != m || self.b.len() != m {
            return Err(Error::Invalid("A, B and pi disagree on the number of states".into()));
        }
        check_distribution(&self.pi, "pi")?;
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Invalid(format!("row {i} of A has length {}", row.len())));
            }
            check_distribution(row, &format!("row {i} of A"))?;
        }
        let n = self.n_channels();
        for row in &self.b {
            if row.len() != n {
                return Err(Error::Invalid("ragged emission matrix".into()));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Invalid("emission probability outside [0, 1]".into()));
            }
        }
        if let Some(ch) = &self.channels {
            if ch.len() != n {
                return Err(Error::Invalid("channel map length differs from B".into()));
            }
        }
        Ok(())
    }

    /// Dataset channel described by emission column `col`.
    pub fn channel_of(&self, col: usize) -> usize {
        self.channels.as_ref().map_or(col, |c| c[col])
    }

    /// Emission column describing dataset channel `channel`.
    pub fn column_of(&self, channel: usize) -> Result<usize> {
        match &self.channels {
            Some(c) => c.iter().position(|&x| x == channel),
            None => (channel < self.n_channels()).then_some(channel),
        }
        .ok_or(Error::Index { channel })
    }

    /// Same dynamics with emissions limited to the given dataset channels.
    pub fn restrict(&self, channels: &[usize]) -> Result<HmmModel> {
        let cols = channels
            .iter()
            .map(|&c| self.column_of(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(HmmModel {
            a: self.a.clone(),
            b: self
                .b
                .iter()
                .map(|row| cols.iter().map(|&j| row[j]).collect())
                .collect(),
            pi: self.pi.clone(),
            channels: Some(channels.to_vec()),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            schema_version: crate::datamodel::SCHEMA_VERSION,
            m: self.n_states(),
            n: self.n_channels(),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let model = file.model;
        if file.m != model.n_states() || file.n != model.n_channels() {
            return Err(Error::Format(format!(
                "model header says {}x{} but B is {}x{}",
                file.m,
                file.n,
                model.n_states(),
                model.n_channels()
            )));
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Noisy cycle: `a[m][l] = (1[l = m+1 mod M] + eps) / (1 + M eps)`, uniform
/// `pi`, emissions drawn uniformly on `[0, 1)`.
pub fn make_cycle_teacher(m: usize, epsilon: f64, emission_seed: u64, n_neurons: usize) -> Result<HmmModel> {
    if m < 2 {
        return Err(Error::Invalid(format!("cycle teacher needs at least 2 states, got {m}")));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Invalid(format!("cycle noise must be positive, got {epsilon}")));
    }
    let norm = 1.0 + m as f64 * epsilon;
    let a = (0..m)
        .map(|i| {
            (0..m)
                .map(|l| ((l == (i + 1) % m) as u8 as f64 + epsilon) / norm)
                .collect()
        })
        .collect();
    let mut r = rng::stream(emission_seed, "cycle-teacher-emissions", 0);
    let b = (0..m)
        .map(|_| (0..n_neurons).map(|_| r.random::<f64>()).collect())
        .collect();
    HmmModel::new(a, b, vec![1.0 / m as f64; m])
}
