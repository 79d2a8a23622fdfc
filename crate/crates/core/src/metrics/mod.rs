//! Co-smoothing, few-shot co-smoothing and the regressors behind them.

mod fewshot;
mod glm;
mod linreg;

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tensor::Tensor3;

pub use fewshot::{
    build_regressor, fewshot_cosmoothing, fewshot_protocol, regressor_registry, FewShotRegressor, FewShotRegressorSpec,
    FewShotReport, Readout, RegressorCtor,
};
pub use glm::{poisson_glm_fit, poisson_glm_objective, PoissonGlm, PoissonGlmFit};
pub use linreg::{linreg_fit, LinRegMode, LinearFit};

/// Rates are floored here before any logarithm.
pub const RATE_FLOOR: f64 = 1e-10;

/// Per-sample log-likelihood of an observation under a predicted rate.
pub trait LikelihoodFamily: Send + Sync {
    fn name(&self) -> &'static str;

    /// Log-likelihood up to terms that do not depend on the rate.
    fn loglik(&self, rate: f64, x: f64) -> Result<f64>;

    /// Normaliser of a neuron's summed log-likelihood gain, given the
    /// neuron's summed observations and number of samples. `None` excludes
    /// the neuron.
    fn normaliser(&self, total: f64, samples: usize) -> Option<f64>;
}

fn check_rate(rate: f64) -> Result<()> {
    if rate < 0.0 || rate.is_nan() {
        Err(Error::Domain(format!("negative rate {rate}")))
    } else {
        Ok(())
    }
}

/// `x log r - r`, with `r` floored.
#[derive(Debug, Clone, Copy)]
pub struct Poisson {
    pub floor: f64,
}

impl LikelihoodFamily for Poisson {
    fn name(&self) -> &'static str {
        "poisson"
    }

    fn loglik(&self, rate: f64, x: f64) -> Result<f64> {
        check_rate(rate)?;
        let r = rate.max(self.floor);
        Ok(x * r.ln() - r)
    }

    fn normaliser(&self, total: f64, _samples: usize) -> Option<f64> {
        (total > 0.0).then_some(total * LN_2)
    }
}

/// `x log r + (1 - x) log(1 - r)`, with `r` clipped to `[floor, 1 - floor]`.
#[derive(Debug, Clone, Copy)]
pub struct Bernoulli {
    pub floor: f64,
}

impl LikelihoodFamily for Bernoulli {
    fn name(&self) -> &'static str {
        "bernoulli"
    }

    fn loglik(&self, rate: f64, x: f64) -> Result<f64> {
        check_rate(rate)?;
        let r = rate.clamp(self.floor, 1.0 - self.floor);
        // binary observations need only one of the two logs
        Ok(if x == 1.0 {
            r.ln()
        } else if x == 0.0 {
            (-r).ln_1p()
        } else {
            x * r.ln() + (1.0 - x) * (-r).ln_1p()
        })
    }

    fn normaliser(&self, total: f64, _samples: usize) -> Option<f64> {
        (total > 0.0).then_some(total * LN_2)
    }
}

/// Negative squared error; the predicted mean may take any sign. Gains are
/// normalised per sample.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian;

impl LikelihoodFamily for Gaussian {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn loglik(&self, mean: f64, x: f64) -> Result<f64> {
        if mean.is_nan() {
            return Err(Error::Domain("predicted mean is NaN".into()));
        }
        Ok(-(x - mean) * (x - mean))
    }

    fn normaliser(&self, _total: f64, samples: usize) -> Option<f64> {
        (samples > 0).then_some(samples as f64 * LN_2)
    }
}

pub fn family_registry() -> Registry<dyn LikelihoodFamily> {
    let mut r: Registry<dyn LikelihoodFamily> = Registry::new("likelihood family");
    r.register("poisson", Arc::new(Poisson { floor: RATE_FLOOR }))
        .register("bernoulli", Arc::new(Bernoulli { floor: RATE_FLOOR }))
        .register("gaussian", Arc::new(Gaussian));
    r
}

pub fn family(name: &str) -> Result<Arc<dyn LikelihoodFamily>> {
    family_registry().get(name)
}

/// Log-likelihood of `x` under `rate` for the named family.
pub fn loglik(family_name: &str, rate: f64, x: f64) -> Result<f64> {
    family(family_name)?.loglik(rate, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosmoothScore {
    pub q_total: f64,
    pub per_neuron: BTreeMap<usize, f64>,
    pub excluded_neurons: Vec<usize>,
}

/// Per-channel mean of `values` over the given trials and all time bins.
pub fn null_rates(values: &Tensor3<f64>, trials: &[usize], channels: &[usize]) -> Vec<f64> {
    let t_len = values.dims()[1];
    let mut sums = vec![0.0; channels.len()];
    for &i in trials {
        for t in 0..t_len {
            let row = values.row(i, t);
            for (s, &c) in sums.iter_mut().zip(channels) {
                *s += row[c];
            }
        }
    }
    let n = (trials.len() * t_len) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// Null-model side of the co-smoothing sum: per-channel log-likelihood of
/// the train-mean rates and observation totals. It depends only on the
/// observations, so few-shot scoring computes it once per model.
#[derive(Debug, Clone)]
pub struct NullBaseline {
    loglik: Vec<f64>,
    total: Vec<f64>,
    dims: [usize; 3],
}

impl NullBaseline {
    pub fn new(observed: &Tensor3<f64>, null: &[f64], family: &dyn LikelihoodFamily) -> Result<Self> {
        let dims = observed.dims();
        let [s, t_len, c] = dims;
        if null.len() != c {
            return Err(Error::Invalid("null rates must match the channel count".into()));
        }
        let mut loglik = vec![0.0; c];
        let mut total = vec![0.0; c];
        for i in 0..s {
            for t in 0..t_len {
                let x = observed.row(i, t);
                for n in 0..c {
                    loglik[n] += family.loglik(null[n], x[n])?;
                    total[n] += x[n];
                }
            }
        }
        Ok(NullBaseline { loglik, total, dims })
    }
}

/// Co-smoothing score of predicted rates against observations.
///
/// `pred` and `observed` are `trials x T x C` and aligned; `channels` labels
/// the `C` columns and `null` holds each column's train-set mean rate.
pub fn cosmoothing_q(
    pred: &Tensor3<f64>,
    observed: &Tensor3<f64>,
    null: &[f64],
    channels: &[usize],
    family: &dyn LikelihoodFamily,
) -> Result<CosmoothScore> {
    if pred.dims() != observed.dims() {
        return Err(Error::Invalid(format!(
            "prediction shape {:?} differs from observation shape {:?}",
            pred.dims(),
            observed.dims()
        )));
    }
    let baseline = NullBaseline::new(observed, null, family)?;
    cosmoothing_q_with(pred, observed, &baseline, channels, family)
}

/// [`cosmoothing_q`] with a precomputed null baseline for `observed`.
pub fn cosmoothing_q_with(
    pred: &Tensor3<f64>,
    observed: &Tensor3<f64>,
    baseline: &NullBaseline,
    channels: &[usize],
    family: &dyn LikelihoodFamily,
) -> Result<CosmoothScore> {
    let [s, t_len, c] = observed.dims();
    if pred.dims() != observed.dims() || baseline.dims != observed.dims() {
        return Err(Error::Invalid(format!(
            "prediction shape {:?} differs from observation shape {:?}",
            pred.dims(),
            observed.dims()
        )));
    }
    if channels.len() != c {
        return Err(Error::Invalid("channel labels must match the channel count".into()));
    }
    let mut ll = vec![0.0; c];
    for i in 0..s {
        for t in 0..t_len {
            let p = pred.row(i, t);
            let x = observed.row(i, t);
            for n in 0..c {
                ll[n] += family.loglik(p[n], x[n])?;
            }
        }
    }
    let mut per_neuron = BTreeMap::new();
    let mut excluded_neurons = Vec::new();
    for n in 0..c {
        match family.normaliser(baseline.total[n], s * t_len) {
            Some(z) => {
                per_neuron.insert(channels[n], (ll[n] - baseline.loglik[n]) / z);
            }
            None => excluded_neurons.push(channels[n]),
        }
    }
    if per_neuron.is_empty() {
        return Err(Error::EmptyScore);
    }
    // sum in channel order so the result does not depend on column order
    let q_total = per_neuron.values().sum();
    Ok(CosmoothScore {
        q_total,
        per_neuron,
        excluded_neurons,
    })
}

/// Mean squared error over all entries.
pub fn mse(pred: &Tensor3<f64>, observed: &Tensor3<f64>) -> Result<f64> {
    if pred.dims() != observed.dims() {
        return Err(Error::Invalid("prediction and observation shapes differ".into()));
    }
    let n = observed.data().len();
    if n == 0 {
        return Err(Error::EmptyScore);
    }
    Ok(pred
        .data()
        .iter()
        .zip(observed.data())
        .map(|(p, x)| (p - x) * (p - x))
        .sum::<f64>()
        / n as f64)
}
