use serde::{Deserialize, Serialize};

use super::{clip_prob, HmmModel};
use crate::error::{Error, Result};
use crate::latent::LatentTrajectories;
use crate::tensor::Tensor3;

/// Rates `r[i][t][n] = sum_m b[m][n] xi[i][t][m]` for an `M x C` emission
/// matrix.
pub fn bernoulli_readout(b: &[Vec<f64>], posterior: &LatentTrajectories) -> Tensor3<f64> {
    let [s, t_len, m] = posterior.values.dims();
    assert_eq!(b.len(), m, "emission rows must match the number of states");
    let c = b.first().map_or(0, Vec::len);
    let mut out = Tensor3::zeros(s, t_len, c);
    for i in 0..s {
        for t in 0..t_len {
            let xi = posterior.values.row(i, t);
            let off = out.offset(i, t, 0);
            let row = &mut out.data_mut()[off..off + c];
            for (k, &w) in xi.iter().enumerate() {
                for (r, &p) in row.iter_mut().zip(&b[k]) {
                    *r += w * p;
                }
            }
        }
    }
    out
}

/// Predicted spike probabilities of dataset `channels` under the model's
/// emissions.
pub fn predict_rates(model: &HmmModel, posterior: &LatentTrajectories, channels: &[usize]) -> Result<Tensor3<f64>> {
    let cols = channels
        .iter()
        .map(|&c| model.column_of(c))
        .collect::<Result<Vec<_>>>()?;
    let b: Vec<Vec<f64>> = model
        .b
        .iter()
        .map(|row| cols.iter().map(|&j| row[j]).collect())
        .collect();
    Ok(bernoulli_readout(&b, posterior))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionMle {
    /// `M x C` estimated emission probabilities.
    pub b: Vec<Vec<f64>>,
    /// States with zero posterior mass; their rows hold the mean rate.
    pub starved: Vec<usize>,
}

/// Posterior-weighted spike frequencies per state.
///
/// `counts` is `k x T x C`, aligned trial by trial with `posterior`.
pub fn fewshot_emission_mle(posterior: &LatentTrajectories, counts: &Tensor3<u32>) -> Result<EmissionMle> {
    let [k, t_len, m] = posterior.values.dims();
    let [kc, tc, c] = counts.dims();
    if k == 0 {
        return Err(Error::Fit("few-shot estimate needs at least one trial".into()));
    }
    if (k, t_len) != (kc, tc) {
        return Err(Error::Fit(format!(
            "posterior covers {k}x{t_len} samples but counts cover {kc}x{tc}"
        )));
    }
    let mut mass = vec![0.0; m];
    let mut spikes = vec![vec![0.0; c]; m];
    let mut totals = vec![0.0; c];
    for i in 0..k {
        for t in 0..t_len {
            let xi = posterior.values.row(i, t);
            let x = counts.row(i, t);
            for (j, &v) in x.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Fit(format!("count {v} is not binary")));
                }
                totals[j] += v as f64;
            }
            for (s, &w) in xi.iter().enumerate() {
                mass[s] += w;
                for (acc, &v) in spikes[s].iter_mut().zip(x) {
                    if v != 0 {
                        *acc += w;
                    }
                }
            }
        }
    }
    let samples = (k * t_len) as f64;
    let mut starved = Vec::new();
    let b = (0..m)
        .map(|s| {
            if mass[s] > 0.0 {
                spikes[s].iter().map(|v| clip_prob(v / mass[s])).collect()
            } else {
                starved.push(s);
                totals.iter().map(|v| clip_prob(v / samples)).collect()
            }
        })
        .collect();
    if !starved.is_empty() {
        log::warn!("few-shot emission estimate: states {starved:?} received no posterior mass");
    }
    Ok(EmissionMle { b, starved })
}
