use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentTrajectories;
use crate::metrics::{linreg_fit, LinRegMode};
use crate::tensor::Tensor3;

/// Target dimensions whose spread is below this are treated as constant.
const CONSTANT_TOL: f64 = 1e-12;

/// Uniformly averaged coefficient of determination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2 {
    pub mean: f64,
    pub per_dim: Vec<f64>,
    /// Target dimensions that were constant over the samples.
    pub constant_dims: Vec<usize>,
}

pub fn r2_uniform(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> R2 {
    assert_eq!(pred.shape(), target.shape(), "prediction and target shapes differ");
    let mut per_dim = Vec::with_capacity(target.ncols());
    let mut constant_dims = Vec::new();
    for j in 0..target.ncols() {
        let y = target.column(j);
        let p = pred.column(j);
        let mean = y.mean();
        let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if spread <= CONSTANT_TOL {
            let hit = p.iter().all(|v| (v - mean).abs() <= CONSTANT_TOL);
            per_dim.push(if hit { 1.0 } else { 0.0 });
            constant_dims.push(j);
            continue;
        }
        let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        let ss_res: f64 = y.iter().zip(p.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        per_dim.push(1.0 - ss_res / ss_tot);
    }
    let mean = per_dim.iter().sum::<f64>() / per_dim.len().max(1) as f64;
    R2 {
        mean,
        per_dim,
        constant_dims,
    }
}

/// Stack `(trial, time)` rows of a tensor into a matrix.
pub(crate) fn rows(t: &Tensor3<f64>) -> DMatrix<f64> {
    let [s, n, d] = t.dims();
    DMatrix::from_row_slice(s * n, d, t.data())
}

/// Target latents reordered to the source's trials.
pub(crate) fn aligned(source: &LatentTrajectories, target: &LatentTrajectories) -> Result<LatentTrajectories> {
    if source.n_time() != target.n_time() {
        return Err(Error::Invalid("source and target latents have different lengths".into()));
    }
    if let Some(&i) = source.trials.iter().find(|&&i| target.position(i).is_none()) {
        return Err(Error::Invalid(format!("target latents are missing trial {i}")));
    }
    Ok(target.subset(&source.trials))
}

/// Affine least-squares fit of `y` on `x`, scored in sample.
pub fn affine_r2(x: &DMatrix<f64>, y: &DMatrix<f64>) -> R2 {
    let fit = linreg_fit(x, y, LinRegMode::MinNorm, true);
    r2_uniform(&fit.predict(x), y)
}

/// `1 - R^2` of the affine map from source to target latents.
pub fn cross_decode_linear(source: &LatentTrajectories, target: &LatentTrajectories) -> Result<f64> {
    let target = aligned(source, target)?;
    let r2 = affine_r2(&rows(&source.values), &rows(&target.values));
    if !r2.constant_dims.is_empty() {
        log::debug!("constant target dimensions {:?}", r2.constant_dims);
    }
    Ok(1.0 - r2.mean)
}

/// `1 - R^2` of the affine map from a model's rate predictions back to its
/// latents. `rates` is aligned trial by trial with `latents`.
pub fn cycle_consistency(latents: &LatentTrajectories, rates: &Tensor3<f64>) -> Result<f64> {
    let [s, t, _] = rates.dims();
    if [s, t] != [latents.trials.len(), latents.n_time()] {
        return Err(Error::Invalid("rates and latents are not aligned".into()));
    }
    Ok(1.0 - affine_r2(&rows(rates), &rows(&latents.values)).mean)
}
