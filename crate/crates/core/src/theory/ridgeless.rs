//! Minimum-norm regression on latents that contain the teacher coordinate
//! plus `p - 1` extraneous noise coordinates.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{monte_carlo, Estimate};
use crate::error::{Error, Result};
use crate::linalg::lstsq_min_norm;
use crate::stats::Moments;

fn gauss(rng: &mut crate::rng::StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgelessConfig {
    pub p: usize,
    pub k: usize,
    pub sigma_obs: f64,
    pub sigma_ext: f64,
}

impl RidgelessConfig {
    pub fn gamma(&self) -> f64 {
        self.p as f64 / self.k as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.k == 0 {
            return Err(Error::Config(format!("p and k must be >= 1, got p={} k={}", self.p, self.k)));
        }
        if !(self.sigma_obs >= 0.0 && self.sigma_ext >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskParts {
    pub bias: f64,
    pub variance: f64,
    pub risk: f64,
}

/// Proportional-limit risk. Below the interpolation threshold (gamma < 1)
/// the risk is pure variance; above it the extraneous scale enters the bias.
pub fn ridgeless_risk_theory(cfg: &RidgelessConfig) -> Result<RiskParts> {
    cfg.validate()?;
    let g = cfg.gamma();
    let s2 = cfg.sigma_obs * cfg.sigma_obs;
    if g == 1.0 {
        return Err(Error::Singular("risk diverges at p = k".into()));
    }
    let (bias, variance) = if g < 1.0 {
        (0.0, s2 * g / (1.0 - g))
    } else {
        // gamma (gamma - 1) / (gamma - 1 + 1/e)^2 with e = sigma_ext^2,
        // multiplied through by e^2 so that sigma_ext = 0 is finite
        let e = cfg.sigma_ext * cfg.sigma_ext;
        let denom = (g - 1.0) * e + 1.0;
        (g * (g - 1.0) * e * e / (denom * denom), s2 * g / (g - 1.0))
    };
    Ok(RiskParts {
        bias,
        variance,
        risk: bias + variance,
    })
}

/// Exact finite-sample expected risk for Gaussian designs with k > p + 1:
/// `sigma_obs^2 p / (k - p - 1)`, independent of the extraneous scale.
pub fn ridgeless_risk_exact_underparam(cfg: &RidgelessConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.k <= cfg.p + 1 {
        return Err(Error::Domain(format!("needs k > p + 1, got p={} k={}", cfg.p, cfg.k)));
    }
    Ok(cfg.sigma_obs * cfg.sigma_obs * cfg.p as f64 / (cfg.k - cfg.p - 1) as f64)
}

/// Monte Carlo risk `||w_hat - w*||^2_Sigma` of the min-norm fit on k draws.
pub fn ridgeless_risk_mc(cfg: &RidgelessConfig, n_mc: u64, seed: u64) -> Result<Estimate> {
    cfg.validate()?;
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    let (p, k) = (cfg.p, cfg.k);
    let ext2 = cfg.sigma_ext * cfg.sigma_ext;
    let m: Moments = monte_carlo(n_mc, seed, "theory-ridgeless", |rng, acc: &mut Moments| {
        let mut z = DMatrix::zeros(k, p);
        let mut x = DMatrix::zeros(k, 1);
        for i in 0..k {
            let teacher: f64 = StandardNormal.sample(rng);
            z[(i, 0)] = teacher;
            for j in 1..p {
                z[(i, j)] = cfg.sigma_ext * gauss(rng);
            }
            let eps: f64 = StandardNormal.sample(rng);
            x[(i, 0)] = teacher + cfg.sigma_obs * eps;
        }
        let w = lstsq_min_norm(&z, &x);
        let extraneous: f64 = (1..p).map(|j| w[(j, 0)] * w[(j, 0)]).sum();
        acc.push((w[(0, 0)] - 1.0).powi(2) + ext2 * extraneous);
    });
    Ok(m.into())
}
