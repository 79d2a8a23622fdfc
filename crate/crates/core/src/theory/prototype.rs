//! Prototype classification of two classes whose latents share a teacher
//! coordinate (+-1/sqrt 2) and carry class-specific extraneous noise blocks.
//!
//! Layout of a latent: `[teacher, block_a (M), block_b (M)]`; a sample of
//! class a has noise in `block_a` and zeros in `block_b`, and vice versa.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{monte_carlo, Estimate};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::stats::Moments;

fn gauss(rng: &mut crate::rng::StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrototypeConfig {
    pub m: usize,
    pub k: usize,
    pub sigma_ext: f64,
}

impl PrototypeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 {
            return Err(Error::Config(format!("M and k must be >= 1, got M={} k={}", self.m, self.k)));
        }
        if !(self.sigma_ext >= 0.0) {
            return Err(Error::Config("sigma_ext must be non-negative".into()));
        }
        Ok(())
    }
}

/// Standard normal upper tail `H(x) = P(Z > x)`.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `sqrt(M k) / sigma_ext^2`.
pub fn prototype_snr(cfg: &PrototypeConfig) -> f64 {
    ((cfg.m * cfg.k) as f64).sqrt() / (cfg.sigma_ext * cfg.sigma_ext)
}

pub fn prototype_error_theory(cfg: &PrototypeConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(normal_tail(prototype_snr(cfg)))
}

const TEACHER: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Class means from k shots each. Only the teacher coordinate and the two
/// noise blocks are stored; the zero blocks are implicit.
struct Prototypes {
    /// mean of block_a over class-a shots
    a: Vec<f64>,
    /// mean of block_b over class-b shots
    b: Vec<f64>,
}

fn noise_mean(rng: &mut StreamRng, cfg: &PrototypeConfig) -> Vec<f64> {
    let mut mean = vec![0.0; cfg.m];
    for _ in 0..cfg.k {
        for v in mean.iter_mut() {
            *v += cfg.sigma_ext * gauss(rng);
        }
    }
    mean.iter_mut().for_each(|v| *v /= cfg.k as f64);
    mean
}

fn draw_prototypes(rng: &mut StreamRng, cfg: &PrototypeConfig) -> Prototypes {
    Prototypes {
        a: noise_mean(rng, cfg),
        b: noise_mean(rng, cfg),
    }
}

impl Prototypes {
    // w = zbar_a - zbar_b = [2 t, a, -b]; bias point c = (zbar_a + zbar_b)/2 = [0, a/2, b/2].
    // Score s(x) = w . (x - c); positive means class a.

    /// Score of a class-a input with noise block `xi`.
    fn score_a(&self, xi: &[f64]) -> f64 {
        let own: f64 = self.a.iter().zip(xi).map(|(w, x)| w * (x - w / 2.0)).sum();
        let other: f64 = self.b.iter().map(|w| w * w / 2.0).sum();
        2.0 * TEACHER * TEACHER + own + other
    }

    /// Score of a class-b input with noise block `xi`.
    fn score_b(&self, xi: &[f64]) -> f64 {
        let own: f64 = self.b.iter().zip(xi).map(|(w, x)| -w * (x - w / 2.0)).sum();
        let other: f64 = self.a.iter().map(|w| -w * w / 2.0).sum();
        -2.0 * TEACHER * TEACHER + own + other
    }

    /// Misclassification probability averaged over the two classes, exact
    /// given the prototypes: the score of a fresh input is Gaussian with
    /// standard deviation `sigma * ||w_block||`.
    fn error(&self, sigma: f64) -> f64 {
        let zeros = vec![0.0; self.a.len()];
        let sd = |w: &[f64]| sigma * w.iter().map(|v| v * v).sum::<f64>().sqrt();
        // class a errs when s <= 0, class b when s > 0
        let err_a = p_nonpositive(self.score_a(&zeros), sd(&self.a));
        let err_b = p_nonpositive(-self.score_b(&zeros), sd(&self.b));
        0.5 * (err_a + err_b)
    }
}

/// `P(N(mean, sd^2) <= 0)`, with the point mass handled for `sd = 0`.
fn p_nonpositive(mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        normal_tail(mean / sd)
    } else if mean > 0.0 {
        0.0
    } else {
        1.0
    }
}

/// Monte Carlo few-shot error. Each draw builds prototypes from k shots per
/// class and scores them by their exact error on fresh inputs.
pub fn prototype_error_mc(cfg: &PrototypeConfig, n_mc: u64, seed: u64) -> Result<Estimate> {
    cfg.validate()?;
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    let m: Moments = monte_carlo(n_mc, seed, "theory-prototype", |rng, acc: &mut Moments| {
        acc.push(draw_prototypes(rng, cfg).error(cfg.sigma_ext));
    });
    Ok(m.into())
}

/// Same estimator, but counting errors on `n_test` sampled inputs per class.
pub fn prototype_error_sampled(cfg: &PrototypeConfig, n_mc: u64, n_test: usize, seed: u64) -> Result<Estimate> {
    cfg.validate()?;
    if n_mc == 0 || n_test == 0 {
        return Err(Error::Config("n_mc and n_test must be at least 1".into()));
    }
    let m: Moments = monte_carlo(n_mc, seed, "theory-prototype", |rng, acc: &mut Moments| {
        let protos = draw_prototypes(rng, cfg);
        let mut wrong = 0usize;
        let mut xi = vec![0.0; cfg.m];
        for _ in 0..n_test {
            xi.iter_mut().for_each(|v| *v = cfg.sigma_ext * gauss(rng));
            wrong += (protos.score_a(&xi) <= 0.0) as usize;
            xi.iter_mut().for_each(|v| *v = cfg.sigma_ext * gauss(rng));
            wrong += (protos.score_b(&xi) > 0.0) as usize;
        }
        acc.push(wrong as f64 / (2 * n_test) as f64);
    });
    Ok(m.into())
}
