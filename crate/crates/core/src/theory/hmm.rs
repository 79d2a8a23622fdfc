//! Few-shot emission estimation for two-state, two-step HMM students.
//!
//! The teacher is stationary over T = 2 steps and emits with probability
//! `b_star` at both. The good student spreads each step evenly over both
//! states, so both emission estimates pool all 2k observations. The bad
//! student assigns one state per step, so each estimate sees only k.

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{monte_carlo, Accumulator, Estimate};
use crate::error::{Error, Result};
use crate::hmm::{clip_prob, EMISSION_CLIP};
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Student {
    Good,
    Bad,
}

impl Student {
    pub fn name(self) -> &'static str {
        match self {
            Student::Good => "good",
            Student::Bad => "bad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmTheoryConfig {
    pub b_star: f64,
    pub k: u64,
    pub student: Student,
}

impl HmmTheoryConfig {
    pub const T: u64 = 2;

    pub fn validate(&self) -> Result<()> {
        if !(self.b_star > 0.0 && self.b_star < 1.0) {
            return Err(Error::Config(format!("B* must lie in (0, 1), got {}", self.b_star)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Expected Bernoulli log-likelihood of rate `r` under truth `b_star`.
pub fn bernoulli_loglik(b_star: f64, r: f64) -> f64 {
    let on = if b_star > 0.0 { b_star * r.ln() } else { 0.0 };
    let off = if b_star < 1.0 { (1.0 - b_star) * (1.0 - r).ln() } else { 0.0 };
    on + off
}

/// Second-order prediction `L(B*) - 1/(2k)` (good) or `L(B*) - 1/k` (bad).
pub fn hmm_expected_loss_theory(cfg: &HmmTheoryConfig) -> Result<f64> {
    cfg.validate()?;
    let base = bernoulli_loglik(cfg.b_star, cfg.b_star);
    let k = cfg.k as f64;
    Ok(match cfg.student {
        Student::Good => base - 1.0 / (2.0 * k),
        Student::Bad => base - 1.0 / k,
    })
}

/// Test log-likelihood from step counts `c1`, `c2` out of `k` trials, plus
/// the first unclipped emission estimate and whether any estimate was clipped.
fn loss_from_counts(cfg: &HmmTheoryConfig, c1: u64, c2: u64) -> (f64, f64, bool) {
    let k = cfg.k as f64;
    let b = cfg.b_star;
    let clip = |x: f64| (clip_prob(x), x < EMISSION_CLIP || x > 1.0 - EMISSION_CLIP);
    match cfg.student {
        Student::Good => {
            let raw = (c1 + c2) as f64 / (2.0 * k);
            let (r, clipped) = clip(raw);
            (bernoulli_loglik(b, r), raw, clipped)
        }
        Student::Bad => {
            let (raw1, raw2) = (c1 as f64 / k, c2 as f64 / k);
            let (r1, x1) = clip(raw1);
            let (r2, x2) = clip(raw2);
            let l = 0.5 * (bernoulli_loglik(b, r1) + bernoulli_loglik(b, r2));
            (l, raw1, x1 || x2)
        }
    }
}

/// Exact expectation of the clipped few-shot log-likelihood, summing over
/// the binomial count distribution.
pub fn hmm_expected_loss_exact(cfg: &HmmTheoryConfig) -> Result<f64> {
    cfg.validate()?;
    let binom = statrs::distribution::Binomial::new(cfg.b_star, cfg.k)
        .map_err(|e| Error::Domain(e.to_string()))?;
    use statrs::distribution::Discrete;
    let pmf: Vec<f64> = (0..=cfg.k).map(|c| binom.pmf(c)).collect();
    let mut total = 0.0;
    for (c1, p1) in pmf.iter().enumerate() {
        for (c2, p2) in pmf.iter().enumerate() {
            total += p1 * p2 * loss_from_counts(cfg, c1 as u64, c2 as u64).0;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmMc {
    pub loglik: Estimate,
    /// Draws in which at least one estimate hit the clip boundary.
    pub clipped: u64,
    /// Unclipped estimate of the first emission probability.
    pub b_hat: Estimate,
    /// Sample variance of that estimate across draws.
    pub b_hat_var: f64,
}

impl HmmMc {
    pub fn clipped_fraction(&self) -> f64 {
        if self.loglik.n == 0 {
            0.0
        } else {
            self.clipped as f64 / self.loglik.n as f64
        }
    }
}

#[derive(Default)]
struct Acc {
    loglik: Moments,
    b_hat: Moments,
    clipped: u64,
}

impl Accumulator for Acc {
    fn merge(self, o: Self) -> Self {
        Acc {
            loglik: Moments::merge(&self.loglik, &o.loglik),
            b_hat: Moments::merge(&self.b_hat, &o.b_hat),
            clipped: self.clipped + o.clipped,
        }
    }
}

/// Monte Carlo estimate of the few-shot test log-likelihood.
pub fn hmm_expected_loss_mc(cfg: &HmmTheoryConfig, n_mc: u64, seed: u64) -> Result<HmmMc> {
    cfg.validate()?;
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    let binom = Binomial::new(cfg.k, cfg.b_star).map_err(|e| Error::Domain(e.to_string()))?;
    let tag = format!("theory-hmm-{}", cfg.student.name());
    let acc: Acc = monte_carlo(n_mc, seed, &tag, |rng, acc: &mut Acc| {
        let c1 = binom.sample(rng);
        let c2 = binom.sample(rng);
        let (l, b_hat, clipped) = loss_from_counts(cfg, c1, c2);
        acc.loglik.push(l);
        acc.b_hat.push(b_hat);
        acc.clipped += clipped as u64;
    });
    Ok(HmmMc {
        loglik: acc.loglik.into(),
        clipped: acc.clipped,
        b_hat: acc.b_hat.into(),
        b_hat_var: acc.b_hat.variance(),
    })
}
