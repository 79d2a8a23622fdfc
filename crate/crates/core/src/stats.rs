//! Summary statistics and rank correlation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Streaming mean and variance that can be merged in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }

    /// Unbiased sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn sem(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Mean and standard error of the mean.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let m: Moments = xs.iter().copied().collect();
    (m.mean, m.sem())
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn rank(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub n: usize,
    pub rho: f64,
    /// One-tailed p-value for the alternative rho < 0.
    pub p_negative: f64,
    /// One-tailed p-value for the alternative rho > 0.
    pub p_positive: f64,
}

impl Spearman {
    pub fn two_sided(&self) -> f64 {
        // f64::min would swallow a NaN from a degenerate sample
        if self.p_negative.is_nan() || self.p_positive.is_nan() {
            return f64::NAN;
        }
        (2.0 * self.p_negative.min(self.p_positive)).min(1.0)
    }
}

/// Spearman rank correlation with t-approximation p-values (n - 2 degrees
/// of freedom).
pub fn spearman(x: &[f64], y: &[f64]) -> Spearman {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let n = x.len();
    let rho = if n < 2 { f64::NAN } else { pearson(&rank(x), &rank(y)) };
    if n < 3 || !rho.is_finite() {
        return Spearman {
            n,
            rho,
            p_negative: f64::NAN,
            p_positive: f64::NAN,
        };
    }
    let df = (n - 2) as f64;
    let (p_negative, p_positive) = if rho >= 1.0 {
        (1.0, 0.0)
    } else if rho <= -1.0 {
        (0.0, 1.0)
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
        (dist.cdf(t), dist.sf(t))
    };
    Spearman {
        n,
        rho,
        p_negative,
        p_positive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(rank(&[3.0, 1.0, 2.0, 1.0]), vec![4.0, 1.5, 3.0, 1.5]);
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..101).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let whole: Moments = xs.iter().copied().collect();
        let a: Moments = xs[..40].iter().copied().collect();
        let b: Moments = xs[40..].iter().copied().collect();
        let merged = a.merge(&b);
        assert_eq!(merged.n, whole.n);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.variance() - whole.variance()).abs() < 1e-12);
    }

    #[test]
    fn spearman_monotone_and_reference_p_value() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let s = spearman(&x, &[5.0, 6.0, 7.0, 8.0, 7.5]);
        // reference: scipy.stats.spearmanr -> rho = 0.9, two-sided p = 0.0374
        assert!((s.rho - 0.9).abs() < 1e-12);
        assert!((s.two_sided() - 0.037386073).abs() < 1e-6);
        assert!((s.p_positive - 0.018693036).abs() < 1e-6);
        let s = spearman(&x, &[9.0, 7.0, 5.0, 3.0, 1.0]);
        assert_eq!(s.rho, -1.0);
        assert_eq!(s.p_negative, 0.0);
    }

    #[test]
    fn spearman_constant_input_is_nan() {
        let s = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]);
        assert!(s.rho.is_nan());
        assert!(s.two_sided().is_nan());
        assert!(spearman(&[], &[]).two_sided().is_nan());
    }
}
