use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::{aligned, rows};
use crate::error::{Error, Result};
use crate::latent::{LatentKind, LatentTrajectories};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::rng;

pub const DEFAULT_L2: f64 = 1e-4;
/// Probabilities are floored here inside the KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultinomialOptions {
    /// L2 strength on the weights; offsets are not penalised.
    pub l2: f64,
    /// Use `KL(target || decoded)` instead of `KL(decoded || target)`.
    pub swap_kl: bool,
}

impl Default for MultinomialOptions {
    fn default() -> Self {
        MultinomialOptions {
            l2: DEFAULT_L2,
            swap_kl: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialDecode {
    pub d: f64,
    pub converged: bool,
    pub grad_inf: f64,
}

/// Softmax-affine model `p = softmax(x W + b)` with `W` stored `D x K`.
struct Softmax {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl Softmax {
    fn unpack(theta: &DVector<f64>, d: usize, k: usize) -> Self {
        Softmax {
            w: DMatrix::from_column_slice(d, k, &theta.as_slice()[..d * k]),
            b: DVector::from_column_slice(&theta.as_slice()[d * k..]),
        }
    }

    fn probs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut logits = x * &self.w;
        for mut row in logits.row_iter_mut() {
            row += self.b.transpose();
            let top = row.max();
            row.apply(|v| *v = (*v - top).exp());
            let total = row.sum();
            row /= total;
        }
        logits
    }
}

/// Mean cross-entropy plus `(l2/2)|W|^2`, and its gradient.
fn objective(theta: &DVector<f64>, x: &DMatrix<f64>, labels: &[usize], k: usize, l2: f64) -> (f64, DVector<f64>) {
    let d = x.ncols();
    let n = labels.len() as f64;
    let model = Softmax::unpack(theta, d, k);
    let mut logits = x * &model.w;
    let mut loss = 0.0;
    for (mut row, &z) in logits.row_iter_mut().zip(labels) {
        row += model.b.transpose();
        let top = row.max();
        row.apply(|v| *v = (*v - top).exp());
        let total = row.sum();
        loss += total.ln() + top - (row[z].ln() + top);
        row /= total;
        row[z] -= 1.0;
    }
    let resid = logits;
    let gw = x.transpose() * &resid / n + &model.w * l2;
    let gb = resid.row_sum().transpose() / n;
    let mut grad = DVector::zeros(theta.len());
    grad.rows_mut(0, d * k).copy_from_slice(gw.as_slice());
    grad.rows_mut(d * k, k).copy_from(&gb);
    (loss / n + 0.5 * l2 * model.w.norm_squared(), grad)
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.ln() - b.max(KL_FLOOR).ln()))
        .sum()
}

/// Multinomial regression from source state probabilities to hard states
/// sampled once per sample from the target probabilities, scored as the mean
/// KL divergence between decoded and target probabilities.
pub fn cross_decode_hmm(
    source: &LatentTrajectories,
    target: &LatentTrajectories,
    seed: u64,
    opts: &MultinomialOptions,
) -> Result<MultinomialDecode> {
    if target.kind != LatentKind::Pmf {
        return Err(Error::Invalid("multinomial decoding needs probability targets".into()));
    }
    let target = aligned(source, target)?;
    let x = rows(&source.values);
    let q = rows(&target.values);
    let k = q.ncols();
    let mut r = rng::stream(seed, "multinomial-hard-targets", 0);
    let labels: Vec<usize> = q
        .row_iter()
        .map(|row| {
            let u: f64 = r.random();
            let mut acc = 0.0;
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return j;
                }
            }
            row.iter().rposition(|&p| p > 0.0).unwrap_or(k - 1)
        })
        .collect();

    let d = x.ncols();
    let min = lbfgs(
        |theta| objective(theta, &x, &labels, k, opts.l2),
        DVector::zeros(d * k + k),
        &LbfgsOptions::default(),
    );
    if !min.converged {
        log::debug!("multinomial decoder stopped at gradient norm {:e}", min.grad_inf);
    }
    let p = Softmax::unpack(&min.x, d, k).probs(&x);
    let n = x.nrows();
    let total: f64 = (0..n)
        .map(|i| {
            let pi: Vec<f64> = p.row(i).iter().copied().collect();
            let qi: Vec<f64> = q.row(i).iter().copied().collect();
            if opts.swap_kl {
                kl(&qi, &pi)
            } else {
                kl(&pi, &qi)
            }
        })
        .sum();
    Ok(MultinomialDecode {
        d: total / n as f64,
        converged: min.converged,
        grad_inf: min.grad_inf,
    })
}
