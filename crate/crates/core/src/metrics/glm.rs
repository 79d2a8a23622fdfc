use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::solve_spd;

pub const DEFAULT_L2_ALPHA: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-8;
const MAX_ITERS: usize = 100;

/// Poisson GLM regressor settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonGlm {
    pub l2_alpha: f64,
    pub rate_floor: f64,
}

/// One log-linear model per target column.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonGlmFit {
    pub w: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub converged: Vec<bool>,
    /// Infinity norm of the objective gradient at the returned parameters.
    pub grad_inf: Vec<f64>,
    pub rate_floor: f64,
}

impl PoissonGlmFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut eta = x * &self.w;
        for mut row in eta.row_iter_mut() {
            row += self.offset.transpose();
        }
        eta.map(|e| e.exp().max(self.rate_floor))
    }
}

/// `(1/n) sum[y eta - exp(eta)] - (alpha/2) |w|^2` with `eta = x w + b`.
pub fn poisson_glm_objective(x: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, alpha: f64) -> f64 {
    let n = y.len() as f64;
    let eta = x * w;
    let fit: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &t)| t * (e + b) - (e + b).exp())
        .sum();
    fit / n - 0.5 * alpha * w.norm_squared()
}

/// Gradient of [`poisson_glm_objective`] with respect to `(w, b)`.
fn gradient(x: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, alpha: f64) -> (DVector<f64>, f64, DVector<f64>) {
    let n = y.len() as f64;
    let mu = (x * w).map(|e| (e + b).exp());
    let resid = DVector::from_iterator(y.len(), y.iter().zip(mu.iter()).map(|(t, m)| t - m));
    let gw = x.transpose() * &resid / n - w * alpha;
    let gb = resid.sum() / n;
    (gw, gb, mu)
}

fn fit_one(x: &DMatrix<f64>, y: &[f64], alpha: f64, floor: f64) -> (DVector<f64>, f64, bool, f64) {
    let d = x.ncols();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return (DVector::zeros(d), floor.ln(), true, 0.0);
    }
    let mut w = DVector::zeros(d);
    let mut b = mean.ln();
    let mut obj = poisson_glm_objective(x, y, &w, b, alpha);
    let mut grad_inf = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let (gw, gb, mu) = gradient(x, y, &w, b, alpha);
        grad_inf = gw.amax().max(gb.abs());
        if grad_inf < GRAD_TOL {
            return (w, b, true, grad_inf);
        }
        // negative Hessian over the augmented design [x 1]
        let mut h = DMatrix::zeros(d + 1, d + 1);
        let mut g = DVector::zeros(d + 1);
        g.rows_mut(0, d).copy_from(&gw);
        g[d] = gb;
        for (i, row) in x.row_iter().enumerate() {
            let m = mu[i] / n;
            for a in 0..d {
                let va = row[a] * m;
                for c in a..d {
                    h[(a, c)] += va * row[c];
                }
                h[(a, d)] += va;
            }
            h[(d, d)] += m;
        }
        for a in 0..=d {
            for c in 0..a {
                h[(a, c)] = h[(c, a)];
            }
        }
        for a in 0..d {
            h[(a, a)] += alpha;
        }
        let step = solve_spd(&h, &g);
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let w_new = &w + step.rows(0, d) * t;
            let b_new = b + step[d] * t;
            let obj_new = poisson_glm_objective(x, y, &w_new, b_new, alpha);
            if obj_new.is_finite() && obj_new >= obj + 1e-4 * t * slope {
                w = w_new;
                b = b_new;
                obj = obj_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (gw, gb, _) = gradient(x, y, &w, b, alpha);
    grad_inf = grad_inf.min(gw.amax().max(gb.abs()));
    let converged = grad_inf < GRAD_TOL;
    (w, b, converged, grad_inf)
}

/// Fit an L2-penalised Poisson GLM for each column of `y` by damped Newton.
///
/// Columns with no events get zero weights and offset `ln(rate_floor)`.
pub fn poisson_glm_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, l2_alpha: f64, rate_floor: f64) -> PoissonGlmFit {
    assert_eq!(x.nrows(), y.nrows(), "features and targets need the same samples");
    let d = x.ncols();
    let c = y.ncols();
    let mut w = DMatrix::zeros(d, c);
    let mut offset = DVector::zeros(c);
    let mut converged = Vec::with_capacity(c);
    let mut grad_inf = Vec::with_capacity(c);
    for j in 0..c {
        let target: Vec<f64> = y.column(j).iter().copied().collect();
        let (wj, bj, ok, g) = fit_one(x, &target, l2_alpha, rate_floor);
        if !ok {
            log::debug!("poisson glm column {j} stopped with gradient norm {g:e}");
        }
        w.set_column(j, &wj);
        offset[j] = bj;
        converged.push(ok);
        grad_inf.push(g);
    }
    PoissonGlmFit {
        w,
        offset,
        converged,
        grad_inf,
        rate_floor,
    }
}
