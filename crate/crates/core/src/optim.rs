//! Limited-memory BFGS for smooth unconstrained minimisation.

use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimise `f`, which returns the objective and its gradient.
pub fn lbfgs(mut f: impl FnMut(&DVector<f64>) -> (f64, DVector<f64>), x0: DVector<f64>, opts: &LbfgsOptions) -> Minimum {
    let mut x = x0;
    let (mut value, mut grad) = f(&x);
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    while iterations < opts.max_iters {
        if grad.amax() < opts.grad_tol {
            break;
        }
        iterations += 1;

        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            q *= s.dot(y) / y.dot(y);
        } else {
            q /= grad.norm().max(1.0);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        let mut dir = -q;
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            history.clear();
            dir = -&grad / grad.norm().max(1.0);
            slope = grad.dot(&dir);
        }

        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &x + &dir * t;
            let (v, g) = f(&cand);
            if v.is_finite() && v <= value + 1e-4 * t * slope {
                next = Some((cand, v, g));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, v_new, g_new)) = next else {
            break;
        };
        let s = &x_new - &x;
        let y = &g_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let improvement = value - v_new;
        x = x_new;
        value = v_new;
        grad = g_new;
        if improvement.abs() <= f64::EPSILON * value.abs() && grad.amax() < opts.grad_tol.sqrt() {
            break;
        }
    }
    let grad_inf = grad.amax();
    Minimum {
        x,
        value,
        grad_inf,
        iterations,
        converged: grad_inf < opts.grad_tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            (v, g)
        };
        let m = lbfgs(f, DVector::from_vec(vec![-1.2, 1.0]), &LbfgsOptions { max_iters: 1000, ..Default::default() });
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn quadratic_in_many_dimensions() {
        let d = 30;
        let scale = DVector::from_fn(d, |i, _| 1.0 + i as f64);
        let f = |x: &DVector<f64>| {
            let g = x.component_mul(&scale) - DVector::from_element(d, 1.0);
            (0.5 * x.dot(&x.component_mul(&scale)) - x.sum(), g)
        };
        let m = lbfgs(f, DVector::zeros(d), &LbfgsOptions::default());
        for i in 0..d {
            assert!((m.x[i] - 1.0 / (1.0 + i as f64)).abs() < 1e-6);
        }
    }
}
