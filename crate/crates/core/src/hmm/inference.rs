use rayon::prelude::*;

use super::HmmModel;
use crate::error::{Error, Result};
use crate::latent::{LatentKind, LatentTrajectories};
use crate::tensor::Tensor3;

/// Smoothed state probabilities of one trial, `xi[t * M + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub xi: Vec<f64>,
    pub loglik: f64,
}

/// Scaled forward-backward quantities for one trial.
pub(crate) struct Pass {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Emission likelihoods divided by `exp(shift[t])`.
    pub emit: Vec<f64>,
    pub scale: Vec<f64>,
    pub loglik: f64,
}

/// Log emission probabilities of a spike and of silence, per state and column.
pub(crate) struct EmissionLogs {
    on: Vec<f64>,
    off: Vec<f64>,
    n: usize,
}

impl EmissionLogs {
    pub fn new(model: &HmmModel) -> Self {
        let on = model.b.iter().flatten().map(|p| p.ln()).collect();
        let off = model.b.iter().flatten().map(|p| (-p).ln_1p()).collect();
        EmissionLogs {
            on,
            off,
            n: model.n_channels(),
        }
    }

    fn log_emission(&self, m: usize, x: &[u32]) -> f64 {
        let range = m * self.n..(m + 1) * self.n;
        let (on, off) = (&self.on[range.clone()], &self.off[range]);
        x.iter()
            .enumerate()
            .map(|(j, &c)| if c != 0 { on[j] } else { off[j] })
            .sum()
    }
}

pub(crate) fn pass(model: &HmmModel, logs: &EmissionLogs, obs: &[u32], trial: Option<usize>) -> Result<Pass> {
    let m = model.n_states();
    let n = model.n_channels();
    assert_eq!(obs.len() % n.max(1), 0, "observation length is not a multiple of the channel count");
    let t_len = if n == 0 { 0 } else { obs.len() / n };
    let degenerate = |time| Error::DegenerateLikelihood { trial, time };

    let mut emit = vec![0.0; t_len * m];
    let mut loglik = 0.0;
    for t in 0..t_len {
        let x = &obs[t * n..(t + 1) * n];
        let row = &mut emit[t * m..(t + 1) * m];
        for (k, e) in row.iter_mut().enumerate() {
            *e = logs.log_emission(k, x);
        }
        let shift = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(degenerate(t));
        }
        for e in row.iter_mut() {
            *e = (*e - shift).exp();
        }
        loglik += shift;
    }

    let mut alpha = vec![0.0; t_len * m];
    let mut scale = vec![0.0; t_len];
    for t in 0..t_len {
        let (done, rest) = alpha.split_at_mut(t * m);
        let cur = &mut rest[..m];
        if t == 0 {
            cur.copy_from_slice(&model.pi);
        } else {
            let prev = &done[(t - 1) * m..];
            for (l, c) in cur.iter_mut().enumerate() {
                *c = (0..m).map(|k| prev[k] * model.a[k][l]).sum();
            }
        }
        let e = &emit[t * m..(t + 1) * m];
        let mut total = 0.0;
        for (c, &ev) in cur.iter_mut().zip(e) {
            *c *= ev;
            total += *c;
        }
        if !(total > 0.0) {
            return Err(degenerate(t));
        }
        for c in cur.iter_mut() {
            *c /= total;
        }
        scale[t] = total;
        loglik += total.ln();
    }

    let mut beta = vec![1.0; t_len * m];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let (head, tail) = beta.split_at_mut((t + 1) * m);
        let next = &tail[..m];
        let e = &emit[(t + 1) * m..(t + 2) * m];
        let cur = &mut head[t * m..];
        for (k, c) in cur.iter_mut().enumerate() {
            let row = &model.a[k];
            *c = (0..m).map(|l| row[l] * e[l] * next[l]).sum::<f64>() / scale[t + 1];
        }
    }
    Ok(Pass {
        alpha,
        beta,
        emit,
        scale,
        loglik,
    })
}

impl Pass {
    pub fn xi(&self, m: usize) -> Vec<f64> {
        let mut xi: Vec<f64> = self.alpha.iter().zip(&self.beta).map(|(a, b)| a * b).collect();
        for row in xi.chunks_exact_mut(m) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        xi
    }
}

/// Exact smoothing of one trial. `obs` is `T x model.n_channels()` row-major,
/// with columns in the model's emission order.
pub fn forward_backward(model: &HmmModel, obs: &[u32]) -> Result<Posterior> {
    let p = pass(model, &EmissionLogs::new(model), obs, None)?;
    Ok(Posterior {
        xi: p.xi(model.n_states()),
        loglik: p.loglik,
    })
}

/// Posterior state probabilities for a set of trials.
///
/// Trials whose likelihood is zero under every state are left out and listed
/// in `skipped`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrials {
    pub latents: LatentTrajectories,
    pub loglik: Vec<f64>,
    pub skipped: Vec<usize>,
}

/// Smooth the given dataset trials using the given channels as evidence.
pub fn smooth_trials(model: &HmmModel, values: &Tensor3<u32>, trials: &[usize], channels: &[usize]) -> Result<SmoothedTrials> {
    let local = model.restrict(channels)?;
    let logs = EmissionLogs::new(&local);
    let m = model.n_states();
    let t_len = values.dims()[1];
    let results: Vec<Result<Posterior>> = trials
        .par_iter()
        .map(|&i| {
            let mut obs = Vec::with_capacity(t_len * channels.len());
            for t in 0..t_len {
                let row = values.row(i, t);
                obs.extend(channels.iter().map(|&c| row[c]));
            }
            let p = pass(&local, &logs, &obs, Some(i))?;
            Ok(Posterior {
                xi: p.xi(m),
                loglik: p.loglik,
            })
        })
        .collect();

    let mut kept = Vec::with_capacity(trials.len());
    let mut data = Vec::with_capacity(trials.len() * t_len * m);
    let mut loglik = Vec::with_capacity(trials.len());
    let mut skipped = Vec::new();
    for (&i, r) in trials.iter().zip(results) {
        match r {
            Ok(p) => {
                kept.push(i);
                data.extend(p.xi);
                loglik.push(p.loglik);
            }
            Err(e @ Error::DegenerateLikelihood { .. }) => {
                log::warn!("skipping trial: {e}");
                skipped.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    let values = Tensor3::from_vec([kept.len(), t_len, m], data).expect("consistent posterior shape");
    Ok(SmoothedTrials {
        latents: LatentTrajectories {
            kind: LatentKind::Pmf,
            trials: kept,
            values,
        },
        loglik,
        skipped,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Posterior marginals and log-likelihood by summing over all `M^T` paths.
    pub fn enumerate(model: &HmmModel, obs: &[u32]) -> (Vec<f64>, f64) {
        let m = model.n_states();
        let n = model.n_channels();
        let t_len = obs.len() / n;
        let mut marg = vec![0.0; t_len * m];
        let mut total = 0.0;
        let mut path = vec![0usize; t_len];
        for code in 0..m.pow(t_len as u32) {
            let mut c = code;
            for z in path.iter_mut() {
                *z = c % m;
                c /= m;
            }
            let mut p = model.pi[path[0]];
            for t in 0..t_len {
                if t > 0 {
                    p *= model.a[path[t - 1]][path[t]];
                }
                for j in 0..n {
                    let b = model.b[path[t]][j];
                    p *= if obs[t * n + j] == 1 { b } else { 1.0 - b };
                }
            }
            total += p;
            for t in 0..t_len {
                marg[t * m + path[t]] += p;
            }
        }
        marg.iter_mut().for_each(|v| *v /= total);
        (marg, total.ln())
    }

    pub fn random_model(r: &mut impl Rng, m: usize, n: usize) -> HmmModel {
        let simplex = |r: &mut dyn rand::RngCore| {
            let v: Vec<f64> = (0..m).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let a = (0..m).map(|_| simplex(r)).collect();
        let pi = simplex(r);
        let b = (0..m)
            .map(|_| (0..n).map(|_| r.random_range(0.05..0.95)).collect())
            .collect();
        HmmModel::new(a, b, pi).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]
        #[test]
        fn matches_path_enumeration(seed in any::<u64>(), m in 1usize..=4, t in 1usize..=6, n in 1usize..=3) {
            let mut r = crate::rng::stream(seed, "fb-oracle", 0);
            let model = random_model(&mut r, m, n);
            let obs: Vec<u32> = (0..t * n).map(|_| r.random_bool(0.5) as u32).collect();
            let post = forward_backward(&model, &obs).unwrap();
            let (marg, ll) = enumerate(&model, &obs);
            prop_assert!((post.loglik - ll).abs() < 1e-10);
            for (a, b) in post.xi.iter().zip(&marg) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_state_three_step_fixture() {
        let model = HmmModel::new(
            vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            vec![vec![0.2, 0.6], vec![0.7, 0.1]],
            vec![0.4, 0.6],
        )
        .unwrap();
        let obs = [1, 0, 0, 1, 1, 1];
        let post = forward_backward(&model, &obs).unwrap();
        let (marg, ll) = enumerate(&model, &obs);
        assert!((post.loglik - ll).abs() < 1e-10);
        for (a, b) in post.xi.iter().zip(&marg) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn frozen_chain_keeps_its_state() {
        let model = HmmModel::new(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![vec![0.3, 0.8], vec![0.5, 0.5], vec![0.9, 0.1]],
            vec![0.0, 1.0, 0.0],
        )
        .unwrap();
        let post = forward_backward(&model, &[1, 0, 0, 0, 1, 1, 0, 1]).unwrap();
        for row in post.xi.chunks(3) {
            assert_eq!(row, &[0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn indistinguishable_states_stay_uniform() {
        let model = HmmModel::new(vec![vec![0.25; 4]; 4], vec![vec![0.3, 0.6]; 4], vec![0.25; 4]).unwrap();
        let post = forward_backward(&model, &[1, 1, 0, 1, 0, 0]).unwrap();
        for v in post.xi {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn impossible_observation_is_degenerate() {
        let model = HmmModel::new(vec![vec![0.5, 0.5]; 2], vec![vec![0.0], vec![0.0]], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            forward_backward(&model, &[0, 1]),
            Err(Error::DegenerateLikelihood { time: 1, .. })
        ));
    }

    #[test]
    fn smoothing_skips_degenerate_trials() {
        let model = HmmModel::new(vec![vec![0.5, 0.5]; 2], vec![vec![0.0, 0.5], vec![0.0, 0.5]], vec![0.5, 0.5]).unwrap();
        let values = Tensor3::from_vec([3, 2, 2], vec![0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1]).unwrap();
        let out = smooth_trials(&model, &values, &[0, 1, 2], &[0, 1]).unwrap();
        assert_eq!(out.skipped, vec![1]);
        assert_eq!(out.latents.trials, vec![0, 2]);
        let only_second = smooth_trials(&model, &values, &[2], &[1]).unwrap();
        assert_eq!(only_second.latents.values.trial(0), out.latents.values.trial(1));
    }
}
