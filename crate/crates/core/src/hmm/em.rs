use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::{pass, EmissionLogs};
use super::{clip_prob, HmmModel};
use crate::datamodel::SpikeDataset;
use crate::error::{Error, Result};
use crate::rng;

const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub n_iters: usize,
    /// Stop once an iteration improves the log-likelihood by less than
    /// `tol * |loglik|`. Zero runs all iterations.
    pub tol: f64,
    pub init_seed: u64,
}

impl EmOptions {
    pub fn new(n_iters: usize, init_seed: u64) -> Self {
        EmOptions {
            n_iters,
            tol: 0.0,
            init_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub model: HmmModel,
    /// Training log-likelihood before each M-step, then of the returned model.
    pub trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone)]
struct Stats {
    init: Vec<f64>,
    trans: Vec<f64>,
    occupancy: Vec<f64>,
    spikes: Vec<f64>,
    loglik: f64,
}

impl Stats {
    fn zeros(m: usize, n: usize) -> Self {
        Stats {
            init: vec![0.0; m],
            trans: vec![0.0; m * m],
            occupancy: vec![0.0; m],
            spikes: vec![0.0; m * n],
            loglik: 0.0,
        }
    }

    fn add(&mut self, other: &Stats) {
        let pairs = [
            (&mut self.init, &other.init),
            (&mut self.trans, &other.trans),
            (&mut self.occupancy, &other.occupancy),
            (&mut self.spikes, &other.spikes),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.loglik += other.loglik;
    }
}

fn dirichlet_ones(r: &mut impl Rng, m: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| r.sample::<f64, _>(Exp1)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn initial_model(m: usize, n: usize, seed: u64) -> HmmModel {
    let mut r = rng::stream(seed, "hmm-em-init", 0);
    let a = (0..m).map(|_| dirichlet_ones(&mut r, m)).collect();
    let pi = dirichlet_ones(&mut r, m);
    let b = (0..m)
        .map(|_| (0..n).map(|_| r.random_range(0.2..0.8)).collect())
        .collect();
    HmmModel {
        a,
        b,
        pi,
        channels: None,
    }
}

fn e_step(model: &HmmModel, trials: &[Vec<u32>]) -> Result<Stats> {
    let m = model.n_states();
    let n = model.n_channels();
    let logs = EmissionLogs::new(model);
    let partial: Vec<Result<Stats>> = trials
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut st = Stats::zeros(m, n);
            for obs in chunk {
                let p = pass(model, &logs, obs, None)?;
                let xi = p.xi(m);
                let t_len = p.scale.len();
                st.loglik += p.loglik;
                st.init.iter_mut().zip(&xi[..m]).for_each(|(a, b)| *a += b);
                for t in 0..t_len {
                    let g = &xi[t * m..(t + 1) * m];
                    let x = &obs[t * n..(t + 1) * n];
                    for k in 0..m {
                        st.occupancy[k] += g[k];
                        let row = &mut st.spikes[k * n..(k + 1) * n];
                        for (s, &c) in row.iter_mut().zip(x) {
                            if c != 0 {
                                *s += g[k];
                            }
                        }
                    }
                    if t + 1 < t_len {
                        let alpha = &p.alpha[t * m..(t + 1) * m];
                        let e = &p.emit[(t + 1) * m..(t + 2) * m];
                        let beta = &p.beta[(t + 1) * m..(t + 2) * m];
                        let c = p.scale[t + 1];
                        for k in 0..m {
                            for l in 0..m {
                                st.trans[k * m + l] += alpha[k] * model.a[k][l] * e[l] * beta[l] / c;
                            }
                        }
                    }
                }
            }
            Ok(st)
        })
        .collect();
    let mut total = Stats::zeros(m, n);
    for st in partial {
        total.add(&st?);
    }
    Ok(total)
}

fn m_step(model: &HmmModel, st: &Stats, n_trials: usize) -> HmmModel {
    let m = model.n_states();
    let n = model.n_channels();
    let pi = st.init.iter().map(|v| v / n_trials as f64).collect();
    let a = (0..m)
        .map(|k| {
            let row = &st.trans[k * m..(k + 1) * m];
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().map(|v| v / total).collect()
            } else {
                model.a[k].clone()
            }
        })
        .collect();
    let b = (0..m)
        .map(|k| {
            let occ = st.occupancy[k];
            if occ > 0.0 {
                st.spikes[k * n..(k + 1) * n].iter().map(|s| clip_prob(s / occ)).collect()
            } else {
                model.b[k].clone()
            }
        })
        .collect();
    HmmModel {
        a,
        b,
        pi,
        channels: model.channels.clone(),
    }
}

/// Baum-Welch on the training trials, over held-in followed by held-out
/// channels.
pub fn fit_em(data: &SpikeDataset, m: usize, opts: &EmOptions) -> Result<EmFit> {
    if m == 0 {
        return Err(Error::Fit("an HMM needs at least one state".into()));
    }
    if data.split.train.is_empty() {
        return Err(Error::Fit("no training trials".into()));
    }
    let channels = data.partition.training_channels();
    let t_len = data.n_time();
    let mut trials = Vec::with_capacity(data.split.train.len());
    for &i in &data.split.train {
        let mut obs = Vec::with_capacity(t_len * channels.len());
        for t in 0..t_len {
            let row = data.values.row(i, t);
            for &c in &channels {
                if row[c] > 1 {
                    return Err(Error::Fit(format!("trial {i} channel {c} has count {}; data must be binary", row[c])));
                }
                obs.push(row[c]);
            }
        }
        trials.push(obs);
    }

    let mut model = initial_model(m, channels.len(), opts.init_seed);
    model.channels = Some(channels);
    let mut trace = Vec::with_capacity(opts.n_iters + 1);
    let mut converged = false;
    for it in 0..opts.n_iters {
        let st = e_step(&model, &trials)?;
        if let Some(&prev) = trace.last() {
            if st.loglik - prev < opts.tol * st.loglik.abs() {
                trace.push(st.loglik);
                converged = true;
                break;
            }
        }
        trace.push(st.loglik);
        log::debug!("hmm em M={m} iter {it}: loglik {}", st.loglik);
        model = m_step(&model, &st, trials.len());
    }
    if !converged {
        trace.push(e_step(&model, &trials)?.loglik);
    }
    model.validate()?;
    Ok(EmFit {
        model,
        trace,
        converged,
    })
}
