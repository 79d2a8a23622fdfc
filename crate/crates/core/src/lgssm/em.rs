use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kalman::{gather, kalman_smooth};
use super::{spectral_radius, LgssmModel};
use crate::datamodel::GaussianDataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, solve_spd_mat, symmetrize};
use crate::rng;

const CHUNK: usize = 16;

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

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub model: LgssmModel,
    /// Training log-likelihood before each M-step, then of the returned model.
    pub trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone)]
struct Stats {
    z0: DVector<f64>,
    z0z0: DMatrix<f64>,
    /// sum over t >= 1 of E[z_t [z_{t-1}; 1]^T]
    dyn_yx: DMatrix<f64>,
    /// sum over t >= 1 of E[[z_{t-1}; 1][z_{t-1}; 1]^T]
    dyn_xx: DMatrix<f64>,
    /// sum over t >= 1 of E[z_t z_t^T]
    dyn_yy: DMatrix<f64>,
    n_dyn: usize,
    /// sum over t of x_t E[[z_t; 1]]^T
    obs_xz: DMatrix<f64>,
    obs_zz: DMatrix<f64>,
    obs_xx: DMatrix<f64>,
    n_obs: usize,
    n_trials: usize,
    loglik: f64,
}

impl Stats {
    fn zeros(m: usize, n: usize) -> Self {
        Stats {
            z0: DVector::zeros(m),
            z0z0: DMatrix::zeros(m, m),
            dyn_yx: DMatrix::zeros(m, m + 1),
            dyn_xx: DMatrix::zeros(m + 1, m + 1),
            dyn_yy: DMatrix::zeros(m, m),
            n_dyn: 0,
            obs_xz: DMatrix::zeros(n, m + 1),
            obs_zz: DMatrix::zeros(m + 1, m + 1),
            obs_xx: DMatrix::zeros(n, n),
            n_obs: 0,
            n_trials: 0,
            loglik: 0.0,
        }
    }

    fn add(&mut self, o: &Stats) {
        self.z0 += &o.z0;
        self.z0z0 += &o.z0z0;
        self.dyn_yx += &o.dyn_yx;
        self.dyn_xx += &o.dyn_xx;
        self.dyn_yy += &o.dyn_yy;
        self.n_dyn += o.n_dyn;
        self.obs_xz += &o.obs_xz;
        self.obs_zz += &o.obs_zz;
        self.obs_xx += &o.obs_xx;
        self.n_obs += o.n_obs;
        self.n_trials += o.n_trials;
        self.loglik += o.loglik;
    }
}

/// `E[[z; 1][z; 1]^T]` from a mean and covariance.
fn augmented_second_moment(mean: &DVector<f64>, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let m = mean.len();
    let mut out = DMatrix::zeros(m + 1, m + 1);
    out.view_mut((0, 0), (m, m)).copy_from(&(cov + mean * mean.transpose()));
    out.view_mut((0, m), (m, 1)).copy_from(mean);
    out.view_mut((m, 0), (1, m)).copy_from(&mean.transpose());
    out[(m, m)] = 1.0;
    out
}

fn e_step(model: &LgssmModel, trials: &[Vec<f64>]) -> Result<Stats> {
    let m = model.latent_dim();
    let n = model.n_channels();
    let partial: Vec<Result<Stats>> = trials
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut st = Stats::zeros(m, n);
            for obs in chunk {
                let sm = kalman_smooth(model, obs)?;
                let t_len = sm.means.len();
                st.loglik += sm.loglik;
                st.n_trials += 1;
                st.z0 += &sm.means[0];
                st.z0z0 += &sm.covs[0] + &sm.means[0] * sm.means[0].transpose();
                for t in 0..t_len {
                    let x = DVector::from_column_slice(&obs[t * n..(t + 1) * n]);
                    let mu = &sm.means[t];
                    let aug = augmented_second_moment(mu, &sm.covs[t]);
                    let mut xz = DMatrix::zeros(n, m + 1);
                    xz.view_mut((0, 0), (n, m)).copy_from(&(&x * mu.transpose()));
                    xz.view_mut((0, m), (n, 1)).copy_from(&x);
                    st.obs_xz += xz;
                    st.obs_xx += &x * x.transpose();
                    st.obs_zz += &aug;
                    st.n_obs += 1;
                    if t + 1 < t_len {
                        let next = &sm.means[t + 1];
                        st.dyn_xx += &aug;
                        let mut yx = DMatrix::zeros(m, m + 1);
                        yx.view_mut((0, 0), (m, m)).copy_from(&(&sm.cross[t] + next * mu.transpose()));
                        yx.view_mut((0, m), (m, 1)).copy_from(next);
                        st.dyn_yx += yx;
                        st.dyn_yy += &sm.covs[t + 1] + next * next.transpose();
                        st.n_dyn += 1;
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

fn checked_cov(c: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let c = symmetrize(&c);
    if c.iter().all(|v| v.is_finite()) && cholesky_jitter(&c).is_some() {
        Ok(c)
    } else {
        Err(Error::Fit(format!(
            "M-step produced a degenerate {what}; add trials or jitter the data"
        )))
    }
}

fn m_step(model: &LgssmModel, st: &Stats) -> Result<LgssmModel> {
    let m = model.latent_dim();
    let s = st.n_trials as f64;
    let mu0 = &st.z0 / s;
    let sigma0 = checked_cov(&st.z0z0 / s - &mu0 * mu0.transpose(), "initial covariance")?;

    let (f, b, g) = if st.n_dyn > 0 {
        let w = solve_spd_mat(&st.dyn_xx, &st.dyn_yx.transpose()).transpose();
        let g = (&st.dyn_yy - &w * st.dyn_yx.transpose()) / st.n_dyn as f64;
        (
            w.columns(0, m).into_owned(),
            w.column(m).into_owned(),
            checked_cov(g, "process covariance")?,
        )
    } else {
        (model.f.clone(), model.b.clone(), model.g.clone())
    };

    let w = solve_spd_mat(&st.obs_zz, &st.obs_xz.transpose()).transpose();
    let r = (&st.obs_xx - &w * st.obs_xz.transpose()) / st.n_obs as f64;
    Ok(LgssmModel {
        mu0,
        sigma0,
        f,
        b,
        g,
        h: w.columns(0, m).into_owned(),
        c: w.column(m).into_owned(),
        r: checked_cov(r, "observation covariance")?,
        channels: model.channels.clone(),
    })
}

fn initial_model(m: usize, trials: &[Vec<f64>], n: usize, seed: u64) -> LgssmModel {
    let mut r = rng::stream(seed, "lgssm-em-init", 0);
    let mut count = 0.0;
    let mut mean = DVector::zeros(n);
    let mut sq = DVector::zeros(n);
    for obs in trials {
        for x in obs.chunks_exact(n) {
            let x = DVector::from_column_slice(x);
            sq += x.component_mul(&x);
            mean += x;
            count += 1.0;
        }
    }
    mean /= count;
    let var = (sq / count - mean.component_mul(&mean)).map(|v| v.max(1e-6));
    let scale = (var.sum() / n as f64).sqrt() / (m as f64).sqrt();
    let mut gauss = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| -> f64 { StandardNormal.sample(&mut r) });
    let f = gauss(m, m);
    let rho = spectral_radius(&f);
    let f = if rho > 0.0 { f * (0.9 / rho) } else { f };
    let h = gauss(n, m) * scale;
    LgssmModel {
        mu0: DVector::zeros(m),
        sigma0: DMatrix::identity(m, m),
        f,
        b: DVector::zeros(m),
        g: DMatrix::identity(m, m) * 0.1,
        h,
        c: mean,
        r: DMatrix::from_diagonal(&(var * 0.5)),
        channels: None,
    }
}

/// EM on the training trials, over held-in followed by held-out channels.
pub fn fit_em(data: &GaussianDataset, m: usize, opts: &EmOptions) -> Result<EmFit> {
    if m == 0 {
        return Err(Error::Fit("latent dimension must be positive".into()));
    }
    if data.split.train.is_empty() {
        return Err(Error::Fit("no training trials".into()));
    }
    let channels = data.partition.training_channels();
    let trials: Vec<Vec<f64>> = data
        .split
        .train
        .iter()
        .map(|&i| gather(&data.values, i, &channels))
        .collect();
    let mut model = initial_model(m, &trials, channels.len(), opts.init_seed);
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
        log::debug!("lgssm em M={m} iter {it}: loglik {}", st.loglik);
        model = m_step(&model, &st)?;
    }
    if !converged {
        trace.push(e_step(&model, &trials)?.loglik);
    }
    Ok(EmFit {
        model,
        trace,
        converged,
    })
}
