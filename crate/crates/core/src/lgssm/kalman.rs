use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::LgssmModel;
use crate::error::{Error, Result};
use crate::latent::{LatentKind, LatentTrajectories};
use crate::linalg::{chol_logdet, cholesky_jitter, solve_spd_mat, symmetrize};
use crate::tensor::Tensor3;

/// Smoothed moments of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSmooth {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// `cross[t] = Cov(z_{t+1}, z_t | x)`.
    pub cross: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

/// Kalman filter followed by a Rauch-Tung-Striebel pass. `obs` is
/// `T x model.n_channels()` row-major.
pub fn kalman_smooth(model: &LgssmModel, obs: &[f64]) -> Result<TrialSmooth> {
    let n = model.n_channels();
    let m = model.latent_dim();
    assert!(n > 0 && obs.len() % n == 0, "observation length is not a multiple of the channel count");
    let t_len = obs.len() / n;
    let ht = model.h.transpose();
    let log2pi = (2.0 * PI).ln();

    let mut pred_mean = Vec::with_capacity(t_len);
    let mut pred_cov = Vec::with_capacity(t_len);
    let mut filt_mean: Vec<DVector<f64>> = Vec::with_capacity(t_len);
    let mut filt_cov: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
    let mut loglik = 0.0;
    for t in 0..t_len {
        let (mp, pp) = if t == 0 {
            (model.mu0.clone(), model.sigma0.clone())
        } else {
            let f = &model.f;
            (
                f * &filt_mean[t - 1] + &model.b,
                symmetrize(&(f * &filt_cov[t - 1] * f.transpose() + &model.g)),
            )
        };
        let x = DVector::from_column_slice(&obs[t * n..(t + 1) * n]);
        let innov = x - &model.h * &mp - &model.c;
        let hp = &model.h * &pp;
        let s = &hp * &ht + &model.r;
        let chol = cholesky_jitter(&s)
            .ok_or_else(|| Error::Covariance(format!("innovation covariance is singular at t={t}")))?;
        let sinv_innov = chol.solve(&innov);
        loglik -= 0.5 * (innov.dot(&sinv_innov) + chol_logdet(&chol) + n as f64 * log2pi);
        let sinv_hp = chol.solve(&hp);
        filt_mean.push(&mp + hp.transpose() * sinv_innov);
        filt_cov.push(symmetrize(&(&pp - hp.transpose() * sinv_hp)));
        pred_mean.push(mp);
        pred_cov.push(pp);
    }

    let mut means = filt_mean.clone();
    let mut covs = filt_cov.clone();
    let mut cross = vec![DMatrix::zeros(m, m); t_len.saturating_sub(1)];
    for t in (0..t_len.saturating_sub(1)).rev() {
        // J^T = P_pred^{-1} F P_filt
        let jt = solve_spd_mat(&pred_cov[t + 1], &(&model.f * &filt_cov[t]));
        let j = jt.transpose();
        means[t] = &filt_mean[t] + &j * (&means[t + 1] - &pred_mean[t + 1]);
        covs[t] = symmetrize(&(&filt_cov[t] + &j * (&covs[t + 1] - &pred_cov[t + 1]) * &jt));
        cross[t] = &covs[t + 1] * &jt;
    }
    Ok(TrialSmooth {
        means,
        covs,
        cross,
        loglik,
    })
}

/// Smoothed means and covariances for a set of dataset trials.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTrajectory {
    /// Posterior means, `S x T x M`.
    pub latents: LatentTrajectories,
    /// Posterior covariances, row-major `S x T x M x M`.
    pub covs: Vec<f64>,
    pub loglik: Vec<f64>,
}

pub(crate) fn gather(values: &Tensor3<f64>, trial: usize, channels: &[usize]) -> Vec<f64> {
    let t_len = values.dims()[1];
    let mut obs = Vec::with_capacity(t_len * channels.len());
    for t in 0..t_len {
        let row = values.row(trial, t);
        obs.extend(channels.iter().map(|&c| row[c]));
    }
    obs
}

/// Smooth the given dataset trials using the given channels as evidence.
pub fn smooth_trials(model: &LgssmModel, values: &Tensor3<f64>, trials: &[usize], channels: &[usize]) -> Result<GaussianTrajectory> {
    let local = model.restrict(channels)?;
    let m = model.latent_dim();
    let t_len = values.dims()[1];
    let results = trials
        .par_iter()
        .map(|&i| kalman_smooth(&local, &gather(values, i, channels)))
        .collect::<Result<Vec<_>>>()?;
    let mut means = Vec::with_capacity(trials.len() * t_len * m);
    let mut covs = Vec::with_capacity(trials.len() * t_len * m * m);
    let mut loglik = Vec::with_capacity(trials.len());
    for r in results {
        for (mu, p) in r.means.iter().zip(&r.covs) {
            means.extend(mu.iter());
            covs.extend(p.transpose().iter());
        }
        loglik.push(r.loglik);
    }
    Ok(GaussianTrajectory {
        latents: LatentTrajectories {
            kind: LatentKind::Gaussian,
            trials: trials.to_vec(),
            values: Tensor3::from_vec([trials.len(), t_len, m], means).expect("mean shape"),
        },
        covs,
        loglik,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lgssm::make_random_teacher;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Moments of the stacked `(z_{0..T}, x_{0..T})` joint Gaussian.
    pub struct Joint {
        pub mean_z: DVector<f64>,
        pub mean_x: DVector<f64>,
        pub cov_zz: DMatrix<f64>,
        pub cov_xx: DMatrix<f64>,
        pub cov_zx: DMatrix<f64>,
    }

    pub fn joint(model: &LgssmModel, t_len: usize) -> Joint {
        let m = model.latent_dim();
        let n = model.n_channels();
        let mut mean_z = DVector::zeros(t_len * m);
        let mut cov_zz = DMatrix::zeros(t_len * m, t_len * m);
        let mut mu = model.mu0.clone();
        let mut p = model.sigma0.clone();
        for t in 0..t_len {
            if t > 0 {
                mu = &model.f * &mu + &model.b;
                p = &model.f * &p * model.f.transpose() + &model.g;
            }
            mean_z.rows_mut(t * m, m).copy_from(&mu);
            cov_zz.view_mut((t * m, t * m), (m, m)).copy_from(&p);
            // Cov(z_u, z_t) = F^{u-t} P_t for u > t
            let mut prop = p.clone();
            for u in t + 1..t_len {
                prop = &model.f * prop;
                cov_zz.view_mut((u * m, t * m), (m, m)).copy_from(&prop);
                cov_zz.view_mut((t * m, u * m), (m, m)).copy_from(&prop.transpose());
            }
        }
        let mut big_h = DMatrix::zeros(t_len * n, t_len * m);
        let mut big_r = DMatrix::zeros(t_len * n, t_len * n);
        let mut mean_x = DVector::zeros(t_len * n);
        for t in 0..t_len {
            big_h.view_mut((t * n, t * m), (n, m)).copy_from(&model.h);
            big_r.view_mut((t * n, t * n), (n, n)).copy_from(&model.r);
        }
        mean_x += &big_h * &mean_z;
        for t in 0..t_len {
            let mut block = mean_x.rows_mut(t * n, n);
            block += &model.c;
        }
        let cov_zx = &cov_zz * big_h.transpose();
        let cov_xx = &big_h * &cov_zx + big_r;
        Joint {
            mean_z,
            mean_x,
            cov_zz,
            cov_xx,
            cov_zx,
        }
    }

    /// Conditional moments of `z` given `x` and `log p(x)`.
    pub fn condition(j: &Joint, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, f64) {
        let lu = j.cov_xx.clone().lu();
        let d = x - &j.mean_x;
        let sinv_d = lu.solve(&d).unwrap();
        let sinv_xz = lu.solve(&j.cov_zx.transpose()).unwrap();
        let mean = &j.mean_z + &j.cov_zx * &sinv_d;
        let cov = &j.cov_zz - &j.cov_zx * sinv_xz;
        let logdet = j.cov_xx.determinant().ln();
        let ll = -0.5 * (d.dot(&sinv_d) + logdet + x.len() as f64 * (2.0 * PI).ln());
        (mean, cov, ll)
    }

    fn random_spd(r: &mut impl Rng, d: usize) -> DMatrix<f64> {
        let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(r));
        &a * a.transpose() * 0.3 + DMatrix::identity(d, d) * 0.2
    }

    pub fn random_model(r: &mut impl Rng, m: usize, n: usize) -> LgssmModel {
        let mut gauss = |rows, cols| DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *r));
        let f: DMatrix<f64> = gauss(m, m) * 0.5;
        let h = gauss(n, m);
        let mu0 = gauss(m, 1).column(0).into_owned();
        let b = gauss(m, 1).column(0).into_owned() * 0.3;
        let c = gauss(n, 1).column(0).into_owned();
        LgssmModel {
            mu0,
            sigma0: random_spd(r, m),
            f,
            b,
            g: random_spd(r, m),
            h,
            c,
            r: random_spd(r, n),
            channels: None,
        }
    }

    fn check_against_joint(model: &LgssmModel, obs: &[f64], tol: f64) -> std::result::Result<(), String> {
        let m = model.latent_dim();
        let t_len = obs.len() / model.n_channels();
        let sm = kalman_smooth(model, obs).map_err(|e| e.to_string())?;
        let j = joint(model, t_len);
        let (mean, cov, ll) = condition(&j, &DVector::from_column_slice(obs));
        if (sm.loglik - ll).abs() > tol * ll.abs().max(1.0) {
            return Err(format!("loglik {} vs {}", sm.loglik, ll));
        }
        for t in 0..t_len {
            for a in 0..m {
                if (sm.means[t][a] - mean[t * m + a]).abs() > tol {
                    return Err(format!("mean t={t}: {} vs {}", sm.means[t][a], mean[t * m + a]));
                }
                for b in 0..m {
                    if (sm.covs[t][(a, b)] - cov[(t * m + a, t * m + b)]).abs() > tol {
                        return Err(format!("cov t={t}"));
                    }
                    if t + 1 < t_len && (sm.cross[t][(a, b)] - cov[((t + 1) * m + a, t * m + b)]).abs() > tol {
                        return Err(format!("cross cov t={t}"));
                    }
                }
            }
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]
        #[test]
        fn matches_joint_gaussian_conditioning(seed in any::<u64>(), m in 1usize..=3, n in 1usize..=3, t in 1usize..=4) {
            let mut r = crate::rng::stream(seed, "kalman-oracle", 0);
            let model = random_model(&mut r, m, n);
            let obs: Vec<f64> = (0..t * n).map(|_| StandardNormal.sample(&mut r)).collect();
            prop_assert!(check_against_joint(&model, &obs, 1e-8).is_ok(), "{:?}", check_against_joint(&model, &obs, 1e-8));
            let sm = kalman_smooth(&model, &obs).unwrap();
            for p in &sm.covs {
                prop_assert!(p.clone().symmetric_eigenvalues().iter().all(|&e| e > -1e-12));
            }
        }
    }

    #[test]
    fn small_fixture_matches_joint_gaussian() {
        let mut r = crate::rng::stream(42, "kalman-fixture", 0);
        let model = random_model(&mut r, 2, 2);
        let obs = [0.3, -1.1, 0.8, 0.2, -0.4, 1.5];
        check_against_joint(&model, &obs, 1e-8).unwrap();
    }

    #[test]
    fn uninformative_observations_return_prior_means() {
        let mut model = make_random_teacher(2, 3, 1).unwrap();
        model.mu0 = DVector::from_vec(vec![0.4, -0.2]);
        model.b = DVector::from_vec(vec![0.1, 0.3]);
        model.r = DMatrix::identity(3, 3) * 1e12;
        let obs = [1.0, -2.0, 0.5, 3.0, 0.0, -1.0, 2.0, 2.0, 2.0];
        let sm = kalman_smooth(&model, &obs).unwrap();
        let mut prior = model.mu0.clone();
        for t in 0..3 {
            if t > 0 {
                prior = &model.f * &prior + &model.b;
            }
            assert!((&sm.means[t] - &prior).amax() < 1e-3);
        }
    }

    #[test]
    fn perfect_observations_are_recovered() {
        let mut model = make_random_teacher(2, 2, 1).unwrap();
        model.h = DMatrix::identity(2, 2);
        model.r = DMatrix::identity(2, 2) * 1e-12;
        let obs = [1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let sm = kalman_smooth(&model, &obs).unwrap();
        for t in 0..3 {
            for k in 0..2 {
                assert!((sm.means[t][k] - obs[2 * t + k]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn smoothing_a_dataset_uses_the_selected_channels() {
        let model = make_random_teacher(2, 4, 9).unwrap();
        let (_, x) = crate::lgssm::sample_lgssm(&model, 3, 5, 0).unwrap();
        let out = smooth_trials(&model, &x, &[2, 0], &[1, 3]).unwrap();
        let local = model.restrict(&[1, 3]).unwrap();
        let direct = kalman_smooth(&local, &gather(&x, 0, &[1, 3])).unwrap();
        assert_eq!(out.latents.trials, vec![2, 0]);
        assert_eq!(out.loglik[1], direct.loglik);
        assert_eq!(out.latents.values.row(1, 4), direct.means[4].as_slice());
        assert_eq!(out.covs.len(), 2 * 5 * 4);
    }
}
