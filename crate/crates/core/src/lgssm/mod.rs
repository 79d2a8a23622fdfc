//! Linear-Gaussian state-space models.
//!
//! `z_0 ~ N(mu0, sigma0)`, `z_t ~ N(F z_{t-1} + b, G)` and
//! `x_t ~ N(H z_t + c, R)`, with an observation at every step including
//! `t = 0`.

mod em;
mod kalman;
mod sample;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::io::write_atomic;
use crate::error::{Error, Result};
use crate::latent::LatentTrajectories;
use crate::linalg::cholesky_jitter;
use crate::rng;
use crate::tensor::Tensor3;

pub use em::{fit_em, EmFit, EmOptions};
pub use kalman::{kalman_smooth, smooth_trials, GaussianTrajectory, TrialSmooth};
pub use sample::sample_lgssm;

/// Spectral radius of a random teacher's dynamics matrix.
pub const TEACHER_RADIUS: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct LgssmModel {
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub r: DMatrix<f64>,
    /// Dataset channel of each observation row; `None` means row `n` is
    /// channel `n`.
    pub channels: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    mu0: Vec<f64>,
    #[serde(rename = "Sigma0")]
    sigma0: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    b: Vec<f64>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    c: Vec<f64>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<Vec<usize>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{what} is not {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::Format(format!("{what} has length {}, expected {len}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

impl LgssmModel {
    pub fn latent_dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn n_channels(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.latent_dim();
        let n = self.n_channels();
        let shapes = [
            (self.sigma0.shape(), (m, m), "Sigma0"),
            (self.f.shape(), (m, m), "F"),
            ((self.b.len(), 1), (m, 1), "b"),
            (self.g.shape(), (m, m), "G"),
            (self.h.shape(), (n, m), "H"),
            (self.r.shape(), (n, n), "R"),
        ];
        for (got, want, what) in shapes {
            if got != want {
                return Err(Error::Invalid(format!("{what} has shape {got:?}, expected {want:?}")));
            }
        }
        for (cov, what) in [(&self.sigma0, "Sigma0"), (&self.g, "G"), (&self.r, "R")] {
            if (cov - cov.transpose()).amax() > 1e-9 * cov.amax().max(1.0) {
                return Err(Error::Covariance(format!("{what} is not symmetric")));
            }
            if cov.iter().any(|v| *v != 0.0) && cholesky_jitter(cov).is_none() {
                return Err(Error::Covariance(format!("{what} is not positive semidefinite")));
            }
        }
        if let Some(ch) = &self.channels {
            if ch.len() != n {
                return Err(Error::Invalid("channel map length differs from H".into()));
            }
        }
        Ok(())
    }

    pub fn channel_of(&self, row: usize) -> usize {
        self.channels.as_ref().map_or(row, |c| c[row])
    }

    pub fn row_of(&self, channel: usize) -> Result<usize> {
        match &self.channels {
            Some(c) => c.iter().position(|&x| x == channel),
            None => (channel < self.n_channels()).then_some(channel),
        }
        .ok_or(Error::Index { channel })
    }

    /// Same dynamics with observations limited to the given dataset channels.
    pub fn restrict(&self, channels: &[usize]) -> Result<LgssmModel> {
        let idx = channels
            .iter()
            .map(|&c| self.row_of(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(LgssmModel {
            h: self.h.select_rows(&idx),
            c: self.c.select_rows(&idx),
            r: self.r.select_rows(&idx).select_columns(&idx),
            channels: Some(channels.to_vec()),
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            schema_version: crate::datamodel::SCHEMA_VERSION,
            m: self.latent_dim(),
            n: self.n_channels(),
            mu0: self.mu0.iter().copied().collect(),
            sigma0: rows(&self.sigma0),
            f: rows(&self.f),
            b: self.b.iter().copied().collect(),
            g: rows(&self.g),
            h: rows(&self.h),
            c: self.c.iter().copied().collect(),
            r: rows(&self.r),
            channels: self.channels.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let (m, n) = (file.m, file.n);
        let model = LgssmModel {
            mu0: vector(&file.mu0, m, "mu0")?,
            sigma0: from_rows(&file.sigma0, m, m, "Sigma0")?,
            f: from_rows(&file.f, m, m, "F")?,
            b: vector(&file.b, m, "b")?,
            g: from_rows(&file.g, m, m, "G")?,
            h: from_rows(&file.h, n, m, "H")?,
            c: vector(&file.c, n, "c")?,
            r: from_rows(&file.r, n, n, "R")?,
            channels: file.channels,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random teacher: standard-normal `F` rescaled to spectral radius 0.95,
/// `G = R = 0.1 I`, standard-normal `H`, `mu0 = 0`, `Sigma0 = I`, `b = c = 0`.
pub fn make_random_teacher(m: usize, n: usize, seed: u64) -> Result<LgssmModel> {
    if m == 0 || n == 0 {
        return Err(Error::Invalid(format!("teacher dimensions must be positive, got M={m}, N={n}")));
    }
    let mut r = rng::stream(seed, "lgssm-teacher", 0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut r) };
    let f = DMatrix::from_fn(m, m, |_, _| normal());
    let h = DMatrix::from_fn(n, m, |_, _| normal());
    let rho = spectral_radius(&f);
    let f = if rho > 0.0 { f * (TEACHER_RADIUS / rho) } else { f };
    Ok(LgssmModel {
        mu0: DVector::zeros(m),
        sigma0: DMatrix::identity(m, m),
        f,
        b: DVector::zeros(m),
        g: DMatrix::identity(m, m) * 0.1,
        h,
        c: DVector::zeros(n),
        r: DMatrix::identity(n, n) * 0.1,
        channels: None,
    })
}

/// Predicted observation means `H z + c` for dataset `channels`.
pub fn predict_obs_means(model: &LgssmModel, means: &LatentTrajectories, channels: &[usize]) -> Result<Tensor3<f64>> {
    let idx = channels
        .iter()
        .map(|&c| model.row_of(c))
        .collect::<Result<Vec<_>>>()?;
    let h = model.h.select_rows(&idx);
    let c = model.c.select_rows(&idx);
    let [s, t_len, m] = means.values.dims();
    assert_eq!(m, model.latent_dim(), "latent dimension mismatch");
    let mut out = Tensor3::zeros(s, t_len, idx.len());
    for i in 0..s {
        for t in 0..t_len {
            let z = DVector::from_column_slice(means.values.row(i, t));
            let x = &h * z + &c;
            let off = out.offset(i, t, 0);
            out.data_mut()[off..off + idx.len()].copy_from_slice(x.as_slice());
        }
    }
    Ok(out)
}
