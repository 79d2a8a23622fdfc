use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::LgssmModel;
use crate::error::Result;
use crate::linalg::sqrt_psd;
use crate::rng;
use crate::tensor::Tensor3;

/// Ancestral sampling of `s` trials of length `t`. Returns latent paths
/// (`S x T x M`) and observations (`S x T x N`).
pub fn sample_lgssm(model: &LgssmModel, s: usize, t: usize, seed: u64) -> Result<(Tensor3<f64>, Tensor3<f64>)> {
    let l0 = sqrt_psd(&model.sigma0, "Sigma0")?;
    let lg = sqrt_psd(&model.g, "G")?;
    let lr = sqrt_psd(&model.r, "R")?;
    let m = model.latent_dim();
    let n = model.n_channels();
    let trials: Vec<(Vec<f64>, Vec<f64>)> = (0..s)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, "lgssm-sample", i as u64);
            let mut noise = |d: usize| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
            let mut zs = Vec::with_capacity(t * m);
            let mut xs = Vec::with_capacity(t * n);
            let mut z = &model.mu0 + &l0 * noise(m);
            for step in 0..t {
                if step > 0 {
                    z = &model.f * &z + &model.b + &lg * noise(m);
                }
                let x = &model.h * &z + &model.c + &lr * noise(n);
                zs.extend(z.iter());
                xs.extend(x.iter());
            }
            (zs, xs)
        })
        .collect();
    let mut zs = Vec::with_capacity(s * t * m);
    let mut xs = Vec::with_capacity(s * t * n);
    for (z, x) in trials {
        zs.extend(z);
        xs.extend(x);
    }
    Ok((
        Tensor3::from_vec([s, t, m], zs).expect("latent shape"),
        Tensor3::from_vec([s, t, n], xs).expect("observation shape"),
    ))
}
