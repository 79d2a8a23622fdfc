use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use super::HmmModel;
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor3;

struct PathSampler {
    init: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
}

impl PathSampler {
    fn new(model: &HmmModel) -> Self {
        let dist = |p: &[f64]| WeightedIndex::new(p).expect("validated probability vector");
        PathSampler {
            init: dist(&model.pi),
            rows: model.a.iter().map(|r| dist(r)).collect(),
        }
    }

    fn path(&self, t: usize, r: &mut StreamRng) -> Vec<usize> {
        let mut z = Vec::with_capacity(t);
        if t > 0 {
            z.push(self.init.sample(r));
        }
        for s in 1..t {
            z.push(self.rows[z[s - 1]].sample(r));
        }
        z
    }
}

/// Sample `s` state paths of length `t` without emissions.
pub fn sample_paths(model: &HmmModel, s: usize, t: usize, seed: u64) -> Vec<Vec<usize>> {
    let sampler = PathSampler::new(model);
    (0..s)
        .into_par_iter()
        .map(|i| sampler.path(t, &mut rng::stream(seed, "hmm-path", i as u64)))
        .collect()
}

/// Sample `s` trials of length `t`: state paths and binary spike counts over
/// every emission column of the model.
pub fn sample_hmm(model: &HmmModel, s: usize, t: usize, seed: u64) -> (Vec<Vec<usize>>, Tensor3<u32>) {
    let sampler = PathSampler::new(model);
    let n = model.n_channels();
    let trials: Vec<(Vec<usize>, Vec<u32>)> = (0..s)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, "hmm-sample", i as u64);
            let z = sampler.path(t, &mut r);
            let mut x = Vec::with_capacity(t * n);
            for &state in &z {
                let b = &model.b[state];
                x.extend(b.iter().map(|&p| (r.random::<f64>() < p) as u32));
            }
            (z, x)
        })
        .collect();
    let mut paths = Vec::with_capacity(s);
    let mut data = Vec::with_capacity(s * t * n);
    for (z, x) in trials {
        paths.push(z);
        data.extend(x);
    }
    (paths, Tensor3::from_vec([s, t, n], data).expect("consistent sample shape"))
}
