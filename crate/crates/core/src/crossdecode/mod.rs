//! Cross-decoding between latent representations and cycle consistency.

mod linear;
mod multinomial;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentTrajectories;
use crate::registry::Registry;
use crate::rng;

pub use linear::{affine_r2, cross_decode_linear, cycle_consistency, r2_uniform, R2};
pub use multinomial::{cross_decode_hmm, MultinomialDecode, MultinomialOptions, DEFAULT_L2, KL_FLOOR};

/// Decoding error from one latent representation to another.
pub trait CrossDecoder: Send + Sync {
    fn name(&self) -> &'static str;

    fn decode(&self, source: &LatentTrajectories, target: &LatentTrajectories, seed: u64) -> Result<f64>;
}

/// `1 - R^2` of an affine least-squares map.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearR2;

impl CrossDecoder for LinearR2 {
    fn name(&self) -> &'static str {
        "linear-r2"
    }

    fn decode(&self, source: &LatentTrajectories, target: &LatentTrajectories, _seed: u64) -> Result<f64> {
        cross_decode_linear(source, target)
    }
}

/// Mean KL divergence of a multinomial regression onto sampled target states.
#[derive(Debug, Clone, Copy, Default)]
pub struct MultinomialKl(pub MultinomialOptions);

impl CrossDecoder for MultinomialKl {
    fn name(&self) -> &'static str {
        "multinomial-kl"
    }

    fn decode(&self, source: &LatentTrajectories, target: &LatentTrajectories, seed: u64) -> Result<f64> {
        Ok(cross_decode_hmm(source, target, seed, &self.0)?.d)
    }
}

pub fn decoder_registry(opts: MultinomialOptions) -> Registry<dyn CrossDecoder> {
    let mut r: Registry<dyn CrossDecoder> = Registry::new("cross-decoder");
    r.register("linear-r2", Arc::new(LinearR2))
        .register("multinomial-kl", Arc::new(MultinomialKl(opts)));
    r
}

pub fn decoder(name: &str) -> Result<Arc<dyn CrossDecoder>> {
    decoder_registry(MultinomialOptions::default()).get(name)
}

/// `d[u][v]` is the error of decoding model `v`'s latents from model `u`'s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDecodeMatrix {
    pub model_ids: Vec<String>,
    pub d: Vec<Vec<f64>>,
    pub method: String,
}

/// All ordered pairs, including the diagonal.
pub fn cross_decode_matrix(
    ids: &[String],
    latents: &[&LatentTrajectories],
    decoder: &dyn CrossDecoder,
    seed: u64,
) -> Result<CrossDecodeMatrix> {
    let u = latents.len();
    if u < 2 || ids.len() != u {
        return Err(Error::Invalid("cross-decoding needs at least two labelled models".into()));
    }
    let flat = (0..u * u)
        .into_par_iter()
        .map(|p| {
            let pair_seed = rng::derive_seed(seed, "cross-decode-pair", p as u64);
            decoder.decode(latents[p / u], latents[p % u], pair_seed)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CrossDecodeMatrix {
        model_ids: ids.to_vec(),
        d: flat.chunks(u).map(<[f64]>::to_vec).collect(),
        method: decoder.name().to_string(),
    })
}

impl CrossDecodeMatrix {
    /// Mean of each column over the other models as sources.
    pub fn column_averages(&self) -> Vec<f64> {
        let u = self.d.len();
        (0..u)
            .map(|v| (0..u).filter(|&s| s != v).map(|s| self.d[s][v]).sum::<f64>() / (u - 1) as f64)
            .collect()
    }

    /// Rows `source_id,target_id,method,D`.
    pub fn to_csv(&self) -> Result<String> {
        let rows = self.model_ids.iter().zip(&self.d).flat_map(|(a, row)| {
            self.model_ids
                .iter()
                .zip(row)
                .map(move |(b, v)| (a, b, &self.method, v))
        });
        crate::csvout::to_csv(&["source_id", "target_id", "method", "D"], rows)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Report<'a> {
            #[serde(flatten)]
            matrix: &'a CrossDecodeMatrix,
            column_averages: Vec<f64>,
        }
        Ok(serde_json::to_string_pretty(&Report {
            matrix: self,
            column_averages: self.column_averages(),
        })?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleScore {
    pub model_id: String,
    pub d_r_to_z: f64,
}
