//! Dataset tensors, trial and neuron partitions, and k-shot resampling plans.

pub(crate) mod io;

pub use io::{export_csv, load_dataset, save_dataset, Element, Manifest, SCHEMA_VERSION};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor::Tensor3;
use crate::{Error, Result};

/// Default number of Monte Carlo subsets probed by [`min_viable_k`].
pub const DEFAULT_PROBES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl TrialSplit {
    /// Checks that train and test are disjoint and cover `0..n_trials`.
    pub fn validate(&self, n_trials: usize) -> Result<()> {
        let mut seen = vec![false; n_trials];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n_trials {
                return Err(Error::Split(format!("trial {i} out of range 0..{n_trials}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Split(format!("trial {i} listed twice")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Split(format!("trial {i} is neither train nor test")));
        }
        Ok(())
    }
}

/// Held-in, held-out and k-out channel sets.
///
/// When `alias_kout` is set, `k_out` is the same set as `held_out`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronPartition {
    pub held_in: Vec<usize>,
    pub held_out: Vec<usize>,
    pub k_out: Vec<usize>,
    pub alias_kout: bool,
}

impl NeuronPartition {
    pub fn validate(&self, n_channels: usize) -> Result<()> {
        let all = self.held_in.iter().chain(&self.held_out).chain(&self.k_out);
        if let Some(&c) = all.clone().find(|&&c| c >= n_channels) {
            return Err(Error::Format(format!("channel {c} out of range 0..{n_channels}")));
        }
        if self.held_in.iter().any(|c| self.held_out.contains(c)) {
            return Err(Error::Format("held-in and held-out channels overlap".into()));
        }
        if self.alias_kout {
            if self.k_out != self.held_out {
                return Err(Error::Format("aliased k-out must equal held-out".into()));
            }
        } else if self
            .k_out
            .iter()
            .any(|c| self.held_in.contains(c) || self.held_out.contains(c))
        {
            return Err(Error::Format("disjoint k-out overlaps another partition".into()));
        }
        Ok(())
    }

    /// Held-in followed by held-out: the channels a student is trained on.
    pub fn training_channels(&self) -> Vec<usize> {
        self.held_in.iter().chain(&self.held_out).copied().collect()
    }
}

/// Trials x time x channel observations with their partitions.
///
/// `T` is `u32` for spike counts and `f64` for real-valued observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub values: Tensor3<T>,
    pub split: TrialSplit,
    pub partition: NeuronPartition,
    pub seed: u64,
}

pub type SpikeDataset = Dataset<u32>;
pub type GaussianDataset = Dataset<f64>;

impl<T: Copy> Dataset<T> {
    pub fn new(values: Tensor3<T>, split: TrialSplit, partition: NeuronPartition, seed: u64) -> Result<Self> {
        let [s, t, n] = values.dims();
        if s == 0 || t == 0 || n == 0 {
            return Err(Error::Format(format!("empty dataset dimensions {s}x{t}x{n}")));
        }
        split.validate(s)?;
        partition.validate(n)?;
        Ok(Self {
            values,
            split,
            partition,
            seed,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn n_time(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn n_channels(&self) -> usize {
        self.values.dims()[2]
    }
}

impl SpikeDataset {
    /// Per-trial spike totals of one channel.
    fn trial_totals(&self, channel: usize) -> Vec<u64> {
        (0..self.n_trials())
            .map(|i| (0..self.n_time()).map(|t| self.values.get(i, t, channel) as u64).sum())
            .collect()
    }
}

/// Draw a uniformly random neuron partition.
///
/// With `alias_kout` the k-out set is the held-out set and `sizes.2` is
/// ignored.
pub fn partition_neurons(
    n_channels: usize,
    sizes: (usize, usize, usize),
    alias_kout: bool,
    seed: u64,
) -> Result<NeuronPartition> {
    let (n_in, n_out, n_kout) = sizes;
    let requested = if alias_kout { n_in + n_out } else { n_in + n_out + n_kout };
    if requested > n_channels {
        return Err(Error::PartitionSize {
            requested,
            available: n_channels,
        });
    }
    let mut order: Vec<usize> = (0..n_channels).collect();
    order.shuffle(&mut rng::stream(seed, "partition-neurons", 0));
    let take = |from: usize, len: usize| {
        let mut v = order[from..from + len].to_vec();
        v.sort_unstable();
        v
    };
    let held_in = take(0, n_in);
    let held_out = take(n_in, n_out);
    let k_out = if alias_kout { held_out.clone() } else { take(n_in + n_out, n_kout) };
    Ok(NeuronPartition {
        held_in,
        held_out,
        k_out,
        alias_kout,
    })
}

pub fn split_trials(n_trials: usize, n_train: usize, seed: u64) -> Result<TrialSplit> {
    if n_train == 0 || n_train >= n_trials {
        return Err(Error::Split(format!(
            "need 0 < n_train < n_trials, got n_train={n_train}, n_trials={n_trials}"
        )));
    }
    let mut order: Vec<usize> = (0..n_trials).collect();
    order.shuffle(&mut rng::stream(seed, "split-trials", 0));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(TrialSplit { train, test })
}

/// `s` subsets of `k` distinct train trials each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KShotPlan {
    pub k: usize,
    pub s: usize,
    pub subsets: Vec<Vec<usize>>,
    pub seed: u64,
}

impl KShotPlan {
    /// `floor(5 * S_train / k)`.
    pub fn default_resamples(n_train: usize, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            5 * n_train / k
        }
    }

    /// Plan with an explicit number of resamples.
    ///
    /// Subsets are drawn without replacement inside a subset and
    /// independently across subsets, so two subsets may share trials.
    pub fn with_resamples(train: &[usize], k: usize, s: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > train.len() {
            return Err(Error::Plan(format!("k={k} must lie in 1..={}", train.len())));
        }
        if s == 0 {
            return Err(Error::Plan("zero resamples".into()));
        }
        let subsets = (0..s)
            .map(|j| {
                let mut r = rng::stream(seed, "kshot-subset", j as u64);
                let mut subset: Vec<usize> = index::sample(&mut r, train.len(), k)
                    .into_iter()
                    .map(|p| train[p])
                    .collect();
                subset.sort_unstable();
                subset
            })
            .collect();
        Ok(Self { k, s, subsets, seed })
    }
}

/// Plan with the default `floor(5 * S_train / k)` resamples.
pub fn build_kshot_plan<T: Copy>(dataset: &Dataset<T>, k: usize, seed: u64) -> Result<KShotPlan> {
    let train = &dataset.split.train;
    if k == 0 || k > train.len() {
        return Err(Error::Plan(format!("k={k} must lie in 1..={}", train.len())));
    }
    KShotPlan::with_resamples(train, k, KShotPlan::default_resamples(train.len(), k), seed)
}

/// Smallest k for which none of `n_probe` random k-subsets of train trials
/// leaves a k-out neuron without spikes.
///
/// The probe subsets for a given k depend only on `(seed, k)` and the number
/// of train trials, so thinning spikes can never lower the result.
pub fn min_viable_k(dataset: &SpikeDataset, n_probe: usize, seed: u64) -> Result<usize> {
    let train = &dataset.split.train;
    if train.is_empty() {
        return Err(Error::Plan("dataset has no train trials".into()));
    }
    // silent[n][j]: k-out neuron n has no spikes in train trial j
    let mut silent = Vec::with_capacity(dataset.partition.k_out.len());
    for &n in &dataset.partition.k_out {
        let totals = dataset.trial_totals(n);
        let row: Vec<bool> = train.iter().map(|&i| totals[i] == 0).collect();
        if row.iter().all(|&s| s) {
            return Err(Error::UnusableNeuron { neuron: n });
        }
        silent.push(row);
    }
    let n_train = train.len();
    for k in 1..n_train {
        let viable = (0..n_probe).all(|probe| {
            let mut r = rng::stream(seed, "min-viable-k", ((k as u64) << 32) | probe as u64);
            let picks = index::sample(&mut r, n_train, k);
            silent
                .iter()
                .all(|row| picks.iter().any(|j| !row[j]))
        });
        if viable {
            return Ok(k);
        }
    }
    Ok(n_train)
}
