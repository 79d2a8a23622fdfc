//! On-disk dataset directories.
//!
//! A dataset directory holds `manifest.json` plus one little-endian binary
//! tensor: `counts.bin` (u32) for spike counts or `obs.bin` (f64) for
//! real-valued observations, laid out row-major `[trial][time][channel]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, NeuronPartition, TrialSplit};
use crate::tensor::Tensor3;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Scalar types that can be stored in a dataset tensor.
pub trait Element: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const REAL_VALUED: bool;
    const FILE_NAME: &'static str;
    const WIDTH: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for u32 {
    const REAL_VALUED: bool = false;
    const FILE_NAME: &'static str = "counts.bin";
    const WIDTH: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        u32::from_le_bytes(bytes.try_into().expect("4-byte chunk"))
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const REAL_VALUED: bool = true;
    const FILE_NAME: &'static str = "obs.bin";
    const WIDTH: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte chunk"))
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    #[serde(rename = "S")]
    pub n_trials: usize,
    #[serde(rename = "T")]
    pub n_time: usize,
    #[serde(rename = "N")]
    pub n_channels: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub held_in: Vec<usize>,
    pub held_out: Vec<usize>,
    pub k_out: Vec<usize>,
    pub alias_kout: bool,
    pub seed: u64,
    #[serde(default)]
    pub real_valued: bool,
}

/// Write `contents` to `path` through a temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_dataset<T: Element>(dataset: &Dataset<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [s, t, n] = dataset.values.dims();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        n_trials: s,
        n_time: t,
        n_channels: n,
        train_indices: dataset.split.train.clone(),
        test_indices: dataset.split.test.clone(),
        held_in: dataset.partition.held_in.clone(),
        held_out: dataset.partition.held_out.clone(),
        k_out: dataset.partition.k_out.clone(),
        alias_kout: dataset.partition.alias_kout,
        seed: dataset.seed,
        real_valued: T::REAL_VALUED,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &json)?;

    let mut bytes = Vec::with_capacity(dataset.values.data().len() * T::WIDTH);
    for &v in dataset.values.data() {
        v.write_le(&mut bytes);
    }
    write_atomic(&dir.join(T::FILE_NAME), &bytes)
}

pub fn load_dataset<T: Element>(dir: &Path) -> Result<Dataset<T>> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported schema_version {}",
            manifest.schema_version
        )));
    }
    if manifest.real_valued != T::REAL_VALUED {
        return Err(Error::Format(if manifest.real_valued {
            "manifest declares real-valued observations; expected integer counts".into()
        } else {
            "manifest declares integer counts; expected real-valued observations".into()
        }));
    }

    let data_path = dir.join(T::FILE_NAME);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = manifest.n_trials * manifest.n_time * manifest.n_channels;
    if bytes.len() != expected * T::WIDTH {
        return Err(Error::Format(format!(
            "{} holds {} bytes; manifest shape {}x{}x{} needs {}",
            T::FILE_NAME,
            bytes.len(),
            manifest.n_trials,
            manifest.n_time,
            manifest.n_channels,
            expected * T::WIDTH
        )));
    }
    let data: Vec<T> = bytes.chunks_exact(T::WIDTH).map(T::read_le).collect();
    let values = Tensor3::from_vec([manifest.n_trials, manifest.n_time, manifest.n_channels], data)
        .expect("length checked above");

    let split = TrialSplit {
        train: manifest.train_indices,
        test: manifest.test_indices,
    };
    let partition = NeuronPartition {
        held_in: manifest.held_in,
        held_out: manifest.held_out,
        k_out: manifest.k_out,
        alias_kout: manifest.alias_kout,
    };
    Dataset::new(values, split, partition, manifest.seed).map_err(|e| match e {
        Error::Split(msg) => Error::Format(msg),
        other => other,
    })
}

/// Long-format CSV: `trial,time,neuron,count`.
pub fn export_csv<T: Element + std::fmt::Display>(dataset: &Dataset<T>, path: &Path) -> Result<()> {
    use std::fmt::Write;
    let [s, t, n] = dataset.values.dims();
    let mut out = String::from("trial,time,neuron,count\n");
    for i in 0..s {
        for tt in 0..t {
            for c in 0..n {
                writeln!(out, "{i},{tt},{c},{}", dataset.values.get(i, tt, c)).unwrap();
            }
        }
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{partition_neurons, split_trials};
    use proptest::prelude::*;

    fn dataset_from(values: Vec<u32>, dims: [usize; 3], seed: u64) -> Dataset<u32> {
        let split = split_trials(dims[0], dims[0] - 1, seed).unwrap();
        let partition = partition_neurons(dims[2], (1, dims[2] - 1, 0), true, seed).unwrap();
        Dataset::new(Tensor3::from_vec(dims, values).unwrap(), split, partition, seed).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn save_load_identity(s in 2usize..5, t in 1usize..4, n in 2usize..5, seed in any::<u64>(),
                              fill in proptest::collection::vec(0u32..1000, 80)) {
            let dims = [s, t, n];
            let values: Vec<u32> = fill.iter().cycle().take(s * t * n).copied().collect();
            let ds = dataset_from(values, dims, seed);
            let dir = tempfile::tempdir().unwrap();
            save_dataset(&ds, dir.path()).unwrap();
            let back: Dataset<u32> = load_dataset(dir.path()).unwrap();
            prop_assert_eq!(back, ds);
        }
    }

    #[test]
    fn real_valued_round_trip() {
        let split = split_trials(3, 2, 0).unwrap();
        let partition = partition_neurons(2, (1, 1, 0), true, 0).unwrap();
        let values = Tensor3::from_vec([3, 1, 2], vec![0.5, -1.25, 3.0, 1e-300, f64::MAX, 0.0]).unwrap();
        let ds = Dataset::new(values, split, partition, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert!(dir.path().join("obs.bin").exists());
        let back: Dataset<f64> = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert!(matches!(load_dataset::<u32>(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn shape_mismatch_is_a_format_error() {
        let ds = dataset_from(vec![1; 10 * 2 * 3], [10, 2, 3], 0);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        // drop one trial's worth of entries
        let bytes = fs::read(dir.path().join("counts.bin")).unwrap();
        fs::write(dir.path().join("counts.bin"), &bytes[..9 * 2 * 3 * 4]).unwrap();
        assert!(matches!(load_dataset::<u32>(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn hand_written_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = r#"{
  "schema_version": 1, "S": 1, "T": 2, "N": 1,
  "train_indices": [0], "test_indices": [],
  "held_in": [0], "held_out": [], "k_out": [], "alias_kout": true, "seed": 0
}"#;
        fs::write(dir.path().join("manifest.json"), manifest).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        fs::write(dir.path().join("counts.bin"), bytes).unwrap();
        let ds: Dataset<u32> = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.values.dims(), [1, 2, 1]);
        assert_eq!(ds.values.data(), &[3, 0]);
    }

    #[test]
    fn csv_export_lists_every_entry() {
        let ds = dataset_from(vec![0, 1, 2, 3, 4, 5, 6, 7], [2, 2, 2], 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.csv");
        export_csv(&ds, &path).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "trial,time,neuron,count");
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[8], "1,1,1,7");
    }
}
