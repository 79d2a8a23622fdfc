use serde::{Deserialize, Serialize};

use crate::crossdecode::{decoder_registry, MultinomialOptions};
use crate::error::{Error, Result};
use crate::metrics::{family, FewShotRegressorSpec};
use crate::theory::TheorySweep;

/// Top-level experiment file, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    HmmStudentTeacher(StudyConfig<HmmGenerator>),
    LgssmStudentTeacher(StudyConfig<LgssmGenerator>),
    TheorySweep(SweepConfig),
    HardCosmoothingControl(ControlConfig),
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::HmmStudentTeacher(c) => c.seed,
            ExperimentConfig::LgssmStudentTeacher(c) => c.seed,
            ExperimentConfig::TheorySweep(c) => c.seed,
            ExperimentConfig::HardCosmoothingControl(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ExperimentConfig::HmmStudentTeacher(c) => c.seed = seed,
            ExperimentConfig::LgssmStudentTeacher(c) => c.seed = seed,
            ExperimentConfig::TheorySweep(c) => c.seed = seed,
            ExperimentConfig::HardCosmoothingControl(c) => c.seed = seed,
        }
    }

    pub fn output_dir(&self) -> Option<&str> {
        match self {
            ExperimentConfig::HmmStudentTeacher(c) => c.output_dir.as_deref(),
            ExperimentConfig::LgssmStudentTeacher(c) => c.output_dir.as_deref(),
            ExperimentConfig::TheorySweep(c) => c.output_dir.as_deref(),
            ExperimentConfig::HardCosmoothingControl(c) => c.output_dir.as_deref(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExperimentConfig::HmmStudentTeacher(c) => c.validate(),
            ExperimentConfig::LgssmStudentTeacher(c) => c.validate(),
            ExperimentConfig::TheorySweep(_) => Ok(()),
            ExperimentConfig::HardCosmoothingControl(c) => c.validate(),
        }
    }
}

/// Channel counts of a neuron partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSizes {
    pub held_in: usize,
    pub held_out: usize,
    pub k_out: usize,
    #[serde(default)]
    pub alias_kout: bool,
}

impl PartitionSizes {
    pub fn required_channels(&self) -> usize {
        if self.alias_kout {
            self.held_in + self.held_out
        } else {
            self.held_in + self.held_out + self.k_out
        }
    }

    pub fn validate(&self, n_channels: usize) -> Result<()> {
        if self.held_in == 0 || self.held_out == 0 || (!self.alias_kout && self.k_out == 0) {
            return Err(Error::Config("every channel group needs at least one channel".into()));
        }
        if self.required_channels() > n_channels {
            return Err(Error::Config(format!(
                "partition needs {} channels but the generator has {n_channels}",
                self.required_channels()
            )));
        }
        Ok(())
    }
}

/// Shared trial-layout fields of both generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialLayout {
    pub n_trials: usize,
    pub n_train: usize,
    pub n_time: usize,
}

impl TrialLayout {
    fn validate(&self) -> Result<()> {
        if self.n_time == 0 {
            return Err(Error::Config("n_time must be at least 1".into()));
        }
        if self.n_train == 0 || self.n_train >= self.n_trials {
            return Err(Error::Config(format!(
                "need 0 < n_train < n_trials, got {} and {}",
                self.n_train, self.n_trials
            )));
        }
        Ok(())
    }
}

/// Noisy-cycle HMM teacher with Bernoulli emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmGenerator {
    pub n_states: usize,
    pub epsilon: f64,
    pub n_channels: usize,
    #[serde(flatten)]
    pub layout: TrialLayout,
    pub partition: PartitionSizes,
}

impl HmmGenerator {
    /// Synthetic HMM dimensions: 2000/100 trials of 10 bins, 20 held-in,
    /// 50 held-out and 50 disjoint k-out channels.
    pub fn reference() -> Self {
        HmmGenerator {
            n_states: 4,
            epsilon: 1e-2,
            n_channels: 120,
            layout: TrialLayout {
                n_trials: 2100,
                n_train: 2000,
                n_time: 10,
            },
            partition: PartitionSizes {
                held_in: 20,
                held_out: 50,
                k_out: 50,
                alias_kout: false,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_states < 2 || !(self.epsilon > 0.0) {
            return Err(Error::Config("teacher needs >= 2 states and epsilon > 0".into()));
        }
        self.layout.validate()?;
        self.partition.validate(self.n_channels)
    }
}

/// Random stable LGSSM teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LgssmGenerator {
    pub latent_dim: usize,
    pub n_channels: usize,
    #[serde(flatten)]
    pub layout: TrialLayout,
    pub partition: PartitionSizes,
}

impl LgssmGenerator {
    /// Synthetic LGSSM dimensions: 20/500 trials of 10 bins, 5 held-in,
    /// 30 held-out and 30 disjoint k-out channels.
    pub fn reference() -> Self {
        LgssmGenerator {
            latent_dim: 4,
            n_channels: 65,
            layout: TrialLayout {
                n_trials: 520,
                n_train: 20,
                n_time: 10,
            },
            partition: PartitionSizes {
                held_in: 5,
                held_out: 30,
                k_out: 30,
                alias_kout: false,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        self.layout.validate()?;
        self.partition.validate(self.n_channels)
    }
}

/// Student population: every latent size in `states` times `restarts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentSweep {
    pub states: Vec<usize>,
    pub restarts: usize,
    pub n_iters: usize,
    #[serde(default)]
    pub tol: f64,
}

impl StudentSweep {
    fn validate(&self) -> Result<()> {
        if self.states.is_empty() || self.restarts == 0 || self.n_iters == 0 {
            return Err(Error::Config("student sweep needs states, restarts >= 1 and n_iters >= 1".into()));
        }
        if self.states.contains(&0) {
            return Err(Error::Config("student latent size must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config("tol must be non-negative".into()));
        }
        Ok(())
    }

    /// `(id, states, restart)` for every student, in a fixed order.
    pub fn members(&self) -> Vec<(String, usize, usize)> {
        self.states
            .iter()
            .flat_map(|&m| (0..self.restarts).map(move |r| (format!("m{m:02}-r{r}"), m, r)))
            .collect()
    }
}

/// Which students count as "high co-smoothing".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HighScoreFilter {
    /// `score > teacher_score - margin`.
    Absolute { margin: f64 },
    /// `score > fraction * max(student scores)`.
    Relative { fraction: f64 },
}

impl HighScoreFilter {
    pub fn threshold(&self, teacher: Option<f64>, students: &[f64]) -> Result<f64> {
        match *self {
            HighScoreFilter::Absolute { margin } => teacher
                .map(|t| t - margin)
                .ok_or_else(|| Error::Config("absolute filter needs a teacher score".into())),
            HighScoreFilter::Relative { fraction } => {
                let max = students.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !(max > 0.0) {
                    return Err(Error::Config(format!("relative filter needs a positive best score, got {max}")));
                }
                Ok(fraction * max)
            }
        }
    }
}

fn default_multinomial() -> MultinomialOptions {
    MultinomialOptions::default()
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    /// Shots per few-shot subset.
    pub k: usize,
    /// Number of subsets; `floor(5 S_train / k)` when absent.
    #[serde(default)]
    pub resamples: Option<usize>,
    pub regressor: FewShotRegressorSpec,
    /// Likelihood family for co-smoothing.
    pub family: String,
    /// Registered cross-decoder name.
    pub cross_decoder: String,
    #[serde(default = "default_multinomial")]
    pub multinomial: MultinomialOptions,
    pub filter: HighScoreFilter,
}

impl MetricParams {
    pub fn hmm_reference() -> Self {
        MetricParams {
            k: 2,
            resamples: None,
            regressor: FewShotRegressorSpec::named("bernoulli-mle"),
            family: "bernoulli".into(),
            cross_decoder: "multinomial-kl".into(),
            multinomial: MultinomialOptions::default(),
            filter: HighScoreFilter::Absolute { margin: 1e-3 },
        }
    }

    pub fn lgssm_reference() -> Self {
        MetricParams {
            k: 10,
            resamples: None,
            regressor: FewShotRegressorSpec::named("linear-lsq"),
            family: "gaussian".into(),
            cross_decoder: "linear-r2".into(),
            multinomial: MultinomialOptions::default(),
            filter: HighScoreFilter::Absolute { margin: 1.0 },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.resamples == Some(0) {
            return Err(Error::Config("k and resamples must be at least 1".into()));
        }
        self.regressor.validate()?;
        crate::metrics::build_regressor(&self.regressor)?;
        family(&self.family)?;
        decoder_registry(self.multinomial).get(&self.cross_decoder)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig<G> {
    pub seed: u64,
    pub generator: G,
    pub students: StudentSweep,
    pub metrics: MetricParams,
    #[serde(default)]
    pub output_dir: Option<String>,
}

pub trait GeneratorConfig {
    fn layout(&self) -> &TrialLayout;
    fn validate_generator(&self) -> Result<()>;
}

impl GeneratorConfig for HmmGenerator {
    fn layout(&self) -> &TrialLayout {
        &self.layout
    }
    fn validate_generator(&self) -> Result<()> {
        self.validate()
    }
}

impl GeneratorConfig for LgssmGenerator {
    fn layout(&self) -> &TrialLayout {
        &self.layout
    }
    fn validate_generator(&self) -> Result<()> {
        self.validate()
    }
}

impl<G: GeneratorConfig> StudyConfig<G> {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate_generator()?;
        self.students.validate()?;
        self.metrics.validate()?;
        if self.metrics.k > self.generator.layout().n_train {
            return Err(Error::Config(format!(
                "k = {} exceeds the {} train trials",
                self.metrics.k,
                self.generator.layout().n_train
            )));
        }
        Ok(())
    }
}

impl StudyConfig<HmmGenerator> {
    pub fn hmm_reference(seed: u64) -> Self {
        StudyConfig {
            seed,
            generator: HmmGenerator::reference(),
            students: StudentSweep {
                states: (4..=12).collect(),
                restarts: 3,
                n_iters: 100,
                tol: 1e-6,
            },
            metrics: MetricParams::hmm_reference(),
            output_dir: None,
        }
    }
}

impl StudyConfig<LgssmGenerator> {
    pub fn lgssm_reference(seed: u64) -> Self {
        StudyConfig {
            seed,
            generator: LgssmGenerator::reference(),
            students: StudentSweep {
                states: (2..=8).collect(),
                restarts: 3,
                n_iters: 200,
                tol: 1e-7,
            },
            metrics: MetricParams::lgssm_reference(),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub seed: u64,
    #[serde(flatten)]
    pub sweep: TheorySweep,
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// One re-partitioning of the control dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlVariant {
    pub name: String,
    pub partition: PartitionSizes,
}

/// A base study plus harder co-smoothing variants on the same teacher and
/// samples. The generator's own partition is the base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub seed: u64,
    pub generator: HmmGenerator,
    pub students: StudentSweep,
    pub metrics: MetricParams,
    pub variants: Vec<ControlVariant>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ControlConfig {
    pub fn reference(seed: u64) -> Self {
        let mut generator = HmmGenerator::reference();
        generator.n_channels = 170;
        let base = StudyConfig::hmm_reference(seed);
        ControlConfig {
            seed,
            generator,
            students: base.students,
            metrics: base.metrics,
            variants: vec![
                ControlVariant {
                    name: "more-held-out".into(),
                    partition: PartitionSizes {
                        held_in: 20,
                        held_out: 100,
                        k_out: 50,
                        alias_kout: false,
                    },
                },
                ControlVariant {
                    name: "few-held-in".into(),
                    partition: PartitionSizes {
                        held_in: 5,
                        held_out: 5,
                        k_out: 50,
                        alias_kout: false,
                    },
                },
            ],
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.as_study(&self.generator.partition).validate()?;
        let mut names: Vec<&str> = vec!["base"];
        for v in &self.variants {
            if names.contains(&v.name.as_str()) || v.name.is_empty() || v.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid or duplicate variant name '{}'", v.name)));
            }
            names.push(&v.name);
            v.partition.validate(self.generator.n_channels)?;
        }
        Ok(())
    }

    /// The study run for one partition of the shared dataset.
    pub fn as_study(&self, partition: &PartitionSizes) -> StudyConfig<HmmGenerator> {
        let mut generator = self.generator.clone();
        generator.partition = *partition;
        StudyConfig {
            seed: self.seed,
            generator,
            students: self.students.clone(),
            metrics: self.metrics.clone(),
            output_dir: None,
        }
    }
}
