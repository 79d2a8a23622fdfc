use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::glm::{poisson_glm_fit, PoissonGlm, PoissonGlmFit, DEFAULT_L2_ALPHA};
use super::linreg::{linreg_fit, LinRegMode, LinearFit};
use super::{cosmoothing_q_with, null_rates, LikelihoodFamily, NullBaseline, RATE_FLOOR};
use crate::datamodel::{Dataset, Element, KShotPlan};
use crate::error::{Error, Result};
use crate::hmm::{bernoulli_readout, fewshot_emission_mle};
use crate::latent::{LatentKind, LatentTrajectories};
use crate::registry::Registry;
use crate::stats::mean_sem;
use crate::tensor::Tensor3;

fn default_alpha() -> f64 {
    DEFAULT_L2_ALPHA
}

fn default_floor() -> f64 {
    RATE_FLOOR
}

/// Which few-shot decoder to fit and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotRegressorSpec {
    /// Registered regressor name: `bernoulli-mle`, `poisson-glm` or `linear-lsq`.
    pub family: String,
    #[serde(default = "default_alpha")]
    pub l2_alpha: f64,
    #[serde(default = "default_floor")]
    pub rate_floor: f64,
    /// Ridge strength for `linear-lsq`; minimum-norm when absent.
    #[serde(default)]
    pub ridge: Option<f64>,
}

impl FewShotRegressorSpec {
    pub fn named(family: &str) -> Self {
        FewShotRegressorSpec {
            family: family.to_string(),
            l2_alpha: DEFAULT_L2_ALPHA,
            rate_floor: RATE_FLOOR,
            ridge: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_alpha >= 0.0) {
            return Err(Error::Config(format!("l2_alpha must be non-negative, got {}", self.l2_alpha)));
        }
        if !(self.rate_floor > 0.0) {
            return Err(Error::Config(format!("rate_floor must be positive, got {}", self.rate_floor)));
        }
        if let Some(l) = self.ridge {
            if !(l >= 0.0) {
                return Err(Error::Config(format!("ridge strength must be non-negative, got {l}")));
            }
        }
        Ok(())
    }
}

/// A fitted map from latents to per-channel predictions.
pub trait Readout: Send + Sync {
    /// Predictions shaped `trials x T x C`, aligned with `latents`.
    fn predict(&self, latents: &LatentTrajectories) -> Result<Tensor3<f64>>;
}

/// Fits a readout from a few trials of latents and targets.
pub trait FewShotRegressor: Send + Sync {
    fn name(&self) -> &'static str;

    /// `targets` is `k x T x C`, aligned trial by trial with `latents`.
    fn fit(&self, latents: &LatentTrajectories, targets: &Tensor3<f64>) -> Result<Box<dyn Readout>>;
}

pub type RegressorCtor = dyn Fn(&FewShotRegressorSpec) -> Arc<dyn FewShotRegressor> + Send + Sync;

fn design(latents: &LatentTrajectories) -> DMatrix<f64> {
    let [s, t, d] = latents.values.dims();
    DMatrix::from_row_slice(s * t, d, latents.values.data())
}

fn reshape(pred: &DMatrix<f64>, s: usize, t: usize) -> Tensor3<f64> {
    let c = pred.ncols();
    let mut data = Vec::with_capacity(s * t * c);
    for row in pred.row_iter() {
        data.extend(row.iter());
    }
    Tensor3::from_vec([s, t, c], data).expect("prediction shape")
}

fn targets_matrix(targets: &Tensor3<f64>) -> DMatrix<f64> {
    let [s, t, c] = targets.dims();
    DMatrix::from_row_slice(s * t, c, targets.data())
}

struct BernoulliMle;

struct EmissionReadout(Vec<Vec<f64>>);

impl Readout for EmissionReadout {
    fn predict(&self, latents: &LatentTrajectories) -> Result<Tensor3<f64>> {
        if latents.dim() != self.0.len() {
            return Err(Error::Invalid("latent dimension differs from the fitted state count".into()));
        }
        Ok(bernoulli_readout(&self.0, latents))
    }
}

impl FewShotRegressor for BernoulliMle {
    fn name(&self) -> &'static str {
        "bernoulli-mle"
    }

    fn fit(&self, latents: &LatentTrajectories, targets: &Tensor3<f64>) -> Result<Box<dyn Readout>> {
        if latents.kind != LatentKind::Pmf {
            return Err(Error::Fit("bernoulli-mle needs state probabilities as latents".into()));
        }
        let counts = targets.map(|v| v as u32);
        if counts.data().iter().zip(targets.data()).any(|(&c, &v)| c as f64 != v) {
            return Err(Error::Fit("bernoulli-mle needs integer targets".into()));
        }
        Ok(Box::new(EmissionReadout(fewshot_emission_mle(latents, &counts)?.b)))
    }
}

struct GlmReadout(PoissonGlmFit);

impl Readout for GlmReadout {
    fn predict(&self, latents: &LatentTrajectories) -> Result<Tensor3<f64>> {
        let [s, t, _] = latents.values.dims();
        Ok(reshape(&self.0.predict(&design(latents)), s, t))
    }
}

impl FewShotRegressor for PoissonGlm {
    fn name(&self) -> &'static str {
        "poisson-glm"
    }

    fn fit(&self, latents: &LatentTrajectories, targets: &Tensor3<f64>) -> Result<Box<dyn Readout>> {
        let fit = poisson_glm_fit(&design(latents), &targets_matrix(targets), self.l2_alpha, self.rate_floor);
        Ok(Box::new(GlmReadout(fit)))
    }
}

struct LinearLsq {
    mode: LinRegMode,
}

struct LinearReadout(LinearFit);

impl Readout for LinearReadout {
    fn predict(&self, latents: &LatentTrajectories) -> Result<Tensor3<f64>> {
        let [s, t, _] = latents.values.dims();
        Ok(reshape(&self.0.predict(&design(latents)), s, t))
    }
}

impl FewShotRegressor for LinearLsq {
    fn name(&self) -> &'static str {
        "linear-lsq"
    }

    fn fit(&self, latents: &LatentTrajectories, targets: &Tensor3<f64>) -> Result<Box<dyn Readout>> {
        let fit = linreg_fit(&design(latents), &targets_matrix(targets), self.mode, true);
        Ok(Box::new(LinearReadout(fit)))
    }
}

pub fn regressor_registry() -> Registry<RegressorCtor> {
    let mut r: Registry<RegressorCtor> = Registry::new("few-shot regressor");
    r.register("bernoulli-mle", Arc::new(|_: &FewShotRegressorSpec| Arc::new(BernoulliMle) as Arc<dyn FewShotRegressor>))
        .register(
            "poisson-glm",
            Arc::new(|s: &FewShotRegressorSpec| {
                Arc::new(PoissonGlm {
                    l2_alpha: s.l2_alpha,
                    rate_floor: s.rate_floor,
                }) as Arc<dyn FewShotRegressor>
            }),
        )
        .register(
            "linear-lsq",
            Arc::new(|s: &FewShotRegressorSpec| {
                let mode = s.ridge.map_or(LinRegMode::MinNorm, LinRegMode::Ridge);
                Arc::new(LinearLsq { mode }) as Arc<dyn FewShotRegressor>
            }),
        );
    r
}

pub fn build_regressor(spec: &FewShotRegressorSpec) -> Result<Arc<dyn FewShotRegressor>> {
    spec.validate()?;
    Ok(regressor_registry().get(&spec.family)?(spec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotReport {
    pub k: usize,
    pub s: usize,
    /// Scores of the subsets that succeeded, in subset order.
    pub scores: Vec<f64>,
    pub failed_subsets: Vec<usize>,
    pub failures: usize,
    pub mean: f64,
    pub sem: f64,
}

/// Scores one subset's predictions: `(pred, observed, null_rates)`.
pub type SubsetScore<'a> = dyn Fn(&Tensor3<f64>, &Tensor3<f64>, &[f64]) -> Result<f64> + Sync + 'a;

/// Fit the regressor on each planned subset of train trials and score its
/// k-out predictions on every test trial.
pub fn fewshot_protocol<T: Element>(
    latents: &LatentTrajectories,
    dataset: &Dataset<T>,
    plan: &KShotPlan,
    regressor: &dyn FewShotRegressor,
    score: &SubsetScore<'_>,
) -> Result<FewShotReport> {
    let kout = &dataset.partition.k_out;
    let test = &dataset.split.test;
    if kout.is_empty() {
        return Err(Error::Config("dataset has no k-out channels".into()));
    }
    if let Some(&i) = test.iter().chain(plan.subsets.iter().flatten()).find(|&&i| latents.position(i).is_none()) {
        return Err(Error::Invalid(format!("latents are missing trial {i}")));
    }
    let values = dataset.values.map(|v| v.to_f64());
    let test_latents = latents.subset(test);
    let observed = values.select(test, kout);
    let null = null_rates(&values, &dataset.split.train, kout);

    let outcomes: Vec<Result<f64>> = plan
        .subsets
        .par_iter()
        .map(|subset| {
            let readout = regressor.fit(&latents.subset(subset), &values.select(subset, kout))?;
            let pred = readout.predict(&test_latents)?;
            let q = score(&pred, &observed, &null)?;
            if q.is_finite() {
                Ok(q)
            } else {
                Err(Error::Fit("non-finite few-shot score".into()))
            }
        })
        .collect();

    let mut scores = Vec::with_capacity(outcomes.len());
    let mut failed_subsets = Vec::new();
    for (j, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(q) => scores.push(q),
            Err(e) => {
                log::warn!("few-shot subset {j} failed: {e}");
                failed_subsets.push(j);
            }
        }
    }
    if scores.is_empty() {
        return Err(Error::Fit(format!("all {} few-shot subsets failed", plan.subsets.len())));
    }
    let (mean, sem) = mean_sem(&scores);
    Ok(FewShotReport {
        k: plan.k,
        s: plan.s,
        failures: failed_subsets.len(),
        scores,
        failed_subsets,
        mean,
        sem,
    })
}

/// Few-shot co-smoothing: [`fewshot_protocol`] scored with the co-smoothing
/// total on the k-out channels.
pub fn fewshot_cosmoothing<T: Element>(
    latents: &LatentTrajectories,
    dataset: &Dataset<T>,
    plan: &KShotPlan,
    regressor: &dyn FewShotRegressor,
    family: &dyn LikelihoodFamily,
) -> Result<FewShotReport> {
    let kout = &dataset.partition.k_out;
    let values = dataset.values.map(|v| v.to_f64());
    let observed = values.select(&dataset.split.test, kout);
    let baseline = NullBaseline::new(&observed, &null_rates(&values, &dataset.split.train, kout), family)?;
    let score = |pred: &Tensor3<f64>, obs: &Tensor3<f64>, _null: &[f64]| -> Result<f64> {
        Ok(cosmoothing_q_with(pred, obs, &baseline, kout, family)?.q_total)
    };
    fewshot_protocol(latents, dataset, plan, regressor, &score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{partition_neurons, split_trials, KShotPlan};
    use crate::hmm::{make_cycle_teacher, predict_rates, sample_hmm, smooth_trials, HmmModel};
    use crate::metrics::{cosmoothing_q, Bernoulli};

    fn hmm_dataset(seed: u64, s: usize, n_train: usize) -> (HmmModel, crate::datamodel::SpikeDataset) {
        let teacher = make_cycle_teacher(4, 1e-2, seed, 30).unwrap();
        let (_, values) = sample_hmm(&teacher, s, 10, seed + 1);
        let split = split_trials(s, n_train, seed).unwrap();
        let partition = partition_neurons(30, (10, 10, 10), false, seed).unwrap();
        (teacher, Dataset::new(values, split, partition, seed).unwrap())
    }

    fn teacher_latents(teacher: &HmmModel, data: &crate::datamodel::SpikeDataset) -> LatentTrajectories {
        let all: Vec<usize> = (0..data.n_trials()).collect();
        smooth_trials(teacher, &data.values, &all, &data.partition.held_in).unwrap().latents
    }

    #[test]
    fn registry_names_and_errors() {
        let registry = regressor_registry();
        let names: Vec<&str> = registry.names().collect();
        assert_eq!(names, vec!["bernoulli-mle", "linear-lsq", "poisson-glm"]);
        assert!(matches!(build_regressor(&FewShotRegressorSpec::named("svm")), Err(Error::UnknownStrategy { .. })));
        let mut bad = FewShotRegressorSpec::named("poisson-glm");
        bad.l2_alpha = -1.0;
        assert!(matches!(build_regressor(&bad), Err(Error::Config(_))));
        let spec: FewShotRegressorSpec = serde_json::from_str(r#"{"family": "poisson-glm"}"#).unwrap();
        assert_eq!(spec.l2_alpha, 1e-3);
    }

    #[test]
    fn full_data_estimate_matches_teacher_emissions() {
        let (teacher, data) = hmm_dataset(3, 1600, 1500);
        let latents = teacher_latents(&teacher, &data);
        let plan = KShotPlan::with_resamples(&data.split.train, data.split.train.len(), 1, 0).unwrap();
        let fam = Bernoulli { floor: RATE_FLOOR };
        let reg = build_regressor(&FewShotRegressorSpec::named("bernoulli-mle")).unwrap();
        let report = fewshot_cosmoothing(&latents, &data, &plan, &*reg, &fam).unwrap();
        // oracle: score with the teacher's own k-out emissions
        let kout = &data.partition.k_out;
        let values = data.values.map(|v| v as f64);
        let test_latents = latents.subset(&data.split.test);
        let pred = predict_rates(&teacher, &test_latents, kout).unwrap();
        let null = null_rates(&values, &data.split.train, kout);
        let oracle = cosmoothing_q(&pred, &values.select(&data.split.test, kout), &null, kout, &fam).unwrap();
        assert_eq!(report.s, 1);
        assert!(
            (report.mean - oracle.q_total).abs() < 0.05 * oracle.q_total.abs(),
            "{} vs {}",
            report.mean,
            oracle.q_total
        );
    }

    #[test]
    fn more_shots_score_higher_on_average() {
        let (teacher, data) = hmm_dataset(5, 700, 600);
        let latents = teacher_latents(&teacher, &data);
        let fam = Bernoulli { floor: RATE_FLOOR };
        let reg = build_regressor(&FewShotRegressorSpec::named("bernoulli-mle")).unwrap();
        let means: Vec<f64> = [2, 8, 32]
            .iter()
            .map(|&k| {
                let plan = KShotPlan::with_resamples(&data.split.train, k, 60, 11).unwrap();
                fewshot_cosmoothing(&latents, &data, &plan, &*reg, &fam).unwrap().mean
            })
            .collect();
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn failing_subsets_are_counted() {
        let (teacher, data) = hmm_dataset(7, 60, 40);
        let latents = teacher_latents(&teacher, &data);
        let plan = KShotPlan::with_resamples(&data.split.train, 3, 5, 1).unwrap();
        let reg = build_regressor(&FewShotRegressorSpec::named("bernoulli-mle")).unwrap();
        let score = |pred: &Tensor3<f64>, _: &Tensor3<f64>, _: &[f64]| -> Result<f64> {
            Ok(pred.data().iter().sum())
        };
        let ok = fewshot_protocol(&latents, &data, &plan, &*reg, &score).unwrap();
        assert_eq!(ok.failures, 0);
        let picky = |pred: &Tensor3<f64>, o: &Tensor3<f64>, n: &[f64]| -> Result<f64> {
            let v = score(pred, o, n)?;
            if (v - ok.scores[0]).abs() < 1e-12 {
                Err(Error::Fit("rejected".into()))
            } else {
                Ok(v)
            }
        };
        let report = fewshot_protocol(&latents, &data, &plan, &*reg, &picky).unwrap();
        assert!(report.failed_subsets.contains(&0));
        assert_eq!(report.scores.len() + report.failures, 5);
        let (mean, sem) = mean_sem(&report.scores);
        assert_eq!((report.mean, report.sem), (mean, sem));
    }

    #[test]
    fn linear_regressor_on_gaussian_latents() {
        let latents = LatentTrajectories {
            kind: LatentKind::Gaussian,
            trials: vec![0, 1],
            values: Tensor3::from_vec([2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
        };
        let targets = Tensor3::from_vec([2, 2, 1], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let reg = build_regressor(&FewShotRegressorSpec::named("linear-lsq")).unwrap();
        let pred = reg.fit(&latents, &targets).unwrap().predict(&latents).unwrap();
        for (p, t) in pred.data().iter().zip(targets.data()) {
            assert!((p - t).abs() < 1e-12);
        }
        assert!(build_regressor(&FewShotRegressorSpec::named("bernoulli-mle")).unwrap().fit(&latents, &targets).is_err());
    }
}
