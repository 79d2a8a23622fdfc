//! Student-teacher studies: generate teacher data, fit a student population
//! by EM, and score every model with the full metric set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{HmmGenerator, LgssmGenerator, MetricParams, PartitionSizes, StudentSweep, StudyConfig, TrialLayout};
use crate::crossdecode::{cross_decode_matrix, cycle_consistency, decoder_registry, CrossDecodeMatrix, CrossDecoder};
use crate::datamodel::{partition_neurons, split_trials, Dataset, Element, GaussianDataset, KShotPlan, SpikeDataset};
use crate::error::{Error, Result};
use crate::hmm::{self, HmmModel};
use crate::latent::LatentTrajectories;
use crate::lgssm::{self, LgssmModel};
use crate::metrics::{
    build_regressor, cosmoothing_q, family, fewshot_cosmoothing, fewshot_protocol, mse, null_rates, CosmoothScore,
    FewShotReport,
};
use crate::rng::derive_seed;
use crate::stats::{spearman, Spearman};
use crate::tensor::Tensor3;

pub const TEACHER_ID: &str = "teacher";

fn layout_split<T: Copy>(
    values: Tensor3<T>,
    layout: &TrialLayout,
    sizes: &PartitionSizes,
    n_channels: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    let split = split_trials(layout.n_trials, layout.n_train, derive_seed(seed, "split", 0))?;
    let partition = partition_neurons(
        n_channels,
        (sizes.held_in, sizes.held_out, sizes.k_out),
        sizes.alias_kout,
        derive_seed(seed, "partition", 0),
    )?;
    Dataset::new(values, split, partition, seed)
}

/// Teacher and sampled dataset. The partition is drawn from a fixed channel
/// order, so partitions of different sizes built from the same seed nest.
pub fn generate_hmm(gen: &HmmGenerator, seed: u64) -> Result<(HmmModel, SpikeDataset)> {
    let teacher = hmm::make_cycle_teacher(gen.n_states, gen.epsilon, derive_seed(seed, "teacher", 0), gen.n_channels)?;
    let (_, values) = hmm::sample_hmm(&teacher, gen.layout.n_trials, gen.layout.n_time, derive_seed(seed, "samples", 0));
    let data = layout_split(values, &gen.layout, &gen.partition, gen.n_channels, seed)?;
    Ok((teacher, data))
}

pub fn generate_lgssm(gen: &LgssmGenerator, seed: u64) -> Result<(LgssmModel, GaussianDataset)> {
    let teacher = lgssm::make_random_teacher(gen.latent_dim, gen.n_channels, derive_seed(seed, "teacher", 0))?;
    let (_, values) =
        lgssm::sample_lgssm(&teacher, gen.layout.n_trials, gen.layout.n_time, derive_seed(seed, "samples", 0))?;
    let data = layout_split(values, &gen.layout, &gen.partition, gen.n_channels, seed)?;
    Ok((teacher, data))
}

/// Outcome of one student fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model_id: String,
    pub n_states: usize,
    pub restart: usize,
    pub init_seed: u64,
    pub converged: bool,
    pub trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

fn fit_population<M, F>(sweep: &StudentSweep, seed: u64, fit: F) -> (Vec<(String, M)>, Vec<FitRecord>)
where
    F: Fn(usize, u64) -> Result<(M, Vec<f64>, bool)>,
{
    let mut models = Vec::new();
    let mut log = Vec::new();
    for (idx, (id, m, r)) in sweep.members().into_iter().enumerate() {
        let init_seed = derive_seed(seed, "student-init", idx as u64);
        let mut rec = FitRecord {
            model_id: id.clone(),
            n_states: m,
            restart: r,
            init_seed,
            converged: false,
            trace: vec![],
            error: None,
        };
        match fit(m, init_seed) {
            Ok((model, trace, converged)) => {
                rec.trace = trace;
                rec.converged = converged;
                models.push((id, model));
            }
            Err(e) => {
                log::warn!("student {id} failed to fit: {e}");
                rec.error = Some(e.to_string());
            }
        }
        log.push(rec);
    }
    (models, log)
}

pub fn fit_hmm_students(sweep: &StudentSweep, data: &SpikeDataset, seed: u64) -> (Vec<(String, HmmModel)>, Vec<FitRecord>) {
    fit_population(sweep, seed, |m, init_seed| {
        let opts = hmm::EmOptions {
            n_iters: sweep.n_iters,
            tol: sweep.tol,
            init_seed,
        };
        let fit = hmm::fit_em(data, m, &opts)?;
        Ok((fit.model, fit.trace, fit.converged))
    })
}

pub fn fit_lgssm_students(
    sweep: &StudentSweep,
    data: &GaussianDataset,
    seed: u64,
) -> (Vec<(String, LgssmModel)>, Vec<FitRecord>) {
    fit_population(sweep, seed, |m, init_seed| {
        let opts = lgssm::EmOptions {
            n_iters: sweep.n_iters,
            tol: sweep.tol,
            init_seed,
        };
        let fit = lgssm::fit_em(data, m, &opts)?;
        Ok((fit.model, fit.trace, fit.converged))
    })
}

/// Model-family specific pieces of the evaluation.
trait Pipeline: Sync {
    type Model: Sync;
    type Elem: Element;

    /// Latents of `trials`, inferred from held-in channels only.
    fn latents(&self, model: &Self::Model, data: &Dataset<Self::Elem>, trials: &[usize]) -> Result<LatentTrajectories>;

    /// Primary score on test trials (higher is better).
    fn score(
        &self,
        model: &Self::Model,
        data: &Dataset<Self::Elem>,
        test_latents: &LatentTrajectories,
    ) -> Result<(f64, Option<CosmoothScore>)>;

    /// Few-shot score on the k-out channels (higher is better).
    fn fewshot(&self, latents: &LatentTrajectories, data: &Dataset<Self::Elem>, plan: &KShotPlan) -> Result<FewShotReport>;

    /// Held-out predictions from test latents, for cycle consistency.
    fn outputs(&self, model: &Self::Model, latents: &LatentTrajectories, channels: &[usize]) -> Result<Tensor3<f64>>;
}

struct HmmPipeline<'a>(&'a MetricParams);

impl Pipeline for HmmPipeline<'_> {
    type Model = HmmModel;
    type Elem = u32;

    fn latents(&self, model: &HmmModel, data: &SpikeDataset, trials: &[usize]) -> Result<LatentTrajectories> {
        let smoothed = hmm::smooth_trials(model, &data.values, trials, &data.partition.held_in)?;
        if let Some(&i) = smoothed.skipped.first() {
            return Err(Error::DegenerateLikelihood { trial: Some(i), time: 0 });
        }
        Ok(smoothed.latents)
    }

    fn score(
        &self,
        model: &HmmModel,
        data: &SpikeDataset,
        test_latents: &LatentTrajectories,
    ) -> Result<(f64, Option<CosmoothScore>)> {
        let held_out = &data.partition.held_out;
        let values = data.values.map(|v| v as f64);
        let pred = hmm::predict_rates(model, test_latents, held_out)?;
        let observed = values.select(&data.split.test, held_out);
        let null = null_rates(&values, &data.split.train, held_out);
        let q = cosmoothing_q(&pred, &observed, &null, held_out, &*family(&self.0.family)?)?;
        Ok((q.q_total, Some(q)))
    }

    fn fewshot(&self, latents: &LatentTrajectories, data: &SpikeDataset, plan: &KShotPlan) -> Result<FewShotReport> {
        let regressor = build_regressor(&self.0.regressor)?;
        fewshot_cosmoothing(latents, data, plan, &*regressor, &*family(&self.0.family)?)
    }

    fn outputs(&self, model: &HmmModel, latents: &LatentTrajectories, channels: &[usize]) -> Result<Tensor3<f64>> {
        hmm::predict_rates(model, latents, channels)
    }
}

struct LgssmPipeline<'a>(&'a MetricParams);

impl Pipeline for LgssmPipeline<'_> {
    type Model = LgssmModel;
    type Elem = f64;

    fn latents(&self, model: &LgssmModel, data: &GaussianDataset, trials: &[usize]) -> Result<LatentTrajectories> {
        Ok(lgssm::smooth_trials(model, &data.values, trials, &data.partition.held_in)?.latents)
    }

    /// Mean per-trial log-likelihood of the training channels on test trials.
    fn score(
        &self,
        model: &LgssmModel,
        data: &GaussianDataset,
        _test_latents: &LatentTrajectories,
    ) -> Result<(f64, Option<CosmoothScore>)> {
        let channels = data.partition.training_channels();
        let ll = lgssm::smooth_trials(model, &data.values, &data.split.test, &channels)?.loglik;
        Ok((ll.iter().sum::<f64>() / ll.len() as f64, None))
    }

    /// Negated mean squared error, so that higher is better as for Q.
    fn fewshot(&self, latents: &LatentTrajectories, data: &GaussianDataset, plan: &KShotPlan) -> Result<FewShotReport> {
        let regressor = build_regressor(&self.0.regressor)?;
        let score = |pred: &Tensor3<f64>, obs: &Tensor3<f64>, _null: &[f64]| -> Result<f64> { Ok(-mse(pred, obs)?) };
        fewshot_protocol(latents, data, plan, &*regressor, &score)
    }

    fn outputs(&self, model: &LgssmModel, latents: &LatentTrajectories, channels: &[usize]) -> Result<Tensor3<f64>> {
        lgssm::predict_obs_means(model, latents, channels)
    }
}

/// Per-model metric file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    #[serde(rename = "Q")]
    pub q: f64,
    pub per_neuron: BTreeMap<usize, f64>,
    pub excluded_neurons: Vec<usize>,
    pub k: usize,
    pub s: usize,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub sem: f64,
    pub failures: usize,
}

struct Scored {
    id: String,
    score: f64,
    cosmooth: Option<CosmoothScore>,
    fewshot: FewShotReport,
    cycle: f64,
    test_latents: LatentTrajectories,
}

fn score_model<P: Pipeline>(p: &P, id: &str, model: &P::Model, data: &Dataset<P::Elem>, plan: &KShotPlan) -> Result<Scored> {
    let all: Vec<usize> = (0..data.n_trials()).collect();
    let latents = p.latents(model, data, &all)?;
    let test_latents = latents.subset(&data.split.test);
    let (score, cosmooth) = p.score(model, data, &test_latents)?;
    let fewshot = p.fewshot(&latents, data, plan)?;
    let outputs = p.outputs(model, &test_latents, &data.partition.held_out)?;
    let cycle = cycle_consistency(&test_latents, &outputs)?;
    if !score.is_finite() {
        return Err(Error::Fit(format!("{id}: non-finite score")));
    }
    Ok(Scored {
        id: id.to_string(),
        score,
        cosmooth,
        fewshot,
        cycle,
        test_latents,
    })
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub model_id: String,
    pub is_teacher: bool,
    pub n_states: Option<usize>,
    pub restart: Option<usize>,
    /// Co-smoothing Q (HMM) or test log-likelihood (LGSSM).
    pub score: f64,
    /// Mean few-shot score: Q^k (HMM) or negated k-shot MSE (LGSSM).
    pub fewshot_mean: f64,
    pub fewshot_sem: f64,
    pub fewshot_failures: usize,
    pub d_t_to_s: Option<f64>,
    pub d_s_to_t: Option<f64>,
    pub cycle: f64,
    /// Column average of the cross-decoding matrix over high-score students.
    pub crossdecode_avg: Option<f64>,
    pub high_score: bool,
}

pub const SUMMARY_HEADER: [&str; 13] = [
    "model_id", "is_teacher", "n_states", "restart", "score", "fewshot_mean", "fewshot_sem", "fewshot_failures",
    "d_t_to_s", "d_s_to_t", "cycle", "crossdecode_avg", "high_score",
];

/// A Spearman correlation between two summary columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub x: String,
    pub y: String,
    /// `all` students or only `high-score` ones.
    pub subset: String,
    pub n: usize,
    pub rho: f64,
    pub p_negative: f64,
    pub p_positive: f64,
    pub p_two_sided: f64,
}

impl Correlation {
    fn new(x: &str, y: &str, subset: &str, s: Spearman) -> Self {
        Correlation {
            x: x.into(),
            y: y.into(),
            subset: subset.into(),
            n: s.n,
            rho: s.rho,
            p_negative: s.p_negative,
            p_positive: s.p_positive,
            p_two_sided: s.two_sided(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    /// `hmm` or `lgssm`.
    pub family: String,
    pub score_name: String,
    pub fewshot_name: String,
    pub teacher_score: Option<f64>,
    pub threshold: f64,
    pub rows: Vec<StudyRow>,
    pub correlations: Vec<Correlation>,
    pub crossdecode: Option<CrossDecodeMatrix>,
    pub metric_reports: Vec<MetricReport>,
    /// Students whose evaluation failed, with the error.
    pub failed_models: Vec<(String, String)>,
}

impl StudyReport {
    pub fn correlation(&self, x: &str, y: &str, subset: &str) -> Option<&Correlation> {
        self.correlations.iter().find(|c| c.x == x && c.y == y && c.subset == subset)
    }

    pub fn students(&self) -> impl Iterator<Item = &StudyRow> {
        self.rows.iter().filter(|r| !r.is_teacher)
    }

    pub fn row(&self, id: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.model_id == id)
    }
}

fn parse_id(id: &str) -> (Option<usize>, Option<usize>) {
    let mut parts = id.strip_prefix('m').unwrap_or("").splitn(2, "-r");
    let m = parts.next().and_then(|s| s.parse().ok());
    let r = parts.next().and_then(|s| s.parse().ok());
    (m, r)
}

fn evaluate<P: Pipeline>(
    p: &P,
    params: &MetricParams,
    names: (&str, &str, &str),
    data: &Dataset<P::Elem>,
    teacher: Option<&P::Model>,
    students: &[(String, P::Model)],
    seed: u64,
) -> Result<StudyReport> {
    let plan_seed = derive_seed(seed, "kshot-plan", 0);
    let plan = match params.resamples {
        Some(s) => KShotPlan::with_resamples(&data.split.train, params.k, s, plan_seed)?,
        None => crate::datamodel::build_kshot_plan(data, params.k, plan_seed)?,
    };
    let decoder: std::sync::Arc<dyn CrossDecoder> = decoder_registry(params.multinomial).get(&params.cross_decoder)?;

    let teacher = teacher
        .map(|t| score_model(p, TEACHER_ID, t, data, &plan))
        .transpose()?;
    let mut scored = Vec::new();
    let mut failed_models = Vec::new();
    for (id, model) in students {
        match score_model(p, id, model, data, &plan) {
            Ok(s) => scored.push(s),
            Err(e) => {
                log::warn!("evaluation of {id} failed: {e}");
                failed_models.push((id.clone(), e.to_string()));
            }
        }
    }

    let student_scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let threshold = params.filter.threshold(teacher.as_ref().map(|t| t.score), &student_scores)?;

    // ground-truth decoding errors against the teacher
    let mut d_ts = vec![None; scored.len()];
    let mut d_st = vec![None; scored.len()];
    if let Some(t) = &teacher {
        for (j, s) in scored.iter().enumerate() {
            let pair = derive_seed(seed, "teacher-decode", j as u64);
            d_ts[j] = Some(decoder.decode(&t.test_latents, &s.test_latents, pair)?);
            d_st[j] = Some(decoder.decode(&s.test_latents, &t.test_latents, pair ^ 1)?);
        }
    }

    let high: Vec<usize> = (0..scored.len()).filter(|&j| scored[j].score > threshold).collect();
    let mut avg = vec![None; scored.len()];
    let crossdecode = if high.len() >= 2 {
        let ids: Vec<String> = high.iter().map(|&j| scored[j].id.clone()).collect();
        let lats: Vec<&LatentTrajectories> = high.iter().map(|&j| &scored[j].test_latents).collect();
        let m = cross_decode_matrix(&ids, &lats, &*decoder, derive_seed(seed, "cross-decode", 0))?;
        for (&j, a) in high.iter().zip(m.column_averages()) {
            avg[j] = Some(a);
        }
        Some(m)
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut metric_reports = Vec::new();
    let mut push = |s: &Scored, is_teacher: bool, d: (Option<f64>, Option<f64>), avg: Option<f64>, high: bool| {
        let (n_states, restart) = if is_teacher { (None, None) } else { parse_id(&s.id) };
        rows.push(StudyRow {
            model_id: s.id.clone(),
            is_teacher,
            n_states,
            restart,
            score: s.score,
            fewshot_mean: s.fewshot.mean,
            fewshot_sem: s.fewshot.sem,
            fewshot_failures: s.fewshot.failures,
            d_t_to_s: d.0,
            d_s_to_t: d.1,
            cycle: s.cycle,
            crossdecode_avg: avg,
            high_score: high,
        });
        let (per_neuron, excluded) = s
            .cosmooth
            .as_ref()
            .map(|c| (c.per_neuron.clone(), c.excluded_neurons.clone()))
            .unwrap_or_default();
        metric_reports.push(MetricReport {
            model_id: s.id.clone(),
            q: s.score,
            per_neuron,
            excluded_neurons: excluded,
            k: s.fewshot.k,
            s: s.fewshot.s,
            scores: s.fewshot.scores.clone(),
            mean: s.fewshot.mean,
            sem: s.fewshot.sem,
            failures: s.fewshot.failures,
        });
    };
    if let Some(t) = &teacher {
        push(t, true, (Some(0.0), Some(0.0)), None, t.score > threshold);
    }
    for (j, s) in scored.iter().enumerate() {
        push(s, false, (d_ts[j], d_st[j]), avg[j], high.contains(&j));
    }

    let mut correlations = Vec::new();
    let col = |rows: &[&StudyRow], f: &dyn Fn(&StudyRow) -> Option<f64>| -> Option<Vec<f64>> {
        rows.iter().map(|r| f(r)).collect()
    };
    let students_all: Vec<&StudyRow> = rows.iter().filter(|r| !r.is_teacher).collect();
    let students_high: Vec<&StudyRow> = students_all.iter().copied().filter(|r| r.high_score).collect();
    let score = |r: &StudyRow| Some(r.score);
    let fewshot = |r: &StudyRow| Some(r.fewshot_mean);
    let dts = |r: &StudyRow| r.d_t_to_s;
    let dst = |r: &StudyRow| r.d_s_to_t;
    let cycle = |r: &StudyRow| Some(r.cycle);
    let xavg = |r: &StudyRow| r.crossdecode_avg;
    let (score_name, fewshot_name) = (names.1, names.2);
    type Column<'a> = &'a dyn Fn(&StudyRow) -> Option<f64>;
    let pairs: [(&str, Column, &str, Column); 5] = [
        (score_name, &score, "d_s_to_t", &dst),
        (score_name, &score, "d_t_to_s", &dts),
        (fewshot_name, &fewshot, "d_t_to_s", &dts),
        ("crossdecode_avg", &xavg, "d_t_to_s", &dts),
        ("cycle", &cycle, "d_t_to_s", &dts),
    ];
    for (subset, group) in [("all", &students_all), ("high-score", &students_high)] {
        for (xn, xf, yn, yf) in &pairs {
            if let (Some(x), Some(y)) = (col(group, *xf), col(group, *yf)) {
                correlations.push(Correlation::new(xn, yn, subset, spearman(&x, &y)));
            }
        }
    }

    Ok(StudyReport {
        family: names.0.into(),
        score_name: score_name.into(),
        fewshot_name: fewshot_name.into(),
        teacher_score: teacher.as_ref().map(|t| t.score),
        threshold,
        rows,
        correlations,
        crossdecode,
        metric_reports,
        failed_models,
    })
}

pub fn evaluate_hmm(
    params: &MetricParams,
    data: &SpikeDataset,
    teacher: Option<&HmmModel>,
    students: &[(String, HmmModel)],
    seed: u64,
) -> Result<StudyReport> {
    evaluate(&HmmPipeline(params), params, ("hmm", "Q", "fewshot_Q"), data, teacher, students, seed)
}

pub fn evaluate_lgssm(
    params: &MetricParams,
    data: &GaussianDataset,
    teacher: Option<&LgssmModel>,
    students: &[(String, LgssmModel)],
    seed: u64,
) -> Result<StudyReport> {
    evaluate(
        &LgssmPipeline(params),
        params,
        ("lgssm", "test_loglik", "neg_fewshot_mse"),
        data,
        teacher,
        students,
        seed,
    )
}

/// Generate, fit and evaluate in one call.
pub fn run_hmm_study(cfg: &StudyConfig<HmmGenerator>) -> Result<(StudyReport, Vec<FitRecord>)> {
    cfg.validate()?;
    let (teacher, data) = generate_hmm(&cfg.generator, cfg.seed)?;
    let (students, log) = fit_hmm_students(&cfg.students, &data, cfg.seed);
    Ok((evaluate_hmm(&cfg.metrics, &data, Some(&teacher), &students, cfg.seed)?, log))
}

pub fn run_lgssm_study(cfg: &StudyConfig<LgssmGenerator>) -> Result<(StudyReport, Vec<FitRecord>)> {
    cfg.validate()?;
    let (teacher, data) = generate_lgssm(&cfg.generator, cfg.seed)?;
    let (students, log) = fit_lgssm_students(&cfg.students, &data, cfg.seed);
    Ok((evaluate_lgssm(&cfg.metrics, &data, Some(&teacher), &students, cfg.seed)?, log))
}
