//! File-level commands: every step reads and writes a run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.json            copy of the experiment config
//! dataset/               manifest.json + counts.bin or values.bin
//! teacher.json           generating model
//! models/<id>.json       fitted students
//! fit_log.json           EM traces and failures
//! eval/                  summary.csv, correlations.csv, report.json,
//!                        metrics/<id>.json, metrics_long.csv,
//!                        crossdecode.{csv,json}, graphs/<id>.dot (HMM)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ControlConfig, ExperimentConfig, HmmGenerator, StudyConfig};
use super::study::*;
use crate::csvout::to_csv;
use crate::datamodel::io::write_atomic;
use crate::datamodel::{load_dataset, partition_neurons, save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::hmm::{traffic_graph, HmmModel, DEFAULT_PRUNE_THRESHOLD};
use crate::lgssm::LgssmModel;
use crate::rng::derive_seed;
use crate::theory::{run_sweep, SweepRow};

/// Sampled paths per traffic graph.
const GRAPH_TRIALS: usize = 2000;

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn save_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    mkdir(out)?;
    write_json(&out.join("config.json"), cfg)
}

fn dataset_dir(out: &Path) -> PathBuf {
    out.join("dataset")
}

fn models_dir(out: &Path) -> PathBuf {
    out.join("models")
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    save_config(cfg, out)?;
    match cfg {
        ExperimentConfig::HmmStudentTeacher(c) => {
            let (teacher, data) = generate_hmm(&c.generator, c.seed)?;
            save_dataset(&data, &dataset_dir(out))?;
            teacher.save(&out.join("teacher.json"))
        }
        ExperimentConfig::LgssmStudentTeacher(c) => {
            let (teacher, data) = generate_lgssm(&c.generator, c.seed)?;
            save_dataset(&data, &dataset_dir(out))?;
            teacher.save(&out.join("teacher.json"))
        }
        _ => Err(Error::Config("generate needs a student-teacher config".into())),
    }
}

fn save_models<M>(out: &Path, models: &[(String, M)], log: &[FitRecord], save: impl Fn(&M, &Path) -> Result<()>) -> Result<()> {
    let dir = models_dir(out);
    mkdir(&dir)?;
    for (id, m) in models {
        save(m, &dir.join(format!("{id}.json")))?;
    }
    write_json(&out.join("fit_log.json"), &log)
}

pub fn cmd_fit(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<FitRecord>> {
    match cfg {
        ExperimentConfig::HmmStudentTeacher(c) => {
            let data = load_dataset::<u32>(&dataset_dir(out))?;
            let (models, log) = fit_hmm_students(&c.students, &data, c.seed);
            save_models(out, &models, &log, HmmModel::save)?;
            Ok(log)
        }
        ExperimentConfig::LgssmStudentTeacher(c) => {
            let data = load_dataset::<f64>(&dataset_dir(out))?;
            let (models, log) = fit_lgssm_students(&c.students, &data, c.seed);
            save_models(out, &models, &log, LgssmModel::save)?;
            Ok(log)
        }
        _ => Err(Error::Config("fit needs a student-teacher config".into())),
    }
}

/// Model files in `models/`, sorted by id.
fn load_models<M>(out: &Path, load: impl Fn(&Path) -> Result<M>) -> Result<Vec<(String, M)>> {
    let dir = models_dir(out);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((id, load(p)?))
        })
        .collect()
}

fn load_teacher<M>(out: &Path, load: impl Fn(&Path) -> Result<M>) -> Result<Option<M>> {
    let path = out.join("teacher.json");
    if path.exists() {
        load(&path).map(Some)
    } else {
        log::warn!("no teacher model at {}; ground-truth columns omitted", path.display());
        Ok(None)
    }
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<StudyReport> {
    let report = match cfg {
        ExperimentConfig::HmmStudentTeacher(c) => {
            let data = load_dataset::<u32>(&dataset_dir(out))?;
            let teacher = load_teacher(out, HmmModel::load)?;
            let students = load_models(out, HmmModel::load)?;
            let report = evaluate_hmm(&c.metrics, &data, teacher.as_ref(), &students, c.seed)?;
            let graphs = out.join("eval").join("graphs");
            mkdir(&graphs)?;
            let all = teacher.iter().map(|t| (TEACHER_ID.to_string(), t)).chain(students.iter().map(|(i, m)| (i.clone(), m)));
            for (j, (id, model)) in all.enumerate() {
                let seed = derive_seed(c.seed, "traffic-graph", j as u64);
                let g = traffic_graph(model, GRAPH_TRIALS, data.n_time(), seed, DEFAULT_PRUNE_THRESHOLD);
                write_text(&graphs.join(format!("{id}.dot")), &g.to_dot(&id, true))?;
                write_text(&graphs.join(format!("{id}.all.dot")), &g.to_dot(&id, false))?;
            }
            report
        }
        ExperimentConfig::LgssmStudentTeacher(c) => {
            let data = load_dataset::<f64>(&dataset_dir(out))?;
            let teacher = load_teacher(out, LgssmModel::load)?;
            let students = load_models(out, LgssmModel::load)?;
            evaluate_lgssm(&c.metrics, &data, teacher.as_ref(), &students, c.seed)?
        }
        _ => return Err(Error::Config("eval needs a student-teacher config".into())),
    };
    write_report(&report, &out.join("eval"))?;
    Ok(report)
}

pub fn summary_csv(report: &StudyReport) -> Result<String> {
    to_csv(&SUMMARY_HEADER, &report.rows)
}

pub fn correlations_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a Correlation)>) -> Result<String> {
    let header = ["variant", "x", "y", "subset", "n", "rho", "p_negative", "p_positive", "p_two_sided"];
    to_csv(&header, rows.into_iter().map(|(v, c)| (v, &c.x, &c.y, &c.subset, c.n, c.rho, c.p_negative, c.p_positive, c.p_two_sided)))
}

/// Summary, correlations, per-model metric files and cross-decoding tables.
pub fn write_report(report: &StudyReport, dir: &Path) -> Result<()> {
    let metrics = dir.join("metrics");
    mkdir(&metrics)?;
    write_text(&dir.join("summary.csv"), &summary_csv(report)?)?;
    write_text(&dir.join("correlations.csv"), &correlations_csv(report.correlations.iter().map(|c| ("", c)))?)?;
    write_json(&dir.join("report.json"), report)?;
    let mut long = Vec::new();
    for m in &report.metric_reports {
        write_json(&metrics.join(format!("{}.json", m.model_id)), m)?;
    }
    for r in &report.rows {
        let cells = [
            (report.score_name.as_str(), Some(r.score)),
            (report.fewshot_name.as_str(), Some(r.fewshot_mean)),
            ("fewshot_sem", Some(r.fewshot_sem)),
            ("d_t_to_s", r.d_t_to_s),
            ("d_s_to_t", r.d_s_to_t),
            ("cycle", Some(r.cycle)),
            ("crossdecode_avg", r.crossdecode_avg),
        ];
        for (name, v) in cells {
            if let Some(v) = v {
                long.push((r.model_id.clone(), name.to_string(), v));
            }
        }
    }
    write_text(&dir.join("metrics_long.csv"), &to_csv(&["model_id", "metric", "value"], long)?)?;
    if let Some(m) = &report.crossdecode {
        write_text(&dir.join("crossdecode.csv"), &m.to_csv()?)?;
        write_text(&dir.join("crossdecode.json"), &m.to_json()?)?;
    }
    Ok(())
}

pub fn cmd_theory(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let ExperimentConfig::TheorySweep(c) = cfg else {
        return Err(Error::Config("theory needs a theory-sweep config".into()));
    };
    save_config(cfg, out)?;
    let rows = run_sweep(&c.sweep, c.seed)?;
    write_text(&out.join("theory.csv"), &SweepRow::to_csv(&rows)?)?;
    Ok(rows)
}

/// Per-variant reports plus the base, keyed by variant name.
#[derive(Debug)]
pub struct ControlOutcome {
    pub reports: Vec<(String, StudyReport)>,
}

impl ControlOutcome {
    pub fn base(&self) -> &StudyReport {
        &self.reports[0].1
    }
}

/// Re-partition the base dataset for each variant, refit, and evaluate.
pub fn run_control(cfg: &ControlConfig, out: Option<&Path>) -> Result<ControlOutcome> {
    cfg.validate()?;
    let (teacher, base_data) = generate_hmm(&cfg.generator, cfg.seed)?;
    let mut reports = Vec::new();
    let variants = std::iter::once(("base".to_string(), cfg.generator.partition))
        .chain(cfg.variants.iter().map(|v| (v.name.clone(), v.partition)));
    for (name, sizes) in variants {
        let study: StudyConfig<HmmGenerator> = cfg.as_study(&sizes);
        study.validate()?;
        let partition = partition_neurons(
            cfg.generator.n_channels,
            (sizes.held_in, sizes.held_out, sizes.k_out),
            sizes.alias_kout,
            derive_seed(cfg.seed, "partition", 0),
        )?;
        let data = Dataset::new(base_data.values.clone(), base_data.split.clone(), partition, cfg.seed)?;
        log::info!("control variant {name}: fitting {} students", study.students.members().len());
        let (students, fit_log) = fit_hmm_students(&study.students, &data, cfg.seed);
        let report = evaluate_hmm(&study.metrics, &data, Some(&teacher), &students, cfg.seed)?;
        if let Some(out) = out {
            let dir = out.join(&name);
            mkdir(&dir)?;
            write_json(&dir.join("fit_log.json"), &fit_log)?;
            write_report(&report, &dir.join("eval"))?;
        }
        reports.push((name, report));
    }
    Ok(ControlOutcome { reports })
}

pub const CONTROL_HEADER: [&str; 9] = [
    "variant", "model_id", "score", "base_score", "score_decreased", "fewshot_mean", "d_t_to_s", "high_score", "is_teacher",
];

pub fn control_csv(outcome: &ControlOutcome) -> Result<String> {
    let base = outcome.base();
    let mut rows = Vec::new();
    for (name, report) in &outcome.reports {
        for r in &report.rows {
            let base_score = base.row(&r.model_id).map(|b| b.score);
            rows.push((
                name.as_str(),
                r.model_id.as_str(),
                r.score,
                base_score,
                base_score.map(|b| r.score < b),
                r.fewshot_mean,
                r.d_t_to_s,
                r.high_score,
                r.is_teacher,
            ));
        }
    }
    to_csv(&CONTROL_HEADER, rows)
}

pub fn cmd_control(cfg: &ExperimentConfig, out: &Path) -> Result<ControlOutcome> {
    let ExperimentConfig::HardCosmoothingControl(c) = cfg else {
        return Err(Error::Config("control needs a hard-cosmoothing-control config".into()));
    };
    save_config(cfg, out)?;
    let outcome = run_control(c, Some(out))?;
    write_text(&out.join("control.csv"), &control_csv(&outcome)?)?;
    let corr = outcome
        .reports
        .iter()
        .flat_map(|(n, r)| r.correlations.iter().map(move |c| (n.as_str(), c)));
    write_text(&out.join("control_correlations.csv"), &correlations_csv(corr)?)?;
    Ok(outcome)
}
