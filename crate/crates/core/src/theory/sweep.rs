//! Parameter sweeps over the three settings, emitted as one CSV table.

use serde::{Deserialize, Serialize};

use super::*;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmGrid {
    pub b_star: Vec<f64>,
    pub k: Vec<u64>,
    pub n_mc: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgelessGrid {
    pub p: Vec<usize>,
    pub k: Vec<usize>,
    pub sigma_obs: Vec<f64>,
    pub sigma_ext: Vec<f64>,
    pub n_mc: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeGrid {
    /// `[M, k]` pairs.
    pub m_k: Vec<[usize; 2]>,
    /// Extraneous variances.
    pub sigma_ext2: Vec<f64>,
    pub n_mc: u64,
}

/// Any subset of the three settings; absent settings emit no rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySweep {
    #[serde(default)]
    pub hmm: Option<HmmGrid>,
    #[serde(default)]
    pub ridgeless: Option<RidgelessGrid>,
    #[serde(default)]
    pub prototype: Option<PrototypeGrid>,
}

impl TheorySweep {
    /// The grids of the reference figure panels.
    pub fn reference() -> Self {
        TheorySweep {
            hmm: Some(HmmGrid {
                b_star: vec![0.3, 0.5],
                k: vec![2, 4, 8, 16, 32, 64],
                n_mc: 100_000,
            }),
            ridgeless: Some(RidgelessGrid {
                p: vec![50],
                k: vec![10, 25, 100, 200],
                sigma_obs: vec![0.3],
                sigma_ext: vec![0.5, 1.0, 2.0],
                n_mc: 2000,
            }),
            prototype: Some(PrototypeGrid {
                m_k: vec![[10, 5], [10, 20], [50, 20]],
                sigma_ext2: vec![2.0, 10.0, 50.0],
                n_mc: 10_000,
            }),
        }
    }
}

pub const SWEEP_HEADER: [&str; 14] = [
    "setting", "student", "b_star", "k", "p", "gamma", "m", "sigma_obs", "sigma_ext", "theory", "mc_mean",
    "mc_sem", "n_mc", "clipped",
];

/// One grid point. Columns that do not apply to a setting are empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub student: Option<String>,
    pub b_star: Option<f64>,
    pub k: u64,
    pub p: Option<usize>,
    pub gamma: Option<f64>,
    pub m: Option<usize>,
    pub sigma_obs: Option<f64>,
    pub sigma_ext: Option<f64>,
    /// Empty where the closed form is undefined (p = k).
    pub theory: Option<f64>,
    pub mc_mean: f64,
    pub mc_sem: f64,
    pub n_mc: u64,
    pub clipped: Option<u64>,
}

impl SweepRow {
    pub fn to_csv(rows: &[SweepRow]) -> Result<String> {
        crate::csvout::to_csv(&SWEEP_HEADER, rows)
    }
}

pub fn run_sweep(sweep: &TheorySweep, seed: u64) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    if let Some(g) = &sweep.hmm {
        let mut idx = 0;
        for &b_star in &g.b_star {
            for &k in &g.k {
                for student in [Student::Good, Student::Bad] {
                    let cfg = HmmTheoryConfig { b_star, k, student };
                    let mc = hmm_expected_loss_mc(&cfg, g.n_mc, derive_seed(seed, "sweep-hmm", idx))?;
                    idx += 1;
                    rows.push(SweepRow {
                        setting: "hmm".into(),
                        student: Some(student.name().into()),
                        b_star: Some(b_star),
                        k,
                        theory: Some(hmm_expected_loss_theory(&cfg)?),
                        mc_mean: mc.loglik.mean,
                        mc_sem: mc.loglik.sem,
                        n_mc: g.n_mc,
                        clipped: Some(mc.clipped),
                        ..Default::default()
                    });
                }
            }
        }
    }
    if let Some(g) = &sweep.ridgeless {
        let mut idx = 0;
        for &p in &g.p {
            for &k in &g.k {
                for &sigma_obs in &g.sigma_obs {
                    for &sigma_ext in &g.sigma_ext {
                        let cfg = RidgelessConfig { p, k, sigma_obs, sigma_ext };
                        let theory = match ridgeless_risk_theory(&cfg) {
                            Ok(r) => Some(r.risk),
                            Err(Error::Singular(_)) => None,
                            Err(e) => return Err(e),
                        };
                        let mc = ridgeless_risk_mc(&cfg, g.n_mc, derive_seed(seed, "sweep-ridgeless", idx))?;
                        idx += 1;
                        rows.push(SweepRow {
                            setting: "ridgeless".into(),
                            k: k as u64,
                            p: Some(p),
                            gamma: Some(cfg.gamma()),
                            sigma_obs: Some(sigma_obs),
                            sigma_ext: Some(sigma_ext),
                            theory,
                            mc_mean: mc.mean,
                            mc_sem: mc.sem,
                            n_mc: g.n_mc,
                            ..Default::default()
                        });
                    }
                }
            }
        }
    }
    if let Some(g) = &sweep.prototype {
        let mut idx = 0;
        for &[m, k] in &g.m_k {
            for &s2 in &g.sigma_ext2 {
                if !(s2 >= 0.0) {
                    return Err(Error::Config(format!("sigma_ext2 must be non-negative, got {s2}")));
                }
                let cfg = PrototypeConfig { m, k, sigma_ext: s2.sqrt() };
                let mc = prototype_error_mc(&cfg, g.n_mc, derive_seed(seed, "sweep-prototype", idx))?;
                idx += 1;
                rows.push(SweepRow {
                    setting: "prototype".into(),
                    k: k as u64,
                    m: Some(m),
                    sigma_ext: Some(cfg.sigma_ext),
                    theory: Some(prototype_error_theory(&cfg)?),
                    mc_mean: mc.mean,
                    mc_sem: mc.sem,
                    n_mc: g.n_mc,
                    ..Default::default()
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TheorySweep {
        TheorySweep {
            hmm: Some(HmmGrid { b_star: vec![0.3], k: vec![4], n_mc: 500 }),
            ridgeless: Some(RidgelessGrid {
                p: vec![6],
                k: vec![3, 6, 12],
                sigma_obs: vec![0.3],
                sigma_ext: vec![1.0],
                n_mc: 50,
            }),
            prototype: Some(PrototypeGrid { m_k: vec![[3, 2]], sigma_ext2: vec![1.0, 4.0], n_mc: 100 }),
        }
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let rows = run_sweep(&TheorySweep::default(), 1).unwrap();
        assert_eq!(SweepRow::to_csv(&rows).unwrap(), SWEEP_HEADER.join(",") + "\n");
    }

    #[test]
    fn rows_cover_grid_and_rerun_is_identical() {
        let rows = run_sweep(&small(), 4).unwrap();
        assert_eq!(rows.len(), 2 + 3 + 2);
        let singular = rows.iter().find(|r| r.setting == "ridgeless" && r.k == 6).unwrap();
        assert!(singular.theory.is_none() && singular.mc_mean.is_finite());
        let a = SweepRow::to_csv(&rows).unwrap();
        assert_eq!(a, SweepRow::to_csv(&run_sweep(&small(), 4).unwrap()).unwrap());
        assert_eq!(a.lines().count(), 8);
    }

    #[test]
    fn sweep_config_round_trips_and_rejects_typos() {
        let s = TheorySweep::reference();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<TheorySweep>(&json).unwrap(), s);
        assert!(serde_json::from_str::<TheorySweep>(r#"{"hmmm": null}"#).is_err());
    }
}
