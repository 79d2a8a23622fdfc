//! Writes the reference experiment configs into `configs/`.
//!
//! cargo run -p lveval-core --example reference_configs -- configs

use lveval_core::experiment::*;
use lveval_core::theory::TheorySweep;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs".into()));
    std::fs::create_dir_all(&dir)?;
    let configs = [
        ("hmm_study.json", ExperimentConfig::HmmStudentTeacher(StudyConfig::hmm_reference(0))),
        ("lgssm_study.json", ExperimentConfig::LgssmStudentTeacher(StudyConfig::lgssm_reference(0))),
        (
            "theory_sweep.json",
            ExperimentConfig::TheorySweep(SweepConfig { seed: 0, sweep: TheorySweep::reference(), output_dir: None }),
        ),
        ("control.json", ExperimentConfig::HardCosmoothingControl(ControlConfig::reference(0))),
    ];
    for (name, cfg) in configs {
        let mut text = serde_json::to_string_pretty(&cfg)?;
        text.push('\n');
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}
