use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lveval_core::experiment::{self as exp, ExperimentConfig};
use lveval_core::Error;

#[derive(Parser)]
#[command(name = "lveval", version, about = "Latent-variable-model evaluation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the teacher and sample the dataset.
    Generate(Common),
    /// Fit the student sweep on a generated dataset.
    Fit(Common),
    /// Score every fitted model and write the summary tables.
    Eval(Common),
    /// Theory-vs-Monte-Carlo sweep.
    Theory(Common),
    /// Hard co-smoothing control (re-partitioned variants).
    Control(Common),
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        e if e.is_config() => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn load_config(args: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    let out = match (&args.out, cfg.output_dir()) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => return Err(Error::Config("no --out and no output_dir in config".into())),
    };
    Ok((cfg, out))
}

fn run(command: &Command) -> Result<(), Error> {
    let (args, f): (&Common, fn(&ExperimentConfig, &Path) -> Result<(), Error>) = match command {
        Command::Generate(a) => (a, exp::cmd_generate),
        Command::Fit(a) => (a, |c, o| {
            let log = exp::cmd_fit(c, o)?;
            let failed = log.iter().filter(|r| r.error.is_some()).count();
            eprintln!("fitted {} models ({failed} failed)", log.len() - failed);
            Ok(())
        }),
        Command::Eval(a) => (a, |c, o| {
            let report = exp::cmd_eval(c, o)?;
            for corr in &report.correlations {
                eprintln!(
                    "{:>16} vs {:<10} [{:<10}] n={:<3} rho={:+.3} p(neg)={:.3e} p(pos)={:.3e}",
                    corr.x, corr.y, corr.subset, corr.n, corr.rho, corr.p_negative, corr.p_positive
                );
            }
            Ok(())
        }),
        Command::Theory(a) => (a, |c, o| exp::cmd_theory(c, o).map(|rows| eprintln!("{} sweep rows", rows.len()))),
        Command::Control(a) => (a, |c, o| exp::cmd_control(c, o).map(|_| ())),
    };
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let (cfg, out) = load_config(args)?;
    f(&cfg, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
