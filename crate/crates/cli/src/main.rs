use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod report;
mod run;
mod store;

use config::{ConfigError, Experiment, ExperimentConfig};
use report::Format;

#[derive(Parser)]
#[command(name = "rewire-lab", version, about = "Graph-rewiring experiments and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Seed-level worker threads (default: seed count capped at available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Reuse finished runs whose content hash matches.
    #[arg(long, global = true)]
    resume: bool,
    /// Output directory (report: where to write the rendered table).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    Train,
    Decompose,
    Tsweep,
    Corruption,
    Distill,
    Spectra,
    Jacobian,
    IgrOracle,
    BandwidthAblation,
    /// Render summaries as tables.
    Report {
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
}

impl Command {
    fn experiment(&self) -> Option<Experiment> {
        Some(match self {
            Command::Train => Experiment::Train,
            Command::Decompose => Experiment::Decompose,
            Command::Tsweep => Experiment::Tsweep,
            Command::Corruption => Experiment::Corruption,
            Command::Distill => Experiment::Distill,
            Command::Spectra => Experiment::Spectra,
            Command::Jacobian => Experiment::Jacobian,
            Command::IgrOracle => Experiment::IgrOracle,
            Command::BandwidthAblation => Experiment::BandwidthAblation,
            Command::Report { .. } => return None,
        })
    }
}

const EXIT_CONFIG: u8 = 1;

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("rewire-lab: {}", msg);
    ExitCode::from(EXIT_CONFIG)
}

fn report(cli: &Cli, format: Format, paths: &[PathBuf]) -> ExitCode {
    let mut summaries = Vec::new();
    for p in paths {
        let p = if p.is_dir() { p.join(run::SUMMARY_FILE) } else { p.clone() };
        match report::read_summary(&p) {
            Ok(s) => summaries.push(s),
            Err(e) => return fail(e),
        }
    }
    let text = match report::render(&summaries, format) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    match &cli.out {
        None => print!("{}", text),
        Some(dir) => {
            let path = dir.join(format!("report.{}", format.extension()));
            if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, text)) {
                return fail(format!("{}: {}", path.display(), e));
            }
        }
    }
    ExitCode::SUCCESS
}

fn experiment(cli: &Cli, exp: Experiment) -> ExitCode {
    let Some(path) = &cli.config else {
        return fail(ConfigError("--config is required".into()));
    };
    let mut cfg = match ExperimentConfig::read(path) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(s) = &cli.seed_list {
        cfg.seeds = s.clone();
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(exp.name()));
    if let Err(e) = cfg.validate(exp) {
        return fail(e);
    }
    cfg.experiment = Some(exp);
    cfg.out = None;
    let prepared = match run::prepare(exp, &cfg) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    if let Err(e) = std::fs::create_dir_all(&out) {
        return fail(ConfigError(format!("out: cannot create {}: {}", out.display(), e)));
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let jobs = cli.jobs.unwrap_or_else(|| cfg.seeds.len().min(cores)).max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    match pool.install(|| run::run_experiment(exp, &cfg, &prepared, &out, cli.resume)) {
        Ok((s, trained, reused)) => {
            eprintln!(
                "rewire-lab: {}: {:?}, {} runs ({} trained, {} reused), {} failed -> {}",
                exp.name(),
                s.status,
                s.runs,
                trained,
                reused,
                s.failed_runs.len(),
                out.join(run::SUMMARY_FILE).display()
            );
            if let Some(e) = &s.error {
                eprintln!("rewire-lab: {}", e);
            }
            for f in &s.failed_runs {
                eprintln!("  seed {} {} T={}: {}", f.seed, f.mode, f.inner_steps, f.message);
            }
            ExitCode::from(s.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("rewire-lab: cannot write summary: {}", e);
            ExitCode::from(run::Status::Failed.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match (&cli.command, cli.command.experiment()) {
        (Command::Report { format, summaries }, _) => report(&cli, *format, summaries),
        (_, Some(exp)) => experiment(&cli, exp),
        (_, None) => unreachable!("every non-report command maps to an experiment"),
    }
}
