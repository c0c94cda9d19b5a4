use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use branchlab::runner::{self, ExperimentConfig, ExperimentId, OutputFormat, RunManifest};

#[derive(Parser)]
#[command(name = "branchlab", version, about = "Branching, probability-law and collapse experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Branch construction, classicality and observer-basis checks.
    BranchDemo(RunArgs),
    /// Probability-law constraints, Lagrange condition, composition and affine solve.
    BornDerive(RunArgs),
    /// Many-run branch classes, counting and micro-law washout.
    LargeN(RunArgs),
    /// Linear-evolution theorem and the stochastic collapse surrogate.
    Collapse(RunArgs),
    /// Equal-amplitude fine-graining with ancillas.
    Finegrain(RunArgs),
    /// Bohmian trajectories in a two-branch packet.
    Bohm(RunArgs),
    /// Aggregate manifests into one pass/fail table.
    Summary {
        /// manifest.json files, or directories containing one.
        manifests: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run on a single thread.
    #[arg(long)]
    serial: bool,
    /// Output directory (overrides BRANCHLAB_OUT and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn build_config(id: ExperimentId, args: &RunArgs) -> branchlab::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &args.config {
        Some(path) => runner::load_config(path, Some(id))?,
        None => ExperimentConfig::new(id),
    };
    if cfg.experiment != id {
        return Err(branchlab::Error::Config {
            path: "experiment".into(),
            message: format!("config is for {}, not {}", cfg.experiment.name(), id.name()),
        });
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if args.serial {
        cfg.serial = true;
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    let out = runner::resolve_output_dir(args.out.as_deref(), &cfg);
    Ok((cfg, out))
}

fn print_manifest(m: &RunManifest) {
    println!("{} seed={} out={}", m.config.experiment.name(), m.config.master_seed, m.output_dir.display());
    for c in &m.checks {
        let value = c.value.map(|v| format!("{v:e}")).unwrap_or_else(|| "-".into());
        let tol = c.tolerance.map(|v| format!(" tolerance={v:e}")).unwrap_or_default();
        println!("{} {} value={}{} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, value, tol, c.detail);
    }
    for o in &m.observations {
        println!("  {} = {}", o.name, o.value);
    }
}

fn run_experiment(id: ExperimentId, args: &RunArgs) -> ExitCode {
    let (cfg, out) = match build_config(id, args) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match runner::run_in(&cfg, &out) {
        Ok(m) => {
            print_manifest(&m);
            if m.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn summary(paths: &[PathBuf]) -> ExitCode {
    let mut manifests = Vec::new();
    for p in paths {
        let file = if p.is_dir() { p.join(runner::MANIFEST_FILE) } else { p.clone() };
        match runner::read_manifest(&file) {
            Ok(m) => manifests.push(m),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    let s = runner::report_summary(&manifests);
    print!("{}", s.table());
    ExitCode::from(s.exit_code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::BranchDemo(a) => run_experiment(ExperimentId::BranchDemo, a),
        Command::BornDerive(a) => run_experiment(ExperimentId::BornDerive, a),
        Command::LargeN(a) => run_experiment(ExperimentId::LargeN, a),
        Command::Collapse(a) => run_experiment(ExperimentId::Collapse, a),
        Command::Finegrain(a) => run_experiment(ExperimentId::Finegrain, a),
        Command::Bohm(a) => run_experiment(ExperimentId::Bohm, a),
        Command::Summary { manifests } => summary(manifests),
    }
}
