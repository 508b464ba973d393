use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use degenctrl_cli::{run_command, Command, RunConfig, RunOptions};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    Validate,
    Forward,
    Adjoint,
    Carleman,
    Control,
    Fixpoint,
    Sweep,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Validate => Command::Validate,
            Sub::Forward => Command::Forward,
            Sub::Adjoint => Command::Adjoint,
            Sub::Carleman => Command::Carleman,
            Sub::Control => Command::Control,
            Sub::Fixpoint => Command::Fixpoint,
            Sub::Sweep => Command::Sweep,
        }
    }
}

/// Solvers, inequality audits and null controls for degenerate
/// age-structured models with memory.
#[derive(Parser, Debug)]
#[command(name = "degenctrl", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Concurrent instances for `sweep`.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory; `DEGENCTRL_OUT` takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

const MAX_SHOWN: usize = 20;

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let out = std::env::var_os("DEGENCTRL_OUT")
        .map(PathBuf::from)
        .or(args.out)
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let opts = RunOptions { out, jobs: args.jobs, seed: args.seed };
    match run_command(args.command.into(), &cfg, &opts) {
        Ok(report) => {
            for v in report.violations.iter().take(MAX_SHOWN) {
                println!("VIOLATION {v}");
            }
            if report.violations.len() > MAX_SHOWN {
                println!("... {} more in report.json", report.violations.len() - MAX_SHOWN);
            }
            println!("report_hash {}", report.report_hash);
            println!("output {}", opts.out.display());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
