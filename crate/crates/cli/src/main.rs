//! `sde-opinf` command-line front end.
//!
//! ```text
//! sde-opinf simulate --config exp.toml --out run/
//! sde-opinf infer    --config exp.toml --out run/
//! sde-opinf evaluate --config exp.toml --out run/ [--mode oracle|montecarlo]
//! sde-opinf report   --config exp.toml --out run/
//! ```
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure, 4 missing artifact.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sde_opinf_cli::commands::{self, Context, EvaluationMode};
use sde_opinf_cli::config::{self, Overrides};
use sde_opinf_cli::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "sde-opinf", version, about = "Operator inference for bilinear SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the full model, sample the subspace and training ensembles.
    Simulate(Common),
    /// Infer reduced models from the stored training moments.
    Infer(Common),
    /// Compute error tables of the POD and inferred models.
    Evaluate(Common),
    /// Summarize the error tables as markdown.
    Report(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oracle,
    Montecarlo,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Overrides `benchmark.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn context(c: &Common) -> CliResult<Context> {
    if let Some(t) = c.threads {
        if t == 0 {
            return Err(CliError::config("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    let ov = Overrides {
        mode: c.mode.map(|m| match m {
            Mode::Oracle => EvaluationMode::Oracle,
            Mode::Montecarlo => EvaluationMode::Montecarlo,
        }),
        seed: c.seed,
    };
    let loaded = config::load(&c.config, &ov)?;
    std::fs::create_dir_all(&c.out).map_err(|e| CliError::io(&c.out, e))?;
    Ok(Context {
        out: c.out.clone(),
        loaded,
        config_path: c.config.clone(),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&context(&c)?),
        Command::Infer(c) => commands::infer(&context(&c)?),
        Command::Evaluate(c) => commands::evaluate(&context(&c)?),
        Command::Report(c) => commands::report(&context(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
