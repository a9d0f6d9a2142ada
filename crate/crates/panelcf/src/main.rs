use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use panelcf::commands::{cmd_estimate, cmd_infer, cmd_ingest, cmd_placebo, Run};
use panelcf::{AppError, AppResult, RunConfig};

#[derive(Parser)]
#[command(name = "panelcf", version = panelcf::VERSION, about = "Counterfactual estimation and randomization inference for panel data")]
struct Cli {
    /// Run configuration (TOML with dotted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for placebo subsets and trials.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load, impute and transform the panel; write the cleaned panel.
    Ingest,
    /// Fit the configured estimator and write treatment effects.
    Estimate,
    /// Run the placebo benchmark over pseudo-treated units.
    Placebo,
    /// Randomization p-values and a confidence interval for the estimated effect.
    Infer,
}

fn run(cli: Cli) -> AppResult<Vec<PathBuf>> {
    let path = cli.config.ok_or_else(|| AppError::validation("--config is required"))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = cli.out {
        cfg.output.dir = o;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(AppError::validation("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| AppError::validation(format!("thread pool: {e}")))?;
    }
    let mut r = Run::new(cfg)?;
    let res = match cli.command {
        Command::Ingest => cmd_ingest(&mut r),
        Command::Estimate => cmd_estimate(&mut r),
        Command::Placebo => cmd_placebo(&mut r),
        Command::Infer => cmd_infer(&mut r),
    };
    for p in r.written() {
        eprintln!("wrote {}", p.display());
    }
    res.map(|_| r.written().to_vec())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
