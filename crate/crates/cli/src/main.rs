use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use copo_lab::{run, CliError, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "copo-lab", version, about = "Count-based online preference optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Iterative preference optimization with a count bonus.
    RunCopo,
    /// Optimistic MLE agent on a linear bandit; records cumulative regret.
    RunRegret,
    /// Trains a coin-flip network on a visit-count ladder.
    CfnDemo,
    /// Runs COPO once per exploration factor and summarizes the final values.
    SweepAlpha,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment seed; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one key, e.g. `--set env.n_prompts=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set copo.alpha=A`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f64>,
}

fn resolve(command: Command, common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::defaults_for(command);
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(alpha) = common.alpha {
        cfg.copo.alpha = alpha;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::RunCopo => Command::RunCopo,
        Cmd::RunRegret => Command::RunRegret,
        Cmd::CfnDemo => Command::CfnDemo,
        Cmd::SweepAlpha => Command::SweepAlpha,
    };
    let result = resolve(command, &cli.common).and_then(|cfg| {
        let outcome = run(command, &cfg)?;
        // a closed stdout must not turn a finished run into a failure
        let mut stdout = std::io::stdout().lock();
        for line in outcome.lines {
            let _ = writeln!(stdout, "{line}");
        }
        let _ = writeln!(stdout, "wrote {}", cfg.out.display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("copo-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
