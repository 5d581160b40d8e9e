use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use sampled_ioss_cli::{embedded_config, parse_json, run, Command, Format, RunConfig};

/// Certification, falsification and synthesis of sample-based incremental
/// detectability bounds.
#[derive(Parser)]
#[command(name = "sampled-ioss", version)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Inline equations, catalog name (`name[:k=v,...]`) or system file.
    #[arg(long, global = true)]
    system: Option<String>,
    /// SamplingScheme JSON or file.
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Certificate file or inline JSON.
    #[arg(long, global = true)]
    cert: Option<String>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Rerun the config embedded in an earlier artifact (or a RunConfig JSON file).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn config_from(cli: Cli) -> Result<RunConfig> {
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = parse_json::<RunConfig>(&text, "config").or_else(|_| embedded_config(&text))?;
        if cli.out.is_some() {
            cfg.out = cli.out;
        }
        return Ok(cfg);
    }
    let Some(command) = cli.command else {
        bail!("a subcommand is required (see --help)");
    };
    Ok(RunConfig {
        command,
        system: cli.system,
        scheme: cli.scheme,
        cert: cli.cert,
        horizon: cli.horizon,
        budget: cli.budget,
        trials: cli.trials,
        seed: cli.seed,
        out: cli.out,
        format: cli.format,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = config_from(Cli::parse()).and_then(|cfg| {
        let outcome = run(&cfg)?;
        match &cfg.out {
            Some(path) => std::fs::write(path, &outcome.artifact).with_context(|| format!("writing {}", path.display()))?,
            None => print!("{}", outcome.artifact),
        }
        Ok(outcome.exit)
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
