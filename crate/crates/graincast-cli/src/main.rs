//! `graincast` — reproducible batch runs of the crop-yield growth model.
//!
//! ```text
//! graincast <command> [options] [args...]
//!
//! Commands:
//!   fit        Fit the configured model variant; write posterior + diagnostics.
//!   evidence   Estimate log model evidence for one or more variants
//!              (positional args; default: all variants).
//!   select     Forward country selection by marginal likelihood.
//!   backtest   Rolling one-step backtest with calibration and LFO-CV scoring.
//!   project    Climate-scenario projection with uncertainty decomposition.
//!   verify     Run the built-in numerical verification suite.
//!
//! Options:
//!   --config PATH          INI configuration file.
//!   --output DIR           Output directory (overrides run.output_dir).
//!   --seed N               Run seed (overrides run.seed).
//!   --threads N            Worker threads (overrides run.threads).
//!   --section.key=value    Override any configuration key.
//! ```
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure,
//! 4 I/O or data-format error.

use std::path::PathBuf;
use std::process::ExitCode;

use graincast::cli;
use graincast::config::{self, ConfigMap, RunConfig};
use graincast::error::{Error, Result};
use graincast::model::{VariantKind, ALL_VARIANT_KINDS};

const USAGE: &str = "\
usage: graincast <command> [options]

commands:
  fit | evidence [variant...] | select | backtest | project | verify

options:
  --config PATH           INI configuration file
  --output DIR            output directory (overrides run.output_dir)
  --seed N                run seed (overrides run.seed)
  --threads N             worker threads (overrides run.threads)
  --section.key=value     override any configuration key
";

struct Cli {
    command: String,
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
    positional: Vec<String>,
}

fn parse_args(args: &[String]) -> Result<Cli> {
    let mut it = args.iter().peekable();
    let command = it
        .next()
        .ok_or_else(|| Error::Config(format!("missing command\n{USAGE}")))?
        .clone();
    let mut cli = Cli {
        command,
        config_path: None,
        overrides: Vec::new(),
        positional: Vec::new(),
    };
    let take_value =
        |it: &mut std::iter::Peekable<std::slice::Iter<String>>, flag: &str| -> Result<String> {
            it.next()
                .cloned()
                .ok_or_else(|| Error::Config(format!("{flag} needs a value")))
        };
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--config" => cli.config_path = Some(PathBuf::from(take_value(&mut it, "--config")?)),
            "--output" => {
                let dir = take_value(&mut it, "--output")?;
                cli.overrides.push(format!("run.output_dir={dir}"));
            }
            "--seed" => {
                let seed = take_value(&mut it, "--seed")?;
                cli.overrides.push(format!("run.seed={seed}"));
            }
            "--threads" => {
                let threads = take_value(&mut it, "--threads")?;
                cli.overrides.push(format!("run.threads={threads}"));
            }
            "--help" | "-h" => {
                return Err(Error::Config(USAGE.to_string()));
            }
            other if other.starts_with("--") => {
                let body = &other[2..];
                // `--section.key=value` is a generic configuration override.
                let is_override = body
                    .split_once('=')
                    .is_some_and(|(dotted, _)| dotted.contains('.'));
                if is_override {
                    cli.overrides.push(body.to_string());
                } else {
                    return Err(Error::Config(format!("unknown option {other}\n{USAGE}")));
                }
            }
            other => cli.positional.push(other.to_string()),
        }
    }
    Ok(cli)
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut map: ConfigMap = match &cli.config_path {
        Some(path) => config::load_ini(path)?,
        None => ConfigMap::new(),
    };
    for spec in &cli.overrides {
        config::apply_override(&mut map, spec)?;
    }
    RunConfig::from_map(map)
}

fn init_threads(config: &RunConfig) -> Result<()> {
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("run.threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match cli.command.as_str() {
        "fit" => {
            let config = effective_config(cli)?;
            init_threads(&config)?;
            let out = cli::cmd_fit(&config)?;
            println!(
                "fit: log evidence {:.4} over {} stages -> {}",
                out.log_evidence,
                out.trace.len(),
                config.output_dir.display()
            );
            Ok(())
        }
        "evidence" => {
            let config = effective_config(cli)?;
            init_threads(&config)?;
            let variants: Vec<VariantKind> = if cli.positional.is_empty() {
                ALL_VARIANT_KINDS.to_vec()
            } else {
                cli.positional
                    .iter()
                    .map(|name| {
                        VariantKind::parse(name)
                            .map_err(|_| Error::Config(format!("unknown model variant `{name}`")))
                    })
                    .collect::<Result<_>>()?
            };
            let records = cli::cmd_evidence(&config, &variants)?;
            for r in &records {
                println!(
                    "evidence: {:<16} logZ {:>10.4} (se {:.4}, {} replicates)",
                    r.variant.kind.as_str(),
                    r.log_evidence,
                    r.se_estimate,
                    r.seed_set.len()
                );
            }
            Ok(())
        }
        "select" => {
            let config = effective_config(cli)?;
            init_threads(&config)?;
            let outcome = cli::cmd_select(&config)?;
            println!(
                "select: retained {} countries after {} evaluations -> {}",
                outcome.selected.len(),
                outcome.audit.len(),
                config.output_dir.display()
            );
            Ok(())
        }
        "backtest" => {
            let config = effective_config(cli)?;
            init_threads(&config)?;
            let out = cli::cmd_backtest(&config)?;
            println!(
                "backtest: {} forecast rows, {} calibration rows -> {}",
                out.rows.len(),
                out.calibration.len(),
                config.output_dir.display()
            );
            Ok(())
        }
        "project" => {
            let config = effective_config(cli)?;
            init_threads(&config)?;
            let draws = cli::cmd_project(&config)?;
            println!(
                "project: {} scenarios propagated -> {}",
                draws.len(),
                config.output_dir.display()
            );
            Ok(())
        }
        "verify" => {
            // verify is self-contained; config (for an output dir) is optional.
            let output_dir = match effective_config(cli) {
                Ok(config) => Some(config.output_dir),
                Err(_) => None,
            };
            cli::cmd_verify(output_dir.as_deref())?;
            println!("verify: all checks passed");
            Ok(())
        }
        other => Err(Error::Config(format!("unknown command `{other}`\n{USAGE}"))),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse_args(&args) {
        Ok(cli) => cli,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
