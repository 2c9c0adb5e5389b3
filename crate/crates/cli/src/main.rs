use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use met_cli::config::ExperimentConfig;
use met_cli::output::write_outputs;
use met_cli::runner::run;
use met_cli::scenarios::{find, scenarios};
use met_cli::selfcheck::{selfcheck, DEFAULT_OPS};

#[derive(Parser)]
#[command(
    name = "met",
    version,
    about = "Lyapunov spectra and Oseledets filtrations of random linear cocycles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config or a built-in scenario.
    Run {
        /// Path to the config file.
        config: Option<PathBuf>,
        /// Built-in scenario to run instead of a config file.
        #[arg(long, conflicts_with = "config")]
        scenario: Option<String>,
        /// Output directory (overrides the config).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Print the scenario config instead of running it.
        #[arg(long)]
        print_config: bool,
    },
    /// List the built-in scenarios.
    ListScenarios,
    /// Check the volume inequalities on seeded random operators.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_OPS)]
        ops: usize,
        /// Also write the report to this file.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Relative slack on every comparison; negative values tighten it.
        #[arg(
            long,
            hide = true,
            default_value_t = 1e-9,
            allow_negative_numbers = true
        )]
        rel_slack: f64,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    met_cli::init_workers()?;
    match cli.command {
        Command::Run {
            config,
            scenario,
            output,
            print_config,
        } => {
            let cfg = match (config, scenario) {
                (Some(path), None) => ExperimentConfig::from_path(&path)?,
                (None, Some(name)) => match find(&name) {
                    Some(s) => s.config(),
                    None => bail!("unknown scenario {name:?}; see list-scenarios"),
                },
                _ => bail!("give a config path or --scenario"),
            };
            if print_config {
                println!("{}", cfg.to_json());
                return Ok(true);
            }
            let report = run(&cfg).context("run failed")?;
            let dir = output.unwrap_or_else(|| PathBuf::from(&cfg.outputs.directory));
            write_outputs(&report, &dir, &cfg.outputs.formats)
                .with_context(|| format!("writing outputs to {}", dir.display()))?;
            for c in &report.checks {
                println!(
                    "{} {}: value {} expected {} tolerance {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.expected,
                    c.tolerance
                );
            }
            println!(
                "{}: {} of {} checks passed; outputs in {}",
                cfg.name.as_deref().unwrap_or("run"),
                report.checks.iter().filter(|c| c.pass).count(),
                report.checks.len(),
                dir.display()
            );
            Ok(report.pass)
        }
        Command::ListScenarios => {
            for s in scenarios() {
                println!("{:<22} {:<13} {}", s.name, s.oracle, s.description);
            }
            Ok(true)
        }
        Command::Selfcheck {
            seed,
            ops,
            output,
            rel_slack,
        } => {
            let report = selfcheck(seed, ops, rel_slack);
            let text = report.to_json();
            if let Some(path) = output {
                std::fs::write(&path, &text)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{text}");
            Ok(report.pass)
        }
    }
}
