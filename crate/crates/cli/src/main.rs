use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use starhop::experiment::{self, ExperimentPlan, ResultTable};
use starhop::marl::{Algorithm, Architecture, Hyperparams, OnOffPolicy, RunSetup};
use starhop::scenario::ConfigFile;

mod selftest;

#[derive(Parser)]
#[command(name = "starhop", version, about = "Multi-hop STAR-RIS energy-efficiency experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every tuple of an experiment plan.
    ///
    /// Trailing `--key=value` arguments override scenario or hyperparameter
    /// fields of the plan, e.g. `--episodes=20 --n_elements=8`.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Recompute the summary of a finished run directory.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Train a single configuration and write its per-slot records.
    Train {
        /// Scenario JSON with a `master_seed` key.
        #[arg(long)]
        config: PathBuf,
        /// Hyperparameter JSON; defaults when omitted.
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long, default_value = "MAGAR")]
        algorithm: String,
        #[arg(long, default_value = "ES")]
        baseline: String,
        #[arg(long, default_value = "OPTIMIZED")]
        policy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

fn parse_name<T: serde::de::DeserializeOwned>(raw: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(raw.to_uppercase())).with_context(|| format!("unknown {what} `{raw}`"))
}

fn apply_overrides(plan: &mut ExperimentPlan, overrides: &[String]) -> Result<()> {
    for raw in overrides {
        let Some((key, value)) = raw.trim_start_matches('-').split_once('=') else {
            bail!("override `{raw}` is not of the form --key=value");
        };
        if plan.base.set_field(key, value).is_err() {
            plan.hyper
                .set_field(key, value)
                .with_context(|| format!("cannot apply override `{raw}`"))?;
        }
    }
    plan.validate()?;
    Ok(())
}

fn report(summary: &experiment::Summary) -> ExitCode {
    print!("{}", summary.to_text());
    if summary.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { plan, out, overrides } => {
            let mut p = ExperimentPlan::load(&plan).with_context(|| format!("loading plan {}", plan.display()))?;
            apply_overrides(&mut p, &overrides)?;
            log::info!("running {} tuples", p.tuples()?.len());
            let summary = experiment::run_plan_to_dir(&p, &out)?;
            Ok(report(&summary))
        }
        Command::Summarize { input } => {
            let manifest: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(input.join("manifest.json"))?)?;
            let plan: ExperimentPlan = serde_json::from_value(manifest["plan"].clone()).context("manifest has no plan")?;
            let table = ResultTable::read_csv(std::fs::File::open(input.join("results.csv"))?)?;
            let summary = experiment::summarize(&table, &plan.assertions)?;
            std::fs::write(input.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            Ok(report(&summary))
        }
        Command::Train { config, hyper, algorithm, baseline, policy, out } => {
            let cfg = ConfigFile::load(&config)?;
            let hyper: Hyperparams = match hyper {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => Hyperparams::default(),
            };
            let setup = RunSetup {
                config: cfg.config,
                hyper,
                algorithm: parse_name::<Algorithm>(&algorithm.replace('-', "_"), "algorithm")?,
                architecture: parse_name::<Architecture>(&baseline, "baseline")?,
                policy: parse_name::<OnOffPolicy>(&policy.replace('-', "_"), "policy")?,
                master_seed: cfg.master_seed,
            };
            std::fs::create_dir_all(&out)?;
            experiment::write_run_records(&setup, &out.join("records.csv"))?;
            std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&setup.manifest()?)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let results = selftest::run_all();
            let mut ok = true;
            for (name, outcome) in &results {
                match outcome {
                    Ok(()) => println!("[PASS] {name}"),
                    Err(msg) => {
                        ok = false;
                        println!("[FAIL] {name}: {msg}");
                    }
                }
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
