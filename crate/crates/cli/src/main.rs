//! `pairmlm` command-line tool.
//!
//! Exit status: 0 on success, 1 on input or configuration errors, 2 when a
//! model fit does not converge.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pairmlm::data::{pair_summaries, TrialDataset};
use pairmlm::design::sate_estimate;
use pairmlm::lrt::lrt;
use pairmlm::mlm::{fit, FitOptions, ModelSpec};
use pairmlm::record::{lrt_record, Record};
use pairmlm::report::{figure1, summarize_sweep, write_raw_csv};
use pairmlm::simulation::{run_sweep, run_sweep_with_threads, ScenarioConfig};

#[derive(Parser)]
#[command(name = "pairmlm", version, about = "Multilevel and design-based analysis of matched-pair cluster trials")]
struct Cli {
    /// Master seed for simulations (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (fit, estimate, lrt) or directory (simulate, figure1).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scenario configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for simulations; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a multilevel model to a trial CSV.
    Fit {
        csv: PathBuf,
        /// mlm1, mlm2 or mlm3.
        #[arg(long, default_value = "mlm2")]
        model: ModelSpec,
        /// Use restricted maximum likelihood.
        #[arg(long)]
        reml: bool,
        /// Objective-evaluation budget per simplex search.
        #[arg(long, default_value_t = 2000)]
        max_evals: usize,
    },
    /// Design-based estimate of the average treatment effect.
    Estimate { csv: PathBuf },
    /// Test for treatment-effect heterogeneity across pairs.
    Lrt {
        csv: PathBuf,
        /// Adjust both models for the cluster covariate.
        #[arg(long)]
        covariate: bool,
    },
    /// Run a simulation sweep and write summary and raw CSVs.
    Simulate,
    /// Reproduce both panels of the standard-error figure.
    Figure1,
}

enum Outcome {
    Done,
    NotConverged,
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::from_path(path).with_context(|| format!("reading config {}", path.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Fit { csv, model, reml, max_evals } => {
            let ds = TrialDataset::from_csv_path(csv).with_context(|| format!("reading {}", csv.display()))?;
            let options = FitOptions { reml: *reml, max_evals: *max_evals, ..FitOptions::default() };
            let fit = fit(&ds, *model, &options)?;
            emit(out, &Record::from(&fit).to_string())?;
            Ok(if fit.converged { Outcome::Done } else { Outcome::NotConverged })
        }
        Command::Estimate { csv } => {
            let ds = TrialDataset::from_csv_path(csv).with_context(|| format!("reading {}", csv.display()))?;
            let est = sate_estimate(&pair_summaries(&ds)?)?;
            emit(out, &Record::from(&est).to_string())?;
            Ok(Outcome::Done)
        }
        Command::Lrt { csv, covariate } => {
            let ds = TrialDataset::from_csv_path(csv).with_context(|| format!("reading {}", csv.display()))?;
            let (null, alt) =
                if *covariate { (ModelSpec::MLM1_COVARIATE, ModelSpec::MLM3) } else { (ModelSpec::MLM1, ModelSpec::MLM2) };
            let options = FitOptions::default();
            let null_fit = fit(&ds, null, &options)?;
            let alt_fit = fit(&ds, alt, &options)?;
            let result = lrt(&null_fit, &alt_fit)?;
            emit(out, &lrt_record(&null_fit, &alt_fit, &result).to_string())?;
            Ok(if null_fit.converged && alt_fit.converged { Outcome::Done } else { Outcome::NotConverged })
        }
        Command::Simulate => {
            let cfg = load_config(cli)?;
            let grid = cfg.pi_grid.clone().unwrap_or_else(|| vec![cfg.pi]);
            let sweep = match cli.threads {
                Some(n) => run_sweep_with_threads(&cfg, &grid, n)?,
                None => run_sweep(&cfg, &grid)?,
            };
            let table = summarize_sweep(&sweep)?;
            let dir = out.unwrap_or(Path::new("."));
            fs::create_dir_all(dir)?;
            fs::write(dir.join("summary.csv"), table.to_csv_string())?;
            let mut raw = Vec::new();
            write_raw_csv(&sweep, &mut raw)?;
            fs::write(dir.join("raw.csv"), raw)?;
            print!("{}", table.to_csv_string());
            Ok(Outcome::Done)
        }
        Command::Figure1 => {
            let cfg = load_config(cli)?;
            let dir = out.unwrap_or(Path::new("figure1"));
            let result = figure1(&cfg, dir, cli.threads)?;
            for path in &result.files {
                println!("{}", path.display());
            }
            Ok(Outcome::Done)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("pairmlm: optimizer did not converge");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("pairmlm: {err:#}");
            ExitCode::from(1)
        }
    }
}
