//! Command-line front end for the experiment harness.
//!
//! Three verbs, all driven by a JSON config file:
//!
//! - `limh run <config>` runs the configured samplers and writes per-chain
//!   CSVs, cross-chain averages, raw sample dumps (optional), and a JSON
//!   manifest into the output directory.
//! - `limh report-kl <config>` evaluates the closed-form divergence
//!   diagnostics for Gaussian-prior problems, prints them, and writes
//!   `kl_report.json`.
//! - `limh validate <config>` parses and validates the config, builds the
//!   problem, and prints a one-paragraph summary without sampling.
//!
//! Flags can override the config's seed, output directory, and chain
//! count. Thread count is controlled only by the `RAYON_NUM_THREADS`
//! environment variable; results do not depend on it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latent_imh::experiment::{
    derive_seed, report_kl, run_experiment, ExperimentConfig, RunOptions,
};

#[derive(Parser)]
#[command(
    name = "limh",
    about = "Latent-space independence MH experiments for linear inverse problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Master seed, replacing the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replacing the config's `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write CSVs plus a manifest.
    Run {
        /// JSON experiment config.
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Chain count, replacing the config's `n_chains`.
        #[arg(long)]
        chains: Option<u32>,
        /// Also write raw per-chain samples (.bin + .json sidecar).
        #[arg(long)]
        dump_samples: bool,
    },
    /// Evaluate closed-form divergence diagnostics (Gaussian priors only).
    ReportKl {
        /// JSON experiment config.
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse the config, build the problem, and print a summary.
    Validate {
        /// JSON experiment config.
        config: PathBuf,
    },
}

fn load(path: &PathBuf, overrides: Option<&Overrides>) -> latent_imh::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(o) = overrides {
        if let Some(seed) = o.seed {
            config.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            config.output_dir = dir.clone();
        }
    }
    Ok(config)
}

fn run(cli: Cli) -> latent_imh::Result<()> {
    match cli.command {
        Command::Run {
            config,
            overrides,
            chains,
            dump_samples,
        } => {
            let mut config = load(&config, Some(&overrides))?;
            if let Some(n) = chains {
                config.n_chains = n;
            }
            let summary = run_experiment(&config, &RunOptions { dump_samples })?;
            println!(
                "wrote {} CSV file(s) and {}",
                summary.csv_paths.len(),
                summary.manifest_path.display()
            );
            for sampler in &summary.manifest.samplers {
                println!(
                    "  {:<12} mean acceptance {:.4}",
                    sampler.name, sampler.mean_acceptance_rate
                );
            }
            if summary.manifest.truncated {
                println!("  note: at least one chain hit the solve budget early");
            }
            Ok(())
        }
        Command::ReportKl { config, overrides } => {
            let config = load(&config, Some(&overrides))?;
            let report = report_kl(&config)?;
            let text = serde_json::to_string_pretty(&report)?;
            std::fs::create_dir_all(&config.output_dir)?;
            let path = config.output_dir.join("kl_report.json");
            std::fs::write(&path, &text)?;
            println!("{text}");
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Validate { config } => {
            let config = load(&config, None)?;
            let built = config.problem.build(derive_seed(config.seed, "problem"))?;
            let problem = &built.problem;
            let meta = problem.metadata();
            println!(
                "config valid: family={} d={} d_y={} sigma={:.6e} samplers=[{}] chains={}",
                meta.family,
                problem.dim(),
                problem.obs_dim(),
                problem.noise().sigma(),
                config
                    .samplers
                    .iter()
                    .map(|s| s.name())
                    .collect::<Vec<_>>()
                    .join(", "),
                config.n_chains,
            );
            if let Some(e) = meta.spectral_error {
                println!("spectral error of the surrogate: {e:.6e}");
            }
            if let Some(q) = meta.snr_log10 {
                println!("log10 signal-to-noise ratio: {q:.4}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
