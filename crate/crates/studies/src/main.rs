//! Command-line entry point for the scenario studies.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use v2g_studies::config::{load_config, validate_config, StudyKind};
use v2g_studies::studies::{
    run_charger, run_profiles, run_projection, run_robustness, run_tariff_variance,
    run_temperature, StudyContext,
};

#[derive(Parser)]
#[command(
    name = "v2g-studies",
    version,
    about = "Trade-off, robustness and projection studies for V2G smart charging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides study.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides study.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the scenario sweep (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Trade-off sweep across ambient temperatures.
    Temperature(RunArgs),
    /// Trade-off sweep across tariff variance levels.
    TariffVariance(RunArgs),
    /// Trade-off sweep across charger power ratings.
    Charger(RunArgs),
    /// Export charging profiles for selected w values.
    Profiles(RunArgs),
    /// Sensitivity/regret comparison of both solution approaches.
    Robustness(RunArgs),
    /// Year-long projection across battery capacities.
    Projection(RunArgs),
    /// Validate a configuration file and list every violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();

    let (args, expected_kind) = match &cli.command {
        Command::Temperature(a) => (a, StudyKind::Temperature),
        Command::TariffVariance(a) => (a, StudyKind::TariffVariance),
        Command::Charger(a) => (a, StudyKind::Charger),
        Command::Profiles(a) => (a, StudyKind::Profiles),
        Command::Robustness(a) => (a, StudyKind::Robustness),
        Command::Projection(a) => (a, StudyKind::Projection),
        Command::Validate { config } => {
            let loaded = load_config(config)
                .with_context(|| format!("loading {}", config.display()))?;
            return match validate_config(&loaded) {
                Ok(()) => {
                    println!("ok: configuration is valid (hash {})", loaded.config_hash);
                    Ok(ExitCode::SUCCESS)
                }
                Err(violations) => {
                    eprintln!("invalid configuration ({} violations):", violations.len());
                    for v in violations {
                        eprintln!("  - {v}");
                    }
                    Ok(ExitCode::from(2))
                }
            };
        }
    };

    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }

    let loaded = load_config(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if loaded.config.study.kind != expected_kind {
        bail!(
            "configuration declares study kind '{}' but the '{expected_kind}' command was invoked",
            loaded.config.study.kind
        );
    }
    if let Err(violations) = validate_config(&loaded) {
        eprintln!("invalid configuration ({} violations):", violations.len());
        for v in violations {
            eprintln!("  - {v}");
        }
        return Ok(ExitCode::from(2));
    }

    let ctx = StudyContext::new(loaded)
        .with_out_dir(args.out.clone())
        .with_seed(args.seed);
    if ctx.out_dir.is_none() {
        bail!("no output directory: set study.out_dir in the config or pass --out");
    }

    match expected_kind {
        StudyKind::Temperature => {
            let study = run_temperature(&ctx)?;
            println!(
                "temperature study: {} rows, {} slopes -> {}",
                study.rows.len(),
                study.slopes.len(),
                ctx.out_dir.as_ref().unwrap().display()
            );
        }
        StudyKind::TariffVariance => {
            let study = run_tariff_variance(&ctx)?;
            println!(
                "tariff-variance study: {} rows across {} profiles -> {}",
                study.rows.len(),
                study.profiles.len(),
                ctx.out_dir.as_ref().unwrap().display()
            );
        }
        StudyKind::Charger => {
            let study = run_charger(&ctx)?;
            println!(
                "charger study: {} rows, spans per rating: {:?} -> {}",
                study.rows.len(),
                study
                    .spans
                    .iter()
                    .map(|s| (s.rating_kw, s.charging_span_eur))
                    .collect::<Vec<_>>(),
                ctx.out_dir.as_ref().unwrap().display()
            );
        }
        StudyKind::Profiles => {
            let study = run_profiles(&ctx)?;
            println!(
                "profile export: {} schedules -> {}",
                study.schedules.len(),
                ctx.out_dir.as_ref().unwrap().display()
            );
        }
        StudyKind::Robustness => {
            let study = run_robustness(&ctx)?;
            let s = &study.summary;
            println!(
                "robustness: median sensitivity gt {:.3e} vs mo {:.3e}; \
                 median regret gt {:.3e} vs mo {:.3e} -> {}",
                s.pooled_median_sensitivity_gt(),
                s.pooled_median_sensitivity_mo(),
                s.pooled_median_regret_gt(),
                s.pooled_median_regret_mo(),
                ctx.out_dir.as_ref().unwrap().display()
            );
        }
        StudyKind::Projection => {
            let study = run_projection(&ctx)?;
            println!(
                "projection: {} rows over {}-interval sessions -> {}",
                study.rows.len(),
                study.session_intervals,
                ctx.out_dir.as_ref().unwrap().display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
