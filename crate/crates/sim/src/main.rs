//! Command-line front end: run scenario presets, emit metrics, and execute
//! the analytic self-checks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use smi_sim::output::write_artifacts;
use smi_sim::presets::{load_with_config, PresetError, PresetFile, PRESET_NAMES};
use smi_sim::runner::run_experiment;
use smi_sim::verify::{run_checks, VerifyInputs};

#[derive(Parser)]
#[command(name = "smi-sim", version, about = "Spatio-temporal key-exchange simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write summary.json, scores.csv, convergence.csv.
    Run {
        /// Built-in scenario name.
        #[arg(long, default_value = "baseline")]
        preset: String,
        /// Flat-key TOML file layered over the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// First seed of the batch.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Seeds to run: seed, seed+1, …
        #[arg(long, default_value_t = 1)]
        trials: u32,
        /// Override the node count.
        #[arg(long)]
        nodes: Option<u32>,
        /// Override the horizon in days.
        #[arg(long)]
        days: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Record a message transcript (transcript.jsonl).
        #[arg(long, default_value_t = false)]
        trace: bool,
    },
    /// Run the analytic self-checks and print PASS/FAIL per check.
    Verify {
        /// Flat-key TOML file supplying the constants to check.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { preset, config, seed, trials, nodes, days, out, trace } => {
            cmd_run(&preset, config.as_deref(), seed, trials, nodes, days, &out, trace)
        }
        Command::Verify { config } => cmd_verify(config.as_deref()),
        Command::Presets => {
            for p in PRESET_NAMES {
                println!("{p}");
            }
            ExitCode::SUCCESS
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    preset: &str,
    config: Option<&std::path::Path>,
    seed: u64,
    trials: u32,
    nodes: Option<u32>,
    days: Option<u64>,
    out: &std::path::Path,
    trace: bool,
) -> ExitCode {
    let (mut experiment, _raw) = match load_with_config(preset, config) {
        Ok(x) => x,
        Err(PresetError::UnknownPreset(name)) => {
            eprintln!("error: unknown preset `{name}` (try `smi-sim presets`)");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for arm in &mut experiment.arms {
        if let Some(n) = nodes {
            arm.cfg.node_count = n;
            if let smi_core::config::Population::ModelGroups { pairs_per_model, models } =
                &mut arm.cfg.population
            {
                // Keep the per-model split consistent with the override.
                let per = (n / (2 * models.len() as u32)).max(1);
                *pairs_per_model = per;
                arm.cfg.node_count = 2 * per * models.len() as u32;
            }
        }
        if let Some(d) = days {
            arm.cfg.duration = smi_core::units::Duration::from_secs(d * smi_core::units::SECS_PER_DAY);
        }
        arm.cfg.trace = trace || arm.cfg.trace;
    }
    let seeds: Vec<u64> = (0..trials as u64).map(|i| seed + i).collect();
    let trials = match run_experiment(&experiment, &seeds) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: simulation failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    let summary = match write_artifacts(out, &experiment, &seeds, &trials) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot write artifacts under {}: {e}", out.display());
            return ExitCode::from(3);
        }
    };
    println!(
        "preset {} ({} arms, {} seeds) -> {}",
        summary.preset,
        summary.arms.len(),
        seeds.len(),
        out.display()
    );
    for arm in &summary.arms {
        println!(
            "  arm {:<12} mean convergence {:>8.2} h   lambda {:.3}   mean NOE {:.1}",
            arm.label, arm.mean_convergence_hours, arm.lambda, arm.mean_noe
        );
    }
    if let Some(r) = summary.growth_slowdown {
        println!("  adversarial/clean slowdown: {r:.2}x");
    }
    if let Some(r) = summary.bootstrap_speedup {
        println!("  bootstrap speedup: {r:.1}x");
    }
    ExitCode::SUCCESS
}

fn cmd_verify(config: Option<&std::path::Path>) -> ExitCode {
    let inputs = match config {
        None => VerifyInputs::default(),
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            };
            let file = match PresetFile::parse(&text) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let defaults = smi_core::reputation::Weights::default();
            let w = file.weights.as_ref();
            VerifyInputs {
                weights: smi_core::reputation::Weights::new(
                    w.and_then(|w| w.alpha).unwrap_or(defaults.alpha),
                    w.and_then(|w| w.gamma).unwrap_or(defaults.gamma),
                    w.and_then(|w| w.delta).unwrap_or(defaults.delta),
                    w.and_then(|w| w.w_untrusted).unwrap_or(defaults.w_untrusted),
                    w.and_then(|w| w.w_trusted).unwrap_or(defaults.w_trusted),
                ),
                per_epoch_increase: file.per_epoch_increase.unwrap_or(1680.0),
                epochs_to_threshold: file.epochs_to_threshold.unwrap_or(3),
                calibration_k: file.calibration_k.unwrap_or(24),
                proof_unit: file.proof_unit.unwrap_or(100.0),
            }
        }
    };
    let results = run_checks(&inputs);
    let mut all = true;
    for r in &results {
        all &= r.pass;
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
