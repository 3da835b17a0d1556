//! Command-line front end: parses a TOML config, dispatches to the
//! simulation pipeline, and writes plot-ready CSV artifacts plus a manifest
//! under the output directory.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 numerical failure
//! during a run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qsr_core::config::{parse_config, RunConfig};
use qsr_core::harness::{
    derive_seed, run_experiment, sweep_noise_detailed, write_run_dir, HarnessError, RunDescription,
    RunPayload,
};
use qsr_core::jump::JumpEngine;
use qsr_core::model::validate_params;

#[derive(Parser)]
#[command(
    name = "qsr",
    version,
    about = "Quantum-jump simulation of modulated resonance fluorescence and its \
             stochastic-resonance analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a single photon-emission trajectory and write its record.
    Trajectory(CommonArgs),
    /// Run the single-point pipeline: trajectory batch, telegraph,
    /// spectrum, harmonic report.
    Spectrum(CommonArgs),
    /// Sweep the noise pump intensity and record the SNR curve.
    Sweep(CommonArgs),
    /// Print the broadband-pumping validity margins and exit.
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Also write every per-trajectory photon record.
    #[arg(long)]
    keep_trajectories: bool,
}

enum AppError {
    /// Unusable configuration or invocation; exit 1.
    Config(String),
    /// The run itself failed; exit 2.
    Run(String),
}

impl From<HarnessError> for AppError {
    fn from(e: HarnessError) -> Self {
        match e {
            // Parameter problems are config problems that slipped past
            // parsing (e.g. values only checkable together).
            HarnessError::Parameter(_) | HarnessError::SweepConfig(_) => {
                AppError::Config(e.to_string())
            }
            other => AppError::Run(format_error_chain(&other)),
        }
    }
}

fn format_error_chain(e: &dyn std::error::Error) -> String {
    let mut text = e.to_string();
    let mut source = e.source();
    while let Some(s) = source {
        // Chained causes are often already embedded in the Display text;
        // only append genuinely new information.
        let rendered = s.to_string();
        if !text.contains(&rendered) {
            text.push_str(": ");
            text.push_str(&rendered);
        }
        source = s.source();
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, AppError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| AppError::Config(e.to_string()))?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.display().to_string();
    }
    Ok(cfg)
}

fn install_workers(args: &CommonArgs) -> Result<(), AppError> {
    if let Some(workers) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| AppError::Config(format!("cannot configure {workers} workers: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Validate(args) => {
            let cfg = load_config(&args)?;
            let report = validate_params(&cfg.params);
            println!("broadband pumping margins (threshold {}):", report.threshold);
            for m in &report.margins {
                println!(
                    "  field {}: bandwidth/decay = {}, rabi/bandwidth = {}",
                    m.field, m.bandwidth_over_decay, m.rabi_over_bandwidth
                );
            }
            for w in &report.warnings {
                println!("  warning: {w}");
            }
            println!("{}", if report.ok { "ok" } else { "marginal" });
            Ok(())
        }
        Command::Trajectory(args) => {
            let cfg = load_config(&args)?;
            install_workers(&args)?;
            let engine = JumpEngine::new(&cfg.params, &cfg.pump)
                .map_err(|e| AppError::Run(e.to_string()))?;
            let horizon =
                (cfg.run.burn_in_periods + cfg.run.horizon_periods) as f64 * engine.period();
            let record = engine
                .trajectory(derive_seed(cfg.run.seed, 0), horizon)
                .map_err(|e| AppError::Run(e.to_string()))?;
            let out = PathBuf::from(&cfg.out);
            let validation = validate_params(&cfg.params);
            write_run_dir(
                &out,
                &RunDescription {
                    resolved_config: &cfg.to_toml(),
                    command: "trajectory",
                    workers: args.workers,
                    validation: &validation,
                    params: &cfg.params,
                    pump_mode: &cfg.pump,
                    keep_trajectories: true,
                },
                &RunPayload::Records(std::slice::from_ref(&record)),
            )?;
            println!(
                "{} emissions over horizon {}; record in {}",
                record.emission_times.len(),
                record.horizon,
                out.join("trajectories/000.txt").display()
            );
            Ok(())
        }
        Command::Spectrum(args) => {
            let cfg = load_config(&args)?;
            install_workers(&args)?;
            let output = run_experiment(&cfg.params, &cfg.pump, &cfg.run)?;
            let out = PathBuf::from(&cfg.out);
            write_run_dir(
                &out,
                &RunDescription {
                    resolved_config: &cfg.to_toml(),
                    command: "spectrum",
                    workers: args.workers,
                    validation: &output.validation,
                    params: &cfg.params,
                    pump_mode: &cfg.pump,
                    keep_trajectories: args.keep_trajectories,
                },
                &RunPayload::Point(&output),
            )?;
            println!(
                "snr {} (stderr {}) at driving frequency {}; artifacts in {}",
                output.snr,
                output.snr_stderr,
                output.drive_frequency * qsr_core::dsp::ANGULAR_FREQUENCY_SCALE,
                out.display()
            );
            Ok(())
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args)?;
            install_workers(&args)?;
            let sweep = cfg.sweep_config().ok_or_else(|| {
                AppError::Config("the sweep command needs a [sweep] section in the config".into())
            })?;
            let (curve, points) = sweep_noise_detailed(&sweep)?;
            let out = PathBuf::from(&cfg.out);
            let validation = validate_params(&cfg.params);
            write_run_dir(
                &out,
                &RunDescription {
                    resolved_config: &cfg.to_toml(),
                    command: "sweep",
                    workers: args.workers,
                    validation: &validation,
                    params: &cfg.params,
                    pump_mode: &cfg.pump,
                    keep_trajectories: args.keep_trajectories,
                },
                &RunPayload::Sweep { curve: &curve, points: &points },
            )?;
            for ((w, snr), err) in
                curve.noise_values.iter().zip(&curve.snr).zip(&curve.standard_errors)
            {
                println!("W = {w}: snr = {snr} (stderr {err})");
            }
            println!("curve in {}", out.join("snr_curve.csv").display());
            Ok(())
        }
    }
}
