//! Experiment orchestration: trajectory batches, spectrum aggregation,
//! noise-intensity sweeps, and run-directory persistence.
//!
//! Determinism contract: every trajectory seed derives from (master seed,
//! index) alone, and all floating-point reductions run in index order, so
//! results are bit-identical across reruns and across worker counts.  The
//! manifest deliberately records no timestamps for the same reason.

use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::drive::PumpMode;
use crate::dsp::{
    bin_counts_from, binarize, harmonic_report, power_spectrum_windowed, snr_at, write_harmonics_csv,
    write_spectrum_csv, DspError, HarmonicLine, Spectrum, Window,
};
use crate::jump::{params_fingerprint, JumpEngine, JumpError, PhotonRecord};
use crate::master::MasterError;
use crate::model::{validate_params, ModelError, SystemParams, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("parameter check: {0}")]
    Parameter(#[from] ModelError),
    #[error("trajectory stage: {0}")]
    Trajectory(#[from] JumpError),
    #[error("propagation stage: {0}")]
    Propagation(#[from] MasterError),
    #[error("analysis stage: {0}")]
    Analysis(#[from] DspError),
    #[error("output stage: {0}")]
    Output(#[from] io::Error),
    #[error("sweep point at pump multiplier {multiplier}: {source}")]
    PointFailed {
        multiplier: f64,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("sweep config: {0}")]
    SweepConfig(String),
}

/// Settings of the record → telegraph → spectrum stage.
#[derive(Clone, Debug, PartialEq)]
pub struct DspSettings {
    /// Time bins per modulation period.
    pub bins_per_period: usize,
    /// Threshold as a fraction of the bright-period intensity.
    pub threshold_fraction: f64,
    pub segment_length: usize,
    pub overlap: f64,
    pub window: Window,
    pub guard_bins: usize,
    pub background_window: usize,
    /// Harmonics of the driving frequency reported per run.
    pub n_harmonics: usize,
}

impl Default for DspSettings {
    fn default() -> Self {
        DspSettings {
            bins_per_period: 32,
            threshold_fraction: 0.1,
            segment_length: 4096,
            overlap: 0.5,
            window: Window::Hann,
            guard_bins: crate::dsp::DEFAULT_GUARD_BINS,
            background_window: crate::dsp::DEFAULT_BACKGROUND_WINDOW,
            n_harmonics: 5,
        }
    }
}

/// Settings of a single-point trajectory batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub trajectories: usize,
    /// Analyzed record length, in modulation periods.
    pub horizon_periods: u64,
    /// Periods simulated and discarded before analysis starts, letting the
    /// initial transient decay.
    pub burn_in_periods: u64,
    pub seed: u64,
    pub dsp: DspSettings,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            trajectories: 64,
            horizon_periods: 256,
            burn_in_periods: 5,
            seed: 42,
            dsp: DspSettings::default(),
        }
    }
}

/// Noise-intensity sweep: the base configuration is rerun with both fields'
/// pump strengths scaled by each multiplier in turn.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub base: SystemParams,
    pub pump_mode: PumpMode,
    /// Pump-strength multipliers, strictly increasing.
    pub sweep_values: Vec<f64>,
    pub trajectories_per_point: usize,
    pub horizon_periods: u64,
    pub burn_in_periods: u64,
    pub master_seed: u64,
    pub dsp: DspSettings,
}

impl SweepConfig {
    pub fn check(&self) -> Result<(), HarnessError> {
        if self.sweep_values.is_empty() {
            return Err(HarnessError::SweepConfig("sweep_values must be non-empty".into()));
        }
        if !self.sweep_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(HarnessError::SweepConfig("sweep_values must be strictly increasing".into()));
        }
        if self.sweep_values[0] < 0.0 {
            return Err(HarnessError::SweepConfig("sweep_values must be non-negative".into()));
        }
        if self.trajectories_per_point == 0 {
            return Err(HarnessError::SweepConfig("trajectories_per_point must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// SNR against noise intensity, with jackknife standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrCurve {
    /// Scaled peak pump rate of the 1↔3 field at each point.
    pub noise_values: Vec<f64>,
    pub snr: Vec<f64>,
    pub standard_errors: Vec<f64>,
}

/// Everything a single-point run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<PhotonRecord>,
    pub spectrum: Spectrum,
    pub harmonics: Vec<HarmonicLine>,
    /// SNR at the driving frequency on the batch-averaged spectrum.
    pub snr: f64,
    /// Jackknife (leave-one-trajectory-out) standard error of `snr`.
    pub snr_stderr: f64,
    pub drive_frequency: f64,
    pub validation: ValidationReport,
}

/// Stateless per-index seed derivation (splitmix-style finalizer): seeds are
/// reproducible regardless of which worker runs which trajectory.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scales the noise pump strength of both fields by `multiplier`: the peak
/// rates always, and every table entry in table mode (the weak/strong
/// structure is preserved, only the overall intensity moves).
pub fn scale_noise(params: &SystemParams, mode: &PumpMode, multiplier: f64) -> (SystemParams, PumpMode) {
    let mut p = params.clone();
    p.noise3.w_max *= multiplier;
    p.noise4.w_max *= multiplier;
    let m = match *mode {
        PumpMode::Table { w33_weak, w33_strong, w44_weak, w44_strong } => PumpMode::Table {
            w33_weak: w33_weak * multiplier,
            w33_strong: w33_strong * multiplier,
            w44_weak: w44_weak * multiplier,
            w44_strong: w44_strong * multiplier,
        },
        PumpMode::Lineshape { profile } => PumpMode::Lineshape { profile },
    };
    (p, m)
}

/// Batch SNR and its jackknife standard error from per-trajectory spectra,
/// plus the full batch-averaged spectrum.  All sums run in index order.
fn point_statistics(
    spectra: &[Spectrum],
    f0: f64,
    guard_bins: usize,
    background_window: usize,
) -> Result<(f64, f64, Spectrum), DspError> {
    let n = spectra.len();
    let len = spectra[0].power.len();
    let mut sum = vec![0.0; len];
    let mut segments = 0usize;
    for s in spectra {
        for (a, p) in sum.iter_mut().zip(&s.power) {
            *a += p;
        }
        segments += s.segments_averaged;
    }
    let average = Spectrum {
        frequencies: spectra[0].frequencies.clone(),
        power: sum.iter().map(|p| p / n as f64).collect(),
        segments_averaged: segments,
    };
    let snr = snr_at(&average, f0, guard_bins, background_window)?;

    let stderr = if n < 2 {
        0.0
    } else {
        let mut thetas = Vec::with_capacity(n);
        for s in spectra {
            let loo = Spectrum {
                frequencies: average.frequencies.clone(),
                power: sum
                    .iter()
                    .zip(&s.power)
                    .map(|(tot, p)| (tot - p) / (n - 1) as f64)
                    .collect(),
                segments_averaged: segments - s.segments_averaged,
            };
            thetas.push(snr_at(&loo, f0, guard_bins, background_window)?);
        }
        let mean = thetas.iter().sum::<f64>() / n as f64;
        let ss: f64 = thetas.iter().map(|t| (t - mean).powi(2)).sum();
        ((n - 1) as f64 / n as f64 * ss).sqrt()
    };
    Ok((snr, stderr, average))
}

/// Full single-point pipeline: N trajectories → telegraph → averaged
/// spectrum → harmonic report and SNR at the driving frequency.
///
/// Trajectories run on the current rayon pool; the per-trajectory results
/// are keyed by index, so worker count affects wall time only.
pub fn run_experiment(
    params: &SystemParams,
    mode: &PumpMode,
    settings: &RunSettings,
) -> Result<RunOutput, HarnessError> {
    params.check()?;
    assert!(settings.trajectories >= 1 && settings.horizon_periods >= 1);
    let validation = validate_params(params);

    let engine = JumpEngine::new(params, mode)?;
    let period = engine.period();
    let start = settings.burn_in_periods as f64 * period;
    let horizon = (settings.burn_in_periods + settings.horizon_periods) as f64 * period;
    let bin_width = period / settings.dsp.bins_per_period as f64;
    let n_bins = settings.horizon_periods as usize * settings.dsp.bins_per_period;

    let per_trajectory: Vec<Result<(PhotonRecord, Spectrum), HarnessError>> = (0..settings
        .trajectories)
        .into_par_iter()
        .map(|i| {
            let record = engine.trajectory(derive_seed(settings.seed, i as u64), horizon)?;
            let counts = bin_counts_from(&record, bin_width, start, n_bins);
            let telegraph = binarize(&counts, params, settings.dsp.threshold_fraction)?;
            let spectrum = power_spectrum_windowed(
                &telegraph,
                settings.dsp.segment_length,
                settings.dsp.overlap,
                settings.dsp.window,
            )?;
            Ok((record, spectrum))
        })
        .collect();

    let mut records = Vec::with_capacity(settings.trajectories);
    let mut spectra = Vec::with_capacity(settings.trajectories);
    for r in per_trajectory {
        let (record, spectrum) = r?;
        records.push(record);
        spectra.push(spectrum);
    }

    let drive_frequency = params.schedule.drive_frequency();
    let (snr, snr_stderr, spectrum) = point_statistics(
        &spectra,
        drive_frequency,
        settings.dsp.guard_bins,
        settings.dsp.background_window,
    )?;
    let harmonics = harmonic_report(
        &spectrum,
        drive_frequency,
        settings.dsp.n_harmonics,
        settings.dsp.guard_bins,
        settings.dsp.background_window,
    )?;

    Ok(RunOutput { records, spectrum, harmonics, snr, snr_stderr, drive_frequency, validation })
}

fn run_sweep_point(
    config: &SweepConfig,
    index: usize,
    multiplier: f64,
) -> Result<RunOutput, HarnessError> {
    let (params, mode) = scale_noise(&config.base, &config.pump_mode, multiplier);
    let settings = RunSettings {
        trajectories: config.trajectories_per_point,
        horizon_periods: config.horizon_periods,
        burn_in_periods: config.burn_in_periods,
        seed: derive_seed(config.master_seed, index as u64),
        dsp: config.dsp.clone(),
    };
    match run_experiment(&params, &mode, &settings) {
        // An unresolved background means the record was too short to see
        // any telegraph noise floor (long dark periods at low pump rates);
        // one retry at 4× the horizon rescues such points cheaply.
        Err(HarnessError::Analysis(DspError::BackgroundUnresolved { .. })) => {
            let longer = RunSettings { horizon_periods: settings.horizon_periods * 4, ..settings };
            run_experiment(&params, &mode, &longer)
        }
        other => other,
    }
    .map_err(|e| HarnessError::PointFailed { multiplier, source: Box::new(e) })
}

/// Sweep with per-point outputs retained (spectra, records, harmonics).
pub fn sweep_noise_detailed(config: &SweepConfig) -> Result<(SnrCurve, Vec<RunOutput>), HarnessError> {
    config.check()?;
    let mut curve = SnrCurve {
        noise_values: Vec::with_capacity(config.sweep_values.len()),
        snr: Vec::with_capacity(config.sweep_values.len()),
        standard_errors: Vec::with_capacity(config.sweep_values.len()),
    };
    let mut outputs = Vec::with_capacity(config.sweep_values.len());
    for (index, &multiplier) in config.sweep_values.iter().enumerate() {
        let output = run_sweep_point(config, index, multiplier)?;
        curve.noise_values.push(config.base.noise3.w_max * multiplier);
        curve.snr.push(output.snr);
        curve.standard_errors.push(output.snr_stderr);
        outputs.push(output);
    }
    Ok((curve, outputs))
}

/// SNR versus noise intensity; see [`sweep_noise_detailed`].
pub fn sweep_noise(config: &SweepConfig) -> Result<SnrCurve, HarnessError> {
    sweep_noise_detailed(config).map(|(curve, _)| curve)
}

/// `W,snr,stderr` rows.
pub fn write_snr_curve_csv<W: Write>(curve: &SnrCurve, mut out: W) -> io::Result<()> {
    writeln!(out, "W,snr,stderr")?;
    for ((w, s), e) in curve.noise_values.iter().zip(&curve.snr).zip(&curve.standard_errors) {
        writeln!(out, "{w},{s},{e}")?;
    }
    Ok(())
}

/// What a run directory is asked to hold.
pub enum RunPayload<'a> {
    /// Bare photon records (the `trajectory` command).
    Records(&'a [PhotonRecord]),
    /// Single-point pipeline output.
    Point(&'a RunOutput),
    /// A sweep curve with its per-point outputs.
    Sweep { curve: &'a SnrCurve, points: &'a [RunOutput] },
}

/// Run-level context recorded in the manifest.
pub struct RunDescription<'a> {
    /// Resolved configuration echo (TOML), defaults included.
    pub resolved_config: &'a str,
    pub command: &'a str,
    pub workers: Option<usize>,
    pub validation: &'a ValidationReport,
    pub params: &'a SystemParams,
    pub pump_mode: &'a PumpMode,
    pub keep_trajectories: bool,
}

fn toml_string_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn manifest_text(
    desc: &RunDescription,
    artifacts: &[(String, Vec<u8>)],
    content_hash: &str,
) -> String {
    let mut out = String::new();
    out.push_str(desc.resolved_config);
    if !out.ends_with('\n') {
        out.push('\n');
    }

    out.push_str("\n[invocation]\n");
    out.push_str(&format!("command = \"{}\"\n", toml_string_escape(desc.command)));
    if let Some(w) = desc.workers {
        out.push_str(&format!("workers = {w}\n"));
    }
    out.push_str(&format!(
        "params_fingerprint = \"{}\"\n",
        params_fingerprint(desc.params, desc.pump_mode)
    ));

    let v = desc.validation;
    out.push_str("\n[validation]\n");
    out.push_str(&format!("ok = {}\n", v.ok));
    out.push_str(&format!("margin_threshold = {}\n", v.threshold));
    let warnings: Vec<String> =
        v.warnings.iter().map(|w| format!("\"{}\"", toml_string_escape(w))).collect();
    out.push_str(&format!("warnings = [{}]\n", warnings.join(", ")));
    for m in &v.margins {
        out.push_str(&format!(
            "field{}_bandwidth_over_decay = {}\n",
            m.field, m.bandwidth_over_decay
        ));
        out.push_str(&format!("field{}_rabi_over_bandwidth = {}\n", m.field, m.rabi_over_bandwidth));
    }

    out.push_str("\n[artifacts]\n");
    let names: Vec<String> =
        artifacts.iter().map(|(name, _)| format!("\"{}\"", toml_string_escape(name))).collect();
    out.push_str(&format!("files = [{}]\n", names.join(", ")));
    out.push_str(&format!("content_hash = \"{content_hash}\"\n"));
    out
}

fn sha256_hex(artifacts: &[(String, Vec<u8>)]) -> String {
    let mut hasher = Sha256::new();
    for (name, bytes) in artifacts {
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update(bytes);
        hasher.update([0]);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn record_artifacts(
    prefix: &str,
    records: &[PhotonRecord],
    fingerprint: &str,
    artifacts: &mut Vec<(String, Vec<u8>)>,
) -> Result<(), HarnessError> {
    for (i, record) in records.iter().enumerate() {
        let mut bytes = Vec::new();
        record.write_to(&mut bytes, fingerprint)?;
        artifacts.push((format!("{prefix}{i:03}.txt"), bytes));
    }
    Ok(())
}

/// Writes a run directory: the requested artifacts plus a `manifest` that
/// echoes the resolved config, the validation report, the artifact list and
/// a content hash over all artifact bytes.  Identical inputs produce
/// byte-identical directories.
pub fn write_run_dir(
    dir: &Path,
    desc: &RunDescription,
    payload: &RunPayload,
) -> Result<(), HarnessError> {
    let fingerprint = params_fingerprint(desc.params, desc.pump_mode);
    let mut artifacts: Vec<(String, Vec<u8>)> = Vec::new();

    match payload {
        RunPayload::Records(records) => {
            record_artifacts("trajectories/", records, &fingerprint, &mut artifacts)?;
        }
        RunPayload::Point(output) => {
            let mut spectrum = Vec::new();
            write_spectrum_csv(&output.spectrum, &mut spectrum)?;
            artifacts.push(("spectrum.csv".into(), spectrum));
            let mut harmonics = Vec::new();
            write_harmonics_csv(&output.harmonics, &mut harmonics)?;
            artifacts.push(("harmonics.csv".into(), harmonics));
            if desc.keep_trajectories {
                record_artifacts("trajectories/", &output.records, &fingerprint, &mut artifacts)?;
            }
        }
        RunPayload::Sweep { curve, points } => {
            let mut csv = Vec::new();
            write_snr_curve_csv(curve, &mut csv)?;
            artifacts.push(("snr_curve.csv".into(), csv));
            if desc.keep_trajectories {
                for (p, output) in points.iter().enumerate() {
                    record_artifacts(
                        &format!("trajectories/point_{p:02}/"),
                        &output.records,
                        &fingerprint,
                        &mut artifacts,
                    )?;
                }
            }
        }
    }

    let hash = sha256_hex(&artifacts);
    let manifest = manifest_text(desc, &artifacts, &hash);

    std::fs::create_dir_all(dir).map_err(HarnessError::Output)?;
    for (name, bytes) in &artifacts {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(HarnessError::Output)?;
        }
        std::fs::write(path, bytes).map_err(HarnessError::Output)?;
    }
    std::fs::write(dir.join("manifest"), manifest).map_err(HarnessError::Output)?;
    Ok(())
}
