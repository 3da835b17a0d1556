//! Run configuration: TOML parsing, defaults, constraint checking with key
//! paths and line numbers, and a canonical resolved echo for manifests.
//!
//! Every key has a default except `drive.schedule`, which selects between
//! the two modulation families and has no safe fallback.  The resolved echo
//! produced by [`RunConfig::to_toml`] reparses to an identical config, so
//! manifests double as runnable configs.

use serde::Deserialize;

use crate::drive::{detunings_for, DriveSchedule, LineProfile, PumpMode};
use crate::dsp::Window;
use crate::harness::{DspSettings, RunSettings, SweepConfig};
use crate::master::MasterOptions;
use crate::model::{ModelError, NoiseFieldConfig, SystemParams};

/// Step period giving the same driving frequency as the default beat
/// detuning (2π / 0.049).
pub const DEFAULT_T_M: f64 = std::f64::consts::TAU / 0.049;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// Syntax, unknown keys, or type mismatches; the message carries the
    /// line and column from the parser.
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("drive.schedule is required (\"step\" or \"beat\")")]
    ScheduleRequired,
    /// A key with valid syntax but an unusable value; `context` names the
    /// key path and its line.
    #[error("{context}: {message}")]
    Invalid { context: String, message: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    drive: Option<RawDrive>,
    atom: Option<RawAtom>,
    noise3: Option<RawNoise>,
    noise4: Option<RawNoise>,
    pump: Option<RawPump>,
    run: Option<RawRun>,
    dsp: Option<RawDsp>,
    sweep: Option<RawSweep>,
    master: Option<RawMaster>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrive {
    schedule: Option<String>,
    t_m: Option<f64>,
    omega1: Option<f64>,
    omega2: Option<f64>,
    delta_w: Option<f64>,
    omega: Option<f64>,
    delta_omega: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAtom {
    gamma22: Option<f64>,
    gamma33: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    w_max: Option<f64>,
    bandwidth: Option<f64>,
    detuning: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPump {
    mode: Option<String>,
    w33_weak: Option<f64>,
    w33_strong: Option<f64>,
    w44_weak: Option<f64>,
    w44_strong: Option<f64>,
    profile: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    trajectories: Option<usize>,
    horizon_periods: Option<u64>,
    burn_in_periods: Option<u64>,
    seed: Option<u64>,
    out: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDsp {
    bins_per_period: Option<usize>,
    threshold_fraction: Option<f64>,
    segment_length: Option<usize>,
    overlap: Option<f64>,
    window: Option<String>,
    guard_bins: Option<usize>,
    background_window: Option<usize>,
    n_harmonics: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    values: Option<Vec<f64>>,
    trajectories_per_point: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaster {
    coherence_source: Option<String>,
    residual_rho44: Option<bool>,
}

/// Pump-multiplier sweep requested by a config.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    pub values: Vec<f64>,
    pub trajectories_per_point: usize,
}

/// Fully resolved run: every default applied, every constraint checked.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: SystemParams,
    pub pump: PumpMode,
    pub run: RunSettings,
    pub out: String,
    pub sweep: Option<SweepSettings>,
    pub master: MasterOptions,
}

/// Best-effort line lookup for a key, handling both `[section]` bodies and
/// top-level dotted keys.
fn locate_key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = "";
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.split(']').next().unwrap_or("").trim();
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            let lhs = lhs.trim();
            if (current == section && lhs == key)
                || (current.is_empty() && lhs == format!("{section}.{key}"))
            {
                return Some(i + 1);
            }
        }
    }
    None
}

fn invalid(text: &str, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
    let context = match locate_key_line(text, section, key) {
        Some(line) => format!("{section}.{key} (line {line})"),
        None => format!("{section}.{key} (resolved default)"),
    };
    ConfigError::Invalid { context, message: message.into() }
}

fn model_error_to_config(text: &str, e: ModelError) -> ConfigError {
    let ModelError::Parameter { name, requirement, value } = e;
    let (section, key) = name.split_once('.').unwrap_or(("", name));
    invalid(text, section, key, format!("must be {requirement}, got {value}"))
}

/// Parses and fully resolves a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;

    let drive = raw.drive.unwrap_or_default();
    let schedule_name = drive.schedule.as_deref().ok_or(ConfigError::ScheduleRequired)?;

    let reject_foreign = |present: &[(&str, bool)], family: &str| -> Result<(), ConfigError> {
        for &(key, set) in present {
            if set {
                return Err(invalid(
                    text,
                    "drive",
                    key,
                    format!("only a {family} schedule uses this key"),
                ));
            }
        }
        Ok(())
    };

    let (schedule, default_omega, default_depth) = match schedule_name {
        "step" => {
            reject_foreign(
                &[
                    ("omega1", drive.omega1.is_some()),
                    ("omega2", drive.omega2.is_some()),
                    ("delta_w", drive.delta_w.is_some()),
                ],
                "beat",
            )?;
            (DriveSchedule::Step { t_m: drive.t_m.unwrap_or(DEFAULT_T_M) }, 50.0, 10.0)
        }
        "beat" => {
            reject_foreign(&[("t_m", drive.t_m.is_some())], "step")?;
            let omega1 = drive.omega1.unwrap_or(50.0);
            let omega2 = drive.omega2.unwrap_or(10.0);
            let delta_w = drive.delta_w.unwrap_or(0.049);
            // The mean Rabi frequency and modulation depth of a beat are set
            // by the two laser amplitudes.
            (DriveSchedule::Beat { omega1, omega2, delta_w }, omega1, omega2)
        }
        other => {
            return Err(invalid(
                text,
                "drive",
                "schedule",
                format!("expected \"step\" or \"beat\", got \"{other}\""),
            ))
        }
    };

    let omega = drive.omega.unwrap_or(default_omega);
    let delta_omega = drive.delta_omega.unwrap_or(default_depth);
    let atom = raw.atom.unwrap_or_default();

    // Default carrier offsets put each noise field on its dressed target.
    let (detuning3, detuning4) = detunings_for(omega, delta_omega);
    let noise = |raw: Option<RawNoise>, default_detuning: f64| {
        let n = raw.unwrap_or_default();
        NoiseFieldConfig {
            w_max: n.w_max.unwrap_or(0.0128),
            bandwidth: n.bandwidth.unwrap_or(6.66),
            detuning: n.detuning.unwrap_or(default_detuning),
        }
    };

    let params = SystemParams {
        gamma22: atom.gamma22.unwrap_or(1.0),
        gamma33: atom.gamma33.unwrap_or(1.0),
        omega,
        delta_omega,
        noise3: noise(raw.noise3, detuning3),
        noise4: noise(raw.noise4, detuning4),
        schedule,
    };
    params.check().map_err(|e| model_error_to_config(text, e))?;

    let pump_raw = raw.pump.unwrap_or_default();
    let default_mode = match params.schedule {
        DriveSchedule::Step { .. } => "table",
        DriveSchedule::Beat { .. } => "lineshape",
    };
    let mode_name = pump_raw.mode.as_deref().unwrap_or(default_mode);
    let table_keys = [
        ("w33_weak", pump_raw.w33_weak.is_some()),
        ("w33_strong", pump_raw.w33_strong.is_some()),
        ("w44_weak", pump_raw.w44_weak.is_some()),
        ("w44_strong", pump_raw.w44_strong.is_some()),
    ];
    let pump = match mode_name {
        "table" => {
            if matches!(params.schedule, DriveSchedule::Beat { .. }) {
                return Err(invalid(
                    text,
                    "pump",
                    "mode",
                    "table pump rates switch per half-cycle and require a step schedule",
                ));
            }
            if pump_raw.profile.is_some() {
                return Err(invalid(text, "pump", "profile", "only lineshape mode uses this key"));
            }
            PumpMode::Table {
                w33_weak: pump_raw.w33_weak.unwrap_or(0.0128),
                w33_strong: pump_raw.w33_strong.unwrap_or(0.00128),
                w44_weak: pump_raw.w44_weak.unwrap_or(0.00128),
                w44_strong: pump_raw.w44_strong.unwrap_or(0.0128),
            }
        }
        "lineshape" => {
            if let Some(&(key, _)) = table_keys.iter().find(|&&(_, set)| set) {
                return Err(invalid(text, "pump", key, "only table mode uses this key"));
            }
            let profile = match pump_raw.profile.as_deref().unwrap_or("lorentzian") {
                "lorentzian" => LineProfile::Lorentzian,
                "gaussian" => LineProfile::Gaussian,
                other => {
                    return Err(invalid(
                        text,
                        "pump",
                        "profile",
                        format!("expected \"lorentzian\" or \"gaussian\", got \"{other}\""),
                    ))
                }
            };
            PumpMode::Lineshape { profile }
        }
        other => {
            return Err(invalid(
                text,
                "pump",
                "mode",
                format!("expected \"table\" or \"lineshape\", got \"{other}\""),
            ))
        }
    };
    pump.check().map_err(|e| model_error_to_config(text, e))?;

    let run_raw = raw.run.unwrap_or_default();
    let dsp_raw = raw.dsp.unwrap_or_default();
    let defaults = DspSettings::default();
    let window = match dsp_raw.window.as_deref() {
        None => defaults.window,
        Some("hann") => Window::Hann,
        Some("rect") => Window::Rect,
        Some(other) => {
            return Err(invalid(
                text,
                "dsp",
                "window",
                format!("expected \"hann\" or \"rect\", got \"{other}\""),
            ))
        }
    };
    let dsp = DspSettings {
        bins_per_period: dsp_raw.bins_per_period.unwrap_or(defaults.bins_per_period),
        threshold_fraction: dsp_raw.threshold_fraction.unwrap_or(defaults.threshold_fraction),
        segment_length: dsp_raw.segment_length.unwrap_or(defaults.segment_length),
        overlap: dsp_raw.overlap.unwrap_or(defaults.overlap),
        window,
        guard_bins: dsp_raw.guard_bins.unwrap_or(defaults.guard_bins),
        background_window: dsp_raw.background_window.unwrap_or(defaults.background_window),
        n_harmonics: dsp_raw.n_harmonics.unwrap_or(defaults.n_harmonics),
    };
    let run = RunSettings {
        trajectories: run_raw.trajectories.unwrap_or(64),
        horizon_periods: run_raw.horizon_periods.unwrap_or(256),
        burn_in_periods: run_raw.burn_in_periods.unwrap_or(5),
        seed: run_raw.seed.unwrap_or(42),
        dsp,
    };

    if run.trajectories == 0 {
        return Err(invalid(text, "run", "trajectories", "must be ≥ 1"));
    }
    if run.horizon_periods == 0 {
        return Err(invalid(text, "run", "horizon_periods", "must be ≥ 1"));
    }
    if run.dsp.bins_per_period < 2 {
        return Err(invalid(text, "dsp", "bins_per_period", "must be ≥ 2"));
    }
    if !(run.dsp.threshold_fraction > 0.0 && run.dsp.threshold_fraction < 1.0) {
        return Err(invalid(text, "dsp", "threshold_fraction", "must lie in (0, 1)"));
    }
    if !run.dsp.segment_length.is_power_of_two() || run.dsp.segment_length < 4 {
        return Err(invalid(text, "dsp", "segment_length", "must be a power of two ≥ 4"));
    }
    if !(0.0..1.0).contains(&run.dsp.overlap) {
        return Err(invalid(text, "dsp", "overlap", "must lie in [0, 1)"));
    }
    if run.dsp.background_window == 0 {
        return Err(invalid(text, "dsp", "background_window", "must be ≥ 1"));
    }
    let total_bins = run.horizon_periods as usize * run.dsp.bins_per_period;
    if total_bins < run.dsp.segment_length {
        return Err(invalid(
            text,
            "dsp",
            "segment_length",
            format!("exceeds the record length of {total_bins} bins"),
        ));
    }
    // Same readability guard as the binarize stage, caught before any
    // trajectory is simulated.
    let bin_width = params.schedule.period() / run.dsp.bins_per_period as f64;
    let bright_expected = 0.5 * params.gamma22 * bin_width;
    let threshold = run.dsp.threshold_fraction * bright_expected;
    if threshold < 1.0 && bright_expected < 1.0 {
        return Err(invalid(
            text,
            "dsp",
            "bins_per_period",
            format!(
                "bins are too narrow to read the telegraph: a bright bin holds only \
                 {bright_expected:.3} expected counts; reduce bins_per_period"
            ),
        ));
    }

    let sweep = match raw.sweep {
        None => None,
        Some(s) => {
            let values = s.values.ok_or_else(|| {
                invalid(text, "sweep", "values", "required when a [sweep] section is present")
            })?;
            if values.is_empty() {
                return Err(invalid(text, "sweep", "values", "must be non-empty"));
            }
            if !values.windows(2).all(|w| w[0] < w[1]) {
                return Err(invalid(text, "sweep", "values", "must be strictly increasing"));
            }
            if values[0] < 0.0 {
                return Err(invalid(text, "sweep", "values", "must be non-negative"));
            }
            let trajectories_per_point = s.trajectories_per_point.unwrap_or(24);
            if trajectories_per_point == 0 {
                return Err(invalid(text, "sweep", "trajectories_per_point", "must be ≥ 1"));
            }
            Some(SweepSettings { values, trajectories_per_point })
        }
    };

    let master_raw = raw.master.unwrap_or_default();
    let coherence_source_half = match master_raw.coherence_source.as_deref() {
        None | Some("full") => false,
        Some("half") => true,
        Some(other) => {
            return Err(invalid(
                text,
                "master",
                "coherence_source",
                format!("expected \"full\" or \"half\", got \"{other}\""),
            ))
        }
    };
    let master = MasterOptions {
        coherence_source_half,
        residual_rho44: master_raw.residual_rho44.unwrap_or(false),
    };

    Ok(RunConfig {
        params,
        pump,
        run,
        out: run_raw.out.unwrap_or_else(|| "qsr-run".to_string()),
        sweep,
        master,
    })
}

impl RunConfig {
    /// Harness sweep built from this config; `None` without a `[sweep]`
    /// section.
    pub fn sweep_config(&self) -> Option<SweepConfig> {
        self.sweep.as_ref().map(|s| SweepConfig {
            base: self.params.clone(),
            pump_mode: self.pump.clone(),
            sweep_values: s.values.clone(),
            trajectories_per_point: s.trajectories_per_point,
            horizon_periods: self.run.horizon_periods,
            burn_in_periods: self.run.burn_in_periods,
            master_seed: self.run.seed,
            dsp: self.run.dsp.clone(),
        })
    }

    /// Canonical resolved echo: every effective value, defaults included.
    /// Reparsing the echo reproduces this config exactly, and the echo is
    /// its own fixed point.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let kv = |out: &mut String, key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };

        out.push_str("[drive]\n");
        match self.params.schedule {
            DriveSchedule::Step { t_m } => {
                kv(&mut out, "schedule", "\"step\"".into());
                kv(&mut out, "t_m", format!("{t_m}"));
            }
            DriveSchedule::Beat { omega1, omega2, delta_w } => {
                kv(&mut out, "schedule", "\"beat\"".into());
                kv(&mut out, "omega1", format!("{omega1}"));
                kv(&mut out, "omega2", format!("{omega2}"));
                kv(&mut out, "delta_w", format!("{delta_w}"));
            }
        }
        kv(&mut out, "omega", format!("{}", self.params.omega));
        kv(&mut out, "delta_omega", format!("{}", self.params.delta_omega));

        out.push_str("\n[atom]\n");
        kv(&mut out, "gamma22", format!("{}", self.params.gamma22));
        kv(&mut out, "gamma33", format!("{}", self.params.gamma33));

        for (name, n) in [("noise3", &self.params.noise3), ("noise4", &self.params.noise4)] {
            out.push_str(&format!("\n[{name}]\n"));
            kv(&mut out, "w_max", format!("{}", n.w_max));
            kv(&mut out, "bandwidth", format!("{}", n.bandwidth));
            kv(&mut out, "detuning", format!("{}", n.detuning));
        }

        out.push_str("\n[pump]\n");
        match self.pump {
            PumpMode::Table { w33_weak, w33_strong, w44_weak, w44_strong } => {
                kv(&mut out, "mode", "\"table\"".into());
                kv(&mut out, "w33_weak", format!("{w33_weak}"));
                kv(&mut out, "w33_strong", format!("{w33_strong}"));
                kv(&mut out, "w44_weak", format!("{w44_weak}"));
                kv(&mut out, "w44_strong", format!("{w44_strong}"));
            }
            PumpMode::Lineshape { profile } => {
                kv(&mut out, "mode", "\"lineshape\"".into());
                let name = match profile {
                    LineProfile::Lorentzian => "lorentzian",
                    LineProfile::Gaussian => "gaussian",
                };
                kv(&mut out, "profile", format!("\"{name}\""));
            }
        }

        out.push_str("\n[run]\n");
        kv(&mut out, "trajectories", format!("{}", self.run.trajectories));
        kv(&mut out, "horizon_periods", format!("{}", self.run.horizon_periods));
        kv(&mut out, "burn_in_periods", format!("{}", self.run.burn_in_periods));
        kv(&mut out, "seed", format!("{}", self.run.seed));
        kv(&mut out, "out", format!("\"{}\"", self.out.replace('\\', "\\\\").replace('"', "\\\"")));

        let d = &self.run.dsp;
        out.push_str("\n[dsp]\n");
        kv(&mut out, "bins_per_period", format!("{}", d.bins_per_period));
        kv(&mut out, "threshold_fraction", format!("{}", d.threshold_fraction));
        kv(&mut out, "segment_length", format!("{}", d.segment_length));
        kv(&mut out, "overlap", format!("{}", d.overlap));
        kv(&mut out, "window", match d.window {
            Window::Hann => "\"hann\"".into(),
            Window::Rect => "\"rect\"".into(),
        });
        kv(&mut out, "guard_bins", format!("{}", d.guard_bins));
        kv(&mut out, "background_window", format!("{}", d.background_window));
        kv(&mut out, "n_harmonics", format!("{}", d.n_harmonics));

        if let Some(sweep) = &self.sweep {
            out.push_str("\n[sweep]\n");
            let values: Vec<String> = sweep.values.iter().map(|v| format!("{v}")).collect();
            kv(&mut out, "values", format!("[{}]", values.join(", ")));
            kv(&mut out, "trajectories_per_point", format!("{}", sweep.trajectories_per_point));
        }

        out.push_str("\n[master]\n");
        kv(&mut out, "coherence_source", if self.master.coherence_source_half {
            "\"half\"".into()
        } else {
            "\"full\"".into()
        });
        kv(&mut out, "residual_rho44", format!("{}", self.master.residual_rho44));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_step_config_resolves_all_defaults() {
        let cfg = parse_config("[drive]\nschedule = \"step\"\n").unwrap();
        assert_eq!(cfg.params.omega, 50.0);
        assert_eq!(cfg.params.delta_omega, 10.0);
        assert_eq!(cfg.params.gamma22, 1.0);
        assert_eq!(cfg.params.gamma33, 1.0);
        assert_eq!(cfg.params.schedule, DriveSchedule::Step { t_m: DEFAULT_T_M });
        assert_eq!(cfg.params.noise3.w_max, 0.0128);
        assert_eq!(cfg.params.noise3.bandwidth, 6.66);
        // Carrier offsets land on the dressed levels: (Ω ± ΔΩ)/2.
        assert_eq!(cfg.params.noise3.detuning, 30.0);
        assert_eq!(cfg.params.noise4.detuning, -20.0);
        assert_eq!(
            cfg.pump,
            PumpMode::Table {
                w33_weak: 0.0128,
                w33_strong: 0.00128,
                w44_weak: 0.00128,
                w44_strong: 0.0128
            }
        );
        assert_eq!(cfg.run.trajectories, 64);
        assert_eq!(cfg.run.horizon_periods, 256);
        assert_eq!(cfg.run.burn_in_periods, 5);
        assert_eq!(cfg.run.seed, 42);
        assert_eq!(cfg.run.dsp, DspSettings::default());
        assert_eq!(cfg.out, "qsr-run");
        assert_eq!(cfg.sweep, None);
        assert_eq!(cfg.master, MasterOptions::default());
    }

    #[test]
    fn dotted_keys_parse_like_sections() {
        let a = parse_config("drive.schedule = \"step\"\ndrive.t_m = 128.2\n").unwrap();
        let b = parse_config("[drive]\nschedule = \"step\"\nt_m = 128.2\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_config_requires_schedule() {
        let err = parse_config("").unwrap_err();
        assert!(matches!(err, ConfigError::ScheduleRequired));
        assert!(err.to_string().contains("drive.schedule is required"));
    }

    #[test]
    fn beat_defaults_follow_the_laser_pair() {
        let cfg = parse_config("[drive]\nschedule = \"beat\"\n").unwrap();
        assert_eq!(
            cfg.params.schedule,
            DriveSchedule::Beat { omega1: 50.0, omega2: 10.0, delta_w: 0.049 }
        );
        assert_eq!(cfg.params.omega, 50.0);
        assert_eq!(cfg.params.delta_omega, 10.0);
        assert_eq!(cfg.pump, PumpMode::Lineshape { profile: LineProfile::Lorentzian });
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = parse_config("[drive]\nschedule = \"step\"\nfoo = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("foo"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn type_mismatches_carry_line_numbers() {
        let err = parse_config("[drive]\nschedule = \"step\"\n[atom]\ngamma22 = \"high\"\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn constraint_violations_name_key_and_line() {
        let err = parse_config("[drive]\nschedule = \"step\"\n[atom]\ngamma22 = -1.0\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("atom.gamma22"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("positive"), "{msg}");
    }

    #[test]
    fn schedule_families_reject_foreign_keys() {
        let err = parse_config("[drive]\nschedule = \"step\"\nomega1 = 50.0\n").unwrap_err();
        assert!(err.to_string().contains("drive.omega1"));
        let err = parse_config("[drive]\nschedule = \"beat\"\nt_m = 10.0\n").unwrap_err();
        assert!(err.to_string().contains("drive.t_m"));
        let err = parse_config("[drive]\nschedule = \"ramp\"\n").unwrap_err();
        assert!(err.to_string().contains("expected \"step\" or \"beat\""));
    }

    #[test]
    fn table_pumps_require_a_step_schedule() {
        let err =
            parse_config("[drive]\nschedule = \"beat\"\n[pump]\nmode = \"table\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pump.mode"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn pump_modes_reject_foreign_keys() {
        let err = parse_config(
            "[drive]\nschedule = \"step\"\n[pump]\nmode = \"lineshape\"\nw33_weak = 0.01\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("pump.w33_weak"));
        let err = parse_config(
            "[drive]\nschedule = \"step\"\n[pump]\nmode = \"table\"\nprofile = \"gaussian\"\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("pump.profile"));
    }

    #[test]
    fn detuning_override_wins_over_derived_default() {
        let cfg =
            parse_config("[drive]\nschedule = \"step\"\n[noise3]\ndetuning = 31.0\n").unwrap();
        assert_eq!(cfg.params.noise3.detuning, 31.0);
        assert_eq!(cfg.params.noise4.detuning, -20.0);
    }

    #[test]
    fn narrow_bins_are_rejected_at_resolve_time() {
        let err = parse_config(
            "[drive]\nschedule = \"step\"\nt_m = 128.0\n[dsp]\nbins_per_period = 4096\n[run]\nhorizon_periods = 2048\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dsp.bins_per_period"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn segment_must_fit_the_record() {
        let err = parse_config(
            "[drive]\nschedule = \"step\"\n[run]\nhorizon_periods = 16\n[dsp]\nsegment_length = 1024\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("dsp.segment_length"));
    }

    #[test]
    fn sweep_section_parses_and_validates() {
        let cfg = parse_config(
            "[drive]\nschedule = \"step\"\n[sweep]\nvalues = [0.1, 1.0, 10.0]\n",
        )
        .unwrap();
        let harness = cfg.sweep_config().unwrap();
        assert_eq!(harness.sweep_values, vec![0.1, 1.0, 10.0]);
        assert_eq!(harness.trajectories_per_point, 24);
        assert_eq!(harness.master_seed, 42);
        assert_eq!(harness.horizon_periods, 256);
        let sweep = cfg.sweep.unwrap();
        assert_eq!(sweep.values, vec![0.1, 1.0, 10.0]);
        assert_eq!(sweep.trajectories_per_point, 24);

        let err = parse_config("[drive]\nschedule = \"step\"\n[sweep]\nvalues = [1.0, 0.5]\n")
            .unwrap_err();
        assert!(err.to_string().contains("strictly increasing"));
        let err = parse_config("[drive]\nschedule = \"step\"\n[sweep]\nvalues = []\n").unwrap_err();
        assert!(err.to_string().contains("non-empty"));
        let err = parse_config("[drive]\nschedule = \"step\"\n[sweep]\n").unwrap_err();
        assert!(err.to_string().contains("required"));
    }

    #[test]
    fn master_knobs_resolve() {
        let cfg = parse_config(
            "[drive]\nschedule = \"step\"\n[master]\ncoherence_source = \"half\"\nresidual_rho44 = true\n",
        )
        .unwrap();
        assert!(cfg.master.coherence_source_half);
        assert!(cfg.master.residual_rho44);
    }

    #[test]
    fn echo_round_trips_and_is_canonical() {
        let text = "[drive]\nschedule = \"step\"\nt_m = 128.2\ndelta_omega = 7.5\n\
                    [noise3]\nbandwidth = 5.0\n\
                    [pump]\nw33_strong = 0.002\n\
                    [run]\nseed = 7\n\
                    [dsp]\nwindow = \"rect\"\noverlap = 0.25\n\
                    [sweep]\nvalues = [0.5, 2.0]\ntrajectories_per_point = 3\n";
        let cfg = parse_config(text).unwrap();
        let echo = cfg.to_toml();
        let reparsed = parse_config(&echo).unwrap();
        assert_eq!(reparsed, cfg);
        assert_eq!(reparsed.to_toml(), echo);
    }

    #[test]
    fn beat_echo_round_trips() {
        let cfg = parse_config(
            "[drive]\nschedule = \"beat\"\nomega1 = 50.0\nomega2 = 10.0\ndelta_w = 0.049\n",
        )
        .unwrap();
        let echo = cfg.to_toml();
        assert_eq!(parse_config(&echo).unwrap(), cfg);
    }

    #[test]
    fn line_lookup_handles_both_layouts() {
        let text = "sweep.values = [1.0]\n\n[dsp]\noverlap = 0.5\n";
        assert_eq!(locate_key_line(text, "sweep", "values"), Some(1));
        assert_eq!(locate_key_line(text, "dsp", "overlap"), Some(4));
        assert_eq!(locate_key_line(text, "dsp", "window"), None);
    }
}
