//! Cross-module checks of the record -> telegraph -> spectrum pipeline on
//! small self-contained configurations (the shipped presets are exercised by
//! the `acceptance` target).

use qsr_core::config::parse_config;
use qsr_core::dsp::{bin_counts_from, binarize};
use qsr_core::harness::{derive_seed, run_experiment};
use qsr_core::jump::JumpEngine;

const STEP_CFG: &str = "
[drive]
schedule = \"step\"
t_m = 4096.0

[run]
trajectories = 4
horizon_periods = 32
burn_in_periods = 2
seed = 21

[dsp]
segment_length = 1024
";

const BEAT_CFG: &str = "
[drive]
schedule = \"beat\"
omega1 = 50.0
omega2 = 10.0
delta_w = 0.049

[noise3]
w_max = 0.4

[noise4]
w_max = 0.4

[pump]
mode = \"lineshape\"

[run]
trajectories = 2
horizon_periods = 32
burn_in_periods = 2
seed = 21

[dsp]
segment_length = 1024
";

/// Symmetric half-cycle pumping should leave the telegraph near half duty:
/// one half-cycle pushes the atom bright, the other shelves it.
#[test]
fn telegraph_duty_cycle_tracks_symmetric_modulation() {
    let cfg = parse_config(STEP_CFG).unwrap();
    let engine = JumpEngine::new(&cfg.params, &cfg.pump).unwrap();
    let period = engine.period();
    let bins_per_period = cfg.run.dsp.bins_per_period as usize;
    let n_bins = 32 * bins_per_period;
    let start = 2.0 * period;

    let mut ones = 0usize;
    let mut total = 0usize;
    for i in 0..cfg.run.trajectories as u64 {
        let record = engine.trajectory(derive_seed(cfg.run.seed, i), start + 32.0 * period).unwrap();
        let counts = bin_counts_from(&record, period / bins_per_period as f64, start, n_bins);
        let telegraph = binarize(&counts, &cfg.params, cfg.run.dsp.threshold_fraction).unwrap();
        ones += telegraph.values.iter().filter(|&&v| v == 1).count();
        total += telegraph.values.len();
    }
    let duty = ones as f64 / total as f64;
    assert!((0.3..=0.7).contains(&duty), "telegraph duty cycle {duty}");
}

/// The averaged spectrum's dominant non-DC feature must sit exactly on the
/// drive-frequency bin.
#[test]
fn spectrum_peak_sits_on_the_drive_frequency_bin() {
    let cfg = parse_config(STEP_CFG).unwrap();
    let output = run_experiment(&cfg.params, &cfg.pump, &cfg.run).unwrap();
    let spectrum = &output.spectrum;

    let i0 = (output.drive_frequency / spectrum.frequency_step()).round() as usize;
    let argmax = spectrum
        .power
        .iter()
        .enumerate()
        .skip(2) // the demeaned DC bin and its leakage neighbor
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    assert_eq!(argmax, i0, "dominant bin {argmax} vs drive bin {i0}");
    assert!(output.snr > 1.0, "drive line should stand above background, snr {}", output.snr);
}

/// Beat-note drive runs the identical pipeline: finite SNR, harmonics table
/// populated, frequencies on the expected grid.
#[test]
fn beat_drive_runs_the_full_pipeline() {
    let cfg = parse_config(BEAT_CFG).unwrap();
    let output = run_experiment(&cfg.params, &cfg.pump, &cfg.run).unwrap();

    let period = cfg.params.schedule.period();
    assert!((output.drive_frequency - 1.0 / period).abs() < 1e-12);
    assert!(output.snr.is_finite() && output.snr > 0.0);
    assert_eq!(output.harmonics.len(), cfg.run.dsp.n_harmonics);
    assert_eq!(output.records.len(), 2);
    for record in &output.records {
        assert!((record.horizon - 34.0 * period).abs() < 1e-9);
    }
}
