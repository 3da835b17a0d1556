//! Photon records → binary telegraph → power spectrum → SNR.
//!
//! The emission stream is binned into an intensity series, thresholded into
//! a 0/1 telegraph process, and spectrally analyzed with an overlap-averaged
//! periodogram.  Normalization is chosen so the spectrum sums to the series
//! variance; the SNR (peak over local median background) is independent of
//! that choice.
//!
//! Frequencies are cyclic (events per unit time) everywhere in memory.  CSV
//! output converts to angular frequency (×2π) so the columns line up with
//! the units in which drive and decay rates are quoted.

use std::f64::consts::TAU;
use std::io::{self, Write};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::jump::PhotonRecord;
use crate::model::SystemParams;

/// Multiplier taking an in-memory cyclic frequency to the angular value
/// written in CSV columns.
pub const ANGULAR_FREQUENCY_SCALE: f64 = TAU;

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("binary series of length {len} is shorter than one segment ({segment})")]
    TooShort { len: usize, segment: usize },
    #[error("segment length must be a power of two, got {0}")]
    SegmentNotPowerOfTwo(usize),
    #[error("overlap fraction must lie in [0, 1), got {0}")]
    BadOverlap(f64),
    #[error(
        "binarize threshold is {threshold:.3} counts but a bright period yields only \
         {bright_expected:.3} counts per bin; increase bin_width"
    )]
    ThresholdUnresolved { threshold: f64, bright_expected: f64 },
    #[error("frequency {f0} does not fit the spectral grid with the requested windows")]
    FrequencyOutOfRange { f0: f64 },
    #[error("background around {f0} is unresolved (zero power); increase record length")]
    BackgroundUnresolved { f0: f64 },
}

/// Photon counts per fixed-width time bin.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensitySeries {
    pub bin_width: f64,
    pub counts: Vec<u32>,
}

impl IntensitySeries {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Thresholded telegraph process; same binning as its source series.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarySeries {
    pub bin_width: f64,
    pub values: Vec<u8>,
}

impl BinarySeries {
    pub fn mean(&self) -> f64 {
        let ones: u64 = self.values.iter().map(|&v| u64::from(v)).sum();
        ones as f64 / self.values.len() as f64
    }

    /// Population variance; exact for 0/1 values.
    pub fn variance(&self) -> f64 {
        let p = self.mean();
        p * (1.0 - p)
    }
}

/// One-sided power spectrum on a uniform cyclic-frequency grid from 0 to
/// Nyquist; summing `power` recovers the source-series variance.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub segments_averaged: usize,
}

impl Spectrum {
    pub fn frequency_step(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }

    pub fn nyquist(&self) -> f64 {
        *self.frequencies.last().unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann taper; the default for data runs.
    Hann,
    /// No taper; exact for signals periodic within a segment.
    Rect,
}

impl Window {
    /// Taper coefficients and their mean square (the normalization gain).
    fn coefficients(self, n: usize) -> (Vec<f64>, f64) {
        let w: Vec<f64> = match self {
            Window::Hann => (0..n).map(|k| 0.5 * (1.0 - (TAU * k as f64 / n as f64).cos())).collect(),
            Window::Rect => vec![1.0; n],
        };
        let gain = w.iter().map(|&x| x * x).sum::<f64>() / n as f64;
        (w, gain)
    }
}

/// Counts emissions into bins of `bin_width` from t = 0; a trailing partial
/// bin is discarded.
pub fn bin_counts(record: &PhotonRecord, bin_width: f64) -> IntensitySeries {
    assert!(bin_width > 0.0, "bin_width must be positive");
    let n_bins = (record.horizon / bin_width).floor() as usize;
    bin_counts_from(record, bin_width, 0.0, n_bins)
}

/// Counts emissions into `n_bins` bins starting at `start` (bin k covers
/// `[start + k·Δt, start + (k+1)·Δt)`); emissions outside the span are
/// ignored.  The record's horizon must cover the span, otherwise trailing
/// bins would read as artificially dark.
pub fn bin_counts_from(
    record: &PhotonRecord,
    bin_width: f64,
    start: f64,
    n_bins: usize,
) -> IntensitySeries {
    assert!(bin_width > 0.0, "bin_width must be positive");
    debug_assert!(start + n_bins as f64 * bin_width <= record.horizon + 1e-9);
    let mut counts = vec![0u32; n_bins];
    for &t in &record.emission_times {
        if t < start {
            continue;
        }
        let idx = ((t - start) / bin_width).floor() as usize;
        if idx < n_bins {
            counts[idx] += 1;
        }
    }
    IntensitySeries { bin_width, counts }
}

/// Thresholds an intensity series against a fixed fraction of the bright
/// reference intensity Γ22/2 (the emission rate of a saturated dressed
/// doublet), so thresholds are comparable across pump strengths.
///
/// Signals an error when the threshold falls below one count *and* a bright
/// period itself yields under one expected count per bin — at that
/// resolution the telegraph cannot be read and wider bins are required.
pub fn binarize(
    series: &IntensitySeries,
    params: &SystemParams,
    threshold_fraction: f64,
) -> Result<BinarySeries, DspError> {
    assert!(
        threshold_fraction > 0.0 && threshold_fraction < 1.0,
        "threshold_fraction must lie in (0, 1)"
    );
    let bright_expected = 0.5 * params.gamma22 * series.bin_width;
    let threshold = threshold_fraction * bright_expected;
    if threshold < 1.0 && bright_expected < 1.0 {
        return Err(DspError::ThresholdUnresolved { threshold, bright_expected });
    }
    let values = series.counts.iter().map(|&c| u8::from(f64::from(c) >= threshold)).collect();
    Ok(BinarySeries { bin_width: series.bin_width, values })
}

/// Overlap-averaged periodogram with the default Hann taper; see
/// [`power_spectrum_windowed`].
pub fn power_spectrum(
    series: &BinarySeries,
    segment_length: usize,
    overlap_fraction: f64,
) -> Result<Spectrum, DspError> {
    power_spectrum_windowed(series, segment_length, overlap_fraction, Window::Hann)
}

/// Mean-subtracted, tapered, overlap-averaged one-sided periodogram.
///
/// The series mean is removed globally, each segment is tapered and
/// transformed, and per-bin powers are averaged over segments in index
/// order (deterministic for fixed input).  Normalization: the sum of
/// `power` over the grid equals the series variance, taper-gain corrected.
pub fn power_spectrum_windowed(
    series: &BinarySeries,
    segment_length: usize,
    overlap_fraction: f64,
    window: Window,
) -> Result<Spectrum, DspError> {
    let n = segment_length;
    if !n.is_power_of_two() || n < 4 {
        return Err(DspError::SegmentNotPowerOfTwo(n));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DspError::BadOverlap(overlap_fraction));
    }
    let len = series.values.len();
    if len < n {
        return Err(DspError::TooShort { len, segment: n });
    }

    let hop = ((n as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let mean = series.mean();
    let (w, gain) = window.coefficients(n);
    let fft = FftPlanner::new().plan_fft_forward(n);
    // Folding the two-sided transform onto [0, Nyquist] doubles interior
    // bins; DC and Nyquist appear once.
    let norm = 1.0 / (n as f64 * n as f64 * gain);

    let mut acc = vec![0.0; n / 2 + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut segments = 0usize;
    let mut start = 0usize;
    while start + n <= len {
        for k in 0..n {
            buf[k] = Complex64::new((f64::from(series.values[start + k]) - mean) * w[k], 0.0);
        }
        fft.process(&mut buf);
        acc[0] += buf[0].norm_sqr() * norm;
        for j in 1..n / 2 {
            acc[j] += 2.0 * buf[j].norm_sqr() * norm;
        }
        acc[n / 2] += buf[n / 2].norm_sqr() * norm;
        segments += 1;
        start += hop;
    }
    for p in &mut acc {
        *p /= segments as f64;
    }

    let df = 1.0 / (n as f64 * series.bin_width);
    let frequencies = (0..=n / 2).map(|j| j as f64 * df).collect();
    Ok(Spectrum { frequencies, power: acc, segments_averaged: segments })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Peak power within ±1 bin of `f0` and the median background over
/// `background_window` bins on each side, skipping ±`guard_bins` around the
/// peak (which hold its own leakage).
fn peak_and_background(
    spectrum: &Spectrum,
    f0: f64,
    guard_bins: usize,
    background_window: usize,
) -> Result<(f64, f64), DspError> {
    assert!(background_window >= 1);
    let df = spectrum.frequency_step();
    let len = spectrum.power.len() as i64;
    let i0 = (f0 / df).round() as i64;
    let reach = (guard_bins + background_window) as i64;
    if i0 - reach < 0 || i0 + reach >= len {
        return Err(DspError::FrequencyOutOfRange { f0 });
    }

    let peak = spectrum.power[(i0 - 1) as usize..=(i0 + 1) as usize]
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));

    let g = guard_bins as i64;
    let mut bg: Vec<f64> = (i0 - reach..i0 - g)
        .chain(i0 + g + 1..=i0 + reach)
        .map(|i| spectrum.power[i as usize])
        .collect();
    Ok((peak, median(&mut bg)))
}

/// Spectral signal-to-noise ratio at `f0`: maximum power within ±1 bin over
/// the median background nearby.  Invariant under rescaling of the spectrum.
pub fn snr_at(
    spectrum: &Spectrum,
    f0: f64,
    guard_bins: usize,
    background_window: usize,
) -> Result<f64, DspError> {
    let (peak, background) = peak_and_background(spectrum, f0, guard_bins, background_window)?;
    if background == 0.0 {
        return Err(DspError::BackgroundUnresolved { f0 });
    }
    Ok(peak / background)
}

pub const DEFAULT_GUARD_BINS: usize = 2;
pub const DEFAULT_BACKGROUND_WINDOW: usize = 20;

/// One row of a harmonic analysis: peak, background and their ratio at a
/// multiple of the fundamental.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicLine {
    pub k: usize,
    pub frequency: f64,
    pub peak: f64,
    pub background: f64,
    pub snr: f64,
}

/// SNR analysis at `k·f_m` for k = 1..=n_harmonics.
pub fn harmonic_report(
    spectrum: &Spectrum,
    f_m: f64,
    n_harmonics: usize,
    guard_bins: usize,
    background_window: usize,
) -> Result<Vec<HarmonicLine>, DspError> {
    let top = n_harmonics as f64 * f_m;
    if top > spectrum.nyquist() {
        return Err(DspError::FrequencyOutOfRange { f0: top });
    }
    (1..=n_harmonics)
        .map(|k| {
            let f = k as f64 * f_m;
            let (peak, background) = peak_and_background(spectrum, f, guard_bins, background_window)?;
            if background == 0.0 {
                return Err(DspError::BackgroundUnresolved { f0: f });
            }
            Ok(HarmonicLine { k, frequency: f, peak, background, snr: peak / background })
        })
        .collect()
}

/// `frequency,power` rows; frequencies angular (×2π).
pub fn write_spectrum_csv<W: Write>(spectrum: &Spectrum, mut out: W) -> io::Result<()> {
    writeln!(out, "frequency,power")?;
    for (f, p) in spectrum.frequencies.iter().zip(&spectrum.power) {
        writeln!(out, "{},{}", f * ANGULAR_FREQUENCY_SCALE, p)?;
    }
    Ok(())
}

/// `k,frequency,peak,background,snr` rows; frequencies angular (×2π).
pub fn write_harmonics_csv<W: Write>(lines: &[HarmonicLine], mut out: W) -> io::Result<()> {
    writeln!(out, "k,frequency,peak,background,snr")?;
    for l in lines {
        writeln!(
            out,
            "{},{},{},{},{}",
            l.k,
            l.frequency * ANGULAR_FREQUENCY_SCALE,
            l.peak,
            l.background,
            l.snr
        )?;
    }
    Ok(())
}
