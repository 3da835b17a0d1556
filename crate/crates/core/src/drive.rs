//! Time-dependent drive: the modulated Rabi frequency, the detuning rules for
//! the two broadband fields, and the effective pump-rate schedule they induce.
//!
//! Two modulation shapes exist.  `Step` switches the drive between
//! `omega + delta_omega` and `omega - delta_omega` every half period.  `Beat`
//! superposes two lasers and takes the slowly varying envelope
//! `sqrt(o1^2 + o2^2 + 2 o1 o2 cos(dw t))`, with the dressed splitting
//! following it adiabatically (`delta_w` is tiny compared to the splitting).

use crate::model::{ModelError, SystemParams};

#[derive(Debug, thiserror::Error)]
pub enum DriveError {
    #[error("table pump rates are defined per half-cycle and require a step schedule")]
    TablePumpWithBeat,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DriveSchedule {
    /// Square-wave switching with period `t_m`; the strong half opens each
    /// period.
    Step { t_m: f64 },
    /// Two-laser beat envelope; `omega1 > omega2` keeps the envelope away
    /// from zero and `delta_w` is the laser frequency difference.
    Beat { omega1: f64, omega2: f64, delta_w: f64 },
}

impl DriveSchedule {
    /// Modulation period: `t_m` for steps, one full beat for beats.
    pub fn period(&self) -> f64 {
        match *self {
            DriveSchedule::Step { t_m } => t_m,
            DriveSchedule::Beat { delta_w, .. } => std::f64::consts::TAU / delta_w,
        }
    }

    /// Cyclic frequency the spectral peak is expected at: `1/t_m` for steps,
    /// `delta_w/2pi` for beats.
    pub fn drive_frequency(&self) -> f64 {
        1.0 / self.period()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        match *self {
            DriveSchedule::Step { t_m } => {
                if !(t_m > 0.0) {
                    return Err(ModelError::Parameter {
                        name: "drive.t_m",
                        requirement: "positive",
                        value: t_m,
                    });
                }
            }
            DriveSchedule::Beat { omega1, omega2, delta_w } => {
                if !(omega2 > 0.0) {
                    return Err(ModelError::Parameter {
                        name: "drive.omega2",
                        requirement: "positive",
                        value: omega2,
                    });
                }
                if !(omega1 > omega2) {
                    return Err(ModelError::Parameter {
                        name: "drive.omega1",
                        requirement: "greater than omega2",
                        value: omega1,
                    });
                }
                if !(delta_w > 0.0) {
                    return Err(ModelError::Parameter {
                        name: "drive.delta_w",
                        requirement: "positive",
                        value: delta_w,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Spectral profile assumed for the broadband fields.  The width parameter is
/// the FWHM in both cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineProfile {
    Lorentzian,
    Gaussian,
}

/// How the effective pump rates follow the modulation: either an explicit
/// per-half-cycle table (step schedules only) or rates derived from the
/// instantaneous resonance mismatch through the field lineshape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PumpMode {
    Table {
        w33_weak: f64,
        w33_strong: f64,
        w44_weak: f64,
        w44_strong: f64,
    },
    Lineshape {
        profile: LineProfile,
    },
}

impl PumpMode {
    pub fn check(&self) -> Result<(), ModelError> {
        if let PumpMode::Table { w33_weak, w33_strong, w44_weak, w44_strong } = *self {
            for (name, value) in [
                ("pump.w33_weak", w33_weak),
                ("pump.w33_strong", w33_strong),
                ("pump.w44_weak", w44_weak),
                ("pump.w44_strong", w44_strong),
            ] {
                if !(value >= 0.0) {
                    return Err(ModelError::Parameter { name, requirement: "non-negative", value });
                }
            }
        }
        Ok(())
    }
}

/// True during the strong half of a step period (the half that opens each
/// period carries `omega + delta_omega`).
fn step_is_strong(t_m: f64, t: f64) -> bool {
    t.rem_euclid(t_m) < 0.5 * t_m
}

/// Instantaneous Rabi frequency of the coherent drive.
pub fn rabi_at(params: &SystemParams, t: f64) -> f64 {
    match params.schedule {
        DriveSchedule::Step { t_m } => {
            if step_is_strong(t_m, t) {
                params.omega + params.delta_omega
            } else {
                params.omega - params.delta_omega
            }
        }
        DriveSchedule::Beat { omega1, omega2, delta_w } => {
            (omega1 * omega1 + omega2 * omega2 + 2.0 * omega1 * omega2 * (delta_w * t).cos())
                .sqrt()
        }
    }
}

/// Carrier detunings that park field 3 on the upper dressed level of the
/// strong phase and field 4 on the lower dressed level of the weak phase:
/// `((omega + delta_omega)/2, -(omega - delta_omega)/2)`.
pub fn detunings_for(omega: f64, delta_omega: f64) -> (f64, f64) {
    (0.5 * (omega + delta_omega), -0.5 * (omega - delta_omega))
}

/// Lineshape attenuation at mismatch `delta` for a profile of FWHM
/// `bandwidth`; 1 on resonance.
pub fn line_attenuation(profile: LineProfile, delta: f64, bandwidth: f64) -> f64 {
    match profile {
        LineProfile::Lorentzian => {
            let x = 2.0 * delta / bandwidth;
            1.0 / (1.0 + x * x)
        }
        LineProfile::Gaussian => {
            let x = delta / bandwidth;
            (-4.0 * std::f64::consts::LN_2 * x * x).exp()
        }
    }
}

/// Effective pump rates `(w33, w44)` at time `t`.
///
/// Lineshape mode keys the mismatches to the drive swing itself: field 3 is
/// exactly resonant when the drive sits at its minimum (`omega -
/// delta_omega`, or `omega1 - omega2` for beats) and field 4 when it sits at
/// its maximum.  This is what synchronizes shelving to one half-cycle and
/// deshelving to the other.
pub fn pump_rates_at(mode: &PumpMode, params: &SystemParams, t: f64) -> Result<(f64, f64), DriveError> {
    match (mode, &params.schedule) {
        (PumpMode::Table { .. }, DriveSchedule::Beat { .. }) => Err(DriveError::TablePumpWithBeat),
        (
            &PumpMode::Table { w33_weak, w33_strong, w44_weak, w44_strong },
            &DriveSchedule::Step { t_m },
        ) => {
            if step_is_strong(t_m, t) {
                Ok((w33_strong, w44_strong))
            } else {
                Ok((w33_weak, w44_weak))
            }
        }
        (&PumpMode::Lineshape { profile }, schedule) => {
            let (lo, hi) = match *schedule {
                DriveSchedule::Step { .. } => {
                    (params.omega - params.delta_omega, params.omega + params.delta_omega)
                }
                DriveSchedule::Beat { omega1, omega2, .. } => (omega1 - omega2, omega1 + omega2),
            };
            let omega_t = rabi_at(params, t);
            let delta3 = 0.5 * (omega_t - lo);
            let delta4 = 0.5 * (hi - omega_t);
            Ok((
                params.noise3.w_max * line_attenuation(profile, delta3, params.noise3.bandwidth),
                params.noise4.w_max * line_attenuation(profile, delta4, params.noise4.bandwidth),
            ))
        }
    }
}
