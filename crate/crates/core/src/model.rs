//! Domain types: system rates, the dressed-basis state vector, and validation
//! of the broadband-pumping regime.
//!
//! Unit convention used throughout the crate: rates are expressed in units of
//! `gamma22` (half the spontaneous emission rate of the monitored level-2
//! transition) and times in units of `1/gamma22`.  A config with
//! `gamma22 = 1` is therefore already in reduced units; `gamma22` stays a
//! field so that unit-rescaling invariance can be tested rather than assumed.

use nalgebra::Vector6;
use num_complex::Complex64;

use crate::drive::DriveSchedule;

/// Numerical slack allowed below zero for populations.
pub const POSITIVITY_SLACK: f64 = 1e-12;
/// Tolerance on the unit trace of unconditional states.
pub const TRACE_TOL: f64 = 1e-9;
/// Default "much less than" factor for regime validation margins.
pub const DEFAULT_MARGIN_FACTOR: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{name} must be {requirement} (got {value})")]
    Parameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

/// One broadband (noisy) field, reduced to the few numbers that survive the
/// flat-pump approximation.
///
/// `detuning` is the carrier offset from the bare transition; it is fixed by
/// the resonance geometry (see [`crate::drive::detunings_for`]) and carried
/// for bookkeeping.  The dynamics only ever consume `w_max` and `bandwidth`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseFieldConfig {
    /// Peak effective pump rate, reached when the field sits exactly on its
    /// dressed resonance.
    pub w_max: f64,
    /// Full width at half maximum of the field's spectral profile.
    pub bandwidth: f64,
    /// Carrier detuning from the bare transition it addresses.
    pub detuning: f64,
}

impl NoiseFieldConfig {
    pub fn check(&self, label: &'static str) -> Result<(), ModelError> {
        if !(self.w_max >= 0.0) {
            return Err(ModelError::Parameter {
                name: if label == "noise3" { "noise3.w_max" } else { "noise4.w_max" },
                requirement: "non-negative",
                value: self.w_max,
            });
        }
        if !(self.bandwidth > 0.0) {
            return Err(ModelError::Parameter {
                name: if label == "noise3" { "noise3.bandwidth" } else { "noise4.bandwidth" },
                requirement: "positive",
                value: self.bandwidth,
            });
        }
        Ok(())
    }
}

/// Single source of truth for one run: every rate and modulation setting, in
/// units of `gamma22`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    /// Half the spontaneous emission rate of level 2 (population decays at
    /// `2 * gamma22`).
    pub gamma22: f64,
    /// Half the decay rate of level 3 into the shelving level 4.
    pub gamma33: f64,
    /// Mean Rabi frequency of the coherent drive.
    pub omega: f64,
    /// Modulation depth; the drive swings between `omega - delta_omega` and
    /// `omega + delta_omega`.
    pub delta_omega: f64,
    /// Broadband field addressing the 1<->3 transition.
    pub noise3: NoiseFieldConfig,
    /// Broadband field addressing the 2<->4 transition.
    pub noise4: NoiseFieldConfig,
    pub schedule: DriveSchedule,
}

impl SystemParams {
    /// Structural validation; the regime inequalities are handled separately
    /// by [`validate_params`] because they warn rather than reject.
    pub fn check(&self) -> Result<(), ModelError> {
        if !(self.gamma22 > 0.0) {
            return Err(ModelError::Parameter {
                name: "atom.gamma22",
                requirement: "positive",
                value: self.gamma22,
            });
        }
        if !(self.gamma33 >= 0.0) {
            return Err(ModelError::Parameter {
                name: "atom.gamma33",
                requirement: "non-negative",
                value: self.gamma33,
            });
        }
        if !(self.omega > 0.0) {
            return Err(ModelError::Parameter {
                name: "drive.omega",
                requirement: "positive",
                value: self.omega,
            });
        }
        // Weak modulation: delta_omega << omega is advisory, < omega is hard.
        if !(self.delta_omega >= 0.0 && self.delta_omega < self.omega) {
            return Err(ModelError::Parameter {
                name: "drive.delta_omega",
                requirement: "in [0, omega)",
                value: self.delta_omega,
            });
        }
        self.noise3.check("noise3")?;
        self.noise4.check("noise4")?;
        self.schedule.check()?;
        Ok(())
    }
}

/// The five independent real degrees of freedom of the density operator in
/// the dressed basis: four populations plus the complex +/- coherence.  The
/// -/+ coherence is the conjugate and never stored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DressedState {
    pub p_plus: f64,
    pub p_minus: f64,
    pub p3: f64,
    pub p4: f64,
    pub coh: Complex64,
}

impl DressedState {
    /// Bare ground state |1> = (|+> + |->)/sqrt(2).
    pub fn bare_level1() -> Self {
        DressedState {
            p_plus: 0.5,
            p_minus: 0.5,
            p3: 0.0,
            p4: 0.0,
            coh: Complex64::new(0.5, 0.0),
        }
    }

    /// Shelved state |4>.
    pub fn shelved() -> Self {
        DressedState {
            p_plus: 0.0,
            p_minus: 0.0,
            p3: 0.0,
            p4: 1.0,
            coh: Complex64::new(0.0, 0.0),
        }
    }

    /// Sum of populations; 1 for physical states, the survival probability
    /// for conditional (no-emission) states.
    pub fn trace(&self) -> f64 {
        self.p_plus + self.p_minus + self.p3 + self.p4
    }

    /// Population of bare level 2, the emitting level:
    /// `(p_plus + p_minus - 2 Re coh)/2`, clamped at zero.
    pub fn level2_population(&self) -> f64 {
        (0.5 * (self.p_plus + self.p_minus - 2.0 * self.coh.re)).max(0.0)
    }

    /// Instantaneous photon emission rate, `2 * gamma22 * rho22`.
    pub fn emission_rate(&self, gamma22: f64) -> f64 {
        2.0 * gamma22 * self.level2_population()
    }

    /// Flat vector layout shared by the generators:
    /// `(p_plus, p_minus, p3, p4, Re coh, Im coh)`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.p_plus, self.p_minus, self.p3, self.p4, self.coh.re, self.coh.im)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        DressedState {
            p_plus: v[0],
            p_minus: v[1],
            p3: v[2],
            p4: v[3],
            coh: Complex64::new(v[4], v[5]),
        }
    }

    fn positivity_ok(&self) -> bool {
        self.p_plus >= -POSITIVITY_SLACK
            && self.p_minus >= -POSITIVITY_SLACK
            && self.p3 >= -POSITIVITY_SLACK
            && self.p4 >= -POSITIVITY_SLACK
            && self.coh.norm()
                <= (self.p_plus.max(0.0) * self.p_minus.max(0.0)).sqrt() + POSITIVITY_SLACK
    }

    /// Unconditional states carry unit trace.
    pub fn is_valid_unconditional(&self) -> bool {
        self.positivity_ok() && (self.trace() - 1.0).abs() <= TRACE_TOL
    }

    /// Conditional states carry the survival probability as trace.
    pub fn is_valid_conditional(&self) -> bool {
        self.positivity_ok() && self.trace() > 0.0 && self.trace() <= 1.0 + TRACE_TOL
    }
}

/// Margins of the broadband-regime inequalities for one noise field: the
/// field must be wide compared to the decay it feeds and narrow compared to
/// the dressed splitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldMargins {
    /// 3 or 4; which transition the field addresses.
    pub field: u8,
    /// bandwidth / decay rate of the addressed level (infinite when the level
    /// does not decay, as for the metastable level 4).
    pub bandwidth_over_decay: f64,
    /// mean Rabi frequency / bandwidth.
    pub rabi_over_bandwidth: f64,
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub ok: bool,
    pub warnings: Vec<String>,
    pub margins: [FieldMargins; 2],
    pub threshold: f64,
}

/// Checks the broadband-pumping validity margins (decay << bandwidth <<
/// Rabi frequency) for both noise fields.  Warnings only; marginal parameter
/// sets are still simulated.
pub fn validate_params(params: &SystemParams) -> ValidationReport {
    validate_params_with(params, DEFAULT_MARGIN_FACTOR)
}

pub fn validate_params_with(params: &SystemParams, threshold: f64) -> ValidationReport {
    // Level 4 is metastable (its spontaneous decay is neglected in this
    // model), so the field-4 lower margin is infinite by construction.
    let decay = [params.gamma33, 0.0];
    let fields = [3u8, 4u8];
    let bw = [params.noise3.bandwidth, params.noise4.bandwidth];

    let mut warnings = Vec::new();
    let mut margins = [FieldMargins { field: 3, bandwidth_over_decay: 0.0, rabi_over_bandwidth: 0.0 }; 2];
    let mut ok = true;

    for i in 0..2 {
        let lower = if decay[i] > 0.0 { bw[i] / decay[i] } else { f64::INFINITY };
        let upper = params.omega / bw[i];
        margins[i] = FieldMargins {
            field: fields[i],
            bandwidth_over_decay: lower,
            rabi_over_bandwidth: upper,
        };
        if lower <= 1.0 {
            warnings.push(format!(
                "noise field {}: bandwidth {} does not exceed the level-{} decay rate {}; the flat pump-rate reduction is invalid",
                fields[i], bw[i], fields[i], decay[i]
            ));
        } else if lower <= threshold {
            warnings.push(format!(
                "noise field {}: bandwidth/decay margin {:.2} is below the x{} comfort factor",
                fields[i], lower, threshold
            ));
        }
        if upper <= 1.0 {
            warnings.push(format!(
                "noise field {}: bandwidth {} is not below the Rabi frequency {}; the field cannot address a single dressed state",
                fields[i], bw[i], params.omega
            ));
        } else if upper <= threshold {
            warnings.push(format!(
                "noise field {}: Rabi/bandwidth margin {:.2} is below the x{} comfort factor",
                fields[i], upper, threshold
            ));
        }
        ok &= lower > threshold && upper > threshold;
    }

    ValidationReport { ok, warnings, margins, threshold }
}
