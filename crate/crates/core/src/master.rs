//! Unconditional master equation in the dressed basis: generator assembly on
//! the real 6-vector `(p_plus, p_minus, p3, p4, Re coh, Im coh)`, time
//! propagation over the modulation schedules, and the steady state of the
//! closed population subsystem.
//!
//! The population equations never read the coherence, so the top-left 4x4
//! block is a classical rate matrix whose columns sum to zero; that block is
//! what `steady_populations` inverts.

use nalgebra::{Matrix4, Matrix6, Vector4, Vector6};

use crate::drive::{pump_rates_at, rabi_at, DriveError, DriveSchedule, PumpMode};
use crate::model::{DressedState, SystemParams};

#[derive(Debug, thiserror::Error)]
pub enum MasterError {
    #[error("adaptive step size underflowed below 1e-12 at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("degenerate steady state: {reason}")]
    Degenerate { reason: String },
    #[error(transparent)]
    Drive(#[from] DriveError),
}

/// Assembly switches for cross-checking; defaults reproduce the equations as
/// used everywhere else in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct MasterOptions {
    /// Source the coherence from `gamma22/2 (p+ + p-)` instead of
    /// `gamma22 (p+ + p-)`.  The full-strength source is the one consistent
    /// with the jump unraveling; the halved variant exists for sensitivity
    /// checks and affects no population observable.
    pub coherence_source_half: bool,
    /// Assemble the p4 row as minus the sum of the other population rows
    /// instead of writing it out, so trace conservation becomes an identity
    /// by construction.  Default keeps the explicit row, making the trace
    /// invariant a genuine test of the assembled matrix.
    pub residual_rho44: bool,
}

/// One frozen-coefficient generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Generator {
    m: Matrix6<f64>,
}

impl Generator {
    pub(crate) fn from_matrix(m: Matrix6<f64>) -> Self {
        Generator { m }
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.m
    }

    pub fn apply(&self, v: &Vector6<f64>) -> Vector6<f64> {
        self.m * v
    }

    /// The closed 4x4 population block.
    pub fn population_block(&self) -> Matrix4<f64> {
        self.m.fixed_view::<4, 4>(0, 0).into_owned()
    }
}

/// Unconditional generator for frozen `(w33, w44, omega_t)`.
pub fn generator_at(params: &SystemParams, w33: f64, w44: f64, omega_t: f64) -> Generator {
    generator_with(params, w33, w44, omega_t, MasterOptions::default())
}

pub fn generator_with(
    params: &SystemParams,
    w33: f64,
    w44: f64,
    omega_t: f64,
    opts: MasterOptions,
) -> Generator {
    let g = params.gamma22;
    let g33 = params.gamma33;
    let src = if opts.coherence_source_half { 0.5 * g } else { g };

    let mut m = Matrix6::zeros();

    // p+' = -(2 w33 + g/2) p+ + (g/2) p- + 2 w33 p3
    m[(0, 0)] = -(2.0 * w33 + 0.5 * g);
    m[(0, 1)] = 0.5 * g;
    m[(0, 2)] = 2.0 * w33;
    // p-' = (g/2) p+ - (2 w44 + g/2) p- + 2 w44 p4
    m[(1, 0)] = 0.5 * g;
    m[(1, 1)] = -(2.0 * w44 + 0.5 * g);
    m[(1, 3)] = 2.0 * w44;
    // p3' = 2 w33 p+ - (2 w33 + 2 g33) p3
    m[(2, 0)] = 2.0 * w33;
    m[(2, 2)] = -(2.0 * w33 + 2.0 * g33);
    if opts.residual_rho44 {
        for col in 0..6 {
            m[(3, col)] = -(m[(0, col)] + m[(1, col)] + m[(2, col)]);
        }
    } else {
        // p4' = 2 g33 p3 + 2 w44 p- - 2 w44 p4
        m[(3, 1)] = 2.0 * w44;
        m[(3, 2)] = 2.0 * g33;
        m[(3, 3)] = -2.0 * w44;
    }

    // coh' = src (p+ + p-) - (w33 + w44 + 3g/2 + i omega/2) coh - (g/2) conj(coh),
    // split into real and imaginary parts.
    m[(4, 0)] = src;
    m[(4, 1)] = src;
    m[(4, 4)] = -(w33 + w44 + 2.0 * g);
    m[(4, 5)] = 0.5 * omega_t;
    m[(5, 4)] = -0.5 * omega_t;
    m[(5, 5)] = -(w33 + w44 + g);

    Generator { m }
}

/// Generator with coefficients evaluated at time `t` under the given pump
/// mode.
pub fn generator_at_time(
    params: &SystemParams,
    mode: &PumpMode,
    t: f64,
    opts: MasterOptions,
) -> Result<Generator, DriveError> {
    let (w33, w44) = pump_rates_at(mode, params, t)?;
    Ok(generator_with(params, w33, w44, rabi_at(params, t), opts))
}

const ADAPTIVE_MIN_STEP: f64 = 1e-12;
/// The slow envelope must be resolved by at least this many steps per period.
const BEAT_STEPS_PER_PERIOD: f64 = 200.0;

/// Advances an unconditional state from `t0` to `t1`.
///
/// Step schedules are integrated exactly: the interval is split at every
/// half-period boundary and each constant segment gets a matrix-exponential
/// step.  Beat schedules use an embedded midpoint-exponential stepper with
/// step doubling; `tol` bounds the local error per step.
pub fn propagate(
    state: &DressedState,
    params: &SystemParams,
    mode: &PumpMode,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<DressedState, MasterError> {
    propagate_with(state, params, mode, t0, t1, tol, MasterOptions::default())
}

pub fn propagate_with(
    state: &DressedState,
    params: &SystemParams,
    mode: &PumpMode,
    t0: f64,
    t1: f64,
    tol: f64,
    opts: MasterOptions,
) -> Result<DressedState, MasterError> {
    assert!(t1 >= t0, "propagate backwards in time");
    let mut v = state.to_vector();
    match params.schedule {
        DriveSchedule::Step { t_m } => {
            let half = 0.5 * t_m;
            let mut t = t0;
            while t < t1 {
                let next = next_boundary(t, half).min(t1);
                let gen = generator_at_time(params, mode, 0.5 * (t + next), opts)?;
                v = (gen.matrix() * (next - t)).exp() * v;
                t = next;
            }
        }
        DriveSchedule::Beat { .. } => {
            let h_max = params.schedule.period() / BEAT_STEPS_PER_PERIOD;
            let gen_at = |t: f64| generator_at_time(params, mode, t, opts);
            v = adaptive_exp_midpoint(&v, gen_at, t0, t1, tol, h_max)?;
        }
    }
    Ok(DressedState::from_vector(&v))
}

/// First half-period boundary strictly after `t`.
fn next_boundary(t: f64, half: f64) -> f64 {
    let k = (t / half).floor();
    let b = (k + 1.0) * half;
    if b > t {
        b
    } else {
        (k + 2.0) * half
    }
}

/// Second-order exponential-midpoint stepper with step doubling and
/// Richardson extrapolation.  The generator is frozen at each (sub)step's
/// midpoint.
pub(crate) fn adaptive_exp_midpoint<F>(
    v0: &Vector6<f64>,
    gen_at: F,
    t0: f64,
    t1: f64,
    tol: f64,
    h_max: f64,
) -> Result<Vector6<f64>, MasterError>
where
    F: Fn(f64) -> Result<Generator, DriveError>,
{
    let step = |v: &Vector6<f64>, t: f64, h: f64| -> Result<Vector6<f64>, MasterError> {
        let gen = gen_at(t + 0.5 * h)?;
        Ok((gen.matrix() * h).exp() * v)
    };

    let mut v = *v0;
    let mut t = t0;
    let mut h = h_max.min(t1 - t0);
    while t < t1 {
        h = h.min(t1 - t);
        if h < ADAPTIVE_MIN_STEP {
            // Distinguish a genuinely tiny remaining interval from collapse.
            if t1 - t < ADAPTIVE_MIN_STEP {
                break;
            }
            return Err(MasterError::StepUnderflow { t });
        }
        let full = step(&v, t, h)?;
        let half = step(&step(&v, t, 0.5 * h)?, t + 0.5 * h, 0.5 * h)?;
        let err = ((half - full).amax() / 3.0).max(1e-300);
        if err <= tol {
            // Accept the extrapolated value (third order locally).
            v = half + (half - full) / 3.0;
            t += h;
        }
        let factor = (0.9 * (tol / err).powf(1.0 / 3.0)).clamp(0.2, 5.0);
        h = (h * factor).min(h_max);
    }
    Ok(v)
}

/// Unique steady probability vector of the 4x4 population block, found by
/// replacing the (linearly dependent) last balance equation with the
/// normalization row.
pub fn steady_populations(
    params: &SystemParams,
    w33: f64,
    w44: f64,
) -> Result<(f64, f64, f64, f64), MasterError> {
    let block = generator_at(params, w33, w44, params.omega).population_block();

    let mut bordered = block;
    for col in 0..4 {
        bordered[(3, col)] = 1.0;
    }
    let rhs = Vector4::new(0.0, 0.0, 0.0, 1.0);
    let p = nalgebra::LU::new(bordered).solve(&rhs).ok_or_else(|| MasterError::Degenerate {
        reason: "population rate matrix has a multi-dimensional null space".into(),
    })?;

    // Guard against a solve that went through numerically but does not
    // describe a probability vector in the null space.
    let scale = block.amax().max(1.0);
    let residual = (block * p).amax();
    if residual > 1e-9 * scale {
        return Err(MasterError::Degenerate {
            reason: format!("normalized null-space residual {residual:.3e} exceeds tolerance"),
        });
    }
    if p.iter().any(|&x| x < -1e-12) {
        return Err(MasterError::Degenerate {
            reason: "null-space vector is not a probability vector".into(),
        });
    }
    Ok((p[0], p[1], p[2], p[3]))
}
