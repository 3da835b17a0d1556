//! Conditional (no-emission) evolution, waiting-time sampling, jump reset,
//! and full photon-record trajectories.
//!
//! The waiting-time problem — find the instant where the conditional trace
//! crosses a uniform draw `u` — is solved on a dyadic grid.  Each modulation
//! segment owns a family of propagators spanning 1, 2, 4, ... grid steps of
//! width at most [`JUMP_TIME_RESOLUTION`]; locating a crossing is then a
//! binary descent through that family (the trace is non-increasing along
//! no-jump evolution, so the crossing set is a prefix of the grid).  Every
//! family member is an independently computed matrix exponential: building
//! them by repeated squaring instead loses ~7 digits over the ~2^36 steps of
//! a segment and fails the integration oracles.

use std::io::{self, BufRead, Write};

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::drive::{pump_rates_at, rabi_at, DriveError, DriveSchedule, PumpMode};
use crate::master::Generator;
use crate::model::{DressedState, SystemParams};

/// Absolute precision of located emission times.
pub const JUMP_TIME_RESOLUTION: f64 = 1e-9;
/// Beat envelopes are frozen on this many sub-segments per period; at the
/// reference beat period that is a coefficient step of ~0.13 time units,
/// far below every relaxation time in play.
const BEAT_SUBDIVISIONS: usize = 1024;
const MAX_GRID_BITS: u32 = 60;
/// Relative slack for the trace-increase guard (propagators carry ~1e-15
/// roundoff; a real generator bug overshoots this by orders of magnitude).
const TRACE_INCREASE_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum JumpError {
    #[error("conditional trace increased at t = {t}; generator or propagator is inconsistent")]
    TraceIncreased { t: f64 },
    #[error("non-finite conditional state at t = {t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Drive(#[from] DriveError),
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed photon record at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Ordered emission times of one trajectory plus the seed that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonRecord {
    pub seed: u64,
    pub horizon: f64,
    pub emission_times: Vec<f64>,
}

impl PhotonRecord {
    /// Line-oriented text form: a header with the seed, horizon and a
    /// parameter fingerprint, then one emission time per line at fixed 1e-9
    /// resolution.  Parsing a written record and writing it again reproduces
    /// the bytes exactly.
    pub fn write_to<W: Write>(&self, mut w: W, params_hash: &str) -> io::Result<()> {
        writeln!(w, "seed={} horizon={:.9} params={}", self.seed, self.horizon, params_hash)?;
        for t in &self.emission_times {
            writeln!(w, "{t:.9}")?;
        }
        Ok(())
    }

    /// Reads a record; returns the record and the parameter fingerprint from
    /// the header.
    pub fn read_from<R: BufRead>(r: R) -> Result<(Self, String), RecordError> {
        let malformed = |line: usize, message: &str| RecordError::Malformed {
            line,
            message: message.to_string(),
        };
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| malformed(1, "empty record"))??;
        let mut seed = None;
        let mut horizon = None;
        let mut params = None;
        for token in header.split_whitespace() {
            match token.split_once('=') {
                Some(("seed", v)) => {
                    seed = Some(v.parse::<u64>().map_err(|e| malformed(1, &format!("bad seed: {e}")))?)
                }
                Some(("horizon", v)) => {
                    horizon =
                        Some(v.parse::<f64>().map_err(|e| malformed(1, &format!("bad horizon: {e}")))?)
                }
                Some(("params", v)) => params = Some(v.to_string()),
                _ => return Err(malformed(1, &format!("unexpected header token {token:?}"))),
            }
        }
        let (seed, horizon, params) = match (seed, horizon, params) {
            (Some(s), Some(h), Some(p)) => (s, h, p),
            _ => return Err(malformed(1, "header must carry seed, horizon and params")),
        };
        let mut emission_times = Vec::new();
        let mut prev = 0.0;
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: f64 = line
                .trim()
                .parse()
                .map_err(|e| malformed(line_no, &format!("bad emission time: {e}")))?;
            if !t.is_finite() || t <= prev {
                return Err(malformed(line_no, "emission times must be finite and strictly increasing"));
            }
            if t > horizon + JUMP_TIME_RESOLUTION {
                return Err(malformed(line_no, "emission time exceeds the record horizon"));
            }
            emission_times.push(t);
            prev = t;
        }
        Ok((PhotonRecord { seed, horizon, emission_times }, params))
    }
}

/// Short content fingerprint of a parameter set, embedded in record headers
/// so mixed-up files are detectable.
pub fn params_fingerprint(params: &SystemParams, mode: &PumpMode) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("{params:?}|{mode:?}").as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Conditional generator: the unconditional equations with the emission
/// feedback into the dressed populations and coherence removed, leaving a
/// trace-decreasing flow whose trace equals the no-emission probability.
pub fn conditional_generator_at(
    params: &SystemParams,
    w33: f64,
    w44: f64,
    omega_t: f64,
) -> Generator {
    let g = params.gamma22;
    let g33 = params.gamma33;
    let b = w33 + w44 + g;

    let mut m = Matrix6::zeros();
    // p+' = -(2 w33 + g) p+ + (g/2)(coh + conj coh) + 2 w33 p3
    m[(0, 0)] = -(2.0 * w33 + g);
    m[(0, 2)] = 2.0 * w33;
    m[(0, 4)] = g;
    // p-' = -(2 w44 + g) p- + (g/2)(coh + conj coh) + 2 w44 p4
    m[(1, 1)] = -(2.0 * w44 + g);
    m[(1, 3)] = 2.0 * w44;
    m[(1, 4)] = g;
    // p3' = 2 w33 p+ - (2 w33 + 2 g33) p3
    m[(2, 0)] = 2.0 * w33;
    m[(2, 2)] = -(2.0 * w33 + 2.0 * g33);
    // p4' = 2 g33 p3 + 2 w44 p- - 2 w44 p4
    m[(3, 1)] = 2.0 * w44;
    m[(3, 2)] = 2.0 * g33;
    m[(3, 3)] = -2.0 * w44;
    // coh' = (g/2)(p+ + p-) - (w33 + w44 + g + i omega/2) coh
    m[(4, 0)] = 0.5 * g;
    m[(4, 1)] = 0.5 * g;
    m[(4, 4)] = -b;
    m[(4, 5)] = 0.5 * omega_t;
    m[(5, 4)] = -0.5 * omega_t;
    m[(5, 5)] = -b;

    Generator::from_matrix(m)
}

/// State reset after a detected emission: the emitting transition ends in
/// level 1, whose dressed image is p+ = p- = Re coh = 1/2.
pub fn apply_jump(_state: &DressedState) -> DressedState {
    DressedState::bare_level1()
}

fn reset_vector() -> Vector6<f64> {
    DressedState::bare_level1().to_vector()
}

fn trace4(v: &Vector6<f64>) -> f64 {
    v[0] + v[1] + v[2] + v[3]
}

struct Segment {
    /// Offset of the segment within one period.
    start: f64,
    len: f64,
    bits: u32,
    /// Grid step `len / 2^bits`, at most [`JUMP_TIME_RESOLUTION`].
    dt: f64,
    /// `fam[k]` advances the conditional state by `2^k` grid steps;
    /// `fam[bits]` spans the whole segment.
    fam: Vec<Matrix6<f64>>,
}

#[derive(Clone, Copy, Debug)]
struct Cursor {
    n: u64,
    seg: usize,
    pos: u64,
}

/// Precomputed conditional propagator families for one parameter set; shared
/// read-only across trajectory workers.
pub struct JumpEngine {
    period: f64,
    segments: Vec<Segment>,
}

impl JumpEngine {
    pub fn new(params: &SystemParams, mode: &PumpMode) -> Result<Self, JumpError> {
        let period = params.schedule.period();
        let starts: Vec<f64> = match params.schedule {
            DriveSchedule::Step { t_m } => vec![0.0, 0.5 * t_m],
            DriveSchedule::Beat { .. } => (0..BEAT_SUBDIVISIONS)
                .map(|k| period * k as f64 / BEAT_SUBDIVISIONS as f64)
                .collect(),
        };
        let mut segments = Vec::with_capacity(starts.len());
        for (i, &start) in starts.iter().enumerate() {
            let end = starts.get(i + 1).copied().unwrap_or(period);
            let len = end - start;
            let mid = start + 0.5 * len;
            let (w33, w44) = pump_rates_at(mode, params, mid)?;
            let gen = conditional_generator_at(params, w33, w44, rabi_at(params, mid));
            let bits = ((len / JUMP_TIME_RESOLUTION).log2().ceil() as u32).clamp(1, MAX_GRID_BITS);
            let dt = len / (1u64 << bits) as f64;
            let fam: Vec<Matrix6<f64>> = (0..=bits)
                .map(|k| (gen.matrix() * (dt * (1u64 << k) as f64)).exp())
                .collect();
            segments.push(Segment { start, len, bits, dt, fam });
        }
        Ok(JumpEngine { period, segments })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    fn global_time(&self, cur: &Cursor) -> f64 {
        let seg = &self.segments[cur.seg];
        cur.n as f64 * self.period + seg.start + cur.pos as f64 * seg.dt
    }

    /// Rolls a cursor sitting on a segment end over to the next segment.
    fn normalize_cursor(&self, cur: &mut Cursor) {
        while cur.pos == 1u64 << self.segments[cur.seg].bits {
            cur.pos = 0;
            cur.seg += 1;
            if cur.seg == self.segments.len() {
                cur.seg = 0;
                cur.n += 1;
            }
        }
    }

    fn cursor_at(&self, t: f64) -> Cursor {
        let n = (t / self.period).floor().max(0.0);
        let local = (t - n * self.period).clamp(0.0, self.period);
        let seg = self
            .segments
            .partition_point(|s| s.start <= local)
            .saturating_sub(1);
        let s = &self.segments[seg];
        let pos = (((local - s.start) / s.dt).round() as i64).clamp(0, 1i64 << s.bits) as u64;
        let mut cur = Cursor { n: n as u64, seg, pos };
        self.normalize_cursor(&mut cur);
        cur
    }

    /// Binary descent within one segment: advances `pos` to the largest grid
    /// position `<= target` whose trace still exceeds `u`.  Returns the jump
    /// position (first grid point at or below `u`) if the crossing lies in
    /// the covered range.
    fn walk_segment(
        &self,
        seg: &Segment,
        v: &mut Vector6<f64>,
        pos: &mut u64,
        target: u64,
        u: f64,
        seg_start_global: f64,
    ) -> Result<Option<u64>, JumpError> {
        if *pos >= target {
            return Ok(None);
        }
        let mut trace = trace4(v);
        let span = target - *pos;
        let msb = 63 - span.leading_zeros();
        for k in (0..=msb).rev() {
            let stride = 1u64 << k;
            if *pos + stride > target {
                continue;
            }
            let w = seg.fam[k as usize] * *v;
            let tw = trace4(&w);
            let t_here = seg_start_global + *pos as f64 * seg.dt;
            if !tw.is_finite() {
                return Err(JumpError::NonFinite { t: t_here });
            }
            if tw > trace * (1.0 + TRACE_INCREASE_TOL) + 1e-15 {
                return Err(JumpError::TraceIncreased { t: t_here });
            }
            if tw > u {
                *v = w;
                trace = tw;
                *pos += stride;
            }
        }
        if *pos == target {
            Ok(None)
        } else {
            Ok(Some(*pos + 1))
        }
    }

    /// Evolves until the conditional trace hits `u` (a jump) or `t_end`.
    /// On a jump, returns its time; `v` holds the last pre-jump grid state
    /// and the cursor sits on the jump instant.
    fn no_jump(
        &self,
        v: &mut Vector6<f64>,
        cur: &mut Cursor,
        u: f64,
        t_end: f64,
    ) -> Result<Option<f64>, JumpError> {
        loop {
            if self.global_time(cur) >= t_end {
                return Ok(None);
            }
            let seg = &self.segments[cur.seg];
            let seg_start_global = cur.n as f64 * self.period + seg.start;
            let full = 1u64 << seg.bits;
            let target = if t_end >= seg_start_global + seg.len {
                full
            } else {
                (((t_end - seg_start_global) / seg.dt).floor() as i64).clamp(0, full as i64) as u64
            };
            if let Some(jump_pos) =
                self.walk_segment(seg, v, &mut cur.pos, target, u, seg_start_global)?
            {
                cur.pos = jump_pos;
                let t_jump = seg_start_global + jump_pos as f64 * seg.dt;
                self.normalize_cursor(cur);
                return Ok(Some(t_jump));
            }
            if target < full {
                return Ok(None);
            }
            self.normalize_cursor(cur);
        }
    }

    /// One full photon record from the bare ground state at t = 0.
    pub fn trajectory(&self, seed: u64, horizon: f64) -> Result<PhotonRecord, JumpError> {
        assert!(horizon > 0.0, "horizon must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = reset_vector();
        let mut cur = Cursor { n: 0, seg: 0, pos: 0 };
        let mut emission_times = Vec::new();
        loop {
            let u = next_unit_open(&mut rng);
            match self.no_jump(&mut v, &mut cur, u, horizon)? {
                None => break,
                Some(t) => {
                    emission_times.push(t.min(horizon));
                    v = reset_vector();
                }
            }
        }
        Ok(PhotonRecord { seed, horizon, emission_times })
    }

    /// Normalized conditional state of the trajectory `seed` at time `t`
    /// (grid-quantized).  Runs the identical jump sequence the record would
    /// contain up to `t`.
    pub fn state_at(&self, seed: u64, t: f64) -> Result<DressedState, JumpError> {
        assert!(t > 0.0, "probe time must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = reset_vector();
        let mut cur = Cursor { n: 0, seg: 0, pos: 0 };
        loop {
            let u = next_unit_open(&mut rng);
            match self.no_jump(&mut v, &mut cur, u, t)? {
                None => break,
                Some(_) => v = reset_vector(),
            }
        }
        Ok(DressedState::from_vector(&(v / trace4(&v))))
    }
}

/// Uniform draw from the open interval (0, 1).
fn next_unit_open<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let x: f64 = rng.gen();
        if x > 0.0 {
            return x;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoJumpOutcome {
    /// Emission at the given time; carries the normalized pre-jump state.
    JumpAt(f64, DressedState),
    /// Reached the horizon without emitting; carries the normalized
    /// conditional state there.
    Survived(DressedState),
}

/// Single no-jump leg from an arbitrary state and start time: integrates the
/// conditional equations until the trace reaches `u` or `horizon`.
///
/// Batch work should go through [`JumpEngine`], which amortizes the
/// propagator construction this convenience form repeats per call.
pub fn evolve_no_jump(
    state: &DressedState,
    params: &SystemParams,
    mode: &PumpMode,
    t0: f64,
    u: f64,
    horizon: f64,
) -> Result<NoJumpOutcome, JumpError> {
    assert!(u > 0.0 && u < 1.0, "u must lie in (0, 1)");
    assert!(horizon >= t0);
    let engine = JumpEngine::new(params, mode)?;
    let mut v = state.to_vector();
    // The crossing condition compares against the absolute trace, so scale u
    // by the incoming trace to make the leg independent of prior history.
    let u_abs = u * trace4(&v);
    let mut cur = engine.cursor_at(t0);
    match engine.no_jump(&mut v, &mut cur, u_abs, horizon)? {
        Some(t) => Ok(NoJumpOutcome::JumpAt(t, DressedState::from_vector(&(v / trace4(&v))))),
        None => Ok(NoJumpOutcome::Survived(DressedState::from_vector(&(v / trace4(&v))))),
    }
}

/// One trajectory from the bare ground state: alternate no-jump legs and
/// resets, recording every emission up to the horizon.  Bit-reproducible for
/// a fixed (seed, params, mode).
pub fn simulate_trajectory(
    params: &SystemParams,
    mode: &PumpMode,
    seed: u64,
    horizon: f64,
) -> Result<PhotonRecord, JumpError> {
    JumpEngine::new(params, mode)?.trajectory(seed, horizon)
}

/// Trajectory state probe; see [`JumpEngine::state_at`].
pub fn conditional_state_at(
    params: &SystemParams,
    mode: &PumpMode,
    seed: u64,
    t: f64,
) -> Result<DressedState, JumpError> {
    JumpEngine::new(params, mode)?.state_at(seed, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::generator_at;
    use crate::model::NoiseFieldConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn params(omega: f64, delta_omega: f64, t_m: f64) -> SystemParams {
        SystemParams {
            gamma22: 1.0,
            gamma33: 1.0,
            omega,
            delta_omega,
            noise3: NoiseFieldConfig { w_max: 0.0128, bandwidth: 6.66, detuning: 30.0 },
            noise4: NoiseFieldConfig { w_max: 0.0128, bandwidth: 6.66, detuning: -20.0 },
            schedule: DriveSchedule::Step { t_m },
        }
    }

    fn constant_table(w33: f64, w44: f64) -> PumpMode {
        PumpMode::Table { w33_weak: w33, w33_strong: w33, w44_weak: w44, w44_strong: w44 }
    }

    fn fig_pump() -> PumpMode {
        PumpMode::Table {
            w33_weak: 0.0128,
            w33_strong: 0.00128,
            w44_weak: 0.00128,
            w44_strong: 0.0128,
        }
    }

    #[test]
    fn trace_loss_rate_is_emission_rate() {
        // Summing the population rows of the conditional generator must give
        // exactly -2 gamma22 rho22 for any state.
        let p = params(50.0, 10.0, 128.2);
        let gen = conditional_generator_at(&p, 0.37, 0.052, 57.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v = Vector6::from_fn(|_, _| rng.gen::<f64>() - 0.2);
            let dv = gen.apply(&v);
            let trace_rate = dv[0] + dv[1] + dv[2] + dv[3];
            let rho22 = 0.5 * (v[0] + v[1] - 2.0 * v[4]);
            assert_abs_diff_eq!(trace_rate, -2.0 * p.gamma22 * rho22, epsilon = 1e-12);
        }
    }

    #[test]
    fn removal_rule_against_unconditional_generator() {
        // conditional p+' minus unconditional p+' =
        //   -(g/2) p+ + (g/2)(coh + conj coh - p-)
        let p = params(50.0, 10.0, 128.2);
        let cond = conditional_generator_at(&p, 0.2, 0.05, 44.0);
        let uncond = generator_at(&p, 0.2, 0.05, 44.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let v = Vector6::from_fn(|_, _| rng.gen::<f64>());
            let diff = cond.apply(&v)[0] - uncond.apply(&v)[0];
            let expected = -0.5 * v[0] + 0.5 * (2.0 * v[4] - v[1]);
            assert_abs_diff_eq!(diff, expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn shelved_state_is_stationary_without_deshelving_pump() {
        let p = params(50.0, 10.0, 128.2);
        let gen = conditional_generator_at(&p, 0.3, 0.0, 60.0);
        let dv = gen.apply(&DressedState::shelved().to_vector());
        assert_eq!(dv.amax(), 0.0);

        let out = evolve_no_jump(
            &DressedState::shelved(),
            &p,
            &constant_table(0.3, 0.0),
            0.0,
            1.0 - 1e-12,
            500.0,
        )
        .unwrap();
        assert!(matches!(out, NoJumpOutcome::Survived(s) if s.p4 == 1.0));
    }

    #[test]
    fn near_unity_u_jumps_immediately() {
        let p = params(5.0, 0.0, 100.0);
        let out = evolve_no_jump(
            &DressedState::bare_level1(),
            &p,
            &constant_table(0.0, 0.0),
            0.0,
            1.0 - 1e-9,
            50.0,
        )
        .unwrap();
        match out {
            NoJumpOutcome::JumpAt(t, _) => assert!(t > 0.0 && t < 1e-2, "t = {t}"),
            NoJumpOutcome::Survived(_) => panic!("expected a jump"),
        }
    }

    #[test]
    fn reset_state_is_dark_then_brightens() {
        let reset = apply_jump(&DressedState::shelved());
        assert_eq!(reset, DressedState::bare_level1());
        assert_eq!(reset.emission_rate(1.0), 0.0);

        // Shortly after a reset the emitting population grows again.
        let p = params(5.0, 0.0, 100.0);
        let gen = conditional_generator_at(&p, 0.0, 0.0, 5.0);
        let later = (gen.matrix() * 0.4).exp() * reset.to_vector();
        let s = DressedState::from_vector(&(later / trace4(&later)));
        assert!(s.emission_rate(1.0) > 0.05);
    }

    /// Independent waiting-time oracle: RK4 on the conditional equations at a
    /// fixed fine step, with linear interpolation of the trace crossing.
    fn rk4_waiting_time(p: &SystemParams, omega: f64, u: f64) -> f64 {
        let gen = conditional_generator_at(p, 0.0, 0.0, omega);
        let m = gen.matrix();
        let f = |v: &Vector6<f64>| m * v;
        let mut v = DressedState::bare_level1().to_vector();
        let h = 1e-4;
        let mut t = 0.0;
        let mut prev_trace = trace4(&v);
        loop {
            let k1 = f(&v);
            let k2 = f(&(v + k1 * (0.5 * h)));
            let k3 = f(&(v + k2 * (0.5 * h)));
            let k4 = f(&(v + k3 * h));
            v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            t += h;
            let tr = trace4(&v);
            if tr <= u {
                // Interpolate within the last step.
                return t - h + h * (prev_trace - u) / (prev_trace - tr);
            }
            prev_trace = tr;
            assert!(t < 1e3, "crossing not found");
        }
    }

    #[test]
    fn waiting_times_match_fine_grid_integration() {
        let p = params(5.0, 0.0, 100.0);
        let mode = constant_table(0.0, 0.0);
        for &u in &[0.9, 0.6, 0.3, 0.12] {
            let oracle = rk4_waiting_time(&p, 5.0, u);
            match evolve_no_jump(&DressedState::bare_level1(), &p, &mode, 0.0, u, 100.0).unwrap() {
                NoJumpOutcome::JumpAt(t, _) => {
                    assert!((t - oracle).abs() < 1e-6, "u={u}: engine {t} vs oracle {oracle}")
                }
                NoJumpOutcome::Survived(_) => panic!("u={u}: expected a jump"),
            }
        }
    }

    #[test]
    fn no_jump_state_matches_direct_exponential_on_step_segment() {
        let p = params(50.0, 10.0, 128.2);
        let mode = fig_pump();
        let out = evolve_no_jump(&DressedState::bare_level1(), &p, &mode, 0.0, 1e-12, 30.0).unwrap();
        let s = match out {
            NoJumpOutcome::Survived(s) => s,
            _ => panic!("trace cannot reach 1e-12 by t=30"),
        };
        let (w33, w44) = pump_rates_at(&mode, &p, 1.0).unwrap();
        let gen = conditional_generator_at(&p, w33, w44, 60.0);
        let direct = (gen.matrix() * 30.0).exp() * DressedState::bare_level1().to_vector();
        let direct = DressedState::from_vector(&(direct / trace4(&direct)));
        assert!((s.to_vector() - direct.to_vector()).amax() < 1e-10);
    }

    #[test]
    fn no_jump_state_matches_adaptive_integration_on_beat() {
        let p = SystemParams {
            schedule: DriveSchedule::Beat { omega1: 50.0, omega2: 10.0, delta_w: 0.049 },
            ..params(50.0, 10.0, 128.2)
        };
        let mode = PumpMode::Lineshape { profile: crate::drive::LineProfile::Lorentzian };
        let horizon = 5.0;
        let out =
            evolve_no_jump(&DressedState::bare_level1(), &p, &mode, 0.0, 1e-9, horizon).unwrap();
        let s = match out {
            NoJumpOutcome::Survived(s) => s,
            _ => panic!("trace cannot reach 1e-9 by t=5"),
        };
        let gen_at = |t: f64| {
            let (w33, w44) = pump_rates_at(&mode, &p, t)?;
            Ok(conditional_generator_at(&p, w33, w44, rabi_at(&p, t)))
        };
        let fine = crate::master::adaptive_exp_midpoint(
            &DressedState::bare_level1().to_vector(),
            gen_at,
            0.0,
            horizon,
            1e-12,
            0.05,
        )
        .unwrap();
        let fine = fine / trace4(&fine);
        assert!(
            (s.to_vector() - fine).amax() < 1e-6,
            "divergence {}",
            (s.to_vector() - fine).amax()
        );
    }

    #[test]
    fn trajectories_are_reproducible_and_prefix_stable() {
        let p = params(50.0, 10.0, 128.2);
        let mode = fig_pump();
        let engine = JumpEngine::new(&p, &mode).unwrap();
        let a = engine.trajectory(1234, 400.0).unwrap();
        let b = engine.trajectory(1234, 400.0).unwrap();
        assert_eq!(a, b);
        assert!(!a.emission_times.is_empty());

        // Truncating the horizon keeps the common prefix bit-identical.
        let short = engine.trajectory(1234, 200.0).unwrap();
        let prefix: Vec<f64> =
            a.emission_times.iter().copied().filter(|&t| t <= 200.0).collect();
        assert_eq!(short.emission_times, prefix);

        let other = engine.trajectory(1235, 400.0).unwrap();
        assert_ne!(a.emission_times, other.emission_times);
    }

    #[test]
    fn emission_times_strictly_increasing_and_bounded() {
        let p = params(50.0, 10.0, 128.2);
        let engine = JumpEngine::new(&p, &fig_pump()).unwrap();
        let rec = engine.trajectory(99, 2000.0).unwrap();
        assert!(rec.emission_times.len() > 100);
        let mut prev = 0.0;
        for &t in &rec.emission_times {
            assert!(t > prev && t <= 2000.0);
            prev = t;
        }
    }

    #[test]
    fn waiting_times_are_antibunched() {
        // Immediately after an emission the atom is in |1> and cannot emit:
        // short waits are cubically suppressed relative to a Poisson stream
        // of the same rate.
        let p = params(5.0, 0.0, 100.0);
        let engine = JumpEngine::new(&p, &constant_table(0.005, 0.005)).unwrap();
        let rec = engine.trajectory(4242, 20_000.0).unwrap();
        let waits: Vec<f64> = rec.emission_times.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(waits.len() > 3000);
        let short = waits.iter().filter(|&&w| w < 0.1).count() as f64 / waits.len() as f64;
        let mean_wait = waits.iter().sum::<f64>() / waits.len() as f64;
        let poisson_null = 1.0 - (-0.1 / mean_wait).exp();
        assert!(
            short < poisson_null / 3.0,
            "short-wait fraction {short:.4} vs poisson {poisson_null:.4}"
        );
    }

    #[test]
    fn mean_rate_without_shelving_matches_steady_state() {
        // W = 0 disconnects level 3/4; emission never switches off and the
        // long-run rate equals 2 gamma22 rho22 of the two-level steady state.
        let p = params(5.0, 0.0, 100.0);
        let mode = constant_table(0.0, 0.0);
        let engine = JumpEngine::new(&p, &mode).unwrap();
        let horizon = 30_000.0;
        let rec = engine.trajectory(7, horizon).unwrap();
        let rate = rec.emission_times.len() as f64 / horizon;

        let long = crate::master::propagate(
            &DressedState::bare_level1(), &p, &mode, 0.0, 400.0, 1e-12).unwrap();
        let expected = long.emission_rate(p.gamma22);
        // ~1.6e4 events: 3 relative standard errors with margin for serial
        // correlation of the point process.
        assert!(
            (rate - expected).abs() < 5.0 * expected / (rec.emission_times.len() as f64).sqrt(),
            "rate {rate} vs steady prediction {expected}"
        );
    }

    #[test]
    fn state_probe_consistent_with_record() {
        let p = params(50.0, 10.0, 128.2);
        let mode = fig_pump();
        let engine = JumpEngine::new(&p, &mode).unwrap();
        let rec = engine.trajectory(11, 300.0).unwrap();
        // Probe immediately after an emission: the state must be near the
        // reset state (trace renormalized).
        let t_probe = rec.emission_times[10] + 1e-6;
        let s = engine.state_at(11, t_probe).unwrap();
        assert!((s.p_plus - 0.5).abs() < 1e-3 && s.p3 < 1e-3);
    }

    #[test]
    fn record_io_round_trips() {
        let rec = PhotonRecord {
            seed: 42,
            horizon: 1000.0,
            emission_times: vec![0.123456789, 1.0, 2.000000001, 999.999999999],
        };
        let mut buf = Vec::new();
        rec.write_to(&mut buf, "0011223344556677").unwrap();
        let (parsed, hash) = PhotonRecord::read_from(&buf[..]).unwrap();
        assert_eq!(parsed, rec);
        assert_eq!(hash, "0011223344556677");

        // file -> record -> file is byte-identical
        let mut again = Vec::new();
        parsed.write_to(&mut again, &hash).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn record_io_rejects_malformed_input() {
        let bad_order = "seed=1 horizon=10.000000000 params=aa\n2.0\n1.0\n";
        assert!(matches!(
            PhotonRecord::read_from(bad_order.as_bytes()),
            Err(RecordError::Malformed { line: 3, .. })
        ));
        let bad_header = "seed=1 horizon=ten params=aa\n";
        assert!(PhotonRecord::read_from(bad_header.as_bytes()).is_err());
        let beyond = "seed=1 horizon=1.000000000 params=aa\n2.0\n";
        assert!(PhotonRecord::read_from(beyond.as_bytes()).is_err());
    }

    #[test]
    fn fingerprint_distinguishes_parameter_sets() {
        let p = params(50.0, 10.0, 128.2);
        let q = params(50.0, 10.0, 128.3);
        let mode = fig_pump();
        assert_ne!(params_fingerprint(&p, &mode), params_fingerprint(&q, &mode));
        assert_eq!(params_fingerprint(&p, &mode), params_fingerprint(&p, &mode));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // Engine-located jump times quantize to the trajectory grid but must
        // always stay strictly ordered and inside the horizon under random
        // seeds and horizons.
        #[test]
        fn random_trajectories_well_formed(seed in 0u64..10_000, horizon in 50.0f64..800.0) {
            let p = params(50.0, 10.0, 128.2);
            let engine = JumpEngine::new(&p, &fig_pump()).unwrap();
            let rec = engine.trajectory(seed, horizon).unwrap();
            let mut prev = 0.0;
            for &t in &rec.emission_times {
                prop_assert!(t > prev && t <= horizon);
                prev = t;
            }
        }

        // Record serialization round-trips on grid-resolution times.
        #[test]
        fn record_round_trip(raw in proptest::collection::vec(1u64..4_000_000_000u64, 0..200)) {
            let mut ns: Vec<u64> = raw;
            ns.sort_unstable();
            ns.dedup();
            // Canonical 1e-9-grid values: the nearest f64 to the decimal
            // string, exactly what a parsed record holds.
            let times: Vec<f64> = ns
                .iter()
                .map(|&n| format!("{}.{:09}", n / 1_000_000_000, n % 1_000_000_000).parse().unwrap())
                .collect();
            let rec = PhotonRecord { seed: 5, horizon: 5.0, emission_times: times };
            let mut buf = Vec::new();
            rec.write_to(&mut buf, "ff").unwrap();
            let (parsed, _) = PhotonRecord::read_from(&buf[..]).unwrap();
            prop_assert_eq!(parsed, rec);
        }
    }
}
