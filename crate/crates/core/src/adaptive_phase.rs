//! Single-pulse adaptive homodyne phase measurement.
//!
//! Scaled time `v` runs over `(0, 1]` in `N = duration_samples` steps of
//! `dt = 1/N`. The photocurrent of a coherent pulse with amplitude `|α|` and
//! phase `φ`, read against a local oscillator at phase `Φ`, is modeled as
//!
//! ```text
//! I dt = 2|α| cos(φ - Φ) dt + dW,    dW ~ N(0, dt)
//! ```
//!
//! and integrated with Euler-Maruyama. The controller accumulates
//!
//! ```text
//! A_v = ∫ I e^{iΦ} du,   B_v = -∫ e^{2iΦ} du,   C_v = A_v v + B_v A_v*
//! ```
//!
//! and steers `Φ` with one of the feedback laws in [`Algorithm`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::csv::{int, num, Csv};
use crate::error::{invalid, Error, Result};
use crate::lut::{LutGeometry, RamBlock};

/// `ε(v, A, B)` for the Mark II estimator.
pub type EpsilonFn = Arc<dyn Fn(f64, Complex64, Complex64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Algorithm {
    /// `Φ = arg A + π/2`.
    MarkI,
    /// `dΦ = I dv / √v`.
    GainScheduledIntegrator,
    /// `Φ = arg(C^{1-ε} A^ε) + π/2`.
    MarkII(EpsilonFn),
}

impl fmt::Debug for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::MarkI => write!(f, "MarkI"),
            Algorithm::GainScheduledIntegrator => write!(f, "GainScheduledIntegrator"),
            Algorithm::MarkII(_) => write!(f, "MarkII(<fn>)"),
        }
    }
}

/// Where the integrator's `1/√v` factor comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSource {
    Direct,
    /// Table addressed by step index.
    Lut(RamBlock),
}

/// A table entry overwritten while the pulse runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LutWrite {
    pub at_step: usize,
    pub addr: usize,
    pub value: u64,
}

#[derive(Debug, Clone)]
pub struct PulseConfig {
    pub duration_samples: usize,
    /// `|α|`.
    pub amplitude: f64,
    /// `φ` in radians.
    pub true_phase: f64,
    pub loop_delay_samples: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub gain_source: GainSource,
    /// Multiplies `dW`; 0 gives a noiseless run.
    pub noise_scale: f64,
    pub lut_writes: Vec<LutWrite>,
}

impl PulseConfig {
    pub fn new(duration_samples: usize, amplitude: f64, true_phase: f64, algorithm: Algorithm, seed: u64) -> Self {
        Self {
            duration_samples,
            amplitude,
            true_phase,
            loop_delay_samples: 0,
            algorithm,
            seed,
            gain_source: GainSource::Direct,
            noise_scale: 1.0,
            lut_writes: Vec::new(),
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.duration_samples as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_samples == 0 {
            return Err(invalid("duration_samples must be at least 1"));
        }
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(invalid(format!(
                "amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        if !self.true_phase.is_finite() {
            return Err(invalid("true_phase must be finite"));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(invalid("noise_scale must be non-negative"));
        }
        if let GainSource::Lut(t) = &self.gain_source {
            if (1usize << t.input_bits()) < self.duration_samples {
                return Err(invalid(format!(
                    "gain table has {} entries, pulse has {} steps",
                    1usize << t.input_bits(),
                    self.duration_samples
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub v: f64,
    /// Unwrapped LO phase `Φ`.
    pub phi_lo: f64,
    pub a: Complex64,
    pub b: Complex64,
}

impl Default for PhaseState {
    fn default() -> Self {
        Self {
            v: 0.0,
            phi_lo: 0.0,
            a: Complex64::new(0.0, 0.0),
            b: Complex64::new(0.0, 0.0),
        }
    }
}

impl PhaseState {
    /// `C_v = A_v v + B_v A_v*`.
    pub fn c(&self) -> Complex64 {
        self.a * self.v + self.b * self.a.conj()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrajectory {
    /// `v` at the end of each step.
    pub times: Vec<f64>,
    pub current: Vec<f64>,
    /// LO phase seen by the optics during each step, wrapped.
    pub lo_phase: Vec<f64>,
    /// Controller's running estimate after each step, wrapped.
    pub mid_estimates: Vec<f64>,
    pub final_state: PhaseState,
    /// `arg C` at `v = 1`; `None` when undefined.
    pub final_estimate: Option<f64>,
}

/// Wrap into `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    // floor puts -π at -π; move it to +π
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// `I = 2|α| cos(φ - Φ) + dW/dt`.
pub fn homodyne_increment(phi_seen: f64, amplitude: f64, true_phase: f64, dw: f64, dt: f64) -> f64 {
    2.0 * amplitude * (true_phase - phi_seen).cos() + dw / dt
}

/// One Euler step of the accumulators with the LO at `state.phi_lo`.
pub fn update_state(state: PhaseState, current: f64, dt: f64) -> PhaseState {
    let e = Complex64::from_polar(1.0, state.phi_lo);
    PhaseState {
        v: state.v + dt,
        phi_lo: state.phi_lo,
        a: state.a + e * (current * dt),
        b: state.b - e * e * dt,
    }
}

/// `|A|` at or below `1e-12·v` counts as zero; rounding in `cos(φ - Φ)`
/// at an exact null would otherwise hand `arg` pure noise.
fn a_is_zero(state: &PhaseState) -> bool {
    state.a.norm() <= 1e-12 * state.v
}

/// `arg(C^{1-ε} A^ε)` taken on the branch nearest `arg A`. `None` when `A = 0`.
fn mark_ii_estimate(state: &PhaseState, eps: f64) -> Option<f64> {
    if a_is_zero(state) {
        return None;
    }
    let arg_a = state.a.arg();
    let c = state.c();
    if c.norm() == 0.0 {
        return Some(arg_a);
    }
    Some(arg_a + (1.0 - eps) * wrap_phase(c.arg() - arg_a))
}

/// `φ̂ + π/2` for the arg-based estimators, or `prev` while `A = 0`.
/// The integrator keeps its own phase, so it returns `prev` here.
pub fn lo_phase(state: &PhaseState, algorithm: &Algorithm, prev: f64) -> f64 {
    let est = match algorithm {
        Algorithm::MarkI => (!a_is_zero(state)).then(|| state.a.arg()),
        Algorithm::MarkII(eps) => mark_ii_estimate(state, eps(state.v, state.a, state.b)),
        Algorithm::GainScheduledIntegrator => None,
    };
    match est {
        // keep Φ on the branch closest to the previous value
        Some(e) => {
            let target = e + PI / 2.0;
            prev + wrap_phase(target - prev)
        }
        None => prev,
    }
}

/// `Φ + I dt / √v` with `v` clamped to at least `dt`.
pub fn integrator_step(phi: f64, current: f64, v: f64, dt: f64) -> f64 {
    phi + current * dt * direct_gain(v, dt)
}

/// `1/√max(v, dt)`.
pub fn direct_gain(v: f64, dt: f64) -> f64 {
    1.0 / v.max(dt).sqrt()
}

/// `arg C_v`, wrapped.
pub fn final_estimate(state: &PhaseState) -> Result<f64> {
    if state.a.norm() == 0.0 || a_is_zero(state) {
        return Err(Error::UndefinedEstimate("A is zero".into()));
    }
    let c = state.c();
    let scale = state.a.norm() * (state.v + state.b.norm());
    if c.norm() <= 1e-12 * scale {
        return Err(Error::UndefinedEstimate("C is zero".into()));
    }
    Ok(wrap_phase(c.arg()))
}

/// Gain table for an `N`-step pulse: address `k` holds `1/√max(k dt, dt)`.
/// 16-bit entries over `[0, 128)`, widened to the next power of two when
/// `1/√dt` exceeds 128.
pub fn default_gain_table(duration_samples: usize) -> Result<RamBlock> {
    if duration_samples == 0 {
        return Err(invalid("duration_samples must be at least 1"));
    }
    let dt = 1.0 / duration_samples as f64;
    let bi = (usize::BITS - (duration_samples.max(2) - 1).leading_zeros()).max(1);
    let n = 1usize << bi;
    let peak = 1.0 / dt.sqrt();
    let top = if peak < 128.0 {
        128.0
    } else {
        peak.log2().floor().exp2() * 2.0
    };
    let values: Vec<f64> = (0..n).map(|k| direct_gain(k as f64 * dt, dt)).collect();
    RamBlock::from_values(&values, LutGeometry::new(bi, 16, [0.0, n as f64 * dt], [0.0, top]))
}

/// Run one pulse through the closed loop.
pub fn simulate_pulse(cfg: &PulseConfig) -> Result<PulseTrajectory> {
    cfg.validate()?;
    let n = cfg.duration_samples;
    let dt = cfg.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = match &cfg.gain_source {
        GainSource::Lut(t) => Some(t.clone()),
        GainSource::Direct => None,
    };
    let mut writes = cfg.lut_writes.clone();
    writes.sort_by_key(|w| w.at_step);
    let mut next_write = 0;

    let mut state = PhaseState::default();
    // commanded Φ for each step so far; the optics see it `loop_delay_samples` late
    let mut commanded = Vec::with_capacity(n);
    let mut traj = PulseTrajectory {
        times: Vec::with_capacity(n),
        current: Vec::with_capacity(n),
        lo_phase: Vec::with_capacity(n),
        mid_estimates: Vec::with_capacity(n),
        final_state: state,
        final_estimate: None,
    };

    for k in 0..n {
        while next_write < writes.len() && writes[next_write].at_step <= k {
            let w = writes[next_write];
            if let Some(t) = table.as_mut() {
                t.write(w.addr, w.value)?;
            }
            next_write += 1;
        }
        commanded.push(state.phi_lo);
        let phi_seen = if k >= cfg.loop_delay_samples {
            commanded[k - cfg.loop_delay_samples]
        } else {
            0.0
        };
        let z: f64 = StandardNormal.sample(&mut rng);
        let dw = cfg.noise_scale * dt.sqrt() * z;
        let current = homodyne_increment(phi_seen, cfg.amplitude, cfg.true_phase, dw, dt);

        let v_start = state.v;
        state = update_state(state, current, dt);
        state.phi_lo = match &cfg.algorithm {
            Algorithm::GainScheduledIntegrator => {
                let gain = match table.as_ref() {
                    Some(t) => t.read(k),
                    None => direct_gain(v_start, dt),
                };
                state.phi_lo + current * dt * gain
            }
            alg => lo_phase(&state, alg, state.phi_lo),
        };

        traj.times.push(state.v);
        traj.current.push(current);
        traj.lo_phase.push(wrap_phase(phi_seen));
        traj.mid_estimates.push(wrap_phase(state.phi_lo - PI / 2.0));
    }
    traj.final_state = state;
    traj.final_estimate = final_estimate(&state).ok();
    Ok(traj)
}

/// Sign changes of the current over the last quarter of the pulse.
pub fn late_oscillation_count(traj: &PulseTrajectory) -> usize {
    let n = traj.current.len();
    traj.current[n - n / 4..]
        .windows(2)
        .filter(|w| (w[0] > 0.0 && w[1] < 0.0) || (w[0] < 0.0 && w[1] > 0.0))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    /// NaN when the estimate is undefined.
    pub final_estimate: f64,
    /// `final_estimate - φ`, wrapped.
    pub error: f64,
}

/// Independent pulses with seeds `base_seed, base_seed + 1, ...`. Results do
/// not depend on the number of worker threads.
pub fn monte_carlo(template: &PulseConfig, trials: usize, base_seed: u64) -> Result<Vec<TrialResult>> {
    template.validate()?;
    (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut cfg = template.clone();
            cfg.seed = base_seed.wrapping_add(i);
            let t = simulate_pulse(&cfg)?;
            let est = t.final_estimate.unwrap_or(f64::NAN);
            Ok(TrialResult {
                seed: cfg.seed,
                final_estimate: est,
                error: wrap_phase(est - cfg.true_phase),
            })
        })
        .collect()
}

/// Circular mean and its standard error of a set of angles (NaNs skipped).
pub fn circular_mean(angles: &[f64]) -> (f64, f64) {
    let vals: Vec<f64> = angles.iter().copied().filter(|a| a.is_finite()).collect();
    let n = vals.len() as f64;
    let s: Complex64 = vals.iter().map(|a| Complex64::from_polar(1.0, *a)).sum::<Complex64>() / n;
    let mean = s.arg();
    let r = s.norm();
    let spread = vals.iter().map(|a| (a - mean).sin().powi(2)).sum::<f64>() / n;
    (mean, spread.sqrt() / (r * n.sqrt()))
}

pub fn trajectory_csv(t: &PulseTrajectory) -> String {
    let mut c = Csv::new(&["v", "I", "Phi", "phi_hat_mid"]);
    for k in 0..t.times.len() {
        c.row([
            num(t.times[k]),
            num(t.current[k]),
            num(t.lo_phase[k]),
            num(t.mid_estimates[k]),
        ]);
    }
    c.finish()
}

pub fn monte_carlo_csv(results: &[TrialResult]) -> String {
    let mut c = Csv::new(&["seed", "final_estimate", "error"]);
    for r in results {
        c.row([int(r.seed), num(r.final_estimate), num(r.error)]);
    }
    c.finish()
}
