//! Two-arm laser-to-cavity lock.
//!
//! The error signal is the cavity's low-pass response to the detuning,
//! linearized as `error = slope × detuning` (the slope lives in `T_C`). Two
//! digital arms act on it: a fast arm `T_U` driving the VCO-AOM chain `T_V`,
//! and a slow arm `T_L` driving the PZT.
//!
//! ```text
//! d ──►(+)──► T_C ──► ADC ──┬──► T_U ──► DAC ──► T_V ──┐
//!       ▲ -                 └──► T_L ──► DAC ──► PZT ──┤
//!       └──────────────────────────────────────────────┘
//! ```
//!
//! `T_U = K · T_LP1 · T_LP2² / (T_C T_V)` makes the fast loop an integrator
//! between the two low-pass corners; `K` places the unity-gain crossover.
//! `T_L` is a low-pass with a corner of a few Hz whose gain hands over to
//! `T_U` at a chosen frequency.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::csv::{num, Csv};
use crate::discretize::{c2d, discrete_freq_response, to_difference_equation, C2dMethod, DifferenceFilter};
use crate::error::{invalid, Error, Result};
use crate::filters::{effective_iir_rate, iir_build, IirFilter, IirSpec};
use crate::fixedpoint::{quantize, QFormat};
use crate::lti::ContinuousTF;
use crate::pipeline::{Board, FractionalDelay};
use crate::sinefit;

/// A sinusoidal detuning disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLine {
    pub freq_hz: f64,
    /// Peak detuning, in the same units as the error signal.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockPlant {
    pub t_c: ContinuousTF,
    pub t_v: ContinuousTF,
    pub pzt: ContinuousTF,
    pub noise_spectrum: Vec<NoiseLine>,
    /// RMS of white noise added to the error before the ADC.
    pub sensor_noise_rms: f64,
}

impl LockPlant {
    pub fn new(t_c: ContinuousTF, t_v: ContinuousTF, pzt: ContinuousTF) -> Result<Self> {
        let p = Self {
            t_c,
            t_v,
            pzt,
            noise_spectrum: vec![NoiseLine {
                freq_hz: 100e3,
                amplitude: 0.05,
            }],
            sensor_noise_rms: default_sensor_noise(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Cavity 10 kHz, VCO-AOM 100 kHz, PZT gain 3 with a 1 kHz corner.
    pub fn default_plant() -> Self {
        Self::new(
            ContinuousTF::low_pass_hz(10e3).expect("valid corner"),
            ContinuousTF::low_pass_hz(100e3).expect("valid corner"),
            ContinuousTF::low_pass_hz(1e3).expect("valid corner").scale(3.0),
        )
        .expect("default plant is valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, tf) in [("t_c", &self.t_c), ("t_v", &self.t_v), ("pzt", &self.pzt)] {
            if !tf.is_proper() {
                return Err(invalid(format!("{name} must be proper")));
            }
            if !tf.is_stable() {
                return Err(invalid(format!("{name} must be stable")));
            }
        }
        if !(self.sensor_noise_rms >= 0.0) {
            return Err(invalid("sensor_noise_rms must be non-negative"));
        }
        Ok(())
    }
}

/// Half an LSB of a 12-bit signed full scale of ±1.
fn default_sensor_noise() -> f64 {
    0.5 * 2f64.powi(-11)
}

/// Weighted sum of resonances `Σ w_k · HO(2π f_k, Q_k)`.
pub fn resonant_pzt(modes: &[(f64, f64, f64)]) -> Result<ContinuousTF> {
    if modes.is_empty() {
        return Err(invalid("at least one resonance is required"));
    }
    let mut acc = ContinuousTF::zero();
    for (f0, q, w) in modes {
        acc = acc.add(&ContinuousTF::harmonic_oscillator(2.0 * PI * f0, *q)?.scale(*w));
    }
    Ok(acc)
}

/// `K · T_LP1 · T_LP2² / (T_C T_V)` with `K` chosen so the open loop
/// `T_C T_V T_U` has unit magnitude at `crossover_hz`.
pub fn design_upper(plant: &LockPlant, f_lp1: f64, f_lp2: f64, crossover_hz: f64) -> Result<ContinuousTF> {
    let shape = upper_shape(f_lp1, f_lp2)?;
    if !(crossover_hz > 0.0) {
        return Err(invalid("crossover must be positive"));
    }
    let gain = 1.0 / shape.freq_response_hz(crossover_hz)?.norm();
    design_upper_with_gain(plant, f_lp1, f_lp2, gain)
}

/// As [`design_upper`] with an explicit gain `K`.
pub fn design_upper_with_gain(plant: &LockPlant, f_lp1: f64, f_lp2: f64, gain: f64) -> Result<ContinuousTF> {
    let shape = upper_shape(f_lp1, f_lp2)?;
    let inv = plant.t_c.series(&plant.t_v).reciprocal()?;
    let t_u = shape.series(&inv).scale(gain);
    if !t_u.is_proper() {
        return Err(Error::Improper {
            num_degree: t_u.num_degree(),
            den_degree: t_u.den_degree(),
        });
    }
    Ok(t_u)
}

fn upper_shape(f_lp1: f64, f_lp2: f64) -> Result<ContinuousTF> {
    if !(f_lp1 > 0.0 && f_lp2 > f_lp1) {
        return Err(invalid(format!("need 0 < f_lp1 < f_lp2, got {f_lp1}, {f_lp2}")));
    }
    let lp2 = ContinuousTF::low_pass_hz(f_lp2)?;
    Ok(ContinuousTF::low_pass_hz(f_lp1)?.series(&lp2).series(&lp2))
}

/// `dc_gain · ω_c / (s + ω_c)`.
pub fn design_lower(corner_hz: f64, dc_gain: f64) -> Result<ContinuousTF> {
    Ok(ContinuousTF::low_pass_hz(corner_hz)?.scale(dc_gain))
}

/// DC gain for `T_L` that makes `|T_C·PZT·T_L| = |T_C·T_V·T_U|` at `handoff_hz`.
pub fn lower_gain_for_handoff(plant: &LockPlant, t_u: &ContinuousTF, corner_hz: f64, handoff_hz: f64) -> Result<f64> {
    let upper = plant.t_v.series(t_u).freq_response_hz(handoff_hz)?.norm();
    let lower = plant
        .pzt
        .series(&ContinuousTF::low_pass_hz(corner_hz)?)
        .freq_response_hz(handoff_hz)?
        .norm();
    Ok(upper / lower)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LockParams {
    pub f_lp1_hz: f64,
    pub f_lp2_hz: f64,
    pub crossover_hz: f64,
    pub lower_corner_hz: f64,
    pub handoff_hz: f64,
    /// Overrides the hand-off rule when set.
    pub lower_dc_gain: Option<f64>,
    pub iir: IirSpec,
    pub method: C2dMethod,
    pub board: Board,
}

impl Default for LockParams {
    fn default() -> Self {
        Self {
            f_lp1_hz: 100.0,
            f_lp2_hz: 300e3,
            crossover_hz: 30e3,
            lower_corner_hz: 2.0,
            handoff_hz: 100.0,
            lower_dc_gain: None,
            iir: IirSpec::default(),
            method: C2dMethod::Bilinear,
            board: Board::gva290(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LockDesign {
    pub t_u: ContinuousTF,
    pub t_l: ContinuousTF,
    pub t_u_discrete: IirFilter,
    pub t_l_discrete: IirFilter,
    pub board: Board,
    /// IIR effective rate `f_C / (2 B_Y)`, also the simulation rate.
    pub fs: f64,
}

pub fn design_lock(plant: &LockPlant, params: &LockParams) -> Result<LockDesign> {
    params.board.validate()?;
    let fs = effective_iir_rate(params.board.clock_hz, params.iir.internal_bits);
    let t_u = design_upper(plant, params.f_lp1_hz, params.f_lp2_hz, params.crossover_hz)?;
    let gain = match params.lower_dc_gain {
        Some(g) => g,
        None => lower_gain_for_handoff(plant, &t_u, params.lower_corner_hz, params.handoff_hz)?,
    };
    let t_l = design_lower(params.lower_corner_hz, gain)?;
    let t_u_discrete = iir_build(&c2d(&t_u, fs, params.method)?, &params.iir)?;
    let t_l_discrete = iir_build(&c2d(&t_l, fs, params.method)?, &params.iir)?;
    Ok(LockDesign {
        t_u,
        t_l,
        t_u_discrete,
        t_l_discrete,
        board: params.board.clone(),
        fs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodePoint {
    pub freq_hz: f64,
    pub mag_db: f64,
    pub phase_deg: f64,
}

fn log_sweep(f_lo: f64, f_hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(f_lo > 0.0 && f_hi > f_lo) || points < 2 {
        return Err(invalid(format!(
            "need 0 < f_lo < f_hi and at least 2 points, got {f_lo}, {f_hi}, {points}"
        )));
    }
    let (a, b) = (f_lo.log10(), f_hi.log10());
    Ok((0..points)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (points - 1) as f64))
        .collect())
}

fn to_bode(freqs: &[f64], resp: &[Complex64]) -> Vec<BodePoint> {
    let phases = sinefit::unwrap(&resp.iter().map(|z| z.arg()).collect::<Vec<_>>());
    freqs
        .iter()
        .zip(resp)
        .zip(phases)
        .map(|((f, z), p)| BodePoint {
            freq_hz: *f,
            mag_db: 20.0 * z.norm().log10(),
            phase_deg: p.to_degrees(),
        })
        .collect()
}

/// Log-spaced Bode sweep of a continuous transfer function. Phase is unwrapped.
pub fn bode_continuous(tf: &ContinuousTF, f_lo: f64, f_hi: f64, points: usize) -> Result<Vec<BodePoint>> {
    let freqs = log_sweep(f_lo, f_hi, points)?;
    let resp = freqs
        .iter()
        .map(|f| tf.freq_response_hz(*f))
        .collect::<Result<Vec<_>>>()?;
    Ok(to_bode(&freqs, &resp))
}

/// Log-spaced Bode sweep of a built IIR: quantized coefficients times one
/// effective sample of structure delay.
pub fn bode_iir(filter: &IirFilter, f_lo: f64, f_hi: f64, points: usize) -> Result<Vec<BodePoint>> {
    let freqs = log_sweep(f_lo, f_hi, points)?;
    let resp = freqs
        .iter()
        .map(|f| iir_response(filter, *f))
        .collect::<Result<Vec<_>>>()?;
    Ok(to_bode(&freqs, &resp))
}

/// Frequency response of a built IIR including its one-sample structure delay.
pub fn iir_response(filter: &IirFilter, f: f64) -> Result<Complex64> {
    let tf = filter.tf();
    let g = discrete_freq_response(tf, f)?;
    Ok(g * Complex64::from_polar(1.0, -2.0 * PI * f / tf.fs()))
}

pub fn bode_csv(points: &[BodePoint]) -> String {
    let mut c = Csv::new(&["freq_hz", "mag_db", "phase_deg"]);
    for p in points {
        c.row([num(p.freq_hz), num(p.mag_db), num(p.phase_deg)]);
    }
    c.finish()
}

/// Discrete plants used by the time-domain simulator.
#[derive(Debug, Clone)]
struct DiscretePlant {
    t_c: DifferenceFilter,
    t_v: DifferenceFilter,
    pzt: DifferenceFilter,
}

fn zoh_filter(tf: &ContinuousTF, fs: f64) -> Result<DifferenceFilter> {
    Ok(to_difference_equation(&c2d(tf, fs, C2dMethod::Zoh)?)?.filter())
}

impl DiscretePlant {
    fn new(plant: &LockPlant, fs: f64) -> Result<Self> {
        Ok(Self {
            t_c: zoh_filter(&plant.t_c, fs)?,
            t_v: zoh_filter(&plant.t_v, fs)?,
            pzt: zoh_filter(&plant.pzt, fs)?,
        })
    }
}

/// Open-loop response `T_C (T_V T_U + PZT T_L)` of the simulated loop at `f`:
/// ZOH plants, quantized filters, one structure sample and `latency_s` of
/// board delay.
pub fn open_loop_response(plant: &LockPlant, design: &LockDesign, f: f64, latency_s: f64) -> Result<Complex64> {
    let fs = design.fs;
    let zoh = |tf: &ContinuousTF| -> Result<Complex64> { discrete_freq_response(&c2d(tf, fs, C2dMethod::Zoh)?, f) };
    let delay = Complex64::from_polar(1.0, -2.0 * PI * f * latency_s);
    let upper = iir_response(&design.t_u_discrete, f)? * zoh(&plant.t_v)?;
    let lower = iir_response(&design.t_l_discrete, f)? * zoh(&plant.pzt)?;
    Ok(zoh(&plant.t_c)? * (upper + lower) * delay)
}

/// Unity-gain crossover frequency and phase margin in degrees of the
/// simulated loop with the given board latency.
pub fn phase_margin(plant: &LockPlant, design: &LockDesign, latency_s: f64) -> Result<(f64, f64)> {
    let nyq = design.fs / 2.0;
    let mag = |f: f64| open_loop_response(plant, design, f, latency_s).map(|z| z.norm());
    let grid = log_sweep(1.0, nyq * 0.999, 400)?;
    let mut lo = None;
    for w in grid.windows(2) {
        if mag(w[0])? >= 1.0 && mag(w[1])? < 1.0 {
            lo = Some((w[0], w[1]));
            break;
        }
    }
    let (mut a, mut b) = lo.ok_or_else(|| Error::Degenerate("open loop has no unity-gain crossover".into()))?;
    for _ in 0..60 {
        let m = (a * b).sqrt();
        if mag(m)? >= 1.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let fc = (a * b).sqrt();
    let l = open_loop_response(plant, design, fc, latency_s)?;
    let margin = 180.0 + l.arg().to_degrees();
    Ok((fc, margin.rem_euclid(360.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LockSimConfig {
    pub duration_s: f64,
    pub seed: u64,
    /// Time before the lock-in starts averaging.
    pub settle_s: f64,
    /// Keep every n-th sample in the records.
    pub record_every: usize,
    /// Overrides the plant's noise spectrum when set.
    pub lines: Option<Vec<NoiseLine>>,
    /// Consecutive railed steps before the lock is declared lost.
    pub lost_after_steps: usize,
}

impl Default for LockSimConfig {
    fn default() -> Self {
        Self {
            duration_s: 0.1,
            seed: 0,
            settle_s: 0.0,
            record_every: 1,
            lines: None,
            lost_after_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LockRecord {
    pub t_s: Vec<f64>,
    pub error: Vec<f64>,
    pub u_upper: Vec<f64>,
    pub u_lower: Vec<f64>,
}

impl LockRecord {
    pub fn to_csv(&self) -> String {
        let mut c = Csv::new(&["t_s", "error", "u_upper", "u_lower"]);
        for k in 0..self.t_s.len() {
            c.row([
                num(self.t_s[k]),
                num(self.error[k]),
                num(self.u_upper[k]),
                num(self.u_lower[k]),
            ]);
        }
        c.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineRejection {
    pub line_hz: f64,
    /// Error amplitude with the loop open, `|T_C| × amplitude`.
    pub open_db: f64,
    /// Measured closed-loop error amplitude.
    pub closed_db: f64,
    /// `open_db + 20 log10 |1 / (1 + L)|` for the simulated loop.
    pub predicted_db: f64,
}

pub fn rejection_csv(r: &[LineRejection]) -> String {
    let mut c = Csv::new(&["line_hz", "open_db", "closed_db", "predicted_db"]);
    for l in r {
        c.row([num(l.line_hz), num(l.open_db), num(l.closed_db), num(l.predicted_db)]);
    }
    c.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockRun {
    pub record: LockRecord,
    pub rejection: Vec<LineRejection>,
    /// Time at which the error had been railed for too long, if ever.
    pub lock_lost_at_s: Option<f64>,
    pub steps: usize,
}

/// Closed-loop state stepped at the IIR effective rate.
#[derive(Debug, Clone)]
pub struct LockSimulator {
    plant: DiscretePlant,
    upper: IirFilter,
    lower: IirFilter,
    // applied after the structure register
    delay_upper: FractionalDelay,
    delay_lower: FractionalDelay,
    reg_upper: f64,
    reg_lower: f64,
    adc: QFormat,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    noise_rms: f64,
    // T_C output for the current step
    error_analog: f64,
    step: u64,
    fs: f64,
}

impl LockSimulator {
    pub fn new(plant: &LockPlant, design: &LockDesign, seed: u64) -> Result<Self> {
        plant.validate()?;
        let fs = design.fs;
        let mut upper = design.t_u_discrete.clone();
        let mut lower = design.t_l_discrete.clone();
        upper.reset();
        lower.reset();
        let latency = design.board.latency() * fs;
        Ok(Self {
            plant: DiscretePlant::new(plant, fs)?,
            upper,
            lower,
            delay_upper: FractionalDelay::new(latency),
            delay_lower: FractionalDelay::new(latency),
            reg_upper: 0.0,
            reg_lower: 0.0,
            adc: QFormat::signed(12, 11)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: Normal::new(0.0, 1.0).expect("unit normal"),
            noise_rms: plant.sensor_noise_rms,
            error_analog: 0.0,
            step: 0,
            fs,
        })
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// Current time in seconds.
    pub fn time(&self) -> f64 {
        self.step as f64 / self.fs
    }

    /// Advance one sample with detuning `d`. `arms` selects which
    /// controllers run; `pzt_offset` is added to the lower arm's DAC value.
    /// Returns (digitized error, upper DAC, lower DAC, railed).
    fn advance(&mut self, d: f64, arms: bool, pzt_offset: f64) -> (f64, f64, f64, bool) {
        let noise = if self.noise_rms > 0.0 {
            self.noise_rms * self.noise.sample(&mut self.rng)
        } else {
            0.0
        };
        let sample = quantize(self.error_analog + noise, self.adc);
        let e = sample.to_real();
        let railed = sample.saturated();

        // outputs computed last step leave the register now
        let (out_u, out_l) = (self.reg_upper, self.reg_lower);
        if arms {
            self.reg_upper = self.upper.step_fixed(sample).to_real();
            self.reg_lower = self.lower.step_fixed(sample).to_real();
        } else {
            self.reg_upper = 0.0;
            self.reg_lower = 0.0;
        }
        let dac_u = out_u;
        let dac_l = (out_l + pzt_offset).clamp(self.adc.min_value(), self.adc.max_value());
        let applied_u = self.delay_upper.step(dac_u);
        let applied_l = self.delay_lower.step(dac_l);

        let y_v = self.plant.t_v.step(applied_u);
        let y_p = self.plant.pzt.step(applied_l);
        self.error_analog = self.plant.t_c.step(d - y_v - y_p);
        self.step += 1;
        (e, dac_u, dac_l, railed)
    }

    fn reset_controllers(&mut self) {
        self.upper.reset();
        self.lower.reset();
        self.reg_upper = 0.0;
        self.reg_lower = 0.0;
    }
}

fn disturbance(lines: &[NoiseLine], t: f64) -> f64 {
    lines
        .iter()
        .map(|l| l.amplitude * (2.0 * PI * l.freq_hz * t).sin())
        .sum()
}

/// Closed-loop run with disturbance lines, sensor noise, board latency and
/// the fixed-point filters. Reports the rejection of each line by lock-in
/// over `[settle_s, duration_s)`.
pub fn simulate_lock(plant: &LockPlant, design: &LockDesign, cfg: &LockSimConfig) -> Result<LockRun> {
    if !(cfg.duration_s > 0.0) || !(cfg.settle_s >= 0.0) || cfg.settle_s >= cfg.duration_s {
        return Err(invalid("need 0 <= settle_s < duration_s"));
    }
    if cfg.record_every == 0 {
        return Err(invalid("record_every must be at least 1"));
    }
    let lines = cfg.lines.clone().unwrap_or_else(|| plant.noise_spectrum.clone());
    let mut sim = LockSimulator::new(plant, design, cfg.seed)?;
    let fs = sim.fs();
    let total = (cfg.duration_s * fs).round() as usize;
    let settle = (cfg.settle_s * fs).round() as usize;
    let mut record = LockRecord::default();
    let mut lockin = vec![Complex64::new(0.0, 0.0); lines.len()];
    let mut averaged = 0usize;
    let mut railed_run = 0usize;
    let mut lost = None;
    let mut steps = 0;
    for k in 0..total {
        let t = k as f64 / fs;
        let (e, uu, ul, railed) = sim.advance(disturbance(&lines, t), true, 0.0);
        steps += 1;
        if k % cfg.record_every == 0 {
            record.t_s.push(t);
            record.error.push(e);
            record.u_upper.push(uu);
            record.u_lower.push(ul);
        }
        if k >= settle {
            for (acc, l) in lockin.iter_mut().zip(&lines) {
                *acc += Complex64::from_polar(e, -2.0 * PI * l.freq_hz * t);
            }
            averaged += 1;
        }
        railed_run = if railed { railed_run + 1 } else { 0 };
        if railed_run > cfg.lost_after_steps {
            lost = Some(t);
            break;
        }
    }
    let mut rejection = Vec::with_capacity(lines.len());
    if lost.is_none() && averaged > 0 {
        for (acc, l) in lockin.iter().zip(&lines) {
            let open = plant.t_c.freq_response_hz(l.freq_hz)?.norm() * l.amplitude;
            let closed = 2.0 * acc.norm() / averaged as f64;
            let loop_gain = open_loop_response(plant, design, l.freq_hz, design.board.latency())?;
            let sens = (Complex64::new(1.0, 0.0) + loop_gain).inv().norm();
            rejection.push(LineRejection {
                line_hz: l.freq_hz,
                open_db: 20.0 * open.log10(),
                closed_db: 20.0 * closed.log10(),
                predicted_db: 20.0 * (open * sens).log10(),
            });
        }
    }
    Ok(LockRun {
        record,
        rejection,
        lock_lost_at_s: lost,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockState {
    Locked,
    Sweeping,
    Honing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReacquireThresholds {
    /// `|error|` above this counts toward losing lock.
    pub loss_level: f64,
    pub loss_dwell: usize,
    /// `|error|` below this counts toward capture.
    pub capture_level: f64,
    /// Samples below the capture level needed to declare lock.
    pub lock_dwell: usize,
    /// Ramp increment per sample while sweeping.
    pub sweep_rate: f64,
    /// The ramp is a triangle between `-sweep_span` and `+sweep_span`.
    pub sweep_span: f64,
}

impl Default for ReacquireThresholds {
    fn default() -> Self {
        Self {
            loss_level: 0.9,
            loss_dwell: 1000,
            capture_level: 0.1,
            lock_dwell: 2000,
            sweep_rate: 1.0 / 7812.5,
            sweep_span: 0.99,
        }
    }
}

impl ReacquireThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.capture_level > 0.0 && self.loss_level > self.capture_level) {
            return Err(invalid("need 0 < capture_level < loss_level"));
        }
        if self.loss_dwell == 0 || self.lock_dwell == 0 {
            return Err(invalid("dwell counts must be at least 1"));
        }
        if !(self.sweep_rate > 0.0 && self.sweep_span > 0.0) {
            return Err(invalid("sweep rate and span must be positive"));
        }
        Ok(())
    }

    /// Samples for one full triangle period of the ramp.
    pub fn sweep_period(&self) -> f64 {
        4.0 * self.sweep_span / self.sweep_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub state: LockState,
    /// Ramp value; meaningful while sweeping and held while honing.
    pub sweep: f64,
}

/// Three-state lock supervisor, stepped once per error sample.
#[derive(Debug, Clone)]
pub struct ReacquireMachine {
    th: ReacquireThresholds,
    state: LockState,
    over: usize,
    under: usize,
    sweep: f64,
    dir: f64,
}

impl ReacquireMachine {
    pub fn new(th: ReacquireThresholds) -> Result<Self> {
        th.validate()?;
        Ok(Self {
            th,
            state: LockState::Locked,
            over: 0,
            under: 0,
            sweep: 0.0,
            dir: 1.0,
        })
    }

    pub fn state(&self) -> LockState {
        self.state
    }

    pub fn step(&mut self, error: f64) -> TraceEntry {
        let mag = error.abs();
        self.over = if mag > self.th.loss_level { self.over + 1 } else { 0 };
        self.under = if mag < self.th.capture_level { self.under + 1 } else { 0 };
        match self.state {
            LockState::Locked => {
                if self.over >= self.th.loss_dwell {
                    self.state = LockState::Sweeping;
                    self.over = 0;
                    self.sweep = 0.0;
                    self.dir = 1.0;
                }
            }
            LockState::Sweeping => {
                if mag < self.th.capture_level {
                    self.state = LockState::Honing;
                    self.under = 1;
                } else {
                    self.sweep += self.dir * self.th.sweep_rate;
                    if self.sweep >= self.th.sweep_span {
                        self.sweep = self.th.sweep_span;
                        self.dir = -1.0;
                    } else if self.sweep <= -self.th.sweep_span {
                        self.sweep = -self.th.sweep_span;
                        self.dir = 1.0;
                    }
                }
            }
            LockState::Honing => {
                if self.under >= self.th.lock_dwell {
                    self.state = LockState::Locked;
                    self.under = 0;
                } else if self.over >= self.th.loss_dwell {
                    self.state = LockState::Sweeping;
                    self.over = 0;
                }
            }
        }
        TraceEntry {
            state: self.state,
            sweep: self.sweep,
        }
    }
}

/// Replay an error record through the supervisor.
pub fn reacquire_logic(error_record: &[f64], th: &ReacquireThresholds) -> Result<Vec<TraceEntry>> {
    let mut m = ReacquireMachine::new(*th)?;
    Ok(error_record.iter().map(|e| m.step(*e)).collect())
}

/// A detuning excursion too large for the actuators, followed by a new
/// operating point the sweep has to find.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReacquireScenario {
    pub duration_s: f64,
    pub excursion_start_s: f64,
    pub excursion_len_s: f64,
    pub excursion_detuning: f64,
    pub final_detuning: f64,
    pub thresholds: ReacquireThresholds,
    pub seed: u64,
    pub record_every: usize,
}

impl Default for ReacquireScenario {
    fn default() -> Self {
        Self {
            duration_s: 0.03,
            excursion_start_s: 0.002,
            excursion_len_s: 0.003,
            excursion_detuning: 8.0,
            final_detuning: 0.6,
            thresholds: ReacquireThresholds::default(),
            seed: 0,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReacquireRun {
    pub record: LockRecord,
    /// `(time, new state)` at every transition.
    pub transitions: Vec<(f64, LockState)>,
    pub final_state: LockState,
}

impl ReacquireRun {
    /// True when the trace went locked → sweeping → honing → locked.
    pub fn completed_cycle(&self) -> bool {
        let seq: Vec<LockState> = self.transitions.iter().map(|t| t.1).collect();
        seq.windows(3)
            .any(|w| w == [LockState::Sweeping, LockState::Honing, LockState::Locked])
    }

    pub fn transitions_csv(&self) -> String {
        let mut c = Csv::new(&["t_s", "state"]);
        for (t, s) in &self.transitions {
            let name = match s {
                LockState::Locked => "locked",
                LockState::Sweeping => "sweeping",
                LockState::Honing => "honing",
            };
            c.row([num(*t), name.to_string()]);
        }
        c.finish()
    }
}

/// Closed loop with the supervisor in charge: while sweeping the
/// controllers are held at zero and the PZT follows the ramp; on capture
/// the ramp value is frozen as an offset and the controllers restart.
pub fn reacquire_scenario(plant: &LockPlant, design: &LockDesign, sc: &ReacquireScenario) -> Result<ReacquireRun> {
    if sc.record_every == 0 {
        return Err(invalid("record_every must be at least 1"));
    }
    let mut sim = LockSimulator::new(plant, design, sc.seed)?;
    let mut machine = ReacquireMachine::new(sc.thresholds)?;
    let fs = sim.fs();
    let total = (sc.duration_s * fs).round() as usize;
    let mut record = LockRecord::default();
    let mut transitions = Vec::new();
    let mut offset = 0.0;
    let mut state = LockState::Locked;
    let mut last = machine.step(0.0);
    for k in 0..total {
        let t = k as f64 / fs;
        let d = if t < sc.excursion_start_s {
            0.0
        } else if t < sc.excursion_start_s + sc.excursion_len_s {
            sc.excursion_detuning
        } else {
            sc.final_detuning
        };
        let (arms, pzt) = match state {
            LockState::Sweeping => (false, last.sweep),
            _ => (true, offset),
        };
        let (e, uu, ul, _) = sim.advance(d, arms, pzt);
        let entry = machine.step(e);
        if entry.state != state {
            match entry.state {
                LockState::Sweeping => sim.reset_controllers(),
                LockState::Honing => {
                    offset = entry.sweep;
                    sim.reset_controllers();
                }
                LockState::Locked => {}
            }
            transitions.push((t, entry.state));
            state = entry.state;
        }
        last = entry;
        if k % sc.record_every == 0 {
            record.t_s.push(t);
            record.error.push(e);
            record.u_upper.push(uu);
            record.u_lower.push(ul);
        }
    }
    Ok(ReacquireRun {
        record,
        transitions,
        final_state: state,
    })
}
