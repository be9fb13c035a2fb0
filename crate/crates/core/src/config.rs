//! TOML scenario files.
//!
//! Continuous transfer functions appear either as a coefficient table
//! `{ num = [...], den = [...] }` (ascending powers of `s`) or as a keyword
//! expression: factors joined by `*`, each one of
//!
//! | factor            | meaning                                |
//! |-------------------|----------------------------------------|
//! | `3.5`             | constant gain                          |
//! | `lowpass:F`       | `ω/(s+ω)`, `ω = 2πF`, `F` in Hz        |
//! | `ho:W,Q`          | `W²/(s² + W s/Q + W²)`, `W` in rad/s   |
//! | `aho:W,Q`         | inverse resonance with roll-off        |
//! | `integrator`      | `1/s`                                  |
//! | `differentiator`  | `s`                                    |
//!
//! e.g. `"3*lowpass:1e3"`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adaptive_phase::{default_gain_table, Algorithm, EpsilonFn, GainSource, PulseConfig};
use crate::cavity_lock::{LockParams, LockPlant, LockSimConfig, NoiseLine, ReacquireScenario};
use crate::discretize::{C2dMethod, DiscreteTF};
use crate::error::{Error, Result};
use crate::filters::IirSpec;
use crate::lti::ContinuousTF;
use crate::lut::LutGeometry;
use crate::pipeline::Board;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parse a whole scenario file into `T`.
pub fn from_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| config_err(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TfSpec {
    Expr(String),
    Coefficients { num: Vec<f64>, den: Vec<f64> },
}

impl TfSpec {
    pub fn build(&self) -> Result<ContinuousTF> {
        match self {
            TfSpec::Expr(s) => parse_tf(s),
            TfSpec::Coefficients { num, den } => ContinuousTF::new(num.clone(), den.clone()),
        }
    }
}

/// Parse a keyword expression such as `"3*lowpass:1e3"`.
pub fn parse_tf(expr: &str) -> Result<ContinuousTF> {
    let mut acc = ContinuousTF::unity();
    let mut any = false;
    for factor in expr.split('*') {
        let factor = factor.trim();
        if factor.is_empty() {
            return Err(config_err(format!("empty factor in {expr:?}")));
        }
        acc = acc.series(&parse_factor(factor)?);
        any = true;
    }
    if !any {
        return Err(config_err("empty transfer function"));
    }
    Ok(acc)
}

fn parse_num(s: &str, ctx: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| config_err(format!("bad number {s:?} in {ctx:?}")))
}

fn parse_pair(args: &str, ctx: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = args.split(',').collect();
    if parts.len() != 2 {
        return Err(config_err(format!("{ctx:?} takes two comma-separated values")));
    }
    Ok((parse_num(parts[0], ctx)?, parse_num(parts[1], ctx)?))
}

fn parse_factor(f: &str) -> Result<ContinuousTF> {
    let (head, args) = match f.split_once(':') {
        Some((h, a)) => (h.trim(), Some(a)),
        None => (f, None),
    };
    match (head, args) {
        ("integrator", None) => Ok(ContinuousTF::integrator()),
        ("differentiator", None) => Ok(ContinuousTF::differentiator()),
        ("lowpass", Some(a)) => ContinuousTF::low_pass(2.0 * PI * parse_num(a, f)?),
        ("ho", Some(a)) => {
            let (w, q) = parse_pair(a, f)?;
            ContinuousTF::harmonic_oscillator(w, q)
        }
        ("aho", Some(a)) => {
            let (w, q) = parse_pair(a, f)?;
            ContinuousTF::aho_compensator(w, q)
        }
        (_, None) => match f.parse::<f64>() {
            Ok(k) => Ok(ContinuousTF::gain(k)),
            Err(_) => Err(config_err(format!("unknown transfer function {f:?}"))),
        },
        _ => Err(config_err(format!("unknown transfer function {f:?}"))),
    }
}

fn default_points() -> usize {
    200
}

/// `lti bode`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodeScenario {
    pub tf: TfSpec,
    pub f_lo: f64,
    pub f_hi: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

/// `discretize`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizeScenario {
    pub tf: TfSpec,
    pub fs: f64,
    #[serde(default)]
    pub method: C2dMethod,
}

/// `filters design-fir`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirScenario {
    pub band_edges: Vec<f64>,
    pub desired_gains: Vec<f64>,
    pub n_taps: usize,
    #[serde(default = "default_input_bits")]
    pub input_bits: u32,
}

fn default_input_bits() -> u32 {
    12
}

/// Source of an IIR: either a ready discrete TF or a continuous one to
/// discretize.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IirSource {
    Discrete {
        discrete: DiscreteTF,
    },
    Continuous {
        tf: TfSpec,
        fs: f64,
        #[serde(default)]
        method: C2dMethod,
    },
}

/// `filters build-iir`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IirScenario {
    #[serde(flatten)]
    pub source: IirSource,
    #[serde(default)]
    pub spec: IirSpec,
}

/// Functions `lut tabulate` knows by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LutFunction {
    InvSqrt,
    Sqrt,
    Sin,
    Cos,
    Exp,
    Ln,
    Identity,
}

impl LutFunction {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            LutFunction::InvSqrt => 1.0 / x.sqrt(),
            LutFunction::Sqrt => x.sqrt(),
            LutFunction::Sin => x.sin(),
            LutFunction::Cos => x.cos(),
            LutFunction::Exp => x.exp(),
            LutFunction::Ln => x.ln(),
            LutFunction::Identity => x,
        }
    }
}

/// `lut tabulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutScenario {
    pub function: LutFunction,
    pub geometry: LutGeometry,
}

/// `pipeline report` and `pipeline simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineScenario {
    #[serde(default = "Board::gva290")]
    pub board: Board,
    /// Test tones for `pipeline simulate`.
    #[serde(default)]
    pub freqs_hz: Vec<f64>,
    #[serde(default = "default_pipeline_samples")]
    pub samples: usize,
}

fn default_pipeline_samples() -> usize {
    4096
}

impl Default for PipelineScenario {
    fn default() -> Self {
        Self {
            board: Board::gva290(),
            freqs_hz: Vec::new(),
            samples: default_pipeline_samples(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    MarkI,
    Integrator,
    #[serde(rename = "mark_ii")]
    MarkII,
}

/// `ε` for Mark II: a constant, or `"v"` for `ε = v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Constant(f64),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSourceName {
    Direct,
    Lut,
}

/// `adphi run` and `adphi montecarlo`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseScenario {
    pub duration_samples: usize,
    pub amplitude: f64,
    pub true_phase: f64,
    #[serde(default)]
    pub loop_delay_samples: usize,
    pub algorithm: AlgorithmName,
    #[serde(default)]
    pub epsilon: Option<EpsilonSpec>,
    #[serde(default = "default_gain_source")]
    pub gain_source: GainSourceName,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_gain_source() -> GainSourceName {
    GainSourceName::Direct
}

fn default_noise_scale() -> f64 {
    1.0
}

fn default_trials() -> usize {
    1000
}

impl PulseScenario {
    pub fn pulse_config(&self) -> Result<PulseConfig> {
        let algorithm = match (self.algorithm, &self.epsilon) {
            (AlgorithmName::MarkI, None) => Algorithm::MarkI,
            (AlgorithmName::Integrator, None) => Algorithm::GainScheduledIntegrator,
            (AlgorithmName::MarkII, Some(e)) => Algorithm::MarkII(epsilon_fn(e)?),
            (AlgorithmName::MarkII, None) => return Err(config_err("mark_ii needs an epsilon")),
            (_, Some(_)) => return Err(config_err("epsilon only applies to mark_ii")),
        };
        let mut c = PulseConfig::new(
            self.duration_samples,
            self.amplitude,
            self.true_phase,
            algorithm,
            self.seed,
        );
        c.loop_delay_samples = self.loop_delay_samples;
        c.noise_scale = self.noise_scale;
        if self.gain_source == GainSourceName::Lut {
            c.gain_source = GainSource::Lut(default_gain_table(self.duration_samples)?);
        }
        c.validate()?;
        Ok(c)
    }
}

fn epsilon_fn(e: &EpsilonSpec) -> Result<EpsilonFn> {
    match e {
        EpsilonSpec::Constant(k) => {
            let k = *k;
            Ok(Arc::new(move |_, _, _| k))
        }
        EpsilonSpec::Named(n) if n == "v" => Ok(Arc::new(|v, _, _| v)),
        EpsilonSpec::Named(n) => Err(config_err(format!("unknown epsilon {n:?}"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub t_c: TfSpec,
    pub t_v: TfSpec,
    pub pzt: TfSpec,
    #[serde(default)]
    pub noise: Option<Vec<NoiseLine>>,
    #[serde(default)]
    pub sensor_noise_rms: Option<f64>,
}

impl PlantSpec {
    pub fn build(&self) -> Result<LockPlant> {
        let mut p = LockPlant::new(self.t_c.build()?, self.t_v.build()?, self.pzt.build()?)?;
        if let Some(n) = &self.noise {
            p.noise_spectrum = n.clone();
        }
        if let Some(r) = self.sensor_noise_rms {
            p.sensor_noise_rms = r;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub f_lo: f64,
    pub f_hi: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            f_lo: 1.0,
            f_hi: 700e3,
            points: default_points(),
        }
    }
}

/// `lock design|bode|simulate|reacquire`. Every table is optional; a
/// missing `[plant]` gives the default plant.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockScenario {
    #[serde(default)]
    pub plant: Option<PlantSpec>,
    #[serde(default)]
    pub design: LockParams,
    #[serde(default)]
    pub bode: SweepSpec,
    #[serde(default)]
    pub simulate: LockSimConfig,
    #[serde(default)]
    pub reacquire: ReacquireScenario,
}

impl LockScenario {
    pub fn plant(&self) -> Result<LockPlant> {
        match &self.plant {
            Some(p) => p.build(),
            None => Ok(LockPlant::default_plant()),
        }
    }
}
