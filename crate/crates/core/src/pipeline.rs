//! Latency and throughput of a chain of pipelined stages clocked at `f_C`,
//! and a sample-by-sample simulation of the chain.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sinefit;

/// Builds a fresh per-sample transform, so each simulation starts from zero state.
pub type TransformFactory = Arc<dyn Fn() -> Box<dyn FnMut(f64) -> f64> + Send + Sync>;

#[derive(Clone, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub cycles: u32,
    #[serde(skip)]
    pub transform: Option<TransformFactory>,
}

impl fmt::Debug for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stage")
            .field("name", &self.name)
            .field("cycles", &self.cycles)
            .field("transform", &self.transform.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

impl Stage {
    /// A pure delay.
    pub fn delay(name: impl Into<String>, cycles: u32) -> Self {
        Self {
            name: name.into(),
            cycles,
            transform: None,
        }
    }

    /// A memoryless per-sample map.
    pub fn map(name: impl Into<String>, cycles: u32, f: impl Fn(f64) -> f64 + Clone + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            cycles,
            transform: Some(Arc::new(move || Box::new(f.clone()))),
        }
    }

    /// A stateful transform; `factory` is called once per simulation.
    pub fn stateful(name: impl Into<String>, cycles: u32, factory: TransformFactory) -> Self {
        Self {
            name: name.into(),
            cycles,
            transform: Some(factory),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Board {
    pub clock_hz: f64,
    pub stages: Vec<Stage>,
    #[serde(default = "default_extra_delay")]
    pub extra_delay_s: f64,
}

fn default_extra_delay() -> f64 {
    10e-9
}

impl Board {
    pub fn new(clock_hz: f64, stages: Vec<Stage>, extra_delay_s: f64) -> Result<Self> {
        let b = Self {
            clock_hz,
            stages,
            extra_delay_s,
        };
        b.validate()?;
        Ok(b)
    }

    /// ADC 10 cycles, FPGA I/O buffers 4, DAC 1, at 100 MHz plus 10 ns.
    pub fn gva290() -> Self {
        Self {
            clock_hz: 100e6,
            stages: vec![
                Stage::delay("adc", 10),
                Stage::delay("fpga_buffers", 4),
                Stage::delay("dac", 1),
            ],
            extra_delay_s: 10e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clock_hz > 0.0) || !self.clock_hz.is_finite() {
            return Err(invalid(format!("clock_hz must be positive, got {}", self.clock_hz)));
        }
        if !(self.extra_delay_s >= 0.0) || !self.extra_delay_s.is_finite() {
            return Err(invalid(format!(
                "extra_delay_s must be non-negative, got {}",
                self.extra_delay_s
            )));
        }
        Ok(())
    }

    pub fn total_cycles(&self) -> u64 {
        self.stages.iter().map(|s| s.cycles as u64).sum()
    }

    pub fn latency(&self) -> f64 {
        self.total_cycles() as f64 / self.clock_hz + self.extra_delay_s
    }

    pub fn control_bandwidth(&self) -> Result<f64> {
        let l = self.latency();
        if l <= 0.0 {
            return Err(Error::Degenerate("zero latency has no bandwidth limit".into()));
        }
        Ok(1.0 / l)
    }

    pub fn nyquist(&self) -> f64 {
        self.clock_hz / 2.0
    }

    /// Total delay in clock samples, including the fractional extra delay.
    pub fn delay_samples(&self) -> f64 {
        self.total_cycles() as f64 + self.extra_delay_s * self.clock_hz
    }

    pub fn push(&mut self, stage: Stage) {
        self.stages.push(stage);
    }

    /// Stages of `self` followed by those of `other`, keeping only `self`'s extra delay.
    pub fn concat(&self, other: &Board) -> Result<Board> {
        if self.clock_hz != other.clock_hz {
            return Err(invalid("boards must share a clock to be concatenated"));
        }
        let mut stages = self.stages.clone();
        stages.extend(other.stages.iter().cloned());
        Board::new(self.clock_hz, stages, self.extra_delay_s)
    }

    /// Push `input` (sampled at `f_C`) through every stage transform and the
    /// total delay. One output per input.
    pub fn simulate_through(&self, input: &[f64]) -> Vec<f64> {
        let mut transforms: Vec<Box<dyn FnMut(f64) -> f64>> = self
            .stages
            .iter()
            .filter_map(|s| s.transform.as_ref().map(|f| f()))
            .collect();
        let mut delay = FractionalDelay::new(self.delay_samples());
        input
            .iter()
            .map(|x| {
                let v = transforms.iter_mut().fold(*x, |acc, t| t(acc));
                delay.step(v)
            })
            .collect()
    }

    /// Complex gain of the simulated board at each frequency, by a sine fit to
    /// the steady-state output over `n_samples`.
    pub fn measure_response(&self, freqs_hz: &[f64], n_samples: usize) -> Result<Vec<Complex64>> {
        let settle = self.delay_samples().ceil() as usize + 1;
        freqs_hz
            .iter()
            .map(|f| {
                if *f <= 0.0 || *f >= self.nyquist() {
                    return Err(Error::AboveNyquist {
                        freq: *f,
                        nyquist: self.nyquist(),
                    });
                }
                let w = 2.0 * PI * f / self.clock_hz;
                let input: Vec<f64> = (0..settle + n_samples).map(|k| (w * k as f64).cos()).collect();
                let out = self.simulate_through(&input);
                let t: Vec<f64> = (settle..settle + n_samples).map(|k| k as f64).collect();
                let fit = sinefit::fit_at(&t, &out[settle..], w)
                    .ok_or_else(|| Error::Degenerate("sine fit failed".into()))?;
                Ok(Complex64::from_polar(fit.amplitude, fit.phase))
            })
            .collect()
    }

    /// Latency estimated from the slope of unwrapped phase against angular
    /// frequency.
    pub fn measured_latency(&self, freqs_hz: &[f64], n_samples: usize) -> Result<f64> {
        let resp = self.measure_response(freqs_hz, n_samples)?;
        let phase = sinefit::unwrap(&resp.iter().map(|z| z.arg()).collect::<Vec<_>>());
        let omega: Vec<f64> = freqs_hz.iter().map(|f| 2.0 * PI * f).collect();
        let (_, slope) = sinefit::linear_regression(&omega, &phase);
        Ok(-slope)
    }
}

/// Delay by a possibly fractional number of samples using linear
/// interpolation between neighbours. Integer delays are exact.
#[derive(Debug, Clone)]
pub struct FractionalDelay {
    whole: usize,
    frac: f64,
    buf: Vec<f64>,
    pos: usize,
}

impl FractionalDelay {
    pub fn new(delay_samples: f64) -> Self {
        let d = delay_samples.max(0.0);
        let mut whole = d.floor();
        let mut frac = d - whole;
        if frac < 1e-9 {
            frac = 0.0;
        } else if frac > 1.0 - 1e-9 {
            whole += 1.0;
            frac = 0.0;
        }
        let whole = whole as usize;
        Self {
            whole,
            frac,
            buf: vec![0.0; whole + 2],
            pos: 0,
        }
    }

    pub fn delay_samples(&self) -> f64 {
        self.whole as f64 + self.frac
    }

    fn back(&self, k: usize) -> f64 {
        let n = self.buf.len();
        self.buf[(self.pos + n - k) % n]
    }

    pub fn step(&mut self, x: f64) -> f64 {
        self.pos = (self.pos + 1) % self.buf.len();
        self.buf[self.pos] = x;
        let a = self.back(self.whole);
        if self.frac == 0.0 {
            a
        } else {
            (1.0 - self.frac) * a + self.frac * self.back(self.whole + 1)
        }
    }

    pub fn reset(&mut self) {
        self.buf.iter_mut().for_each(|v| *v = 0.0);
    }
}
