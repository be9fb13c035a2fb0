//! Continuous-to-discrete conversion and the difference-equation form of a
//! discrete transfer function
//!
//! ```text
//! G_D(z) = (a0 + a1 z^-1 + ... + aN z^-N) / (b0 + b1 z^-1 + ... + bN z^-N)
//! y(n)   = Σ a(i) u(n-i) - Σ_{i>=1} b(i) y(n-i),   b0 = 1
//! ```

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fixedpoint::{quantize, shared_frac_bits, QFormat};
use crate::lti::ContinuousTF;
use crate::poly;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiscrete", into = "RawDiscrete")]
pub struct DiscreteTF {
    a: Vec<f64>,
    b: Vec<f64>,
    fs: f64,
}

#[derive(Serialize, Deserialize)]
struct RawDiscrete {
    a: Vec<f64>,
    b: Vec<f64>,
    fs: f64,
}

impl TryFrom<RawDiscrete> for DiscreteTF {
    type Error = Error;

    fn try_from(raw: RawDiscrete) -> Result<Self> {
        DiscreteTF::new(raw.a, raw.b, raw.fs)
    }
}

impl From<DiscreteTF> for RawDiscrete {
    fn from(tf: DiscreteTF) -> Self {
        RawDiscrete {
            a: tf.a,
            b: tf.b,
            fs: tf.fs,
        }
    }
}

impl DiscreteTF {
    /// Coefficient lists are zero-padded to equal length. `b` is stored as
    /// given; use [`DiscreteTF::normalized`] to pin `b(0)` to one.
    pub fn new(mut a: Vec<f64>, mut b: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(invalid(format!("sample rate must be positive, got {fs}")));
        }
        if b.is_empty() || b[0] == 0.0 {
            return Err(Error::Degenerate("b(0) must be nonzero".into()));
        }
        if a.is_empty() {
            a.push(0.0);
        }
        if a.iter().chain(&b).any(|c| !c.is_finite()) {
            return Err(invalid("coefficients must be finite"));
        }
        let n = a.len().max(b.len());
        a.resize(n, 0.0);
        b.resize(n, 0.0);
        Ok(Self { a, b, fs })
    }

    pub fn identity(fs: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![1.0], fs)
    }

    pub fn normalized(&self) -> Self {
        let b0 = self.b[0];
        Self {
            a: self.a.iter().map(|c| c / b0).collect(),
            b: self.b.iter().map(|c| c / b0).collect(),
            fs: self.fs,
        }
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.fs
    }

    pub fn order(&self) -> usize {
        self.a.len() - 1
    }

    /// `G_D(z)` at an arbitrary complex `z`.
    pub fn eval_z(&self, z: Complex64) -> Complex64 {
        let w = z.inv();
        poly::eval(&self.a, w) / poly::eval(&self.b, w)
    }

    /// Poles in the z-plane.
    pub fn poles(&self) -> Vec<Complex64> {
        // b0 z^N + b1 z^(N-1) + ... + bN
        let rev: Vec<f64> = poly::trim(&self.b).into_iter().rev().collect();
        poly::roots(&rev)
    }

    pub fn max_pole_magnitude(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_magnitude() < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum C2dMethod {
    /// Tustin's method, optionally prewarped to match one frequency exactly.
    #[default]
    Bilinear,
    BilinearPrewarp {
        freq_hz: f64,
    },
    /// Zero-order hold: exact step response at the sample instants.
    Zoh,
}

/// Convert a proper continuous transfer function to discrete time at `fs` Hz.
pub fn c2d(g: &ContinuousTF, fs: f64, method: C2dMethod) -> Result<DiscreteTF> {
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(invalid(format!("sample rate must be positive, got {fs}")));
    }
    if !g.is_proper() {
        return Err(Error::Improper {
            num_degree: g.num_degree(),
            den_degree: g.den_degree(),
        });
    }
    match method {
        C2dMethod::Bilinear => bilinear(g, fs, 2.0 * fs),
        C2dMethod::BilinearPrewarp { freq_hz } => {
            let w = 2.0 * PI * freq_hz;
            if !(freq_hz > 0.0) || freq_hz >= fs / 2.0 {
                return Err(invalid(format!(
                    "prewarp frequency must lie in (0, fs/2), got {freq_hz}"
                )));
            }
            bilinear(g, fs, w / (w / (2.0 * fs)).tan())
        }
        C2dMethod::Zoh => zoh(g, fs),
    }
}

/// Substitute `s = k (1 - z^-1) / (1 + z^-1)` and clear denominators.
fn bilinear(g: &ContinuousTF, fs: f64, k: f64) -> Result<DiscreteTF> {
    let n = g.den_degree();
    let map = |coeffs: &[f64]| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; n + 1];
        let mut scale = 0.0;
        for (i, c) in coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let ki = k.powi(i as i32);
            let term = poly::mul(&poly::pow(&[1.0, -1.0], i), &poly::pow(&[1.0, 1.0], n - i));
            for (j, t) in term.iter().enumerate() {
                out[j] += c * ki * t;
            }
            scale += (c * ki).abs();
        }
        (out, scale)
    };
    let (a, _) = map(g.num());
    let (b, b_scale) = map(g.den());
    if b[0].abs() <= 1e-12 * b_scale {
        return Err(Error::SingularMapping(k));
    }
    Ok(DiscreteTF::new(a, b, fs)?.normalized())
}

fn zoh(g: &ContinuousTF, fs: f64) -> Result<DiscreteTF> {
    let t = 1.0 / fs;
    let n = g.den_degree();
    // Work in normalized time σ = sT so that one sample is one time unit.
    let den: Vec<f64> = g.den().iter().enumerate().map(|(i, c)| c / t.powi(i as i32)).collect();
    let mut num: Vec<f64> = g.num().iter().enumerate().map(|(i, c)| c / t.powi(i as i32)).collect();
    num.resize(n + 1, 0.0);
    let lead = den[n];
    let den: Vec<f64> = den.iter().map(|c| c / lead).collect();
    let num: Vec<f64> = num.iter().map(|c| c / lead).collect();
    let feedthrough = num[n];
    if n == 0 {
        return DiscreteTF::new(vec![feedthrough], vec![1.0], fs);
    }
    let strict: Vec<f64> = (0..n).map(|i| num[i] - feedthrough * den[i]).collect();

    // Controllable canonical realization augmented with the held input.
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..n - 1 {
        m[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        m[(n - 1, j)] = -den[j];
    }
    m[(n - 1, n)] = 1.0;
    let e = m.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, 1)).into_owned();
    let c = DMatrix::from_row_slice(1, n, &strict);

    // Faddeev-LeVerrier: characteristic polynomial and adjugate terms.
    let mut char_poly = vec![0.0; n + 1];
    char_poly[n] = 1.0;
    let mut mk = DMatrix::<f64>::zeros(n, n);
    let mut adj_terms = Vec::with_capacity(n);
    for k in 1..=n {
        mk = &ad * &mk + DMatrix::identity(n, n) * char_poly[n - k + 1];
        adj_terms.push((&c * &mk * &bd)[(0, 0)]);
        char_poly[n - k] = -(&ad * &mk).trace() / k as f64;
    }
    // Coefficient of z^(N-j) becomes the coefficient of z^-j.
    let mut a = vec![0.0; n + 1];
    let mut b = vec![0.0; n + 1];
    for j in 0..=n {
        b[j] = char_poly[n - j];
        a[j] = feedthrough * char_poly[n - j] + if j >= 1 { adj_terms[j - 1] } else { 0.0 };
    }
    Ok(DiscreteTF::new(a, b, fs)?.normalized())
}

/// `G_D(e^{j2πf/fs})`.
pub fn discrete_freq_response(g: &DiscreteTF, f: f64) -> Result<Complex64> {
    let nyquist = g.fs / 2.0;
    if f < 0.0 || f > nyquist * (1.0 + 1e-12) {
        return Err(Error::AboveNyquist { freq: f, nyquist });
    }
    let w = Complex64::from_polar(1.0, -2.0 * PI * f / g.fs);
    let den = poly::eval(&g.b, w);
    Ok(poly::eval(&g.a, w) / den)
}

/// Result of rounding every coefficient onto a shared power-of-two grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTF {
    pub tf: DiscreteTF,
    pub a_raw: Vec<i128>,
    /// `b(1)..b(N)`; `b(0)` is exactly one and not stored.
    pub b_raw: Vec<i128>,
    /// Binary point shared by all coefficients.
    pub frac_bits: u32,
    pub word_bits: u32,
    /// Set when some coefficient did not fit and was clamped.
    pub saturated: bool,
}

/// Quantize `g`'s coefficients with `fmt`'s word length. The binary point
/// is the finest one (at most `fmt.frac_bits()`) at which the largest
/// coefficient still fits; `b(0)` is re-pinned to one.
pub fn quantize_coefficients(g: &DiscreteTF, fmt: QFormat) -> Result<QuantizedTF> {
    let g = g.normalized();
    let largest = g.a.iter().chain(&g.b[1..]).fold(0.0f64, |m, c| m.max(c.abs()));
    let frac_bits = shared_frac_bits(largest, fmt);
    let grid = QFormat::new(fmt.total_bits(), frac_bits.min(fmt.total_bits()), fmt.is_signed())?;
    let mut saturated = false;
    let mut q = |c: f64| {
        let s = quantize(c, grid);
        saturated |= s.saturated();
        s.raw()
    };
    let a_raw: Vec<i128> = g.a.iter().map(|c| q(*c)).collect();
    let b_raw: Vec<i128> = g.b[1..].iter().map(|c| q(*c)).collect();
    let lsb = grid.lsb();
    let a = a_raw.iter().map(|r| *r as f64 * lsb).collect();
    let mut b = vec![1.0];
    b.extend(b_raw.iter().map(|r| *r as f64 * lsb));
    Ok(QuantizedTF {
        tf: DiscreteTF::new(a, b, g.fs)?,
        a_raw,
        b_raw,
        frac_bits: grid.frac_bits(),
        word_bits: fmt.total_bits(),
        saturated,
    })
}

/// Time-domain recursion realizing a normalized [`DiscreteTF`].
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceEquation {
    /// Feedforward `a(0)..a(N)`.
    pub a: Vec<f64>,
    /// Feedback `b(1)..b(N)`.
    pub b: Vec<f64>,
    pub order: usize,
}

pub fn to_difference_equation(g: &DiscreteTF) -> Result<DifferenceEquation> {
    if (g.b[0] - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized(g.b[0]));
    }
    Ok(DifferenceEquation {
        a: g.a.clone(),
        b: g.b[1..].to_vec(),
        order: g.order(),
    })
}

impl DifferenceEquation {
    pub fn filter(&self) -> DifferenceFilter {
        DifferenceFilter {
            eq: self.clone(),
            u_hist: vec![0.0; self.order + 1],
            y_hist: vec![0.0; self.order],
        }
    }

    pub fn simulate(&self, input: &[f64]) -> Vec<f64> {
        let mut f = self.filter();
        input.iter().map(|u| f.step(*u)).collect()
    }

    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut input = vec![0.0; len];
        if len > 0 {
            input[0] = 1.0;
        }
        self.simulate(&input)
    }
}

/// A [`DifferenceEquation`] with its input/output history.
#[derive(Debug, Clone)]
pub struct DifferenceFilter {
    eq: DifferenceEquation,
    // u(n), u(n-1), ... after the shift
    u_hist: Vec<f64>,
    // y(n-1), y(n-2), ...
    y_hist: Vec<f64>,
}

impl DifferenceFilter {
    pub fn step(&mut self, u: f64) -> f64 {
        self.u_hist.rotate_right(1);
        self.u_hist[0] = u;
        let mut ff = 0.0;
        for (a, x) in self.eq.a.iter().zip(&self.u_hist) {
            ff += a * x;
        }
        let mut fb = 0.0;
        for (b, y) in self.eq.b.iter().zip(&self.y_hist) {
            fb += b * y;
        }
        let y = ff - fb;
        if !self.y_hist.is_empty() {
            self.y_hist.rotate_right(1);
            self.y_hist[0] = y;
        }
        y
    }

    pub fn reset(&mut self) {
        self.u_hist.iter_mut().for_each(|x| *x = 0.0);
        self.y_hist.iter_mut().for_each(|x| *x = 0.0);
    }
}
