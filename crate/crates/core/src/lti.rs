//! Continuous-time rational transfer functions `G(s) = num(s) / den(s)` with
//! coefficients stored in ascending powers of `s`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::poly;

/// Relative tolerance for treating two polynomials as exact multiples.
const EXACT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTf", into = "RawTf")]
pub struct ContinuousTF {
    num: Vec<f64>,
    den: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TryFrom<RawTf> for ContinuousTF {
    type Error = Error;

    fn try_from(raw: RawTf) -> Result<Self> {
        ContinuousTF::new(raw.num, raw.den)
    }
}

impl From<ContinuousTF> for RawTf {
    fn from(tf: ContinuousTF) -> Self {
        RawTf {
            num: tf.num,
            den: tf.den,
        }
    }
}

impl ContinuousTF {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        if den.is_empty() || poly::is_zero(&den) {
            return Err(Error::Degenerate("denominator is identically zero".into()));
        }
        if num.iter().chain(&den).any(|c| !c.is_finite()) {
            return Err(invalid("transfer function coefficients must be finite"));
        }
        let num = if num.is_empty() { vec![0.0] } else { num };
        Ok(Self {
            num: poly::trim(&num),
            den: poly::trim(&den),
        })
    }

    pub fn gain(k: f64) -> Self {
        Self {
            num: vec![k],
            den: vec![1.0],
        }
    }

    pub fn unity() -> Self {
        Self::gain(1.0)
    }

    pub fn zero() -> Self {
        Self::gain(0.0)
    }

    /// `1/s`.
    pub fn integrator() -> Self {
        Self {
            num: vec![1.0],
            den: vec![0.0, 1.0],
        }
    }

    /// `s`.
    pub fn differentiator() -> Self {
        Self {
            num: vec![0.0, 1.0],
            den: vec![1.0],
        }
    }

    /// Single-pole unity-DC-gain low-pass `ω_c / (s + ω_c)`, corner in rad/s.
    pub fn low_pass(omega_c: f64) -> Result<Self> {
        if !(omega_c > 0.0) || !omega_c.is_finite() {
            return Err(invalid(format!("low-pass corner must be positive, got {omega_c}")));
        }
        Ok(Self {
            num: vec![omega_c],
            den: vec![omega_c, 1.0],
        })
    }

    pub fn low_pass_hz(corner_hz: f64) -> Result<Self> {
        Self::low_pass(2.0 * PI * corner_hz)
    }

    /// Unity-DC-gain resonance `ω0² / (s² + (ω0/Q)s + ω0²)`.
    pub fn harmonic_oscillator(omega0: f64, q: f64) -> Result<Self> {
        check_resonance(omega0, q)?;
        let w2 = omega0 * omega0;
        Ok(Self {
            num: vec![w2],
            den: vec![w2, omega0 / q, 1.0],
        })
    }

    /// Inverse resonance with roll-off poles at `100·ω0`, so that
    /// `HO · AHO = 1 / (s (1 + s/ω_p)²)`.
    pub fn aho_compensator(omega0: f64, q: f64) -> Result<Self> {
        Self::aho_compensator_with_rolloff(omega0, q, 100.0 * omega0)
    }

    pub fn aho_compensator_with_rolloff(omega0: f64, q: f64, omega_p: f64) -> Result<Self> {
        check_resonance(omega0, q)?;
        if !(omega_p > 0.0) {
            return Err(invalid("roll-off frequency must be positive"));
        }
        let w2 = omega0 * omega0;
        let rolloff = poly::pow(&[1.0, 1.0 / omega_p], 2);
        Ok(Self {
            num: vec![w2, omega0 / q, 1.0],
            den: poly::scale(&poly::mul(&[0.0, 1.0], &rolloff), w2),
        })
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn num_degree(&self) -> usize {
        poly::degree(&self.num)
    }

    pub fn den_degree(&self) -> usize {
        poly::degree(&self.den)
    }

    pub fn is_proper(&self) -> bool {
        poly::is_zero(&self.num) || self.num_degree() <= self.den_degree()
    }

    pub fn is_zero(&self) -> bool {
        poly::is_zero(&self.num)
    }

    /// `G(jω)`; fails if `ω` sits on a pole.
    pub fn freq_response(&self, omega: f64) -> Result<Complex64> {
        let s = Complex64::new(0.0, omega);
        let d = poly::eval(&self.den, s);
        if d.norm() <= 1e-14 * poly::magnitude_bound(&self.den, s) {
            return Err(Error::PoleOnAxis { omega });
        }
        Ok(poly::eval(&self.num, s) / d)
    }

    pub fn freq_response_hz(&self, freq_hz: f64) -> Result<Complex64> {
        self.freq_response(2.0 * PI * freq_hz)
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        poly::eval(&self.num, s) / poly::eval(&self.den, s)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            num: poly::trim(&poly::scale(&self.num, k)),
            den: self.den.clone(),
        }
        .reduced()
    }

    /// Series connection `self · other`.
    pub fn series(&self, other: &Self) -> Self {
        Self {
            num: poly::mul(&self.num, &other.num),
            den: poly::mul(&self.den, &other.den),
        }
        .reduced()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            num: poly::add(&poly::mul(&self.num, &other.den), &poly::mul(&other.num, &self.den)),
            den: poly::mul(&self.den, &other.den),
        }
        .reduced()
    }

    /// `1 / G`, which may be improper.
    pub fn reciprocal(&self) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::Degenerate("cannot invert the zero transfer function".into()));
        }
        Ok(Self {
            num: self.den.clone(),
            den: self.num.clone(),
        }
        .reduced())
    }

    pub fn poles(&self) -> Vec<Complex64> {
        poly::roots(&self.den)
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        if self.is_zero() {
            return Vec::new();
        }
        poly::roots(&self.num)
    }

    /// All poles strictly in the open left half-plane.
    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.re < 0.0)
    }

    pub fn dc_gain(&self) -> Result<f64> {
        Ok(self.freq_response(0.0)?.re)
    }

    /// Cancel common factors that match exactly: shared powers of `s`, and
    /// one polynomial dividing the other with a remainder below 1e-12
    /// relative. No approximate pole-zero cancellation is attempted.
    fn reduced(mut self) -> Self {
        self.num = poly::trim(&self.num);
        self.den = poly::trim(&self.den);
        if poly::is_zero(&self.num) {
            self.num = vec![0.0];
            self.den = vec![1.0];
            return self;
        }
        let lead_num = self.num.iter().take_while(|c| **c == 0.0).count();
        let lead_den = self.den.iter().take_while(|c| **c == 0.0).count();
        let common = lead_num.min(lead_den);
        if common > 0 {
            self.num.drain(..common);
            self.den.drain(..common);
        }
        if let Some(q) = exact_quotient(&self.num, &self.den) {
            self.num = q;
            self.den = vec![1.0];
        } else if let Some(q) = exact_quotient(&self.den, &self.num) {
            self.den = q;
            self.num = vec![1.0];
        }
        self
    }
}

fn check_resonance(omega0: f64, q: f64) -> Result<()> {
    if !(omega0 > 0.0) || !(q > 0.0) {
        return Err(invalid(format!(
            "resonance needs omega0 > 0 and q > 0, got omega0={omega0}, q={q}"
        )));
    }
    Ok(())
}

/// `a / b` when `b` divides `a` exactly (and `b` is not a constant).
fn exact_quotient(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    if poly::degree(b) == 0 || poly::degree(a) < poly::degree(b) {
        return None;
    }
    let (q, r) = poly::divrem(a, b);
    let norm = a.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let rem = r.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    (rem <= EXACT_REL_TOL * norm).then_some(q)
}

/// `T_C·T_V / (1 + T_C·T_V·T_U)`: the response from the actuator input to
/// the error signal with the loop closed through `T_U`.
pub fn closed_loop(t_c: &ContinuousTF, t_v: &ContinuousTF, t_u: &ContinuousTF) -> Result<ContinuousTF> {
    let plant = t_c.series(t_v);
    // n_p d_u / (d_p d_u + n_p n_u)
    let num = poly::mul(&plant.num, &t_u.den);
    let den = poly::add(&poly::mul(&plant.den, &t_u.den), &poly::mul(&plant.num, &t_u.num));
    if poly::is_zero(&den) {
        return Err(Error::Degenerate(
            "closed loop denominator 1 + T_C T_V T_U vanishes identically".into(),
        ));
    }
    Ok(ContinuousTF { num, den }.reduced())
}
