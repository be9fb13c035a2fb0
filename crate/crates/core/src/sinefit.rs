//! Least-squares fit of a sinusoid with known frequency.

use nalgebra::{Matrix3, Vector3};

/// `offset + amplitude·cos(ω t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineFit {
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
}

/// Fit `y[k] ≈ offset + amplitude·cos(omega·k + phase)` for sample index `k`.
pub fn fit(y: &[f64], omega: f64) -> Option<SineFit> {
    let t: Vec<f64> = (0..y.len()).map(|k| k as f64).collect();
    fit_at(&t, y, omega)
}

/// As [`fit`], at arbitrary times `t`.
pub fn fit_at(t: &[f64], y: &[f64], omega: f64) -> Option<SineFit> {
    let mut m = Matrix3::zeros();
    let mut r = Vector3::zeros();
    for (ti, yi) in t.iter().zip(y) {
        let basis = Vector3::new((omega * ti).cos(), (omega * ti).sin(), 1.0);
        m += basis * basis.transpose();
        r += basis * *yi;
    }
    let x = m.lu().solve(&r)?;
    // A cos + B sin = R cos(ωt - θ), θ = atan2(B, A)
    Some(SineFit {
        amplitude: x[0].hypot(x[1]),
        phase: -x[1].atan2(x[0]),
        offset: x[2],
    })
}

/// Unwrap a phase sequence so consecutive steps stay within ±π.
pub fn unwrap(phases: &[f64]) -> Vec<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(phases.len());
    let mut shift = 0.0;
    for (i, p) in phases.iter().enumerate() {
        if i > 0 {
            let d: f64 = p + shift - out[i - 1];
            shift -= tau * (d / tau).round();
        }
        out.push(p + shift);
    }
    out
}

/// Ordinary least-squares line `y = intercept + slope·x`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_known_sinusoid() {
        let w = 0.37;
        let y: Vec<f64> = (0..500).map(|k| 0.2 + 1.5 * (w * k as f64 - 0.8).cos()).collect();
        let f = fit(&y, w).unwrap();
        assert!((f.amplitude - 1.5).abs() < 1e-12);
        assert!((f.phase + 0.8).abs() < 1e-12);
        assert!((f.offset - 0.2).abs() < 1e-12);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let raw: Vec<f64> = (0..50)
            .map(|k| {
                let p = -0.4 * k as f64;
                p - 2.0 * std::f64::consts::PI * (p / (2.0 * std::f64::consts::PI)).round()
            })
            .collect();
        let u = unwrap(&raw);
        for (k, p) in u.iter().enumerate() {
            assert!((p + 0.4 * k as f64).abs() < 1e-12);
        }
    }
}
