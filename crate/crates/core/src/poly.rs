//! Dense real polynomials stored with ascending powers, `p[0] + p[1]·x + ...`.

use num_complex::Complex64;

/// Drop zero coefficients of the highest powers, keeping at least one entry.
pub fn trim(p: &[f64]) -> Vec<f64> {
    let mut v = p.to_vec();
    while v.len() > 1 && *v.last().unwrap() == 0.0 {
        v.pop();
    }
    if v.is_empty() {
        v.push(0.0);
    }
    v
}

pub fn degree(p: &[f64]) -> usize {
    trim(p).len() - 1
}

pub fn is_zero(p: &[f64]) -> bool {
    p.iter().all(|c| *c == 0.0)
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0];
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

pub fn scale(p: &[f64], k: f64) -> Vec<f64> {
    p.iter().map(|c| c * k).collect()
}

/// `p(x)^n` by repeated multiplication.
pub fn pow(p: &[f64], n: usize) -> Vec<f64> {
    (0..n).fold(vec![1.0], |acc, _| mul(&acc, p))
}

pub fn eval(p: &[f64], z: Complex64) -> Complex64 {
    p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
}

pub fn eval_real(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn eval_complex_coeffs(p: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    // Horner for p and p'.
    let mut val = Complex64::new(0.0, 0.0);
    let mut der = Complex64::new(0.0, 0.0);
    for c in p.iter().rev() {
        der = der * z + val;
        val = val * z + c;
    }
    (val, der)
}

/// Sum of |p_k|·|z|^k, the natural scale for judging a residual |p(z)|.
pub fn magnitude_bound(p: &[f64], z: Complex64) -> f64 {
    let r = z.norm();
    p.iter().rev().fold(0.0, |acc, c| acc * r + c.abs())
}

/// Quotient and remainder of `a / b`.
pub fn divrem(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = trim(a);
    let b = trim(b);
    let db = b.len() - 1;
    let lead = b[db];
    if a.len() < b.len() {
        return (vec![0.0], a);
    }
    let mut rem = a.clone();
    let mut quot = vec![0.0; a.len() - db];
    for k in (0..quot.len()).rev() {
        let c = rem[k + db] / lead;
        quot[k] = c;
        for (j, bj) in b.iter().enumerate() {
            rem[k + j] -= c * bj;
        }
        rem[k + db] = 0.0;
    }
    rem.truncate(db.max(1));
    (quot, trim(&rem))
}

/// Real-coefficient polynomial with the given roots, scaled by `lead`.
/// Complex roots must come in conjugate pairs.
pub fn from_roots(roots: &[Complex64], lead: f64) -> Vec<f64> {
    let mut acc = vec![Complex64::new(lead, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
        for (i, c) in acc.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * r;
        }
        acc = next;
    }
    acc.into_iter().map(|c| c.re).collect()
}

/// All complex roots, by Aberth-Ehrlich iteration on a frequency-scaled copy
/// of the polynomial followed by Newton polishing.
pub fn roots(p: &[f64]) -> Vec<Complex64> {
    let p = trim(p);
    let mut out = Vec::new();
    let zeros = p.iter().take_while(|c| **c == 0.0).count();
    if zeros == p.len() {
        return out;
    }
    out.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), zeros));
    let p = &p[zeros..];
    let n = p.len() - 1;
    if n == 0 {
        return out;
    }
    let lead = p[n];
    // x = s / sigma balances the coefficient magnitudes.
    let sigma = (p[0] / lead).abs().powf(1.0 / n as f64);
    let q: Vec<Complex64> = p
        .iter()
        .enumerate()
        .map(|(i, c)| Complex64::new(c / lead * sigma.powi(i as i32 - n as i32), 0.0))
        .collect();

    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
            Complex64::from_polar(1.0, theta)
        })
        .collect();
    for _ in 0..2000 {
        let mut max_step: f64 = 0.0;
        for i in 0..n {
            let (val, der) = eval_complex_coeffs(&q, z[i]);
            if val.norm() == 0.0 {
                continue;
            }
            let ratio = val / der;
            let repulsion: Complex64 = (0..n)
                .filter(|j| *j != i)
                .map(|j| {
                    let d = z[i] - z[j];
                    if d.norm() == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        d.inv()
                    }
                })
                .sum();
            let w = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if w.is_finite() {
                z[i] -= w;
                max_step = max_step.max(w.norm() / z[i].norm().max(1e-300));
            }
        }
        if max_step < 1e-15 {
            break;
        }
    }
    for zi in z.iter_mut() {
        for _ in 0..3 {
            let (val, der) = eval_complex_coeffs(&q, *zi);
            if der.norm() == 0.0 {
                break;
            }
            let step = val / der;
            let cand = *zi - step;
            if eval_complex_coeffs(&q, cand).0.norm() < val.norm() {
                *zi = cand;
            } else {
                break;
            }
        }
        // Snap numerically real roots onto the axis.
        if zi.im.abs() <= 1e-12 * zi.norm() {
            zi.im = 0.0;
        }
    }
    out.extend(z.into_iter().map(|zi| zi * sigma));
    out
}
