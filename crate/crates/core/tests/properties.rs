use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use fpgaloop_core::cavity_lock::{
    design_lock, design_upper, reacquire_logic, simulate_lock, LockParams, LockPlant, LockSimConfig,
    ReacquireThresholds,
};
use fpgaloop_core::discretize::{c2d, discrete_freq_response, to_difference_equation, C2dMethod, DiscreteTF};
use fpgaloop_core::lti::{closed_loop, ContinuousTF};

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Stable continuous TF with real poles and complex pairs in [1e2, 1e5] rad/s.
fn stable_tf() -> impl Strategy<Value = ContinuousTF> {
    (
        prop::collection::vec((1e2f64..1e5, 0.05f64..2.0, any::<bool>()), 1..=2),
        prop::collection::vec(-2.0f64..2.0, 1..=3),
        0.1f64..10.0,
    )
        .prop_map(|(sections, zeros, gain)| {
            let mut den = vec![1.0];
            for (w, zeta, pair) in sections {
                let f = if pair {
                    vec![w * w, 2.0 * zeta * w, 1.0]
                } else {
                    vec![w, 1.0]
                };
                den = mul(&den, &f);
            }
            let order = den.len() - 1;
            let num: Vec<f64> = zeros.into_iter().take(order).map(|z| z * gain).collect();
            ContinuousTF::new(num, den).unwrap()
        })
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn eval(p: &[f64], s: Complex64) -> Complex64 {
    p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * s + c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn series_multiplies_responses(a in stable_tf(), b in stable_tf(), w in 1.0f64..1e6) {
        let s = a.series(&b);
        let want = a.freq_response(w).unwrap() * b.freq_response(w).unwrap();
        prop_assert!(rel(s.freq_response(w).unwrap(), want) < 1e-9);
    }

    #[test]
    fn closed_loop_matches_direct_expression(c in stable_tf(), v in stable_tf(), u in stable_tf(), w in 1.0f64..1e6) {
        let cl = closed_loop(&c, &v, &u).unwrap();
        let (gc, gv, gu) = (c.freq_response(w).unwrap(), v.freq_response(w).unwrap(), u.freq_response(w).unwrap());
        let want = gc * gv / (Complex64::new(1.0, 0.0) + gc * gv * gu);
        prop_assert!(rel(cl.freq_response(w).unwrap(), want) < 1e-9);
    }

    #[test]
    fn stable_means_left_half_plane_roots(g in stable_tf()) {
        prop_assert!(g.is_stable());
        let norm = g.den().iter().map(|c| c * c).sum::<f64>().sqrt();
        for p in g.poles() {
            prop_assert!(p.re < 0.0);
            prop_assert!(eval(g.den(), p).norm() < 1e-8 * norm * p.norm().max(1.0).powi(g.den_degree() as i32));
        }
    }

    #[test]
    fn bilinear_preserves_stability(g in stable_tf(), fs in 1e3f64..1e7) {
        let d = c2d(&g, fs, C2dMethod::Bilinear).unwrap();
        prop_assert!(d.max_pole_magnitude() < 1.0);
    }

    #[test]
    fn impulse_response_is_power_series(
        poles in prop::collection::vec(-0.9f64..0.9, 1..=4),
        a in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let mut b = vec![1.0];
        for p in &poles {
            b = mul(&b, &[1.0, -p]);
        }
        let a = a[..b.len()].to_vec();
        let g = DiscreteTF::new(a.clone(), b.clone(), 1.0).unwrap();
        let h = to_difference_equation(&g).unwrap().impulse_response(64);
        // partial fractions: h[n] = Σ_k r_k p_k^n plus the direct term
        let mut series = vec![0.0; 64];
        let n = poles.len();
        let distinct = (0..n).all(|i| (0..i).all(|j| (poles[i] - poles[j]).abs() > 1e-3));
        prop_assume!(distinct && poles.iter().all(|p| p.abs() > 1e-3));
        // A(q)/B(q) = c0 + Σ r_k / (1 - p_k q) with q = z^-1, so c0 + Σ r_k = a0
        let eval_poly = |c: &[f64], x: f64| c.iter().rev().fold(0.0, |acc, v| acc * x + v);
        let mut residues = Vec::new();
        for k in 0..n {
            let q = 1.0 / poles[k];
            let others: f64 = (0..n).filter(|j| *j != k).map(|j| 1.0 - poles[j] * q).product();
            residues.push(eval_poly(&a, q) / others);
        }
        let c0 = a[0] - residues.iter().sum::<f64>();
        series[0] += c0;
        for (k, r) in residues.iter().enumerate() {
            for (m, s) in series.iter_mut().enumerate() {
                *s += r * poles[k].powi(m as i32);
            }
        }
        for (x, y) in h.iter().zip(&series) {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn c2d_converges_with_sample_rate(g in stable_tf(), f in 10.0f64..1e3) {
        let errs: Vec<f64> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|m| {
                let d = c2d(&g, m * f, C2dMethod::Bilinear).unwrap();
                (discrete_freq_response(&d, f).unwrap() - g.freq_response_hz(f).unwrap()).norm()
            })
            .collect();
        prop_assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn upper_arm_open_loop_is_integrator_like(fc in 3e3f64..30e3, fv in 30e3f64..200e3, crossover in 5e3f64..60e3) {
        let plant = LockPlant::new(
            ContinuousTF::low_pass_hz(fc).unwrap(),
            ContinuousTF::low_pass_hz(fv).unwrap(),
            ContinuousTF::low_pass_hz(1e3).unwrap().scale(3.0),
        ).unwrap();
        let (lp1, lp2) = (100.0, 300e3);
        let t_u = design_upper(&plant, lp1, lp2, crossover).unwrap();
        let l = plant.t_c.series(&plant.t_v).series(&t_u);
        let band: Vec<f64> = (0..=20).map(|k| lp1 * 10.0 * (lp2 / 10.0 / (lp1 * 10.0)).powf(k as f64 / 20.0)).collect();
        let g: Vec<f64> = band.iter().map(|f| (l.freq_response_hz(*f).unwrap() * 2.0 * PI * f).norm()).collect();
        let mid = (g.iter().cloned().fold(f64::MIN, f64::max) * g.iter().cloned().fold(f64::MAX, f64::min)).sqrt();
        for v in g {
            prop_assert!((20.0 * (v / mid).log10()).abs() <= 3.0);
        }
        let cl = closed_loop(&plant.t_c, &plant.t_v, &t_u).unwrap();
        prop_assert!(cl.poles().iter().all(|p| p.re < 0.0));
    }

    #[test]
    fn reacquire_logic_is_replayable(record in prop::collection::vec(-1.5f64..1.5, 0..2000), dwell in 1usize..50) {
        let th = ReacquireThresholds { loss_dwell: dwell, lock_dwell: dwell, ..ReacquireThresholds::default() };
        prop_assert_eq!(reacquire_logic(&record, &th).unwrap(), reacquire_logic(&record, &th).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn lock_simulation_is_deterministic(seed in any::<u64>()) {
        let plant = LockPlant::default_plant();
        let design = design_lock(&plant, &LockParams::default()).unwrap();
        let cfg = LockSimConfig { duration_s: 0.002, seed, ..LockSimConfig::default() };
        prop_assert_eq!(simulate_lock(&plant, &design, &cfg).unwrap(), simulate_lock(&plant, &design, &cfg).unwrap());
    }
}
