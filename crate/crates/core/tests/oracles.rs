//! Frozen reference values, each checked against an oracle computed here
//! independently of the library code path.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use statrs::function::erf::erf;
use statrs::function::gamma::{gamma, ln_gamma};

use fbi_micro::cones::{build_cover, validate_cover, CoverConfig, DualPlacement};
use fbi_micro::fbi::{fbi, QuadOptions};
use fbi_micro::functional::{apply, heat_value_double, parse_functional, CompactBox, Functional, FunctionalExpr, TestFunction};
use fbi_micro::phase::{certify, cone_constants, normalization_constant, validate_positivity, CertifyOptions, PhasePolynomial};
use fbi_micro::sequences::{make_gevrey, quasianalytic_test, QaVerdict};

/// `max_k (k ln t − s ln k!)` with log-factorials from the gamma function.
fn gevrey_associated_oracle(s: f64, t: f64, k_max: usize) -> (f64, usize) {
    (0..=k_max)
        .map(|k| (k as f64 * t.ln() - s * ln_gamma(k as f64 + 1.0), k))
        .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
}

#[test]
fn gevrey_two_associated_at_e4() {
    let t = 4f64.exp();
    let (want, kw) = gevrey_associated_oracle(2.0, t, 200);
    assert_eq!(kw, 7);
    assert!((want - 10.9496).abs() < 1e-4);
    let seq = make_gevrey(2.0, 200).unwrap();
    let (got, k) = seq.associated(200).value_with_argmax(t).unwrap();
    assert_eq!(k, 7);
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn gevrey_one_associated_at_ten() {
    let (want, kw) = gevrey_associated_oracle(1.0, 10.0, 200);
    assert!(kw == 9 || kw == 10);
    // Stirling: 10 − ½ ln(20π)
    assert!((want - (10.0 - 0.5 * (20.0 * PI).ln())).abs() < 0.01);
    let seq = make_gevrey(1.0, 200).unwrap();
    let got = seq.associated(200).value(10.0).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!((got - 7.921_438).abs() < 1e-6);
}

#[test]
fn gevrey_three_halves_fit_holds_by_brute_force() {
    let seq = make_gevrey(1.5, 50).unwrap();
    assert!(seq.report.all_pass());
    let (a, h) = (seq.fitted_a, seq.fitted_h);
    let lm = |k: usize| 1.5 * ln_gamma(k as f64 + 1.0);
    for k in 1..=50 {
        assert!(lm(k) <= a.ln() + k as f64 * h.ln() + lm(k - 1) + 1e-12, "k = {k}");
    }
    // some (A, H) on the log grid works, so the fit cannot be worse than the scan
    let grid: Vec<f64> = (0..=160).map(|j| 2f64.powf(j as f64 / 8.0)).collect();
    let best_h = grid
        .iter()
        .filter(|&&hh| grid.iter().any(|&aa| aa <= 2.0 && (1..=50).all(|k| lm(k) <= aa.ln() + k as f64 * hh.ln() + lm(k - 1) + 1e-12)))
        .cloned()
        .fold(f64::INFINITY, f64::min);
    assert!(h <= best_h * (1.0 + 1e-12));
}

#[test]
fn quasianalytic_verdicts() {
    let two = quasianalytic_test(&make_gevrey(2.0, 200).unwrap(), 0.1).unwrap();
    assert_eq!(two.verdict, QaVerdict::NonQuasianalytic);
    // terms 1/(k!)^{2/k} ≈ e²/k²
    assert!((two.tail_exponent - 2.0).abs() < 0.2);
    let one = quasianalytic_test(&make_gevrey(1.0, 200).unwrap(), 0.1).unwrap();
    assert_eq!(one.verdict, QaVerdict::Quasianalytic);
}

#[test]
fn quartic_sum_positivity() {
    let p = PhasePolynomial::new(2, 2, vec![(vec![4, 0], 1.0), (vec![0, 4], 1.0)]).unwrap();
    let pos = validate_positivity(&p, 256).unwrap();
    // analytic minimum 2·(1/√2)⁴ at 45°
    assert!((pos.c - 0.5).abs() < 1e-3);
    assert!((pos.c_upper - 1.0).abs() < 1e-12);
}

#[test]
fn complex_cone_constant_at_half() {
    let want = (1.0 - 0.25) / 1.25;
    let (lo1, _) = cone_constants(&PhasePolynomial::default_for(1), 0.5, 256).unwrap();
    assert!((lo1 - want).abs() < 1e-12);
    let (lo2, _) = cone_constants(&PhasePolynomial::default_for(2), 0.5, 256).unwrap();
    assert!((lo2 - want).abs() < 1e-3);
}

#[test]
fn quartic_normalization() {
    let p = PhasePolynomial::new(1, 2, vec![(vec![4], 1.0)]).unwrap();
    let want = 1.0 / (2.0 * gamma(1.25));
    assert!((want - 0.551_631).abs() < 1e-6);
    assert!((normalization_constant(&p, 1e-12).unwrap() - want).abs() < 1e-10);
    let q = PhasePolynomial::default_for(2);
    assert!((normalization_constant(&q, 1e-12).unwrap() - 1.0 / PI).abs() < 1e-10);
}

#[test]
fn wedge_reciprocal_pairing() {
    let mu = parse_functional(r#"{"variant":"wedge","g":"reciprocal","V":[[-1,1]],"y":[0.1]}"#).unwrap();
    let got = apply(&mu.into(), &TestFunction::one(1)).unwrap();
    // composite Simpson on ∫_{−1}^{1} dx/(x + 0.1i)
    let n = 20_000;
    let h = 2.0 / n as f64;
    let f = |x: f64| Complex64::new(x, 0.1).inv();
    let mut s = f(-1.0) + f(1.0);
    for i in 1..n {
        s += f(-1.0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let simpson = s * h / 3.0;
    let closed = Complex64::new(0.0, 2.0 * 0.1f64.atan() - PI);
    assert!((simpson - closed).norm() < 1e-10);
    assert!((got - closed).norm() < 1e-10);
    assert!((got.im + 2.942_255).abs() < 1e-6);
}

#[test]
fn heat_smoothed_indicator() {
    let eps: f64 = 1e-2;
    let w = CompactBox::interval(-2.0, 2.0);
    let erf_oracle = |x: f64| 0.5 * (erf((2.0 - x) / (2.0 * eps.sqrt())) + erf((2.0 + x) / (2.0 * eps.sqrt())));
    let one = TestFunction::one(1);
    let centre = heat_value_double(&one, &w, eps, Complex64::new(0.0, 0.0)).unwrap();
    assert!((centre - erf_oracle(0.0)).norm() < 1e-8);
    assert!((centre - 1.0).norm() < 1e-3);
    let far = heat_value_double(&one, &w, eps, Complex64::new(10.0, 0.0)).unwrap();
    assert!(far.norm() <= 1e-3);
    let edge = heat_value_double(&one, &w, eps, Complex64::new(1.9, 0.0)).unwrap();
    assert!((edge - erf_oracle(1.9)).norm() < 1e-8);
}

#[test]
fn delta_transform_closed_form() {
    let q = QuadOptions::default();
    for n in [1usize, 2] {
        let p = Arc::new(certify(&PhasePolynomial::default_for(n), &CertifyOptions::default()).unwrap());
        let x0: Vec<f64> = (0..n).map(|j| 0.25 * (j as f64 + 1.0)).collect();
        let mu: FunctionalExpr = Functional::delta(&x0).into();
        let tau: Vec<f64> = x0.iter().map(|x| x + 0.4).collect();
        let xi: Vec<f64> = (0..n).map(|j| 3.0 - 5.0 * j as f64).collect();
        let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d2: f64 = tau.iter().zip(&x0).map(|(t, x)| (t - x).powi(2)).sum();
        let phase: f64 = tau.iter().zip(&x0).zip(&xi).map(|((t, x), v)| (t - x) * v).sum();
        let cp = PI.powf(-(n as f64) / 2.0);
        let want = Complex64::from_polar(cp * (-r * d2).exp(), phase);
        let got = fbi(&mu, &p, &tau, &xi, &q).unwrap().value.to_complex();
        assert!((got - want).norm() <= 1e-12 * want.norm(), "N = {n}: {got} vs {want}");
    }
}

#[test]
fn sector_cover_dual_constant() {
    let cover = build_cover(&CoverConfig { n: 2, l: 6, xi0: vec![1.0, 0.0], beta: PI / 12.0, placement: DualPlacement::Bisector }).unwrap();
    assert!((cover.c - (PI / 4.0).cos()).abs() < 1e-12);
    let rep = validate_cover(&cover, 1000, 7).unwrap();
    assert!(rep.tiling && rep.dual_ok);
    assert!((rep.angular_sum - 2.0 * PI).abs() < 1e-12);
    // bisecting duals of the neighbours of Γ₁ lean towards ξ₀
    assert!(!rep.opposite_ok[1] && !rep.opposite_ok[5]);
    assert!(build_cover(&CoverConfig { n: 2, l: 6, xi0: vec![1.0, 0.0], beta: PI / 12.0, placement: DualPlacement::Opposing }).is_err());
    let opp = build_cover(&CoverConfig { n: 2, l: 8, xi0: vec![1.0, 0.0], beta: 0.05, placement: DualPlacement::Opposing }).unwrap();
    let rep = validate_cover(&opp, 1000, 7).unwrap();
    assert!(rep.tiling && rep.dual_ok && opp.c > 0.0);
    assert!(rep.opposite_ok[1..].iter().all(|&b| b));
}
