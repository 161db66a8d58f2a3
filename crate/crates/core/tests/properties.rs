//! Property tests for the documented invariants.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;

use fbi_micro::classify::{classify_grid, lattice_violations, ClassifierConfig, Holds, SheafCondition};
use fbi_micro::cli::Run;
use fbi_micro::cones::{build_cover, validate_cover, CoverConfig, DualPlacement};
use fbi_micro::elliptic::{char_set_sample, sphere_grid};
use fbi_micro::fbi::{fbi, fbi_grid, GridSpec, QuadOptions};
use fbi_micro::functional::{apply, CompactBox, Functional, FunctionalExpr, Profile, TestFunction};
use fbi_micro::operator::{Coef, DifferentialOperator, Monomial, OpTerm};
use fbi_micro::phase::{certify, CertifyOptions, PhasePolynomial};
use fbi_micro::sequences::{make_gevrey, quasianalytic_test, QaVerdict};
use fbi_micro::symbol::{compose_symbols, homogeneity_error, parametrix_symbol, SymbolExpansion};

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn phase1() -> Arc<PhasePolynomial> {
    Arc::new(certify(&PhasePolynomial::default_for(1), &CertifyOptions::default()).unwrap())
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

fn lattice_conditions() -> Vec<SheafCondition> {
    serde_json::from_str(
        r#"[{"kind":"C_omega"},
            {"kind":"E_M_roumieu","sequence":{"kind":"gevrey","s":2,"k_max":200}},
            {"kind":"E_M_beurling","sequence":{"kind":"gevrey","s":2,"k_max":200}},
            {"kind":"C_inf"},{"kind":"Dprime"},
            {"kind":"Dprime_M_roumieu","sequence":{"kind":"gevrey","s":2,"k_max":200}},
            {"kind":"Dprime_M_beurling","sequence":{"kind":"gevrey","s":2,"k_max":200}}]"#,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gevrey_iterated_growth_bound(s in 1.1f64..3.0, k_max in 20usize..80) {
        let seq = make_gevrey(s, k_max).unwrap();
        prop_assert!(seq.report.m2prime);
        let (la, lh) = (seq.fitted_a.ln(), seq.fitted_h.ln());
        let l = &seq.log_entries;
        for k in 1..k_max {
            for j in 1..=(k_max - k) {
                let jf = j as f64;
                let bound = jf * (la + k as f64 * lh) + lh * jf * (jf + 1.0) / 2.0 + l[k];
                prop_assert!(l[k + j] <= bound + 1e-9 * (1.0 + bound.abs()), "k={} l={}", k, j);
            }
        }
    }

    #[test]
    fn associated_function_shape(s in 1.0f64..3.0, ts in proptest::collection::vec(0.01f64..1e3, 2..12)) {
        let seq = make_gevrey(s, 300).unwrap();
        let m = seq.associated(300);
        let mut ts = ts;
        ts.sort_by(f64::total_cmp);
        let vals: Vec<f64> = ts.iter().map(|&t| m.value(t).unwrap()).collect();
        for (t, v) in ts.iter().zip(&vals) {
            if *t <= 1.0 {
                prop_assert_eq!(*v, 0.0);
            }
        }
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn gevrey_associated_asymptotics(s in 2.0f64..3.0, lt in 4.0f64..5.0) {
        let t = 10f64.powf(lt);
        let cap = (10.0 * t.powf(1.0 / s)).ceil() as usize;
        let seq = make_gevrey(s, cap).unwrap();
        let ratio = seq.associated(cap).value(t).unwrap() / (s * t.powf(1.0 / s));
        prop_assert!((0.8..=1.2).contains(&ratio), "ratio {}", ratio);
    }

    #[test]
    fn gevrey_above_one_is_non_quasianalytic(s in 1.2f64..4.0) {
        let r = quasianalytic_test(&make_gevrey(s, 200).unwrap(), 0.1).unwrap();
        prop_assert_eq!(r.verdict, QaVerdict::NonQuasianalytic);
    }

    #[test]
    fn phase_homogeneity(
        coefs in proptest::collection::vec(-2.0f64..2.0, 5),
        x in proptest::collection::vec(-3.0f64..3.0, 2),
        t in 0.1f64..10.0,
        w in proptest::collection::vec(-1.0f64..1.0, 4),
        lam in 0.05f64..0.5,
        xi in 0.5f64..1e3,
    ) {
        let terms = (0..=4u32).map(|a| (vec![a, 4 - a], coefs[a as usize])).collect();
        let p = PhasePolynomial::new(2, 2, terms).unwrap();
        let tx: Vec<f64> = x.iter().map(|v| v * t).collect();
        let (a, b) = (p.eval(&tx), t.powi(4) * p.eval(&x));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300) * 10.0);
        let d = [Complex64::new(x[0] - w[0], -w[1]), Complex64::new(x[1] - w[2], -w[3])];
        let s = xi.powf(lam);
        let lhs = p.eval_c(&[d[0] * s, d[1] * s]).re;
        let rhs = xi.powf(4.0 * lam) * p.eval_c(&d).re;
        prop_assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs().max(rhs.abs()).max(1e-300));
    }

    #[test]
    fn transform_is_linear(
        a in (-2.0f64..2.0, -2.0f64..2.0),
        b in (-2.0f64..2.0, -2.0f64..2.0),
        x0 in -1.0f64..1.0,
        lo in -1.0f64..0.5,
        len in 0.1f64..1.5,
        tau in -1.5f64..1.5,
        xi in -30.0f64..30.0,
    ) {
        let p = phase1();
        let q = QuadOptions::default();
        let m1: FunctionalExpr = Functional::delta(&[x0]).into();
        let m2: FunctionalExpr = Functional::Density {
            support: CompactBox::interval(lo, lo + len),
            profile: Profile::Poly { monomials: vec![Monomial { beta: vec![1], c: 1.0.into() }, Monomial { beta: vec![0], c: 0.5.into() }] },
        }
        .into();
        let (ca, cb) = (Complex64::new(a.0, a.1), Complex64::new(b.0, b.1));
        let sum = FunctionalExpr::combo(vec![(ca, m1.clone()), (cb, m2.clone())]);
        let f = |m: &FunctionalExpr| fbi(m, &p, &[tau], &[xi], &q).unwrap().value.to_complex();
        let (f1, f2, fs) = (f(&m1), f(&m2), f(&sum));
        let want = ca * f1 + cb * f2;
        let scale = (ca * f1).norm() + (cb * f2).norm();
        prop_assert!((fs - want).norm() <= 1e-10 * scale.max(1e-300));
    }

    #[test]
    fn transform_conjugate_symmetry(lo in -1.0f64..0.5, len in 0.1f64..1.5, tau in -1.5f64..1.5, xi in 0.1f64..40.0) {
        let p = phase1();
        let q = QuadOptions::default();
        let mu: FunctionalExpr = Functional::Density {
            support: CompactBox::interval(lo, lo + len),
            profile: Profile::Poly { monomials: vec![Monomial { beta: vec![2], c: 1.0.into() }] },
        }
        .into();
        let plus = fbi(&mu, &p, &[tau], &[xi], &q).unwrap().value.to_complex();
        let minus = fbi(&mu, &p, &[tau], &[-xi], &q).unwrap().value.to_complex();
        prop_assert!(rel(minus, plus.conj()) <= 1e-10);
    }

    #[test]
    fn pairing_is_linear_and_bounded(
        lo in -1.0f64..0.5,
        len in 0.1f64..0.5,
        v in 0.1f64..3.0,
        k in 0u32..6,
        a in -2.0f64..2.0,
    ) {
        let supp = CompactBox::interval(lo, lo + len);
        let f1 = Functional::Density { support: supp.clone(), profile: Profile::Const { value: v } };
        let f2 = Functional::delta(&[lo]);
        let h = TestFunction::monomial(1, 0, k);
        let one = apply(&f1.clone().into(), &h).unwrap();
        let two = apply(&f2.clone().into(), &h).unwrap();
        let both = apply(&FunctionalExpr::combo(vec![(c(a), f1.into()), (c(1.0), f2.into())]), &h).unwrap();
        prop_assert!((both - (one * a + two)).norm() <= 1e-12 * (1.0 + one.norm() * a.abs() + two.norm()));
        // |x^k| ≤ 1 on the support, so |μ(h)| ≤ volume · sup|f|
        prop_assert!(one.norm() <= supp.volume() * v * (1.0 + 1e-12));
    }

    #[test]
    fn sector_covers_tile(l in 3usize..16, angle in -PI..PI, beta in 0.001f64..0.05, seed in any::<u64>()) {
        let cfg = CoverConfig { n: 2, l, xi0: vec![angle.cos(), angle.sin()], beta, placement: DualPlacement::Bisector };
        match build_cover(&cfg) {
            Ok(cover) => {
                let r = validate_cover(&cover, 1000, seed).unwrap();
                prop_assert!(r.tiling && r.xi0_interior && r.acute);
                prop_assert!(r.overlap_measure < 1e-12);
                prop_assert!((r.angular_sum - 2.0 * PI).abs() < 1e-12);
                prop_assert!(r.dual_ok);
            }
            // wide sectors leave no positive dual constant
            Err(e) => prop_assert!(l == 3 && e.to_string().contains("dual")),
        }
    }

    #[test]
    fn opposing_duals_point_away(l in 6usize..16, angle in -PI..PI, seed in any::<u64>()) {
        let cfg = CoverConfig { n: 2, l, xi0: vec![angle.cos(), angle.sin()], beta: 0.01, placement: DualPlacement::Opposing };
        let cover = build_cover(&cfg).unwrap();
        let r = validate_cover(&cover, 1000, seed).unwrap();
        prop_assert!(r.dual_ok);
        for j in 1..l {
            prop_assert_eq!(r.opposite_ok[j], cover.opposing[j]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn verdicts_respect_lattice_and_scaling(scale in prop_oneof![-1e6f64..-1e-6, 1e-6f64..1e6], x0 in -0.5f64..0.5) {
        let p = phase1();
        let q = QuadOptions::default();
        let cfg = ClassifierConfig::default();
        let conds = lattice_conditions();
        let bases = vec![vec![x0 - 0.5], vec![x0], vec![x0 + 0.5]];
        let spec = GridSpec { base_points: bases.clone(), directions: None, radii: None };
        let mu: FunctionalExpr = Functional::delta(&[x0]).into();
        let scaled = FunctionalExpr::combo(vec![(c(scale), mu.clone())]);
        let wf = classify_grid(&fbi_grid(&mu, &p, &spec, &q).unwrap(), &conds, &cfg).unwrap();
        let ws = classify_grid(&fbi_grid(&scaled, &p, &spec, &q).unwrap(), &conds, &cfg).unwrap();
        prop_assert!(lattice_violations(&wf).is_empty());
        prop_assert!(lattice_violations(&ws).is_empty());
        for (a, b) in wf.verdicts.iter().zip(&ws.verdicts) {
            prop_assert_eq!(&a.covector, &b.covector);
            prop_assert_eq!(a.holds, b.holds);
        }
        // evaluation order: reversed base points give the same verdict per covector
        let rev = GridSpec { base_points: bases.into_iter().rev().collect(), directions: None, radii: None };
        let wr = classify_grid(&fbi_grid(&mu, &p, &rev, &q).unwrap(), &conds, &cfg).unwrap();
        for v in &wf.verdicts {
            let other = wr.verdicts.iter().find(|u| u.covector == v.covector && u.condition == v.condition).unwrap();
            prop_assert_eq!(v.holds, other.holds);
        }
        // the point mass itself is singular in every direction at x0
        let b = wf.verdict(1, 0, fbi_micro::classify::ConditionKind::CInf).unwrap();
        prop_assert_eq!(b.holds, Holds::No);
    }
}

fn drift_operator(a: f64, b: f64, c0: f64) -> Arc<DifferentialOperator> {
    Arc::new(DifferentialOperator {
        n: 1,
        m: 2,
        terms: vec![
            OpTerm { alpha: vec![2], coef: Coef::Const { value: 1.0.into() } },
            OpTerm { alpha: vec![1], coef: Coef::Poly { monomials: vec![Monomial { beta: vec![1], c: a.into() }, Monomial { beta: vec![0], c: b.into() }] } },
            OpTerm { alpha: vec![0], coef: Coef::Exp { a: vec![0.5], c: c0.into() } },
        ],
        basis: Default::default(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parametrix_terms_are_homogeneous(a in -2.0f64..2.0, b in -2.0f64..2.0, c0 in -2.0f64..2.0, z in 0.2f64..2.0, s in prop_oneof![Just(1.0), Just(-1.0)]) {
        let op = drift_operator(a, b, c0);
        for sym in [SymbolExpansion::of_operator(&op), parametrix_symbol(&op, 3)] {
            let e = homogeneity_error(&sym, &[c(z)], &[s]);
            prop_assert!(e <= 1e-8, "error {}", e);
        }
    }

    #[test]
    fn composition_is_associative(
        a in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0),
        b in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0),
        d in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0),
        z in -1.0f64..1.0,
        xi in 1.0f64..50.0,
    ) {
        // differential operators have finite symbol expansions, so a cap of
        // the total order makes both groupings exact
        let p = SymbolExpansion::of_operator(&drift_operator(a.0, a.1, a.2));
        let q = SymbolExpansion::of_operator(&drift_operator(b.0, b.1, b.2));
        let r = SymbolExpansion::of_operator(&drift_operator(d.0, d.1, d.2));
        let left = compose_symbols(&compose_symbols(&p, &q, 6), &r, 6);
        let right = compose_symbols(&p, &compose_symbols(&q, &r, 6), 6);
        let (l, rr) = (left.eval(&[c(z)], &[xi]), right.eval(&[c(z)], &[xi]));
        prop_assert!(rel(l, rr) <= 1e-10, "{} vs {}", l, rr);
    }

    #[test]
    fn characteristic_set_ignores_analytic_factor(
        coefs in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
        zero in 0usize..3,
        ea in (-1.0f64..1.0, -1.0f64..1.0),
        ec in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0],
    ) {
        let mut cs = [coefs.0, coefs.1, coefs.2];
        cs[zero] = 0.0;
        let alphas = [vec![2u32, 0], vec![1, 1], vec![0, 2]];
        let make = |f: &dyn Fn(f64) -> Coef| DifferentialOperator {
            n: 2,
            m: 2,
            terms: alphas.iter().zip(cs).map(|(al, v)| OpTerm { alpha: al.clone(), coef: f(v) }).collect(),
            basis: Default::default(),
        };
        let plain = make(&|v| Coef::Const { value: v.into() });
        let twisted = make(&|v| Coef::Exp { a: vec![ea.0, ea.1], c: (v * ec).into() });
        let xs: Vec<Vec<f64>> = (0..3).flat_map(|i| (0..3).map(move |j| vec![i as f64 * 0.5 - 0.5, j as f64 * 0.5 - 0.5])).collect();
        let sphere = sphere_grid(2, 64);
        let key = |o: &DifferentialOperator| -> Vec<(Vec<u64>, Vec<u64>)> {
            char_set_sample(o, &xs, &sphere, 1e-8)
                .unwrap()
                .into_iter()
                .map(|p| (p.x.iter().map(|v| v.to_bits()).collect(), p.theta.iter().map(|v| v.to_bits()).collect()))
                .collect()
        };
        prop_assert_eq!(key(&plain), key(&twisted));
    }

    #[test]
    fn config_hash_tracks_bytes(pad in 0usize..4, seed in any::<u64>(), over in proptest::option::of(any::<u64>())) {
        use sha2::Digest;
        let body = format!(r#"{{"N": 1,{} "seed": {seed}}}"#, " ".repeat(pad));
        let run = Run::from_bytes(body.as_bytes(), over, ".".into()).unwrap();
        prop_assert_eq!(&run.config_sha256, &hex::encode(sha2::Sha256::digest(body.as_bytes())));
        prop_assert_eq!(run.seed, over.unwrap_or(seed));
        let again = Run::from_bytes(body.as_bytes(), over, ".".into()).unwrap();
        prop_assert_eq!(run.config_sha256, again.config_sha256);
    }
}
