use approx::assert_relative_eq;
use mgspde::audit::*;
use mgspde::Error;
use proptest::prelude::*;

fn radial_space(zmax: f64, cells: usize) -> mgspde::Space {
    let grid: Vec<f64> = (0..=cells).map(|i| zmax * (i as f64 / cells as f64).powi(2)).collect();
    RadialCoefficients::radial().space(&grid).unwrap()
}

fn numeric(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    // composite Simpson on a log-spaced grid
    let n = 20000;
    let (la, lb) = ((1.0 + a).ln(), (1.0 + b).ln());
    let h = (lb - la) / n as f64;
    let g = |t: f64| {
        let z = t.exp() - 1.0;
        f(z) * (z + 1.0)
    };
    let mut s = g(la) + g(lb);
    for i in 1..n {
        s += g(la + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn closed_forms_match_quadrature() {
    let ws = [WeightSpec::power(2.0, 2.5, 1.0), WeightSpec::exp_sqrt(1.5, 1.2, 1.0), WeightSpec::exp(0.7, 0.3)];
    for w in &ws {
        let tail = w.tail_integral(3.0).unwrap().unwrap();
        assert_relative_eq!(tail, numeric(|z| w.value(z), 3.0, 1e7) + w.tail_integral(1e7).unwrap().unwrap(), max_relative = 1e-8);
        assert_relative_eq!(w.moment_integral(2.0, 9.0), numeric(|z| z * w.value(z), 2.0, 9.0), max_relative = 1e-8);
        let h = 1e-4;
        for z in [0.5, 4.0, 30.0] {
            assert_relative_eq!(w.d1(z), (w.value(z + h) - w.value(z - h)) / (2.0 * h), max_relative = 1e-6);
            assert_relative_eq!(w.d2(z), (w.d1(z + h) - w.d1(z - h)) / (2.0 * h), max_relative = 1e-6);
        }
    }
    let c = WeightSpec::custom("(1+z)^-3", |z| {
        let y = 1.0 + z;
        [y.powi(-3), -3.0 * y.powi(-4), 12.0 * y.powi(-5)]
    });
    assert_relative_eq!(c.tail_integral(1.0).unwrap().unwrap(), 0.125, max_relative = 1e-10);
    assert!(WeightSpec::constant(1.0).tail_integral(0.0).unwrap().is_none());
    assert!(WeightSpec::power(1.0, 0.8, 1.0).tail_integral(0.0).unwrap().is_none());
    let flat = WeightSpec::custom("flat", |_| [1.0, 0.0, 0.0]);
    assert!(flat.tail_integral(1.0).unwrap().is_none());
}

#[test]
fn sqrt_gamma_hypothesis() {
    let space = radial_space(200.0, 200);
    let good = hypothesis_gamma_s_check(&WeightSpec::power(1.0, 2.5, 1.0), &space).unwrap();
    assert!(good.pass, "{good:?}");
    assert!(good.tail.is_finite() && good.tail > 0.0);
    let es = hypothesis_gamma_s_check(&WeightSpec::exp_sqrt(1.0, 1.0, 1.0), &space).unwrap();
    assert!(es.pass, "{es:?}");
    let slow = hypothesis_gamma_s_check(&WeightSpec::power(1.0, 1.5, 1.0), &space).unwrap();
    assert!(!slow.pass && !slow.integral_pass && slow.integral.is_infinite());
    assert!(slow.ratio_pass);
    let fast = WeightSpec::custom("exp(-z^2)", |z| {
        let v = (-z * z).exp();
        [v, -2.0 * z * v, (4.0 * z * z - 2.0) * v]
    });
    let r = hypothesis_gamma_s_check(&fast, &space).unwrap();
    assert!(!r.ratio_pass);
    let json = good.report(&WeightSpec::power(1.0, 2.5, 1.0)).to_json().unwrap();
    assert!(json.contains("\"check\": \"hypothesis_gamma_s\"") && json.contains("kappa1"));
}

#[test]
fn decay_of_the_weight() {
    let ladder = [1.0, 10.0, 100.0, 1e3, 1e4];
    assert!(vartheta_decay_check(&WeightSpec::power(1.0, 2.5, 1.0), &ladder, 1e-6).pass);
    assert!(vartheta_decay_check(&WeightSpec::exp_sqrt(1.0, 1.0, 1.0), &ladder, 1e-6).pass);
    let c = vartheta_decay_check(&WeightSpec::constant(1.0), &ladder, 1e-6);
    assert!(!c.pass);
    assert_eq!(c.report(&WeightSpec::constant(1.0), 1e-6).verdict, "FAIL");
}

#[test]
fn noncompact_condition_examples() {
    let h = WeightSpec::power(1.0, 1.5, 0.0);
    let ladder: Vec<f64> = (0..8).map(|i| 10.0 * 4f64.powi(i)).collect();
    let ok = noncompact_condition_check(&h, 1.0, 0.1, &ladder).unwrap();
    assert!(ok.all_hold, "{ok:?}");
    let bad = noncompact_condition_check(&h, 1.0, 2.0, &ladder).unwrap();
    assert!(bad.rows.iter().all(|r| !r.holds));
    let e = noncompact_condition_check(&WeightSpec::exp(1.0, 1.0), 1.0, 0.1, &ladder).unwrap();
    assert!(!e.holds_eventually);
    assert!(matches!(noncompact_condition_check(&WeightSpec::constant(1.0), 1.0, 0.1, &ladder), Err(Error::WeightNotIntegrable(_))));
    assert!(noncompact_condition_check(&h, 1.0, 0.1, &[0.5]).is_err());
}

#[test]
fn witness_sequence_properties() {
    let h = WeightSpec::power(1.0, 1.5, 1.0);
    let seq = build_witness_sequence(&h, 1.0, 0.5, 4, 8.0).unwrap();
    assert_eq!(seq.len(), 4);
    for n in 0..seq.len() {
        assert_relative_eq!(seq.normalizers[n].powi(2) * seq.tail_masses[n], 1.0, max_relative = 1e-12);
        let (l2, d) = seq.f_norm_parts(n);
        assert!(l2 + d <= seq.f_bound(), "{n}: {l2} + {d} > {}", seq.f_bound());
        assert!(l2 >= 1.0);
        if n > 0 {
            assert!(seq.radii[n] - seq.eps > seq.radii[n - 1]);
            assert!(seq.tail_masses[n] <= 0.25 * seq.tail_masses[n - 1]);
        }
    }
    assert!(seq.separation_bound() > 0.5);
    let a = witness_audit(&seq, &RadialCoefficients::radial(), &h).unwrap();
    assert!(a.witnessed, "{a:?}");
    assert!(a.min_distance() >= 0.9 * (std::f64::consts::PI * seq.separation_bound()).sqrt());
    // away from the zero function
    for v in &a.h_norms {
        assert!(*v >= 0.99 * std::f64::consts::PI.sqrt());
    }
    assert!(a.sqrt_unbounded);
    assert!(build_witness_sequence(&WeightSpec::constant(1.0), 1.0, 0.1, 3, 8.0).is_err());
    assert!(build_witness_sequence(&h, 1.0, 5.0, 3, 8.0).is_err());
}

#[test]
fn witness_is_stable_under_refinement() {
    let h = WeightSpec::power(1.0, 1.8, 1.0);
    let seq = build_witness_sequence(&h, 1.0, 0.25 / 0.8, 3, 8.0).unwrap();
    let coeffs = RadialCoefficients::radial();
    let base = witness_audit(&seq, &coeffs, &h).unwrap();
    let mut fine = seq.clone();
    let mut g = Vec::new();
    for w in seq.grid.windows(2) {
        g.push(w[0]);
        g.push(0.5 * (w[0] + w[1]));
    }
    g.push(seq.z_max());
    fine.grid = g;
    fine.values = (0..fine.len()).map(|n| fine.grid.iter().map(|&z| fine.eval(n, z)).collect()).collect();
    let refined = witness_audit(&fine, &coeffs, &h).unwrap();
    let mut long = seq.clone();
    long.grid.push(2.0 * seq.z_max());
    long.values = (0..long.len()).map(|n| long.grid.iter().map(|&z| long.eval(n, z)).collect()).collect();
    let longer = witness_audit(&long, &coeffs, &h).unwrap();
    for other in [&refined, &longer] {
        assert!(other.witnessed);
        for (a, b) in base.w_norms.iter().zip(&other.w_norms) {
            assert_relative_eq!(a, b, max_relative = 1e-3);
        }
        for (a, b) in base.distances.iter().zip(&other.distances) {
            assert_relative_eq!(a.2, b.2, max_relative = 1e-3);
        }
    }
}

#[test]
fn embedding_dichotomy_splits_at_two() {
    let rows = embedding_dichotomy(&[1.2, 1.5, 1.8, 2.2, 2.5, 3.0], 4).unwrap();
    for r in &rows {
        if r.kappa1 < 2.0 {
            assert!(r.witnessed(), "kappa {}", r.kappa1);
            assert!(!r.gamma_s.integral_pass);
            assert!(r.escape.is_none());
        } else {
            assert!(r.gamma_s.pass, "kappa {}: {:?}", r.kappa1, r.gamma_s);
            assert!(r.escape_vanishes(), "kappa {}: {:?}", r.kappa1, r.escape);
        }
    }
}

#[test]
fn escape_audit_edge_cases() {
    let space = radial_space(100.0, 400);
    let compact = TailedFunction { f: space.function(|z, _| (1.0 - z / 5.0).max(0.0)), tail: 0.0 };
    let ladder = [10.0, 20.0, 40.0, 80.0];
    let w = WeightSpec::power(1.0, 2.5, 1.0);
    let e = compactness_escape_audit(&w, &space, std::slice::from_ref(&compact), &ladder).unwrap();
    assert!(e.rows.iter().all(|r| r.tail_mass == 0.0));
    assert!(e.dominated);
    let flat = compactness_escape_audit(&WeightSpec::constant(1.0), &space, &[compact], &ladder).unwrap();
    assert!(!flat.vanishing);
    assert!(flat.report(&WeightSpec::constant(1.0)).verdict.starts_with("FLAGGED"));
    assert!(compactness_escape_audit(&w, &space, &[], &ladder).is_err());
}

#[test]
fn weight_names() {
    let mut p = std::collections::BTreeMap::new();
    p.insert("kappa1".to_string(), 3.0);
    let w = WeightSpec::from_name("power", &p).unwrap();
    assert_relative_eq!(w.value(1.0), 0.125);
    assert!(matches!(WeightSpec::from_name("cubic", &p), Err(Error::Config(_))));
    p.insert("c0".to_string(), -1.0);
    assert!(WeightSpec::from_name("exp", &p).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn power_tails_are_additive(k in 1.1f64..4.0, a in 0.0f64..50.0, d in 0.1f64..50.0) {
        let w = WeightSpec::power(1.0, k, 1.0);
        let whole = w.tail_integral(a).unwrap().unwrap();
        let split = w.integral(a, a + d).unwrap() + w.tail_integral(a + d).unwrap().unwrap();
        prop_assert!((whole - split).abs() <= 1e-10 * whole);
        let s = w.sqrt();
        prop_assert!((s.value(a).powi(2) - w.value(a)).abs() <= 1e-12 * w.value(a));
    }

    #[test]
    fn ratio_is_nonnegative(z in 0.0f64..1e4, k in 0.5f64..3.0) {
        prop_assert!(WeightSpec::exp_sqrt(1.0, k, 1.0).ratio(z) >= 0.0);
        prop_assert!(WeightSpec::power(1.0, k, 1.0).ratio(z) >= 0.0);
    }
}
