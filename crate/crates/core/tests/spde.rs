mod common;

use common::*;
use mgspde::metric_graph::GraphWeight;
use mgspde::noise::sample_increments;
use mgspde::skeleton::*;
use mgspde::spde::*;
use std::collections::BTreeMap;

#[test]
fn reaction_suite_satisfies_its_constants() {
    let p = BTreeMap::new();
    for name in ReactionSpec::registry() {
        let r = ReactionSpec::from_name(name, &p).unwrap();
        r.check(4.0, 161).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    ReactionSpec::sine(0.7, 0.4).check(6.0, 201).unwrap();
    ReactionSpec::holder(0.3).check(2.0, 201).unwrap();
    let mut wrong = ReactionSpec::sine(2.0, 0.0);
    wrong.lip_b = 1.0;
    assert!(wrong.check(3.0, 61).is_err());
    assert!(ReactionSpec::from_name("cubic", &p).is_err());
    let bad: BTreeMap<String, f64> = [("alpha0".to_string(), 1.5)].into();
    assert!(ReactionSpec::from_name("holder", &bad).is_err());
}

#[test]
fn zero_reaction_preserves_constants() {
    let m = rect_model(ReactionSpec::zero(), 0.01, 1.0);
    let u0 = m.space.constant(0.7);
    let p = solve_deterministic(&m, &u0).unwrap();
    assert!(max_diff(&p.terminal, &u0.values) < 1e-13);
    assert!(p.snapshots.iter().all(|s| max_diff(s, &u0.values) < 1e-13));
}

#[test]
fn linear_decay_of_a_constant() {
    let c = 1.3;
    for dt in [0.02, 0.01] {
        let m = rect_model(ReactionSpec::linear(-1.0), dt, 1.0);
        let p = solve_deterministic(&m, &m.space.constant(c)).unwrap();
        let exact = c * (-1.0f64).exp();
        let err = p.terminal.iter().map(|v| (v - exact).abs()).fold(0.0, f64::max);
        assert!(err <= c * dt, "dt {dt}: error {err}");
        assert!(err >= 0.1 * c * dt);
    }
}

#[test]
fn deterministic_self_convergence_is_first_order() {
    let run = |dt: f64| {
        let m = rect_model(ReactionSpec::sine(1.5, 0.0), dt, 1.0);
        let u0 = bump(&m.space);
        solve_deterministic(&m, &m.space.from_values(u0).unwrap()).unwrap().terminal
    };
    let reference = run(0.01 / 8.0);
    let e1 = max_diff(&run(0.02), &reference);
    let e2 = max_diff(&run(0.01), &reference);
    assert!(e1 / e2 >= 2.0, "errors {e1} {e2}");
}

#[test]
fn snapshots_are_thinned_and_finite() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.3), 0.001, 1.0);
    let u0 = m.space.from_values(bump(&m.space)).unwrap();
    let p = solve_spde(&m, &u0, 0.1, 3, 0).unwrap();
    assert!(p.snapshots.len() <= MAX_SNAPSHOTS);
    assert_eq!(p.snapshots.len(), p.times.len());
    assert!((p.times.last().unwrap() - 1.0).abs() < 1e-12);
    assert!(p.snapshots.iter().flatten().all(|v| v.is_finite()));
    let last = m.norm(&p.terminal);
    assert!(p.sup_norm >= last);
}

#[test]
fn zero_noise_equals_deterministic_bitwise() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.5), 0.01, 1.0);
    let u0 = m.space.from_values(bump(&m.space)).unwrap();
    let d = solve_deterministic(&m, &u0).unwrap();
    let s = solve_spde(&m, &u0, 0.0, 11, 4).unwrap();
    assert_eq!(d.snapshots, s.snapshots);
    assert_eq!(d.terminal, s.terminal);
}

#[test]
fn runs_are_reproducible() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.5), 0.01, 1.0);
    let u0 = m.space.from_values(bump(&m.space)).unwrap();
    let a = solve_spde(&m, &u0, 0.05, 99, 7).unwrap();
    let b = solve_spde(&m, &u0, 0.05, 99, 7).unwrap();
    let c = solve_spde(&m, &u0, 0.05, 99, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.terminal, c.terminal);
    assert_eq!(a.seed, Some((99, 7)));
}

#[test]
fn constant_mode_gives_the_brownian_variance() {
    let geo = narrow(&rect(), 16);
    let space = geo.space();
    let q = 0.8;
    let basis = constant_basis(space, q);
    let (eps, horizon) = (0.3, 1.0);
    let m = SpdeModel::new(space, ReactionSpec::zero(), &basis, GraphWeight::unit(), 0.05, 0.5, horizon).unwrap();
    let psi = bump(space);
    let pair = m.pairing(&psi);
    let mass: f64 = m.pairing(&vec![1.0; psi.len()]).iter().zip(&psi).map(|(a, b)| a * b).sum();
    let oracle = eps * horizon * q * q * mass * mass;
    let n = 10_000;
    let u0 = space.zeros();
    let xs: Vec<f64> = (0..n).map(|i| {
        let p = solve_spde(&m, &u0, eps, 2024, i as u64).unwrap();
        p.terminal.iter().zip(&pair).map(|(a, b)| a * b).sum()
    }).collect();
    let (mean, var) = mean_var(&xs);
    let se = oracle * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((var - oracle).abs() <= 3.0 * se, "var {var} oracle {oracle} se {se}");
    assert!(mean.abs() <= 4.0 * (oracle / n as f64).sqrt());
}

#[test]
fn linear_additive_variance_matches_the_semigroup_sum() {
    let m = model(&rect(), 16, 4, ReactionSpec::linear(-0.5), 0.05, 1.0);
    let psi = bump(&m.space);
    let (sigma2, _) = lq_sigma2(&m, &psi).unwrap();
    let pair = m.pairing(&psi);
    let eps = 0.2;
    let u0 = m.space.zeros();
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
        .map(|i| solve_spde(&m, &u0, eps, 5, i).unwrap().terminal.iter().zip(&pair).map(|(a, b)| a * b).sum())
        .collect();
    let (_, var) = mean_var(&xs);
    let oracle = eps * sigma2;
    let se = oracle * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((var - oracle).abs() <= 3.0 * se, "var {var} oracle {oracle}");

    // deviation process of the same runs: variance σ²/λ²
    let lambda = 3.0;
    let det = solve_deterministic(&m, &u0).unwrap();
    let ys: Vec<f64> = (0..n)
        .map(|i| {
            let p = solve_spde(&m, &u0, eps, 5, i).unwrap();
            let x = deviation_path(&p, &det, eps, lambda).unwrap();
            x.terminal.iter().zip(&pair).map(|(a, b)| a * b).sum()
        })
        .collect();
    let (_, vy) = mean_var(&ys);
    let oy = sigma2 / (lambda * lambda);
    assert!((vy - oy).abs() <= 3.0 * oy * (2.0 / (n as f64 - 1.0)).sqrt(), "var {vy} oracle {oy}");
}

#[test]
fn mdp_process_in_the_linear_case_has_variance_sigma2_over_lambda2() {
    let m = model(&rect(), 16, 4, ReactionSpec::linear(-0.5), 0.05, 1.0);
    let psi = bump(&m.space);
    let (sigma2, _) = lq_sigma2(&m, &psi).unwrap();
    let pair = m.pairing(&psi);
    let u0 = m.deterministic_trajectory(&m.space.constant(0.5).values).unwrap();
    let (eps, lambda) = (0.01, 2.5);
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
        .map(|i| solve_mdp_controlled(&m, &u0, eps, lambda, None, 17, i).unwrap().terminal.iter().zip(&pair).map(|(a, b)| a * b).sum())
        .collect();
    let (_, var) = mean_var(&xs);
    let oracle = sigma2 / (lambda * lambda);
    assert!((var - oracle).abs() <= 3.0 * oracle * (2.0 / (n as f64 - 1.0)).sqrt(), "var {var} oracle {oracle}");
}

#[test]
fn null_control_reproduces_the_uncontrolled_path() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.5), 0.01, 1.0);
    let u0 = m.space.from_values(bump(&m.space)).unwrap();
    let v = Control::for_model(&m);
    let a = solve_spde(&m, &u0, 0.05, 1, 2).unwrap();
    let b = solve_controlled(&m, &u0, 0.05, &v, 1, 2).unwrap();
    assert_eq!(a.terminal, b.terminal);
    assert_eq!(b.log_weight, 0.0);
    let short = Control::zeros(m.steps - 1, m.n_modes(), m.dt);
    assert!(matches!(solve_controlled(&m, &u0, 0.05, &short, 1, 2), Err(mgspde::Error::Sample { .. })));
}

#[test]
fn zero_noise_controlled_equals_skeleton() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.5), 0.01, 1.0);
    let u0 = m.space.from_values(bump(&m.space)).unwrap();
    let v = Control::from_fn(m.steps, m.n_modes(), m.dt, |t, j| (t * (j + 1) as f64).cos());
    let a = solve_controlled(&m, &u0, 0.0, &v, 1, 2).unwrap();
    let z = solve_skeleton_ldp(&m, &u0.values, &v).unwrap();
    assert!(max_diff(&a.terminal, &z.terminal) < 1e-10);
    let states = skeleton_states(&m, &u0.values, &v, None).unwrap();
    assert!(max_diff(states.last().unwrap(), &z.terminal) < 1e-12);
}

#[test]
fn mdp_at_zero_noise_equals_linear_skeleton() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.5), 0.01, 1.0);
    let base = m.deterministic_trajectory(&bump(&m.space)).unwrap();
    let v = Control::from_fn(m.steps, m.n_modes(), m.dt, |t, j| (t + j as f64).sin());
    let r = solve_skeleton_mdp(&m, &base, &v).unwrap();
    let small = m.solve_mdp(&base, 1e-14, 1.0, Some(&v), None).unwrap();
    assert!(max_diff(&small.terminal, &r.terminal) < 1e-6);
}

#[test]
fn deviation_path_identities() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.0), 0.01, 1.0);
    let u0 = m.space.from_values(bump(&m.space)).unwrap();
    let d = solve_deterministic(&m, &u0).unwrap();
    let z = deviation_path(&d, &d, 0.01, 5.0).unwrap();
    assert!(z.terminal.iter().chain(z.snapshots.iter().flatten()).all(|v| *v == 0.0));
    let eps = 0.04;
    let s = solve_spde(&m, &u0, eps, 1, 1).unwrap();
    let x = deviation_path(&s, &d, eps, 1.0 / eps.sqrt()).unwrap();
    let direct: Vec<f64> = s.terminal.iter().zip(&d.terminal).map(|(a, b)| a - b).collect();
    assert!(max_diff(&x.terminal, &direct) < 1e-14);
    let other = rect_model(ReactionSpec::zero(), 0.02, 1.0);
    let o = solve_deterministic(&other, &other.space.from_values(bump(&other.space)).unwrap()).unwrap();
    assert!(deviation_path(&s, &o, eps, 1.0).is_err());
}

#[test]
fn coupled_paths_deviate_like_sqrt_eps() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.3), 0.01, 1.0);
    let u0 = m.space.from_values(bump(&m.space)).unwrap();
    let det = solve_deterministic(&m, &u0).unwrap();
    let eps = [1e-2, 1e-3, 1e-4];
    let mut ys = Vec::new();
    for &e in &eps {
        let mut acc = 0.0;
        for i in 0..200 {
            let s = solve_spde(&m, &u0, e, 8, i).unwrap();
            let sup = s.snapshots.iter().zip(&det.snapshots).map(|(a, b)| {
                let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                m.norm(&d)
            }).fold(0.0, f64::max);
            acc += sup;
        }
        ys.push((acc / 200.0).ln());
    }
    let xs: Vec<f64> = eps.iter().map(|e: &f64| e.ln()).collect();
    let (slope, _, _) = mgspde::linalg::linear_fit(&xs, &ys);
    assert!((slope - 0.5).abs() <= 0.1, "slope {slope}");
}

#[test]
fn multiplicative_noise_converges_strongly() {
    // same Brownian path on nested grids
    let fine_dt = 0.01 / 16.0;
    let horizon = 0.5;
    let reaction = ReactionSpec::sine(1.0, 0.8);
    let fine = rect_model(reaction.clone(), fine_dt, horizon);
    let u0 = bump(&fine.space);
    let samples = 40;
    let mut errs = [0.0f64; 2];
    for i in 0..samples {
        let w = sample_increments(fine.n_modes(), fine.steps, fine_dt, 31, i).unwrap();
        let reference = fine.solve_forced(&u0, Forcing { increments: Some(&w), ..Forcing::seeded(1.0, 0, 0) }).unwrap().terminal;
        for (k, f) in [4usize, 2].iter().enumerate() {
            let m = rect_model(reaction.clone(), fine_dt * *f as f64 * 2.0, horizon);
            let wc = w.coarsen(f * 2).unwrap();
            let t = m.solve_forced(&u0, Forcing { increments: Some(&wc), ..Forcing::seeded(1.0, 0, 0) }).unwrap().terminal;
            let d: Vec<f64> = t.iter().zip(&reference).map(|(a, b)| a - b).collect();
            errs[k] += m.norm(&d).powi(2) / samples as f64;
        }
    }
    // dt ratio 2: order ≥ 0.5 means the rms error drops by at least √2 (minus sampling slack)
    let ratio = (errs[0] / errs[1]).sqrt();
    assert!(ratio >= 2f64.sqrt() * 0.9, "errors {errs:?}");
}

#[test]
fn initial_conditions_registry() {
    let m = rect_model(ReactionSpec::zero(), 0.1, 1.0);
    let p = BTreeMap::new();
    for name in ["zero", "constant", "bump", "cos", "edge_index"] {
        let f = initial_condition(&m.space, name, &p).unwrap();
        assert!(f.is_finite());
    }
    assert!(initial_condition(&m.space, "spike", &p).is_err());
    assert!(SpdeModel::new(&m.space, ReactionSpec::zero(), &constant_basis(&m.space, 1.0), GraphWeight::unit(), 0.3, 0.5, 1.0).is_err());
}
