mod common;

use common::*;
use mgspde::generator::DiscreteGenerator;
use mgspde::skeleton::*;
use mgspde::spde::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn ldp_problem(m: &SpdeModel<f64>, target: f64) -> EndpointProblem<f64> {
    EndpointProblem::new(bump(&m.space), bump(&m.space), target, Regime::Ldp)
}

fn wavy(m: &SpdeModel<f64>, amp: f64) -> Control {
    Control::from_fn(m.steps, m.n_modes(), m.dt, |t, j| amp * (1.0 + t * (j as f64 + 1.0)).sin())
}

#[test]
fn energy_examples() {
    let mut c = Control::zeros(10, 3, 0.1);
    assert_eq!(control_energy(&c), 0.0);
    c.set(4, 2, 1.0);
    assert!((c.energy() - 0.05).abs() < 1e-15);
    let w = Control::from_fn(10, 3, 0.1, |t, j| t - j as f64);
    assert!((w.scaled(3.0).energy() - 9.0 * w.energy()).abs() < 1e-12);
}

#[test]
fn zero_control_gives_the_deterministic_limit() {
    let m = rect_model(ReactionSpec::sine(1.2, 0.4), 0.01, 1.0);
    let u0 = bump(&m.space);
    let z = solve_skeleton_ldp(&m, &u0, &Control::for_model(&m)).unwrap();
    let d = solve_deterministic(&m, &m.space.from_values(u0.clone()).unwrap()).unwrap();
    assert_eq!(z.terminal, d.terminal);
    let base = m.deterministic_trajectory(&u0).unwrap();
    let r = solve_skeleton_mdp(&m, &base, &Control::for_model(&m)).unwrap();
    assert!(r.terminal.iter().all(|v| *v == 0.0));
}

#[test]
fn sup_norm_grows_with_energy() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.3), 0.01, 1.0);
    let u0 = m.space.zeros().values;
    let phi = wavy(&m, 1.0);
    let sups: Vec<f64> = [1.0, 2.0, 4.0].iter().map(|&c| solve_skeleton_ldp(&m, &u0, &phi.scaled(c)).unwrap().sup_norm).collect();
    assert!(sups[0] < sups[1] && sups[1] < sups[2], "{sups:?}");
}

/// Discrete Duhamel sum through the generalized eigenbasis of `(K, M)`.
#[test]
fn linear_skeleton_matches_duhamel_sum() {
    let m = rect_model(ReactionSpec::zero(), 0.02, 1.0);
    let gen = DiscreteGenerator::assemble(&m.space).unwrap();
    let n = gen.n_dofs();
    let s: Vec<f64> = gen.mass.iter().map(|v| v.sqrt()).collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in gen.stiffness.row(i) {
            a[(i, j)] = v / (s[i] * s[j]);
        }
    }
    let eig = SymmetricEigen::new(a);
    let (th, dt) = (0.5, m.dt);
    let amp: Vec<f64> = eig.eigenvalues.iter().map(|l| (1.0 - (1.0 - th) * dt * l) / (1.0 + th * dt * l)).collect();
    let inv: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 / (1.0 + th * dt * l)).collect();
    let to_eig = |x: &[f64]| eig.eigenvectors.transpose() * DVector::from_iterator(n, x.iter().zip(&s).map(|(v, w)| v * w));
    let u0 = bump(&m.space);
    let phi = wavy(&m, 1.5);
    let mut acc: DVector<f64> = to_eig(&u0).component_mul(&DVector::from_iterator(n, amp.iter().map(|r| r.powi(m.steps as i32))));
    for step in 0..m.steps {
        let mut f = vec![0.0; n];
        for (j, e) in m.modes.iter().enumerate() {
            for i in 0..n {
                f[i] += e[i] * phi.get(step, j) * dt * gen.mass[i];
            }
        }
        // A⁻¹M f in eigen coordinates: M^{1/2}(A⁻¹M f) = Q diag(inv) Qᵀ M^{-1/2}(M f)
        let mf: Vec<f64> = f.iter().zip(&s).map(|(v, w)| v / (w * w)).collect();
        let w = to_eig(&mf);
        let k = (m.steps - 1 - step) as i32;
        for i in 0..n {
            acc[i] += w[i] * inv[i] * amp[i].powi(k);
        }
    }
    let back = &eig.eigenvectors * acc;
    let oracle: Vec<f64> = (0..n).map(|i| back[i] / s[i]).collect();
    let z = solve_skeleton_ldp(&m, &u0, &phi).unwrap();
    assert!(max_diff(&z.terminal, &oracle) < 1e-8, "{}", max_diff(&z.terminal, &oracle));
}

#[test]
fn mdp_skeleton_is_linear_in_the_control() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.5), 0.01, 1.0);
    let base = m.deterministic_trajectory(&bump(&m.space)).unwrap();
    let (p1, p2) = (wavy(&m, 1.0), Control::from_fn(m.steps, m.n_modes(), m.dt, |t, j| t * t - j as f64));
    let r1 = solve_skeleton_mdp(&m, &base, &p1).unwrap();
    let r2 = solve_skeleton_mdp(&m, &base, &p2).unwrap();
    let r12 = solve_skeleton_mdp(&m, &base, &p1.plus(&p2).unwrap()).unwrap();
    let sum: Vec<f64> = r1.terminal.iter().zip(&r2.terminal).map(|(a, b)| a + b).collect();
    assert!(max_diff(&r12.terminal, &sum) < 1e-10);
}

#[test]
fn mdp_skeleton_is_the_derivative_of_the_ldp_skeleton() {
    for reaction in [ReactionSpec::linear(-0.7), ReactionSpec::sine(1.0, 0.0)] {
        let m = rect_model(reaction.clone(), 0.01, 1.0);
        let u0 = bump(&m.space);
        let base = m.deterministic_trajectory(&u0).unwrap();
        let phi = wavy(&m, 1.0);
        let r = solve_skeleton_mdp(&m, &base, &phi).unwrap().terminal;
        let errs: Vec<f64> = [1e-2, 5e-3]
            .iter()
            .map(|&h| {
                let z = solve_skeleton_ldp(&m, &u0, &phi.scaled(h)).unwrap().terminal;
                let q: Vec<f64> = z.iter().zip(base.last().unwrap()).map(|(a, b)| (a - b) / h).collect();
                max_diff(&q, &r)
            })
            .collect();
        if reaction.name == "linear" {
            assert!(errs[0] < 1e-10, "{errs:?}");
        } else {
            let ratio = errs[0] / errs[1];
            assert!((1.7..2.3).contains(&ratio), "{errs:?}");
        }
    }
}

#[test]
fn oscillating_controls_converge_weakly() {
    let m = rect_model(ReactionSpec::zero(), 0.0005, 1.0);
    let u0 = bump(&m.space);
    let phi = wavy(&m, 1.0);
    let z = solve_skeleton_ldp(&m, &u0, &phi).unwrap();
    let dists: Vec<f64> = [2.0, 8.0, 32.0]
        .iter()
        .map(|&k| {
            let osc = Control::from_fn(m.steps, m.n_modes(), m.dt, |t, _| 2f64.sqrt() * (2.0 * std::f64::consts::PI * k * t).sin());
            let zm = solve_skeleton_ldp(&m, &u0, &phi.plus(&osc).unwrap()).unwrap();
            zm.snapshots.iter().zip(&z.snapshots).map(|(a, b)| {
                let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                m.norm(&d)
            }).fold(0.0, f64::max)
        })
        .collect();
    assert!(dists[0] > dists[1] && dists[1] > dists[2], "{dists:?}");
    assert!(dists[2] < 0.1 * dists[0], "{dists:?}");
}

#[test]
fn unperturbed_target_costs_nothing() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.5), 0.02, 1.0);
    let p = ldp_problem(&m, 0.0);
    let (f0, _) = endpoint_value_and_gradient(&p, &m, &Control::for_model(&m)).unwrap();
    let p = ldp_problem(&m, f0);
    let est = minimize_rate_endpoint(&p, &m, RateMode::Adjoint).unwrap();
    assert_eq!(est.value, 0.0);
    assert!(est.control.values.iter().all(|v| *v == 0.0));
}

#[test]
fn adjoint_rate_matches_the_lq_oracle() {
    for (reaction, regime) in [(ReactionSpec::zero(), Regime::Ldp), (ReactionSpec::linear(-0.8), Regime::Ldp), (ReactionSpec::linear(-0.8), Regime::Mdp)] {
        let m = rect_model(reaction, 0.02, 1.0);
        let mut p = ldp_problem(&m, 0.0);
        p.regime = regime;
        let (f0, _) = endpoint_value_and_gradient(&p, &m, &Control::for_model(&m)).unwrap();
        p.target = f0 + 0.3;
        let oracle = minimize_rate_endpoint(&p, &m, RateMode::LqOracle).unwrap();
        let adj = minimize_rate_endpoint(&p, &m, RateMode::Adjoint).unwrap();
        assert!(oracle.residual < 1e-10);
        assert!(((adj.value - oracle.value) / oracle.value).abs() < 0.01, "{} vs {}", adj.value, oracle.value);
        assert!(adj.residual <= p.tol * 0.3 + 1e-12);
        p.target = f0 + 0.6;
        let doubled = minimize_rate_endpoint(&p, &m, RateMode::LqOracle).unwrap();
        assert!((doubled.value / oracle.value - 4.0).abs() < 1e-9);
    }
}

#[test]
fn lq_oracle_refuses_nonlinear_reactions() {
    let m = rect_model(ReactionSpec::sine(1.0, 0.0), 0.02, 1.0);
    assert!(minimize_rate_endpoint(&ldp_problem(&m, 1.0), &m, RateMode::LqOracle).is_err());
    let mut p = ldp_problem(&m, 1.0);
    p.psi = vec![0.0; p.psi.len()];
    assert!(minimize_rate_endpoint(&p, &m, RateMode::Adjoint).is_err());
}

#[test]
fn nonlinear_rate_beats_any_scaled_linear_guess() {
    let m = rect_model(ReactionSpec::sine(1.5, 0.4), 0.02, 1.0);
    let p0 = ldp_problem(&m, 0.0);
    let (f0, _) = endpoint_value_and_gradient(&p0, &m, &Control::for_model(&m)).unwrap();
    let p = ldp_problem(&m, f0 + 0.2);
    let est = minimize_rate_endpoint(&p, &m, RateMode::Adjoint).unwrap();
    assert!(est.value > 0.0 && est.residual <= 0.2 * p.tol + 1e-12);
    assert!(!est.trace.is_empty());
}

#[test]
fn gradient_check_on_the_reaction_suite() {
    let lin = rect_model(ReactionSpec::linear(-0.5), 0.02, 1.0);
    let phi = wavy(&lin, 0.7);
    let err = gradient_check(&ldp_problem(&lin, 0.0), &lin, &phi, 10, 1e-3, 1).unwrap();
    assert!(err < 1e-8, "linear: {err}");
    for reaction in [ReactionSpec::sine(1.0, 0.0), ReactionSpec::sine(1.0, 0.5), ReactionSpec::tanh(1.0, 0.5), ReactionSpec::holder(1.0)] {
        let m = rect_model(reaction.clone(), 0.02, 1.0);
        let phi = wavy(&m, 0.7);
        for regime in [Regime::Ldp, Regime::Mdp] {
            let mut p = ldp_problem(&m, 0.0);
            p.regime = regime;
            let err = gradient_check(&p, &m, &phi, 10, 1e-5, 2).unwrap();
            assert!(err < 1e-5, "{}: {err}", reaction.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn feasible_controls_cost_at_least_the_rate(seed in 0u64..10_000, shift in -1.0f64..1.0) {
        let m = rect_model(ReactionSpec::linear(-0.8), 0.05, 1.0);
        let p0 = ldp_problem(&m, 0.0);
        let (f0, grad) = endpoint_value_and_gradient(&p0, &m, &Control::for_model(&m)).unwrap();
        let p = ldp_problem(&m, f0 + shift);
        let oracle = minimize_rate_endpoint(&p, &m, RateMode::LqOracle).unwrap();
        // random control, corrected along the gradient to hit the target exactly
        let mut s = mgspde::noise::IncrementStream::new(seed, 1);
        let mut c = Control::for_model(&m);
        c.values.iter_mut().for_each(|v| *v = s.next_normal());
        let (f, _) = endpoint_value_and_gradient(&p, &m, &c).unwrap();
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let k = (f0 + shift - f) / g2;
        c.values.iter_mut().zip(&grad).for_each(|(v, g)| *v += k * g);
        let (fc, _) = endpoint_value_and_gradient(&p, &m, &c).unwrap();
        prop_assert!((fc - p.target).abs() < 1e-9);
        prop_assert!(c.energy() >= oracle.value * 0.99);
    }
}
