use approx::assert_relative_eq;
use mgspde::generator::*;
use mgspde::metric_graph::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use std::f64::consts::PI;

fn unit_edge(n: usize) -> GraphSpace<f64> {
    let g = MetricGraph::interval(0.0, 1.0, n, VertexKind::Minimum, VertexKind::Maximum);
    let c = EdgeCoefficientTable::unit(&g);
    GraphSpace::new(g, c).unwrap()
}

fn radial(cells: usize, z_max: f64) -> GraphSpace<f64> {
    let grid = geometric_grid(0.0, z_max, cells, 1e-3);
    let g = MetricGraph::new(vec![(VertexKind::Minimum, 0.0), (VertexKind::Infinity, f64::INFINITY)], vec![(0, 1, grid)]);
    let c = EdgeCoefficientTable::uniform(&g, |z| 4.0 * PI * z, |_| PI);
    GraphSpace::new(g, c).unwrap()
}

fn y_space(cells: usize) -> GraphSpace<f64> {
    let g = MetricGraph::y_graph(cells);
    let c = EdgeCoefficientTable::uniform(&g, |_| 1.0, |_| 1.0);
    GraphSpace::new(g, c).unwrap()
}

#[test]
fn stiffness_is_exactly_symmetric_and_kills_constants() {
    for s in [unit_edge(17), y_space(9), radial(40, 10.0)] {
        let gen = DiscreteGenerator::assemble(&s).unwrap();
        assert_eq!(gen.stiffness.asymmetry(), 0.0);
        let k1 = gen.stiffness.apply(&vec![1.0; gen.n_dofs()]);
        let scale = gen.stiffness.row(0).map(|(_, v)| v.abs()).fold(0.0, f64::max);
        assert!(k1.iter().all(|v| v.abs() <= 1e-13 * scale.max(1.0)), "{k1:?}");
        assert!(gen.mass.iter().all(|m| *m > 0.0));
    }
}

#[test]
fn neumann_eigenvalue_converges_at_second_order() {
    let target = PI * PI / 2.0;
    let errs: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| (DiscreteGenerator::assemble(&unit_edge(n)).unwrap().smallest_positive_eigenvalue().unwrap() - target).abs())
        .collect();
    let order = (errs[1] / errs[2]).log2();
    assert!(order >= 1.8, "order {order} errors {errs:?}");
    assert!(errs[2] < 1e-3);
}

#[test]
fn first_two_neumann_modes_are_orthogonal() {
    let s = unit_edge(24);
    let gen = DiscreteGenerator::assemble(&s).unwrap();
    let n = gen.n_dofs();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in gen.stiffness.row(i) {
            a[(i, j)] = v / (gen.mass[i] * gen.mass[j]).sqrt();
        }
    }
    let eig = SymmetricEigen::new(a);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| eig.eigenvalues[x].partial_cmp(&eig.eigenvalues[y]).unwrap());
    let mode = |m: usize| s.from_values((0..n).map(|i| eig.eigenvectors[(i, idx[m])] / gen.mass[i].sqrt()).collect()).unwrap();
    let (f0, f1) = (mode(0), mode(1));
    let ip = inner_product_h(&s, &f0, &f1, &GraphWeight::unit()).unwrap();
    assert!(ip.abs() < 1e-10, "{ip}");
}

#[test]
fn odd_data_on_symmetric_star_has_no_flux() {
    let g = MetricGraph::<f64>::star(3, 20);
    let c = EdgeCoefficientTable::unit(&g);
    let s = GraphSpace::new(g, c).unwrap();
    let slopes = [2.0, -1.0, -1.0];
    let f = s.function(|z: f64, k| slopes[k] * (z - 1.0));
    assert!(gluing_residual(&s, &f, 0) < 1e-12);
}

#[test]
fn slope_jump_gives_alpha_times_mismatch() {
    let g = MetricGraph::y_graph(10);
    let c = EdgeCoefficientTable::uniform(&g, |_| 0.8, |_| 1.0);
    let s = GraphSpace::new(g, c).unwrap();
    // edges 0, 1 end at vertex 2 (from below), edge 2 leaves it upward
    let slopes = [1.0, 0.5, 3.0];
    let f = s.function(|z: f64, k| slopes[k] * (z - 1.0));
    let expected: f64 = 0.8 * (slopes[2] - slopes[0] - slopes[1]);
    assert_relative_eq!(gluing_residual(&s, &f, 2), expected.abs(), epsilon = 1e-10);
}

#[test]
fn gluing_residual_vanishes_at_first_order() {
    let res: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let s = y_space(n);
            let gen = DiscreteGenerator::assemble(&s).unwrap();
            let scheme = ThetaScheme::new(&gen, 1.0, 1e-3).unwrap();
            let f = s.function(|z, k| (z * (k as f64 + 1.0)).cos() + 0.3 * k as f64 * z);
            let f = step_semigroup(&scheme, &f, 10);
            gluing_residual(&s, &f, 2)
        })
        .collect();
    let rate = (res[0] / res[2]).log2() / 2.0;
    assert!(rate >= 1.0 - 0.05, "rate {rate} residuals {res:?}");
}

#[test]
fn semigroup_preserves_constants_and_mass() {
    let s = y_space(12);
    let gen = DiscreteGenerator::assemble(&s).unwrap();
    let scheme = ThetaScheme::new(&gen, 0.5, 0.01).unwrap();
    let c = step_semigroup(&scheme, &s.constant(2.5), 20);
    assert!(c.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
    let f = s.function(|z, k| z.sin() + k as f64);
    let m0: f64 = f.values.iter().zip(&gen.mass).map(|(a, b)| a * b).sum();
    let g = step_semigroup(&scheme, &f, 50);
    let m1: f64 = g.values.iter().zip(&gen.mass).map(|(a, b)| a * b).sum();
    assert_relative_eq!(m0, m1, max_relative = 1e-10);
}

#[test]
fn tiny_step_is_nearly_identity() {
    let s = unit_edge(50);
    let gen = DiscreteGenerator::assemble(&s).unwrap();
    let scheme = ThetaScheme::new(&gen, 1.0, 1e-8).unwrap();
    let f = s.function(|z, _| (PI * z).cos() + 2.0);
    let g = step_semigroup(&scheme, &f, 1);
    let num: f64 = f.values.iter().zip(&g.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = f.values.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(num / den < 1e-6);
}

#[test]
fn first_mode_decays_at_the_neumann_rate() {
    let s = unit_edge(200);
    let gen = DiscreteGenerator::assemble(&s).unwrap();
    let scheme = ThetaScheme::new(&gen, 0.5, 1e-3).unwrap();
    let mode = s.function(|z, _| (PI * z).cos());
    let f = s.function(|z, _| (PI * z).cos() + 0.4 * (2.0 * PI * z).cos() + 1.0);
    let g = step_semigroup(&scheme, &f, 100);
    let proj = |v: &[f64]| {
        let a: f64 = v.iter().zip(&mode.values).zip(&gen.mass).map(|((x, y), m)| x * y * m).sum();
        let b: f64 = mode.values.iter().zip(&gen.mass).map(|(y, m)| y * y * m).sum();
        a / b
    };
    let ratio = proj(&g.values) / proj(&f.values);
    let exact = (-PI * PI * 0.1 / 2.0).exp();
    assert!((ratio / exact - 1.0).abs() < 0.01, "{ratio} vs {exact}");
}

#[test]
fn invalid_theta_is_rejected() {
    let gen = DiscreteGenerator::assemble(&unit_edge(4)).unwrap();
    assert!(ThetaScheme::new(&gen, 0.3, 0.1).is_err());
    assert!(ThetaScheme::new(&gen, 1.0, 0.0).is_err());
}

#[test]
fn matrix_dump_lists_entries() {
    let gen = DiscreteGenerator::assemble(&unit_edge(3)).unwrap();
    let d = gen.dump();
    assert!(d.lines().filter(|l| !l.starts_with('#')).count() >= gen.stiffness.nnz() + gen.n_dofs());
}

#[test]
fn unit_weight_lq_contraction() {
    let s = unit_edge(64);
    let bump = |z: f64, _: usize| if (z - 0.3).abs() < 0.1 { 1.0 } else { 0.0 };
    let smooth = |z: f64, _: usize| (3.0 * z).sin() + 0.2;
    let trials: [&dyn Fn(f64, usize) -> f64; 2] = [&bump, &smooth];
    for q in [2.0, 4.0] {
        let rep = semigroup_audit_lq(&s, &GraphWeight::unit(), q, 1.0, 100, &trials, 2).unwrap();
        assert!(rep.max_ratio() <= 1.0 + 1e-8, "q={q}: {rep:?}");
    }
}

#[test]
fn power_weight_lq_ratio_is_bounded_and_mesh_stable() {
    let s = radial(80, 50.0);
    let z0 = 1.0f64;
    let w = GraphWeight::profile(
        "power",
        move |z: f64| if z >= z0 { z.powf(-2.5) } else { 1.0 - 2.5 * (z - z0) + 4.375 * (z - z0).powi(2) },
        move |z: f64| if z >= z0 { -2.5 * z.powf(-3.5) } else { -2.5 + 8.75 * (z - z0) },
    );
    let bump = |z: f64, _: usize| (-(z - 3.0).powi(2)).exp();
    let trials: [&dyn Fn(f64, usize) -> f64; 1] = [&bump];
    let rep = semigroup_audit_lq(&s, &w, 2.0, 1.0, 50, &trials, 3).unwrap();
    assert!(rep.max_ratio().is_finite());
    assert!(rep.rate_drift < 0.1, "{rep:?}");
    let rep4 = semigroup_audit_lq(&s, &w, 4.0, 1.0, 50, &trials, 2).unwrap();
    assert!(rep4.max_ratio().is_finite() && rep4.rate_drift < 0.1, "{rep4:?}");
}

#[test]
fn gamma_check_cases() {
    let s = radial(200, 100.0);
    let unit = assumption_gamma_check(&s, &GraphWeight::unit());
    assert_eq!(unit.sup, 0.0);
    assert!(unit.pass);
    let k = 2.5;
    let poly = GraphWeight::profile("poly", move |z: f64| (1.0 + z).powf(-k), move |z: f64| -k * (1.0 + z).powf(-k - 1.0));
    let r = assumption_gamma_check(&s, &poly);
    // closed form 4 z κ² / (1 + z)², maximal at z = 1
    assert!(r.pass, "{r:?}");
    assert_relative_eq!(r.sup, k * k, max_relative = 1e-3);
    let exp = GraphWeight::profile("exp", |z: f64| (-z).exp(), |z: f64| -(-z).exp());
    let r = assumption_gamma_check(&s, &exp);
    assert!(!r.pass && r.growing_at_truncation);
    assert_relative_eq!(r.sup, 400.0, max_relative = 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn stiffness_is_dissipative(vals in proptest::collection::vec(-10.0f64..10.0, 37)) {
        let s = y_space(12);
        let gen = DiscreteGenerator::assemble(&s).unwrap();
        let f = &vals[..gen.n_dofs()];
        let kf = gen.stiffness.apply(f);
        let q: f64 = kf.iter().zip(f).map(|(a, b)| a * b).sum();
        prop_assert!(q >= -1e-12);
    }
}
