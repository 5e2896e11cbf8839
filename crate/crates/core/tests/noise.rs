use mgspde::geometry::*;
use mgspde::metric_graph::{norm_h, GraphWeight};
use mgspde::noise::*;
use std::f64::consts::PI;

fn rect_shape() -> NarrowShape {
    NarrowShape::Rectangle { a: 0.0, b: 1.0, half_width: 1.0 }
}

fn narrow(shape: &NarrowShape, cells: usize) -> Geometry {
    Geometry::Narrow(narrow_shape_geometry(shape, cells).unwrap())
}

#[test]
fn single_constant_mode() {
    let shape = rect_shape();
    let geo = narrow(&shape, 20);
    let mut b = build_spectral_basis_narrow(&shape, 1, 1.0).unwrap();
    let c = 1.0 / 2.0f64.sqrt();
    for x in geo.sample_points(20) {
        assert!((b.modes[0].eval(x) - c).abs() < 1e-15);
    }
    project_basis(&mut b, &geo).unwrap();
    assert!(b.projected[0].values.iter().all(|&v| (v - c).abs() < 1e-14));
    let r = sup_bound_check(&b, &geo.sample_points(30), 1e-12).unwrap();
    assert!((r.domain_sup - 0.5).abs() < 1e-14 && (r.graph_sup - 0.5).abs() < 1e-14 && r.pass);
    assert!(build_spectral_basis_narrow(&shape, 0, 1.0).is_err());
}

#[test]
fn odd_mode_projects_to_zero() {
    let shape = rect_shape();
    let mut b = build_spectral_basis_narrow(&shape, 3, 1.0).unwrap();
    assert_eq!(b.modes[1].label, "cos(0,1)");
    project_basis(&mut b, &narrow(&shape, 20)).unwrap();
    assert!(b.projected[1].values.iter().all(|v| v.abs() < 1e-13));
}

#[test]
fn decaying_partial_sums_are_bounded() {
    let shape = rect_shape();
    let b = build_spectral_basis_narrow(&shape, 64, 1.0).unwrap();
    // sup |𝔢_j| = product of the normalizations, attained at the corners
    let area = 2.0;
    let mut partial = 0.0;
    let mut last = 0.0;
    for m in &b.modes {
        let sup = [[0.0, -1.0], [0.0, 1.0], [1.0, -1.0], [1.0, 1.0]].iter().map(|&x| (m.eval(x) / m.q).abs()).fold(0.0, f64::max);
        partial += m.q * m.q * sup * sup;
        assert!(partial >= last);
        last = partial;
    }
    let zeta4 = PI.powi(4) / 90.0;
    assert!(partial <= 4.0 / area * zeta4 + 1e-12);
}

#[test]
fn graph_sup_below_domain_sup() {
    for shape in [rect_shape(), NarrowShape::Disk, NarrowShape::Fish { fold: 0.3 }] {
        let geo = narrow(&shape, 64);
        let mut b = build_spectral_basis_narrow(&shape, 64, 1.0).unwrap();
        project_basis(&mut b, &geo).unwrap();
        let r = sup_bound_check(&b, &geo.sample_points(200), 1e-12).unwrap();
        assert!(r.pass, "{shape:?}: {r:?}");
    }
}

#[test]
fn spectral_family_sums_to_total_mass() {
    let atoms = [[0.0, 0.0], [1.0, 0.5], [-0.3, 2.0], [3.0, -1.0]];
    let weights = [0.4, 0.3, 0.2, 0.1];
    let mut b = spectral_measure_basis(&atoms, &weights).unwrap();
    assert_eq!(b.len(), 7);
    let cps = find_critical_points(&Hamiltonian::radial(), 10, 1e-8).unwrap();
    let opts = ReebOptions { label_grid: 256, cells: 32, ..ReebOptions::default() };
    let geo = Geometry::Hamiltonian(Box::new(build_reeb_graph(&Hamiltonian::radial(), &cps, &opts).unwrap()));
    project_basis(&mut b, &geo).unwrap();
    let r = sup_bound_check(&b, &geo.sample_points(100), 1e-9).unwrap();
    assert!((r.domain_sup - 1.0).abs() < 1e-12, "{r:?}");
    assert!(r.pass && r.graph_sup <= 1.0 + 1e-9);
}

#[test]
fn per_mode_contractivity() {
    let shape = NarrowShape::Disk;
    let geo = narrow(&shape, 128);
    let mut b = build_spectral_basis_narrow(&shape, 16, 0.5).unwrap();
    project_basis(&mut b, &geo).unwrap();
    let (gx, gw) = mgspde::linalg::gauss_legendre(64);
    for (m, p) in b.modes.iter().zip(&b.projected) {
        let mut plane = 0.0;
        for (xi, wi) in gx.iter().zip(&gw) {
            let x1 = *xi;
            let h = (1.0 - x1 * x1).sqrt();
            for (yj, wj) in gx.iter().zip(&gw) {
                plane += wi * wj * h * m.eval([x1, h * yj]).powi(2);
            }
        }
        let graph = norm_h(geo.space(), p, &GraphWeight::unit()).unwrap();
        assert!(graph <= plane.sqrt() * (1.0 + 2e-3), "{}: {graph} > {}", m.label, plane.sqrt());
    }
}

#[test]
fn increments_are_reproducible() {
    let a = sample_increments(4, 10, 0.01, 7, 3).unwrap();
    let b = sample_increments(4, 10, 0.01, 7, 3).unwrap();
    assert_eq!(a, b);
    let c = sample_increments(4, 10, 0.01, 7, 4).unwrap();
    assert_ne!(a.db, c.db);
    // random access agrees with the sequential layout
    let mut s = IncrementStream::new(7, 3);
    s.seek(2 * 4 + 1);
    assert!((s.next_normal() * 0.1 - a.row(2)[1]).abs() < 1e-15);
    assert!(sample_increments(0, 10, 0.01, 7, 3).is_err());
}

#[test]
fn increment_variance_and_independence() {
    let n = 100_000u64;
    let dt = 0.01;
    let draws: Vec<f64> = (0..2 * n).map(|i| sample_increments(1, 1, dt, 42, i).unwrap().db[0]).collect();
    let first = &draws[..n as usize];
    let mean = first.iter().sum::<f64>() / n as f64;
    let var = first.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = dt * (2.0 / n as f64).sqrt();
    assert!((var - dt).abs() < 3.0 * se, "var {var}");
    let second = &draws[n as usize..];
    let corr = first.iter().zip(second).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * dt);
    assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
}

#[test]
fn graph_increment_second_moment() {
    let shape = rect_shape();
    let geo = narrow(&shape, 32);
    let mut b = build_spectral_basis_narrow(&shape, 8, 1.0).unwrap();
    project_basis(&mut b, &geo).unwrap();
    let space = geo.space();
    let w = GraphWeight::unit();
    let expected = trace_norm2(&b, space, &w).unwrap();
    let rows = b.projected_values::<f64>().unwrap();
    let dt = 0.01;
    let n = 20_000;
    let mut out = vec![0.0; space.n_dofs()];
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let s = sample_increments(b.len(), 1, dt, 9, i).unwrap();
            NoiseBasis::graph_increment(&rows, s.row(0), &mut out);
            norm_h(space, &space.from_values(out.clone()).unwrap(), &w).unwrap().powi(2)
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((mean - dt * expected).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {}", dt * expected);
}
