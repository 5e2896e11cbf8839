use mgspde::geometry::*;
use mgspde::metric_graph::{norm_h, GraphWeight, VertexKind};
use mgspde::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

fn small_opts() -> ReebOptions {
    ReebOptions { label_grid: 512, cells: 48, ..ReebOptions::default() }
}

fn reeb(h: &Hamiltonian) -> ReebGeometry {
    let cps = find_critical_points(h, 40, 1e-6).unwrap();
    build_reeb_graph(h, &cps, &small_opts()).unwrap()
}

/// Components of `{𝓗 < z}` on a uniform grid over the box.
fn sublevel_components(h: &Hamiltonian, z: f64, n: usize) -> usize {
    let b = h.search_box;
    let inside: Vec<bool> = (0..n * n)
        .map(|c| {
            let x = b[0] + (b[1] - b[0]) * ((c / n) as f64 + 0.5) / n as f64;
            let y = b[2] + (b[3] - b[2]) * ((c % n) as f64 + 0.5) / n as f64;
            h.value([x, y]) < z
        })
        .collect();
    let mut seen = vec![false; n * n];
    let mut count = 0;
    for s in 0..n * n {
        if !inside[s] || seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(c) = stack.pop() {
            let (i, j) = (c / n, c % n);
            let mut nb = Vec::new();
            if i > 0 {
                nb.push(c - n);
            }
            if i + 1 < n {
                nb.push(c + n);
            }
            if j > 0 {
                nb.push(c - 1);
            }
            if j + 1 < n {
                nb.push(c + 1);
            }
            for d in nb {
                if inside[d] && !seen[d] {
                    seen[d] = true;
                    stack.push(d);
                }
            }
        }
    }
    count
}

#[test]
fn example2_has_single_minimum_at_origin() {
    let h = Hamiltonian::example2();
    let cps = find_critical_points(&h, 30, 1e-6).unwrap();
    assert_eq!(cps.len(), 1);
    assert_eq!(cps[0].kind, VertexKind::Minimum);
    assert!(cps[0].location[0].abs() < 1e-10 && cps[0].location[1].abs() < 1e-10);
    assert!(cps[0].level.abs() < 1e-12);
    let r = find_critical_points(&Hamiltonian::radial(), 30, 1e-6).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].kind, VertexKind::Minimum);
}

#[test]
fn double_well_critical_points_match_sign_change_scan() {
    let h = Hamiltonian::double_well(0.2);
    let cps = find_critical_points(&h, 40, 1e-6).unwrap();
    // scan for cells where both gradient components change sign
    let n = 2000;
    let b = h.search_box;
    let xs: Vec<f64> = (0..=n).map(|i| b[0] + (b[1] - b[0]) * i as f64 / n as f64).collect();
    let ys: Vec<f64> = (0..=n).map(|j| b[2] + (b[3] - b[2]) * (j as f64 + 0.37) / n as f64).collect();
    let mut found = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let corners = [[xs[i], ys[j]], [xs[i + 1], ys[j]], [xs[i], ys[j + 1]], [xs[i + 1], ys[j + 1]]];
            let g: Vec<[f64; 2]> = corners.iter().map(|&c| h.grad(c)).collect();
            let change = |k: usize| g.iter().any(|v| v[k] > 0.0) && g.iter().any(|v| v[k] <= 0.0);
            if change(0) && change(1) {
                found.push([0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])]);
            }
        }
    }
    assert_eq!(found.len(), 3);
    assert_eq!(cps.len(), 3);
    for f in &found {
        assert!(cps.iter().any(|c| (c.location[0] - f[0]).hypot(c.location[1] - f[1]) < 0.01));
    }
    let kinds: Vec<VertexKind> = cps.iter().map(|c| c.kind).collect();
    assert_eq!(kinds.iter().filter(|&&k| k == VertexKind::Minimum).count(), 2);
    assert_eq!(kinds.iter().filter(|&&k| k == VertexKind::Saddle).count(), 1);
    assert!(cps.iter().all(|c| c.margin > 1e-8));
}

#[test]
fn degenerate_critical_point_is_rejected() {
    let h = Hamiltonian::new("quartic", |x, y| x.powi(4) + y * y, |x, y| [4.0 * x.powi(3), 2.0 * y], |x, _| [[12.0 * x * x, 0.0], [0.0, 2.0]], [-1.0, 1.0, -1.0, 1.0]);
    match find_critical_points(&h, 10, 1e-4) {
        Err(Error::HypothesisH(_)) => {}
        other => panic!("expected a degeneracy error, got {other:?}"),
    }
}

#[test]
fn circle_contour_length() {
    let h = Hamiltonian::radial();
    let c = trace_contour(&h, 4.0, [2.0, 0.0], &TraceOptions::default()).unwrap();
    assert!((c.length - 4.0 * PI).abs() < 1e-6, "length {}", c.length);
    assert_eq!(c.points.first(), c.points.last());
    assert!(c.grad_norm.iter().all(|&g| g > 0.0));
}

#[test]
fn example2_contour_matches_dense_polygon() {
    let h = Hamiltonian::example2();
    let c = trace_contour(&h, 1.0, [0.5, 0.3], &TraceOptions::default()).unwrap();
    // 10⁶-point polygon: radius by bisection along each ray
    let n = 1_000_000;
    let radius = |th: f64| {
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..60 {
            let m = 0.5 * (lo + hi);
            if h.value([m * th.cos(), m * th.sin()]) < 1.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        0.5 * (lo + hi)
    };
    let r = radius(0.0);
    // the curve is a circle, so one radius suffices for the vertices
    let _ = radius(1.0);
    let oracle: f64 = (0..n)
        .map(|i| {
            let (a, b) = (2.0 * PI * i as f64 / n as f64, 2.0 * PI * (i + 1) as f64 / n as f64);
            (r * (b.cos() - a.cos())).hypot(r * (b.sin() - a.sin()))
        })
        .sum();
    assert!((c.length - oracle).abs() < 1e-4, "{} vs {}", c.length, oracle);
}

#[test]
fn near_saddle_level_is_refused() {
    let h = Hamiltonian::double_well(0.2);
    let cps = find_critical_points(&h, 40, 1e-6).unwrap();
    let s = cps.iter().find(|c| c.kind == VertexKind::Saddle).unwrap();
    let opts = TraceOptions { critical_levels: vec![s.level], ..TraceOptions::default() };
    match trace_contour(&h, s.level + 5e-4, [s.location[0], 1.0], &opts) {
        Err(Error::NearCritical { .. }) => {}
        other => panic!("expected near-critical error, got {other:?}"),
    }
}

#[test]
fn radial_coefficients() {
    let h = Hamiltonian::radial();
    for &z in &[0.01, 0.5, 1.0, 3.0] {
        let c = trace_contour(&h, z, [1.0, 0.0], &TraceOptions::default()).unwrap();
        let (a, t) = compute_coefficients(&c).unwrap();
        assert!((t - PI).abs() < 1e-5, "T({z}) = {t}");
        assert!((a - 4.0 * PI * z).abs() < 1e-5 * (1.0 + z), "alpha({z}) = {a}");
        let (ap, tp) = polyline_coefficients(&c).unwrap();
        assert!((ap - a).abs() < 1e-3 * a && (tp - t).abs() < 1e-3 * t);
    }
}

#[test]
fn example2_alpha_vanishes_linearly_at_minimum() {
    let h = Hamiltonian::example2();
    let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&z| {
            let c = trace_contour(&h, z, [0.1, 0.0], &TraceOptions::default()).unwrap();
            compute_coefficients(&c).unwrap().0 / z
        })
        .collect();
    assert!(ratios.iter().all(|&r| r > 0.0));
    assert!((ratios[2] - ratios[1]).abs() < (ratios[1] - ratios[0]).abs());
    assert!((ratios[2] - 4.0 * PI).abs() < 1e-2 * 4.0 * PI, "{ratios:?}");
}

#[test]
fn coefficients_stable_under_step_halving() {
    let h = Hamiltonian::example2();
    let coarse = TraceOptions::default();
    let fine = TraceOptions { tol: coarse.tol / 4.0, max_step: coarse.max_step / 2.0, ..coarse.clone() };
    let dw = Hamiltonian::double_well(0.2);
    for (h, z, seed) in [(&h, 1.0, [0.5, 0.0]), (&dw, 3.0, [0.0, 1.5])] {
        let (a1, t1) = compute_coefficients(&trace_contour(h, z, seed, &coarse).unwrap()).unwrap();
        let (a2, t2) = compute_coefficients(&trace_contour(h, z, seed, &fine).unwrap()).unwrap();
        assert!(((a1 - a2) / a2).abs() < 1e-4 && ((t1 - t2) / t2).abs() < 1e-4);
    }
}

#[test]
fn radial_graph_is_a_half_line() {
    let g = reeb(&Hamiltonian::radial());
    let gr = &g.space.graph;
    assert_eq!(gr.edges.len(), 1);
    assert_eq!(gr.vertices.len(), 2);
    assert_eq!(gr.vertices[gr.edges[0].v_hi].kind, VertexKind::Infinity);
    assert!(gr.edges[0].is_unbounded());
    // closed forms along the whole edge
    let c = &g.space.coeffs.edges[0];
    for (i, &z) in gr.edges[0].grid.iter().enumerate() {
        assert!((c.period[i] - PI).abs() < 1e-5);
        assert!((c.alpha[i] - 4.0 * PI * z).abs() < 1e-5 * (1.0 + z));
    }
    let e2 = reeb(&Hamiltonian::example2());
    assert_eq!(e2.space.graph.edges.len(), 1);
    assert_eq!(e2.space.graph.vertices.len(), 2);
}

#[test]
fn double_well_graph_matches_component_counts() {
    let h = Hamiltonian::double_well(0.2);
    let g = reeb(&h);
    let gr = &g.space.graph;
    assert_eq!(gr.edges.len(), 3);
    assert_eq!(gr.vertices.len(), 4);
    let levels: Vec<f64> = g.critical.iter().map(|c| c.level).collect();
    let probes = [0.5 * (levels[0] + levels[1]), 0.5 * (levels[1] + levels[2]), levels[2] + 1.0];
    for z in probes {
        let edges = gr.edges.iter().filter(|e| e.a < z && z < e.b).count();
        assert_eq!(edges, sublevel_components(&h, z, 800), "level {z}");
    }
    let saddle = g.critical.iter().position(|c| c.kind == VertexKind::Saddle).unwrap();
    let lower: Vec<_> = gr.edges.iter().filter(|e| e.v_hi == saddle).collect();
    assert_eq!(lower.len(), 2);
    assert!(lower.iter().all(|e| g.critical[e.v_lo].kind == VertexKind::Minimum));
}

#[test]
fn projections() {
    let r = reeb(&Hamiltonian::radial());
    assert_eq!(r.project_point([1.0, 1.0]).unwrap(), (2.0, 0));
    let dw = reeb(&Hamiltonian::double_well(0.2));
    let (_, k) = dw.project_point([-1.0, 0.1]).unwrap();
    let e = &dw.space.graph.edges[k];
    let lo = dw.vertex_cp[e.v_lo].unwrap();
    assert!(dw.critical[lo].location[0] < 0.0 && dw.critical[lo].kind == VertexKind::Minimum);
    let (_, k) = dw.project_point([1.0, 0.1]).unwrap();
    assert!(dw.critical[dw.vertex_cp[dw.space.graph.edges[k].v_lo].unwrap()].location[0] > 0.0);
    let rect = narrow_shape_geometry(&NarrowShape::Rectangle { a: 0.0, b: 1.0, half_width: 1.0 }, 20).unwrap();
    assert_eq!(rect.project_point([0.3, 0.7]).unwrap(), (0.3, 0));
    assert!(matches!(rect.project_point([0.3, 1.5]), Err(Error::OutsideDomain(..))));
}

#[test]
fn saddle_and_extremum_asymptotics() {
    let dw = reeb(&Hamiltonian::double_well(0.2));
    let saddle = dw.critical.iter().position(|c| c.kind == VertexKind::Saddle).unwrap();
    let fits = coefficient_asymptotics_check(&dw.space, saddle, 1.5e-3, 10).unwrap();
    assert_eq!(fits.len(), 3);
    for f in &fits {
        assert!(f.period_r2 > 0.99, "{f:?}");
        assert!(f.period_log > 0.0);
    }
    let r = reeb(&Hamiltonian::radial());
    let min = coefficient_asymptotics_check(&r.space, 0, 1e-6, 8).unwrap();
    assert!((min[0].period_const - PI).abs() < 1e-6 && min[0].period_residual < 1e-6, "{min:?}");
    let inf = coefficient_asymptotics_check(&r.space, 1, 0.0, 8).unwrap();
    assert!((inf[0].alpha_coeff - 4.0 * PI).abs() < 1e-5, "{inf:?}");
}

#[test]
fn narrow_rectangle_and_disk() {
    let rect = narrow_shape_geometry(&NarrowShape::Rectangle { a: 0.0, b: 1.0, half_width: 1.0 }, 20).unwrap();
    assert_eq!(rect.space.graph.edges.len(), 1);
    assert!(rect.space.coeffs.edges[0].alpha.iter().all(|&l| l == 2.0));
    assert!(rect.space.graph.vertices.iter().all(|v| v.kind == VertexKind::BoundaryFold));
    let disk = narrow_shape_geometry(&NarrowShape::Disk, 40).unwrap();
    let g = &disk.space.graph;
    assert_eq!(g.edges.len(), 1);
    assert_eq!((g.edges[0].a, g.edges[0].b), (-1.0, 1.0));
    for (i, &z) in g.edges[0].grid.iter().enumerate() {
        // chord length by bisection on the boundary
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let m = 0.5 * (lo + hi);
            if z * z + m * m < 1.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        let l = disk.space.coeffs.edges[0].alpha[i];
        assert!((l - 2.0 * (1.0 - z * z).max(0.0).sqrt()).abs() < 1e-14);
        assert!((l - 2.0 * lo).abs() < 1e-12);
        assert_eq!(l, disk.space.coeffs.edges[0].period[i]);
    }
}

#[test]
fn fish_is_a_y_graph() {
    let fish = narrow_shape_geometry(&NarrowShape::Fish { fold: 0.3 }, 40).unwrap();
    let g = &fish.space.graph;
    assert_eq!(g.edges.len(), 3);
    assert_eq!(g.vertices.len(), 4);
    let degrees: Vec<usize> = g.vertices.iter().map(|v| v.incident.len()).collect();
    assert_eq!(degrees.iter().filter(|&&d| d == 3).count(), 1);
    assert_eq!(degrees.iter().filter(|&&d| d == 1).count(), 3);
    let (_, k_up) = fish.project_point([0.8, 0.47]).unwrap();
    let (_, k_dn) = fish.project_point([0.8, -0.47]).unwrap();
    let (_, k_body) = fish.project_point([-0.5, 0.0]).unwrap();
    assert!(k_up != k_dn && k_up != k_body && k_dn != k_body);
}

#[test]
fn narrow_spec_round_trip_and_rejections() {
    let spec = NarrowShape::Fish { fold: 0.0 }.spec(10);
    let back = NarrowDomainSpec::from_json(&spec.to_json().unwrap()).unwrap();
    assert_eq!(back, spec);
    assert_eq!(narrow_domain_coefficients(&back).unwrap().space.graph.edges.len(), 3);
    let zero = NarrowDomainSpec {
        x1_grid: vec![0.0, 1.0, 2.0],
        sections: vec![vec![(-1.0, 1.0, 0)], vec![(0.0, 0.0, 0)], vec![(-1.0, 1.0, 0)]],
    };
    match narrow_domain_coefficients(&zero) {
        Err(Error::NarrowDomain(m)) => assert!(m.contains("(D3)"), "{m}"),
        other => panic!("{other:?}"),
    }
    let gap = NarrowDomainSpec {
        x1_grid: vec![0.0, 1.0, 2.0, 3.0],
        sections: vec![vec![(-1.0, 1.0, 0)], vec![(-1.0, 1.0, 0)], vec![(-1.0, 1.0, 1)], vec![(-1.0, 1.0, 0)]],
    };
    assert!(matches!(narrow_domain_coefficients(&gap), Err(Error::NarrowDomain(_))));
}

#[test]
fn wedge_of_constants_and_odd_fields() {
    let rect = Geometry::Narrow(narrow_shape_geometry(&NarrowShape::Rectangle { a: 0.0, b: 1.0, half_width: 1.0 }, 20).unwrap());
    let c = rect.wedge_callable(&|_| 2.5).unwrap();
    assert!(c.values.iter().all(|&v| (v - 2.5).abs() < 1e-14));
    let odd = rect.wedge_callable(&|x| x[1]).unwrap();
    assert!(odd.values.iter().all(|&v| v.abs() < 1e-14));
    let fish = Geometry::Narrow(narrow_shape_geometry(&NarrowShape::Fish { fold: 0.3 }, 40).unwrap());
    assert!(fish.wedge_callable(&|_| -1.0).unwrap().values.iter().all(|&v| (v + 1.0).abs() < 1e-14));
    let r = Geometry::Hamiltonian(Box::new(reeb(&Hamiltonian::radial())));
    let c = r.wedge_callable(&|_| 0.75).unwrap();
    assert!(c.values.iter().all(|&v| (v - 0.75).abs() < 1e-9));
}

#[test]
fn wedge_of_lift_is_identity() {
    let dw = reeb(&Hamiltonian::double_well(0.2));
    let f = |z: f64, k: usize| (1.0 + k as f64) * (0.3 * z).sin();
    let traced = dw.seeds.clone();
    let geo = Geometry::Hamiltonian(Box::new(dw));
    let lift = |x: [f64; 2]| {
        let (z, k) = geo.project_point(x).unwrap();
        f(z, k)
    };
    let w = geo.wedge_callable(&lift).unwrap();
    let direct = geo.space().function(f);
    let space = geo.space();
    // nodes next to a vertex are extrapolated; compare traced nodes
    for (k, e) in space.graph.edges.iter().enumerate() {
        for i in (0..e.grid.len()).filter(|&i| traced[k][i].is_some()) {
            let d = space.layout.edge_dofs[k][i];
            assert!((w.values[d] - direct.values[d]).abs() < 1e-6, "edge {k} node {i}: {} vs {}", w.values[d], direct.values[d]);
        }
    }
}

#[test]
fn shell_average_of_constant_samples() {
    let r = reeb(&Hamiltonian::radial());
    let n = 400;
    let samples: Vec<([f64; 2], f64, f64)> = (0..n * n)
        .map(|c| {
            let x = -3.0 + 6.0 * ((c / n) as f64 + 0.5) / n as f64;
            let y = -3.0 + 6.0 * ((c % n) as f64 + 0.5) / n as f64;
            ([x, y], 4.0, 1.0)
        })
        .collect();
    let f = r.shell_average(&samples, true).unwrap();
    assert!(f.values.iter().all(|&v| (v - 4.0).abs() < 1e-12));
    let inner: Vec<_> = samples.iter().copied().filter(|s| s.0[0].hypot(s.0[1]) < 2.0).collect();
    assert!(matches!(r.shell_average(&inner, false), Err(Error::EmptyShell { .. })));
    let g = r.shell_average(&inner, true).unwrap();
    assert!(g.values.iter().all(|&v| (v - 4.0).abs() < 1e-12));
}

/// `∫_D φ² dx` on a narrow shape by tensor Gauss–Legendre quadrature.
fn plane_norm2(shape: &NarrowShape, phi: &dyn Fn([f64; 2]) -> f64) -> f64 {
    let (gx, gw) = mgspde::linalg::gauss_legendre(48);
    let (a, b) = shape.x1_range();
    let mut s = 0.0;
    for (xi, wi) in gx.iter().zip(&gw) {
        let x1 = a + 0.5 * (b - a) * (xi + 1.0);
        for (lo, hi, _) in shape.section(x1) {
            for (yj, wj) in gx.iter().zip(&gw) {
                let x2 = lo + 0.5 * (hi - lo) * (yj + 1.0);
                s += 0.25 * (b - a) * (hi - lo) * wi * wj * phi([x1, x2]).powi(2);
            }
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn wedge_is_contractive(c in proptest::collection::vec(-1.0f64..1.0, 6)) {
        let shape = NarrowShape::Disk;
        let geo = narrow_shape_geometry(&shape, 64).unwrap();
        let phi = move |x: [f64; 2]| c[0] + c[1] * x[0] + c[2] * (3.0 * x[1]).sin() + c[3] * (x[0] * x[1]).cos() + c[4] * x[1] * x[1] + c[5] * (2.0 * x[0] + x[1]).sin();
        let w = geo.wedge_callable(&phi).unwrap();
        let lhs = norm_h(&geo.space, &w, &GraphWeight::unit()).unwrap();
        let rhs = plane_norm2(&shape, &phi).sqrt();
        prop_assert!(lhs <= rhs * (1.0 + 1e-3) + 1e-9, "{} > {}", lhs, rhs);
    }
}
