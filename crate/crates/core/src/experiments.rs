//! End-to-end checks at desk scale. Each returns a pass flag and a short
//! human-readable summary of the measured quantities.

use crate::audit::{embedding_dichotomy, WeightSpec};
use crate::deviations::*;
use crate::error::Result;
use crate::generator::*;
use crate::geometry::*;
use crate::metric_graph::*;
use crate::multiscale::*;
use crate::noise::*;
use crate::skeleton::*;
use crate::spde::*;
use rayon::prelude::*;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!("[{}] {:>2} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.name, self.detail)
    }
}

pub const NAMES: [&str; 13] = [
    "radial coefficients",
    "narrow-domain coefficients",
    "generator structure",
    "semigroup Lq bounds",
    "LDP linear-Gaussian",
    "rate-function optimizer",
    "MDP linear-Gaussian",
    "controlled error rate",
    "MDP error envelope",
    "narrow-domain convergence",
    "semigroup convergence and initial layer",
    "embedding dichotomy",
    "importance sampling correctness",
];

pub fn run(id: usize) -> Result<Outcome> {
    let (pass, detail) = match id {
        1 => radial_coefficients()?,
        2 => disk_coefficients()?,
        3 => generator_structure()?,
        4 => semigroup_bounds()?,
        5 => ldp_gaussian()?,
        6 => rate_optimizer()?,
        7 => mdp_gaussian()?,
        8 => controlled_error()?,
        9 => mdp_envelope()?,
        10 => narrow_convergence()?,
        11 => semigroup_layer()?,
        12 => dichotomy()?,
        13 => importance_sampling()?,
        _ => return Err(crate::Error::Config(format!("no check numbered {id} (1..=13)"))),
    };
    Ok(Outcome { id, name: NAMES[id - 1], pass, detail })
}

/// Unit-height rectangle `[0, 1] × [−½, ½]`.
pub fn rect_shape() -> NarrowShape {
    NarrowShape::Rectangle { a: 0.0, b: 1.0, half_width: 0.5 }
}

pub fn narrow_model(shape: &NarrowShape, cells: usize, modes: usize, reaction: ReactionSpec, dt: f64, horizon: f64) -> Result<SpdeModel<f64>> {
    let geo = Geometry::Narrow(narrow_shape_geometry(shape, cells)?);
    let mut b = build_spectral_basis_narrow(shape, modes, 1.0)?;
    project_basis(&mut b, &geo)?;
    SpdeModel::new(geo.space(), reaction, &b, GraphWeight::unit(), dt, 0.5, horizon)
}

pub fn bump(space: &GraphSpace<f64>) -> Vec<f64> {
    space.function(|z, _| (-(z - 0.4).powi(2) / 0.05).exp()).values
}

fn tilt(m: &SpdeModel<f64>, psi: &[f64], r: f64, regime: Regime) -> Result<(Control, f64)> {
    let p = EndpointProblem::new(m.space.zeros().values, psi.to_vec(), r, regime);
    let est = minimize_rate_endpoint(&p, m, RateMode::LqOracle)?;
    Ok((est.control, est.sigma2.unwrap_or(f64::NAN)))
}

fn radial_coefficients() -> Result<(bool, String)> {
    let h = Hamiltonian::radial();
    let opts = TraceOptions::default();
    let (mut et, mut ea) = (0.0f64, 0.0f64);
    for i in 0..=20 {
        let z = 0.1 * 100f64.powf(i as f64 / 20.0);
        let c = trace_contour(&h, z, [z.sqrt(), 0.0], &opts)?;
        let (a, t) = compute_coefficients(&c)?;
        et = et.max((t - PI).abs());
        ea = ea.max((a / z - 4.0 * PI).abs());
    }
    Ok((et <= 1e-6 && ea <= 1e-4, format!("max |T - pi| = {et:.2e}, max |alpha/z - 4pi| = {ea:.2e}")))
}

fn disk_coefficients() -> Result<(bool, String)> {
    let disk = narrow_shape_geometry(&NarrowShape::Disk, 200)?;
    let c = &disk.space.coeffs.edges[0];
    let grid = &disk.space.graph.edges[0].grid;
    let mut err = 0.0f64;
    for (i, &z) in grid.iter().enumerate() {
        let l = 2.0 * (1.0 - z * z).max(0.0).sqrt();
        err = err.max((c.alpha[i] - l).abs()).max((c.period[i] - l).abs());
    }
    Ok((err <= 1e-6, format!("max |alpha - l|, |T - l| = {err:.2e}")))
}

fn unit_edge(n: usize) -> Result<GraphSpace<f64>> {
    let g = MetricGraph::interval(0.0, 1.0, n, VertexKind::Minimum, VertexKind::Maximum);
    let c = EdgeCoefficientTable::unit(&g);
    GraphSpace::new(g, c)
}

fn y_space(cells: usize) -> Result<GraphSpace<f64>> {
    let g = MetricGraph::y_graph(cells);
    let c = EdgeCoefficientTable::uniform(&g, |_| 1.0, |_| 1.0);
    GraphSpace::new(g, c)
}

fn generator_structure() -> Result<(bool, String)> {
    let mut asym = 0.0f64;
    let mut kill = 0.0f64;
    for s in [unit_edge(17)?, y_space(9)?] {
        let gen = DiscreteGenerator::assemble(&s)?;
        asym = asym.max(gen.stiffness.asymmetry());
        let k1 = gen.stiffness.apply(&vec![1.0; gen.n_dofs()]);
        let scale = gen.stiffness.row(0).map(|(_, v)| v.abs()).fold(0.0, f64::max).max(1.0);
        kill = kill.max(k1.iter().map(|v| v.abs()).fold(0.0, f64::max) / scale);
    }
    let target = PI * PI / 2.0;
    let errs = [16, 32, 64]
        .iter()
        .map(|&n| Ok((DiscreteGenerator::assemble(&unit_edge(n)?)?.smallest_positive_eigenvalue()? - target).abs()))
        .collect::<Result<Vec<f64>>>()?;
    let order = (errs[1] / errs[2]).log2();
    let res = [16, 32, 64]
        .iter()
        .map(|&n| {
            let s = y_space(n)?;
            let gen = DiscreteGenerator::assemble(&s)?;
            let scheme = ThetaScheme::new(&gen, 1.0, 1e-3)?;
            let f = s.function(|z, k| (z * (k as f64 + 1.0)).cos() + 0.3 * k as f64 * z);
            Ok(gluing_residual(&s, &step_semigroup(&scheme, &f, 10), 2))
        })
        .collect::<Result<Vec<f64>>>()?;
    let rate = (res[0] / res[2]).log2() / 2.0;
    let pass = asym <= 1e-15 && kill <= 1e-13 && order >= 1.8 && rate >= 1.0 && res[2] < res[0];
    Ok((pass, format!("asymmetry {asym:.1e}, |K1| {kill:.1e}, eigenvalue order {order:.2}, gluing residual rate {rate:.2} ({:.2e} -> {:.2e})", res[0], res[2])))
}

fn semigroup_bounds() -> Result<(bool, String)> {
    let s = unit_edge(64)?;
    let bump = |z: f64, _: usize| if (z - 0.3).abs() < 0.1 { 1.0 } else { 0.0 };
    let smooth = |z: f64, _: usize| (3.0 * z).sin() + 0.2;
    let trials: [&dyn Fn(f64, usize) -> f64; 2] = [&bump, &smooth];
    let mut contraction = 0.0f64;
    for q in [2.0, 4.0] {
        contraction = contraction.max(semigroup_audit_lq(&s, &GraphWeight::unit(), q, 1.0, 100, &trials, 2)?.max_ratio());
    }
    let grid = geometric_grid(0.0, 50.0, 80, 1e-3);
    let g = MetricGraph::new(vec![(VertexKind::Minimum, 0.0), (VertexKind::Infinity, f64::INFINITY)], vec![(0, 1, grid)]);
    let c = EdgeCoefficientTable::uniform(&g, |z| 4.0 * PI * z, |_| PI);
    let radial = GraphSpace::new(g, c)?;
    let w = WeightSpec::power(1.0, 2.5, 1.0).graph_weight();
    let b = |z: f64, _: usize| (-(z - 3.0).powi(2)).exp();
    let trials: [&dyn Fn(f64, usize) -> f64; 1] = [&b];
    let mut weighted = (0.0f64, 0.0f64);
    for q in [2.0, 4.0] {
        let r = semigroup_audit_lq(&radial, &w, q, 1.0, 50, &trials, 3)?;
        weighted = (weighted.0.max(r.max_ratio()), weighted.1.max(r.rate_drift));
    }
    let pass = contraction <= 1.0 + 1e-8 && weighted.0.is_finite() && weighted.1 < 0.1;
    Ok((pass, format!("unit weight max ratio {contraction:.10}, power weight max ratio {:.4} with mesh drift {:.2e}", weighted.0, weighted.1)))
}

fn ldp_gaussian() -> Result<(bool, String)> {
    let m = narrow_model(&rect_shape(), 16, 4, ReactionSpec::zero(), 0.05, 1.0)?;
    let psi = bump(&m.space);
    let (sigma2, _) = lq_sigma2(&m, &psi)?;
    let r = 0.7 * sigma2.sqrt();
    let (v, _) = tilt(&m, &psi, r, Regime::Ldp)?;
    let rate = r * r / (2.0 * sigma2);
    let grid = [0.08, 0.04, 0.02, 0.01];
    let a = ldp_slope_audit(&m, &m.space.zeros().values, &RareEvent::endpoint(psi, r), &grid, rate, Some(&v), 4000, 21)?;
    let pass = a.final_rel_error < 0.15 && a.trend_toward_rate;
    Ok((pass, format!("-eps ln p = {:?} vs rate {rate:.4}; rel. error at eps=0.01 {:.3}", a.scaled.iter().map(|s| (s * 1e4).round() / 1e4).collect::<Vec<_>>(), a.final_rel_error)))
}

fn rate_optimizer() -> Result<(bool, String)> {
    let mut worst_rel = 0.0f64;
    for (reaction, regime) in [(ReactionSpec::zero(), Regime::Ldp), (ReactionSpec::linear(-0.8), Regime::Ldp), (ReactionSpec::linear(-0.8), Regime::Mdp)] {
        let m = narrow_model(&rect_shape(), 32, 4, reaction, 0.02, 1.0)?;
        let mut p = EndpointProblem::new(bump(&m.space), bump(&m.space), 0.0, regime);
        let (f0, _) = endpoint_value_and_gradient(&p, &m, &Control::for_model(&m))?;
        p.target = f0 + 0.3;
        let oracle = minimize_rate_endpoint(&p, &m, RateMode::LqOracle)?;
        let adj = minimize_rate_endpoint(&p, &m, RateMode::Adjoint)?;
        worst_rel = worst_rel.max(((adj.value - oracle.value) / oracle.value).abs());
    }
    let mut worst_grad = 0.0f64;
    for reaction in [ReactionSpec::sine(1.0, 0.0), ReactionSpec::sine(1.0, 0.5), ReactionSpec::tanh(1.0, 0.5), ReactionSpec::holder(1.0)] {
        let m = narrow_model(&rect_shape(), 32, 4, reaction, 0.02, 1.0)?;
        let phi = Control::from_fn(m.steps, m.n_modes(), m.dt, |t, j| 0.7 * (1.0 + t * (j as f64 + 1.0)).sin());
        for regime in [Regime::Ldp, Regime::Mdp] {
            let p = EndpointProblem::new(bump(&m.space), bump(&m.space), 0.0, regime);
            worst_grad = worst_grad.max(gradient_check(&p, &m, &phi, 10, 1e-5, 2)?);
        }
    }
    Ok((worst_rel < 0.01 && worst_grad < 1e-5, format!("adjoint vs closed form max rel. gap {worst_rel:.2e}; gradient vs finite differences {worst_grad:.2e}")))
}

/// `‖x‖²` graph truncated at `z_max`, driven by a few plane waves.
pub fn radial_model(cells: usize, z_max: f64, reaction: ReactionSpec, dt: f64, horizon: f64) -> Result<SpdeModel<f64>> {
    let h = Hamiltonian::radial();
    let cps = find_critical_points(&h, 40, 1e-6)?;
    let opts = ReebOptions { label_grid: 256, cells, z_max, ..ReebOptions::default() };
    let geo = Geometry::Hamiltonian(Box::new(build_reeb_graph(&h, &cps, &opts)?));
    let mut b = spectral_measure_basis(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.5]], &[1.0, 0.5, 0.25])?;
    project_basis(&mut b, &geo)?;
    SpdeModel::new(geo.space(), reaction, &b, GraphWeight::unit(), dt, 0.5, horizon)
}

pub fn radial_bump(space: &GraphSpace<f64>) -> Vec<f64> {
    space.function(|z, _| (-(z - 1.0).powi(2) / 0.5).exp()).values
}

fn mdp_gaussian() -> Result<(bool, String)> {
    let m = radial_model(32, 4.0, ReactionSpec::linear(-0.5), 0.05, 1.0)?;
    let psi = radial_bump(&m.space);
    let (sigma2, _) = lq_sigma2(&m, &psi)?;
    let scale = MdpScale::parse("eps^-1/4")?;
    let u0 = m.space.constant(0.3).values;
    let pair = m.pairing(&psi);
    let n = 4000usize;
    let mut vars = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        let s = DeviationSetup::mdp(&m, u0.clone(), eps, scale.eval(eps))?;
        let xs = (0..n as u64)
            .into_par_iter()
            .map(|i| Ok(s.lambda * pair.iter().zip(&s.simulate(None, 4, i)?.terminal).map(|(a, b)| a * b).sum::<f64>()))
            .collect::<Result<Vec<f64>>>()?;
        let mean = xs.iter().sum::<f64>() / n as f64;
        vars.push(xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0));
    }
    let se = sigma2 * (2.0 / (n as f64 - 1.0)).sqrt();
    let var_ok = vars.iter().all(|v| (v - sigma2).abs() <= 3.0 * se);
    let r = 7.0 * sigma2.sqrt() / 10f64.sqrt();
    let (v, _) = tilt(&m, &psi, r, Regime::Mdp)?;
    let rate = r * r / (2.0 * sigma2);
    let a = mdp_slope_audit(&m, &u0, &RareEvent::endpoint(psi, r), &[0.04, 0.02, 0.01], &scale, rate, Some(&v), 4000, 8)?;
    let pass = var_ok && a.final_rel_error < 0.15;
    Ok((pass, format!("variance {vars:.4?} vs {sigma2:.4} (3 SE = {:.4}); -lambda^2 ln p rel. error at eps=0.01 {:.3}", 3.0 * se, a.final_rel_error)))
}

fn controlled_error() -> Result<(bool, String)> {
    let m = narrow_model(&rect_shape(), 16, 4, ReactionSpec::sine(1.0, 0.5), 0.02, 1.0)?;
    let u0 = bump(&m.space);
    let v = Control::from_fn(m.steps, m.n_modes(), m.dt, |t, j| (t + j as f64).sin());
    let a = controlled_error_rate_audit(&m, &u0, &v, &[1e-2, 3e-3, 1e-3, 3e-4], 200, 3)?;
    Ok(((0.8..=1.2).contains(&a.fit.slope), format!("log-log slope {:.3} (r2 {:.4})", a.fit.slope, a.fit.r2)))
}

fn mdp_envelope() -> Result<(bool, String)> {
    let m = narrow_model(&rect_shape(), 16, 4, ReactionSpec::sine(1.0, 0.5), 0.02, 1.0)?;
    let u0 = bump(&m.space);
    let v = Control::from_fn(m.steps, m.n_modes(), m.dt, |t, j| (t + j as f64).sin());
    let scale = MdpScale::parse("eps^-1/4")?;
    let a = mdp_error_rate_audit(&m, &u0, &v, &[1e-2, 1e-3, 1e-4, 1e-5], &scale, 1.0, 200, 5)?;
    Ok(((0.3..=0.7).contains(&a.fit.slope), format!("log-log slope {:.3} (r2 {:.4})", a.fit.slope, a.fit.r2)))
}

fn across(x: [f64; 2]) -> f64 {
    (PI * (x[1] + 0.5)).cos()
}

fn rect_setup(cells: usize, ny: usize, dt: f64, horizon: f64, tau0: f64) -> Result<NarrowSetup> {
    Ok(NarrowSetup { geo: narrow_shape_geometry(&rect_shape(), cells)?, ny, dt, horizon, tau0 })
}

fn narrow_convergence() -> Result<(bool, String)> {
    let s = rect_setup(32, 16, 0.01, 1.0, 0.2)?;
    let tests = [TestFunction::new("bump+across", |x| (-(x[0] - 0.4).powi(2) / 0.05).exp() + 0.5 * across(x))];
    let audit = narrow_limit_audit(&s, &ReactionSpec::sine(1.0, 0.0), &[0.4, 0.2, 0.1], &tests)?;
    let errs: Vec<String> = audit.rows.iter().map(|r| format!("{:.3e}", r.sup_error)).collect();

    // x2-independent data under a control: the 2-D solve is the graph solve
    let geo = narrow_shape_geometry(&rect_shape(), 24)?;
    let modes = (0..3).map(|k| NoiseMode::new(format!("cos{k}"), 1.0 / (1.0 + k as f64), move |x| (k as f64 * PI * x[0]).cos())).collect();
    let mut basis = NoiseBasis::new(modes)?;
    project_basis(&mut basis, &Geometry::Narrow(geo.clone()))?;
    let setup = NarrowSetup { geo: geo.clone(), ny: 6, dt: 0.01, horizon: 0.5, tau0: 0.1 };
    let graph = setup.graph_model(ReactionSpec::sine(1.0, 0.3), &basis)?;
    let d = setup.domain()?;
    let u0 = |x: [f64; 2]| (-(x[0] - 0.4).powi(2) / 0.05).exp();
    let bar = geo.wedge_callable(&u0)?;
    let pull = Pullback::new(&d, &Geometry::Narrow(geo.clone()))?;
    let control = Control::from_fn(graph.steps, 3, 0.01, |t, j| (t + j as f64).sin());
    let mut floor = 0.0f64;
    for delta in [0.4, 0.2, 0.1] {
        let m = MultiscaleModel::narrow(d.clone(), delta, ReactionSpec::sine(1.0, 0.3), &basis, 0.01, 0.5)?;
        let a = m.solve(&d.field(u0).values, 0.0, Some(&control), None)?;
        let b = solve_controlled(&graph, &bar, 0.0, &control, 1, 0)?;
        let g = pull.apply(&b.terminal);
        floor = floor.max(a.terminal.iter().zip(&g).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    let pass = audit.all_monotone() && floor < 1e-10;
    Ok((pass, format!("sup errors over delta 0.4, 0.2, 0.1: {errs:?}; controlled x2-independent gap {floor:.1e}")))
}

fn semigroup_layer() -> Result<(bool, String)> {
    let s = rect_setup(32, 16, 0.005, 0.5, 0.1)?;
    let tests = [
        TestFunction::new("cos-cos", |x| (PI * x[0]).cos() * (1.0 + across(x))),
        TestFunction::new("bump-across", |x| (-(x[0] - 0.3).powi(2) / 0.02).exp() * (1.0 + x[1])),
        TestFunction::new("step-like", |x| (8.0 * (x[0] - 0.5)).tanh() + across(x) * x[0]),
    ];
    let audit = semigroup_convergence_audit(&s, &[0.4, 0.2, 0.1], &tests)?;
    let monotone = audit.monotone.iter().filter(|m| m.1).count();
    let mut initial = f64::INFINITY;
    for t in &tests {
        for r in audit.rows_for(&t.name) {
            initial = initial.min(r.initial_error);
        }
    }
    let pass = monotone >= 3 && initial > 0.1;
    Ok((pass, format!("{monotone}/3 test functions monotone in delta; smallest t=0 error {initial:.3} at every delta")))
}

fn dichotomy() -> Result<(bool, String)> {
    let rows = embedding_dichotomy(&[1.5, 2.5], 4)?;
    let (lo, hi) = (&rows[0], &rows[1]);
    let w = lo.witness.as_ref().expect("witness is always built");
    let esc = hi.escape.as_ref();
    let pass = lo.witnessed() && hi.gamma_s.pass && hi.escape_vanishes();
    Ok((
        pass,
        format!(
            "kappa 1.5: max W-norm^2 {:.3} <= B {:.3}, min distance {:.3}; kappa 2.5: sqrt-gamma integral {:.4}, escape bound {:.2e} -> {:.2e}",
            w.max_w_norm().powi(2),
            w.bound,
            w.min_distance(),
            hi.gamma_s.integral,
            esc.map_or(f64::NAN, |e| e.rows[0].bound),
            esc.map_or(f64::NAN, |e| e.rows.last().unwrap().bound),
        ),
    ))
}

fn importance_sampling() -> Result<(bool, String)> {
    let m = narrow_model(&rect_shape(), 16, 4, ReactionSpec::sine(1.0, 0.5), 0.05, 1.0)?;
    let psi = bump(&m.space);
    let s = DeviationSetup::ldp(&m, bump(&m.space), 0.1)?;
    let ev = RareEvent::endpoint(psi.clone(), 0.0);
    let mut weights_ok = true;
    let mut worst = 0.0f64;
    for (k, amp) in [0.3, 0.7, 1.0].iter().enumerate() {
        let v = Control::from_fn(m.steps, m.n_modes(), m.dt, |t, j| amp * ((k + j) as f64 + 3.0 * t).cos());
        let est = girsanov_is_estimate(&s, &ev, &v, 20_000, 40 + k as u64)?;
        let z = (est.mean_weight - 1.0).abs() / est.weight_se;
        worst = worst.max(z);
        weights_ok &= z <= 3.0;
    }

    let m = narrow_model(&rect_shape(), 16, 4, ReactionSpec::sine(1.0, 0.3), 0.05, 1.0)?;
    let u0 = m.space.zeros().values;
    let s = DeviationSetup::ldp(&m, u0.clone(), 0.05)?;
    let pair = m.pairing(&psi);
    let mut pilot = (0..2000u64)
        .into_par_iter()
        .map(|i| Ok(pair.iter().zip(&s.simulate(None, 77, i)?.terminal).map(|(a, b)| a * b).sum::<f64>()))
        .collect::<Result<Vec<f64>>>()?;
    pilot.sort_by(f64::total_cmp);
    let r = pilot[(0.95 * pilot.len() as f64) as usize];
    let ev = RareEvent::endpoint(psi.clone(), r);
    let plain = estimate_probability(&s, &ev, 20_000, 5)?;
    let p = EndpointProblem::new(u0, psi, r, Regime::Ldp);
    let v = minimize_rate_endpoint(&p, &m, RateMode::Adjoint)?.control;
    let is = girsanov_is_estimate(&s, &ev, &v, 20_000, 6)?;
    let comb = (plain.se.powi(2) + is.se.powi(2)).sqrt();
    let agree = (plain.p_hat - is.p_hat).abs() <= 3.0 * comb;
    Ok((
        weights_ok && agree,
        format!("worst |mean weight - 1|/SE {worst:.2}; plain {:.4} vs tilted {:.4} (3 combined SE {:.4})", plain.p_hat, is.p_hat, 3.0 * comb),
    ))
}
