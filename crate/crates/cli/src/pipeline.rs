//! Builds the model a config describes and runs its audit.

use crate::config::*;
use mgspde::audit::{embedding_dichotomy, WeightSpec};
use mgspde::deviations::*;
use mgspde::experiments;
use mgspde::geometry::*;
use mgspde::metric_graph::GraphWeight;
use mgspde::noise::*;
use mgspde::skeleton::*;
use mgspde::spde::*;
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Runtime failure tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

trait Stage<T> {
    fn at(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: std::fmt::Display> Stage<T> for Result<T, E> {
    fn at(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError { stage, message: e.to_string() })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub criterion: usize,
    pub pass: bool,
    pub detail: String,
    pub outputs: Vec<String>,
}

fn shape(name: &str, p: &std::collections::BTreeMap<String, f64>) -> Result<NarrowShape, StageError> {
    let g = |k: &str, d: f64| p.get(k).copied().unwrap_or(d);
    Ok(match name {
        "rectangle" => NarrowShape::Rectangle { a: g("a", 0.0), b: g("b", 1.0), half_width: g("half_width", 0.5) },
        "disk" => NarrowShape::Disk,
        "fish" => NarrowShape::Fish { fold: g("fold", 0.2) },
        "bulge" => NarrowShape::Bulge { length: g("length", 1.0), w0: g("w0", 0.4), w1: g("w1", 0.2) },
        other => return Err(StageError { stage: "geometry", message: format!("unknown shape '{other}' (known: rectangle, disk, fish, bulge)") }),
    })
}

fn build_model(cfg: &ExperimentConfig) -> Result<SpdeModel<f64>, StageError> {
    let (geo, narrow) = match cfg.geometry.as_ref().unwrap() {
        GeometryBlock::Narrow { shape: s, params, cells } => {
            let sh = shape(s, params)?;
            (Geometry::Narrow(narrow_shape_geometry(&sh, *cells).at("geometry")?), Some(sh))
        }
        GeometryBlock::Hamiltonian { name, params, cells, z_max, label_grid } => {
            let h = Hamiltonian::from_name(name, params).at("geometry")?;
            let cps = find_critical_points(&h, 40, 1e-6).at("geometry")?;
            let opts = ReebOptions { label_grid: *label_grid, cells: *cells, z_max: *z_max, ..ReebOptions::default() };
            (Geometry::Hamiltonian(Box::new(build_reeb_graph(&h, &cps, &opts).at("geometry")?)), None)
        }
    };
    let mut basis = match cfg.noise.as_ref().unwrap() {
        NoiseBlock::Spectral { modes, eps0 } => {
            let sh = narrow.as_ref().ok_or_else(|| StageError { stage: "noise", message: "spectral noise needs a narrow geometry".into() })?;
            build_spectral_basis_narrow(sh, *modes, eps0.unwrap_or(1.0)).at("noise")?
        }
        NoiseBlock::PlaneWaves { atoms, weights } => spectral_measure_basis(atoms, weights).at("noise")?,
    };
    project_basis(&mut basis, &geo).at("noise")?;
    let weight = match cfg.weight.as_ref().map(|w| (w.form.as_str(), &w.params)) {
        None | Some(("unit", _)) => GraphWeight::unit(),
        Some((form, p)) => WeightSpec::from_name(form, p).at("weight")?.graph_weight(),
    };
    let r = cfg.reaction.as_ref().unwrap();
    let reaction = ReactionSpec::from_name(&r.name, &r.params).at("spde")?;
    let s = cfg.solver.as_ref().unwrap();
    SpdeModel::new(geo.space(), reaction, &basis, weight, s.dt, s.theta, s.horizon).at("spde")
}

fn named(space: &mgspde::Space, f: &NamedFunction) -> Result<Vec<f64>, StageError> {
    Ok(initial_condition(space, &f.name, &f.params).at("spde")?.values)
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), StageError> {
    let mut w = csv::Writer::from_path(path).at("output")?;
    for r in rows {
        w.serialize(r).at("output")?;
    }
    w.flush().at("output")
}

fn write_json<S: Serialize>(path: &Path, v: &S) -> Result<(), StageError> {
    let s = serde_json::to_string_pretty(v).at("output")?;
    std::fs::write(path, s + "\n").at("output")
}

fn sine_control(m: &SpdeModel<f64>, amp: f64) -> Control {
    Control::from_fn(m.steps, m.n_modes(), m.dt, |t, j| amp * (t + j as f64).sin())
}

#[derive(Serialize)]
struct VarianceRow {
    epsilon: f64,
    lambda: f64,
    variance: f64,
    sigma2: f64,
    se: f64,
}

/// Runs the scenario and writes its outputs into `dir`; returns the verdict.
pub fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<Summary, StageError> {
    std::fs::create_dir_all(dir).at("output")?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    let (pass, detail) = match cfg.audit.kind {
        AuditKind::Check => {
            let o = experiments::run(cfg.criterion).at("check")?;
            if cfg.criterion == 12 {
                let rows = embedding_dichotomy(&[1.2, 1.5, 1.8, 2.2, 2.5, 3.0], 4).at("audit")?;
                let reports: Vec<_> = rows
                    .iter()
                    .flat_map(|r| {
                        let w = WeightSpec::power(1.0, r.kappa1, 1.0);
                        let mut v = vec![r.gamma_s.report(&w)];
                        v.extend(r.escape.as_ref().map(|e| e.report(&w)));
                        v
                    })
                    .collect();
                let p = dir.join("audit_reports.json");
                write_json(&p, &reports)?;
                outputs.push(p);
            }
            (o.pass, o.detail)
        }
        AuditKind::Ldp | AuditKind::Mdp => rate_run(cfg, dir, &mut outputs)?,
        AuditKind::ControlledError | AuditKind::MdpError => error_run(cfg, dir, &mut outputs)?,
    };
    let summary = Summary {
        scenario: cfg.scenario.clone(),
        criterion: cfg.criterion,
        pass,
        detail,
        outputs: outputs.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect(),
    };
    let p = dir.join("summary.json");
    write_json(&p, &summary)?;
    Ok(summary)
}

fn rate_run(cfg: &ExperimentConfig, dir: &Path, outputs: &mut Vec<PathBuf>) -> Result<(bool, String), StageError> {
    let m = build_model(cfg)?;
    let psi = named(&m.space, cfg.audit.observable.as_ref().unwrap())?;
    let u0 = named(&m.space, cfg.audit.initial.as_ref().unwrap())?;
    let rate_cfg = cfg.rate.as_ref().unwrap();
    let (sigma2, _) = lq_sigma2(&m, &psi).at("skeleton")?;
    let r = rate_cfg.target.unwrap() * sigma2.sqrt();
    let mdp = cfg.audit.kind == AuditKind::Mdp;
    let regime = if mdp { Regime::Mdp } else { Regime::Ldp };
    let problem = EndpointProblem::new(if mdp { m.space.zeros().values } else { u0.clone() }, psi.clone(), r, regime);
    let mode = if rate_cfg.tilt == TiltKind::Adjoint { RateMode::Adjoint } else { RateMode::LqOracle };
    let est = minimize_rate_endpoint(&problem, &m, mode).or_else(|_| minimize_rate_endpoint(&problem, &m, RateMode::Adjoint)).at("skeleton")?;
    let control = (rate_cfg.tilt != TiltKind::None).then_some(&est.control);
    let event = RareEvent::endpoint(psi.clone(), r);
    let grid = &cfg.audit.epsilon;
    if !mdp {
        let a = ldp_slope_audit(&m, &u0, &event, grid, est.value, control, cfg.audit.samples, cfg.seed).at("deviations")?;
        let p = dir.join("ldp_audit.csv");
        write_csv(&p, &a.ldp_rows())?;
        outputs.push(p);
        let pass = a.final_rel_error < 0.15 && a.trend_toward_rate;
        return Ok((pass, format!("rate {:.4}; rel. error at smallest eps {:.3}; trend toward rate: {}", est.value, a.final_rel_error, a.trend_toward_rate)));
    }
    let scale = MdpScale::parse(cfg.audit.scale.as_ref().unwrap()).at("deviations")?;
    let a = mdp_slope_audit(&m, &u0, &event, grid, &scale, est.value, control, cfg.audit.samples, cfg.seed).at("deviations")?;
    let p = dir.join("mdp_audit.csv");
    write_csv(&p, &a.mdp_rows())?;
    outputs.push(p);

    // law of λ⟨X̄(T), ψ⟩ along the ladder
    let pair = m.pairing(&psi);
    let n = cfg.audit.samples;
    let se = sigma2 * (2.0 / (n as f64 - 1.0)).sqrt();
    let mut rows = Vec::new();
    for &eps in grid {
        let s = DeviationSetup::mdp(&m, u0.clone(), eps, scale.eval(eps)).at("deviations")?;
        let xs = (0..n as u64)
            .into_par_iter()
            .map(|i| Ok(s.lambda * pair.iter().zip(&s.simulate(None, cfg.seed.wrapping_add(1), i)?.terminal).map(|(a, b)| a * b).sum::<f64>()))
            .collect::<mgspde::Result<Vec<f64>>>()
            .at("spde")?;
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        rows.push(VarianceRow { epsilon: eps, lambda: s.lambda, variance, sigma2, se });
    }
    let p = dir.join("mdp_variance.csv");
    write_csv(&p, &rows)?;
    outputs.push(p);
    let var_ok = rows.iter().all(|r| (r.variance - sigma2).abs() <= 3.0 * se);
    let pass = a.final_rel_error < 0.15 && var_ok;
    Ok((pass, format!("rate {:.4}; rel. error at smallest eps {:.3}; variances within 3 SE of {sigma2:.4}: {var_ok}", est.value, a.final_rel_error)))
}

fn error_run(cfg: &ExperimentConfig, dir: &Path, outputs: &mut Vec<PathBuf>) -> Result<(bool, String), StageError> {
    let m = build_model(cfg)?;
    let u0 = named(&m.space, cfg.audit.initial.as_ref().unwrap())?;
    let v = sine_control(&m, cfg.audit.control_amplitude.unwrap());
    let grid = &cfg.audit.epsilon;
    let (a, lo, hi) = if cfg.audit.kind == AuditKind::ControlledError {
        (controlled_error_rate_audit(&m, &u0, &v, grid, cfg.audit.samples, cfg.seed).at("deviations")?, 0.8, 1.2)
    } else {
        let scale = MdpScale::parse(cfg.audit.scale.as_ref().unwrap()).at("deviations")?;
        let a = mdp_error_rate_audit(&m, &u0, &v, grid, &scale, cfg.audit.alpha0.unwrap(), cfg.audit.samples, cfg.seed).at("deviations")?;
        // accepted band: the envelope's own slope in ε, ± 0.2
        let env: Vec<f64> = a.rows.iter().map(|r| r.envelope).collect();
        let e = SlopeFit::loglog(grid, &env).at("deviations")?.slope;
        (a, e - 0.2, e + 0.2)
    };
    let p = dir.join("error_audit.csv");
    write_csv(&p, &a.rows)?;
    outputs.push(p);
    let pass = (lo..=hi).contains(&a.fit.slope);
    Ok((pass, format!("log-log slope {:.3}, accepted range [{lo:.2}, {hi:.2}]", a.fit.slope)))
}
