//! Skeleton equations and endpoint rate functions.
//!
//! The forward maps are the stepped schemes of [`crate::spde`] with the noise
//! switched off; gradients are exact adjoints of those discrete maps.

use crate::error::{Error, Result};
use crate::noise::{IncrementStream, NoiseBasis};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::scalar::Real;
use crate::spde::{Forcing, PathResult, SpdeModel};
use serde::{Deserialize, Serialize};

/// Piecewise constant control `φ[n, j]` on the solver time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub steps: usize,
    pub modes: usize,
    pub dt: f64,
    /// Row-major in the step index.
    pub values: Vec<f64>,
}

impl Control {
    pub fn zeros(steps: usize, modes: usize, dt: f64) -> Self {
        Self { steps, modes, dt, values: vec![0.0; steps * modes] }
    }

    pub fn for_model<T: Real>(model: &SpdeModel<T>) -> Self {
        Self::zeros(model.steps, model.n_modes(), model.dt)
    }

    /// `φ[n, j] = f(t_n, j)` with `t_n = nΔt`.
    pub fn from_fn(steps: usize, modes: usize, dt: f64, f: impl Fn(f64, usize) -> f64) -> Self {
        let mut c = Self::zeros(steps, modes, dt);
        for n in 0..steps {
            for j in 0..modes {
                c.values[n * modes + j] = f(n as f64 * dt, j);
            }
        }
        c
    }

    #[inline]
    pub fn get(&self, n: usize, j: usize) -> f64 {
        self.values[n * self.modes + j]
    }

    #[inline]
    pub fn set(&mut self, n: usize, j: usize, v: f64) {
        self.values[n * self.modes + j] = v;
    }

    /// `½ ∑ φ² Δt`.
    pub fn energy(&self) -> f64 {
        0.5 * self.dt * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| c * v).collect(), ..self.clone() }
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.steps != other.steps || self.modes != other.modes {
            return Err(Error::GridMismatch("controls live on different grids".into()));
        }
        Ok(Self { values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(), ..self.clone() })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn control_energy(phi: &Control) -> f64 {
    phi.energy()
}

/// `∂_t Z = L̄Z + B(Z) + G(Z)φ^∧`, `Z(0) = u0`.
pub fn solve_skeleton_ldp<T: Real>(model: &SpdeModel<T>, u0: &[T], phi: &Control) -> Result<PathResult<T>> {
    model.solve_forced(u0, Forcing::none().with_control(phi, 0.0))
}

/// `∂_t R = L̄R + b'(u⁰)R + G(u⁰)φ^∧`, `R(0) = 0`.
pub fn solve_skeleton_mdp<T: Real>(model: &SpdeModel<T>, u0_path: &[Vec<T>], phi: &Control) -> Result<PathResult<T>> {
    model.solve_mdp(u0_path, 0.0, 1.0, Some(phi), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Ldp,
    Mdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    Adjoint,
    LqOracle,
}

/// Minimize `½∫‖φ‖²` subject to `⟨X(T), ψ⟩_ν = r`, with `X` the LDP or MDP skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointProblem<T> {
    pub u0: Vec<T>,
    /// Nodal values of the observable `ψ`.
    pub psi: Vec<T>,
    pub target: f64,
    pub regime: Regime,
    pub rho0: f64,
    pub growth: f64,
    pub outer_iters: usize,
    /// Constraint residual tolerance relative to `|r'|`.
    pub tol: f64,
    pub inner: LbfgsOptions,
}

impl<T: Real> EndpointProblem<T> {
    pub fn new(u0: Vec<T>, psi: Vec<T>, target: f64, regime: Regime) -> Self {
        Self { u0, psi, target, regime, rho0: 10.0, growth: 10.0, outer_iters: 6, tol: 1e-4, inner: LbfgsOptions::default() }
    }

    fn validate(&self, model: &SpdeModel<T>) -> Result<()> {
        let n = model.n_dofs();
        if self.u0.len() != n || self.psi.len() != n {
            return Err(Error::GridMismatch(format!("problem vectors must have {n} entries")));
        }
        if self.psi.iter().all(|v| *v == T::zero()) {
            return Err(Error::Config("observable psi must be nonzero".into()));
        }
        if !self.target.is_finite() {
            return Err(Error::Config("target r must be finite".into()));
        }
        if !(self.rho0 > 0.0 && self.growth > 1.0 && self.outer_iters >= 1 && self.tol > 0.0) {
            return Err(Error::Config("penalty schedule needs rho0 > 0, growth > 1, outer_iters >= 1, tol > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyStep {
    pub rho: f64,
    pub energy: f64,
    pub endpoint: f64,
    pub residual: f64,
    pub iters: usize,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    /// `J(r)`.
    pub value: f64,
    pub control: Control,
    pub endpoint: f64,
    /// `|⟨X(T), ψ⟩ − r|`.
    pub residual: f64,
    /// `r'`: target minus the uncontrolled endpoint.
    pub shift: f64,
    /// `σ²` of the linear-quadratic representer (oracle mode only).
    pub sigma2: Option<f64>,
    pub trace: Vec<PenaltyStep>,
}

/// Forward states `X_0..X_N` of the skeleton, all stored for the adjoint.
/// `base = None` runs the LDP skeleton from `start`; `Some(u⁰)` runs the
/// linearized MDP skeleton from zero.
pub fn skeleton_states<T: Real>(model: &SpdeModel<T>, start: &[T], phi: &Control, base: Option<&[Vec<T>]>) -> Result<Vec<Vec<T>>> {
    let n = model.n_dofs();
    let dt = T::of(model.dt);
    let r = &model.reaction;
    let mut vf = vec![T::zero(); n];
    let mut src = vec![T::zero(); n];
    let mut out = vec![T::zero(); n];
    let first = if base.is_some() { vec![T::zero(); n] } else { start.to_vec() };
    let mut states = Vec::with_capacity(model.steps + 1);
    states.push(first);
    for step in 0..model.steps {
        let row: Vec<T> = (0..phi.modes).map(|j| T::of(phi.get(step, j))).collect();
        NoiseBasis::graph_increment(&model.modes, &row, &mut vf);
        let x = &states[step];
        for i in 0..n {
            let (drift, g) = match base {
                None => {
                    let u = x[i].as_f64();
                    (r.b(u), r.g(u))
                }
                Some(p) => {
                    let u = p[step][i].as_f64();
                    (r.db(u) * x[i].as_f64(), r.g(u))
                }
            };
            src[i] = dt * T::of(drift) + T::of(g) * dt * vf[i];
        }
        model.scheme.step_with_source(x, &src, &mut out);
        let nrm = model.norm(&out);
        if !(nrm <= crate::spde::BLOW_UP) {
            return Err(Error::BlowUp { step: step + 1, norm: nrm });
        }
        states.push(out.clone());
    }
    Ok(states)
}

/// `∂F/∂φ[n, j]` for `F = p · X_N` by the discrete adjoint of [`skeleton_states`].
pub fn endpoint_gradient<T: Real>(model: &SpdeModel<T>, states: &[Vec<T>], phi: &Control, base: Option<&[Vec<T>]>, p: &[T]) -> Vec<f64> {
    let n = model.n_dofs();
    let j = model.n_modes();
    let dt = model.dt;
    let r = &model.reaction;
    let mass = model.scheme.mass();
    let mut grad = vec![0.0; model.steps * j];
    let mut lam = p.to_vec();
    let mut mm = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut vf = vec![T::zero(); n];
    for step in (0..model.steps).rev() {
        // μ = A⁻¹ λ_{n+1}; A is symmetric.
        let mut mu = lam.clone();
        model.scheme.solve(&mut mu);
        for i in 0..n {
            mm[i] = mass[i] * mu[i];
        }
        let x = &states[step];
        let row: Vec<T> = (0..phi.modes).map(|k| T::of(phi.get(step, k))).collect();
        NoiseBasis::graph_increment(&model.modes, &row, &mut vf);
        let mut gv = vec![0.0; n];
        model.scheme.apply_explicit(&mu, &mut next);
        for i in 0..n {
            let (dsrc, g) = match base {
                None => {
                    let u = x[i].as_f64();
                    (dt * (r.db(u) + r.dg(u) * vf[i].as_f64()), r.g(u))
                }
                Some(pth) => {
                    let u = pth[step][i].as_f64();
                    (dt * r.db(u), r.g(u))
                }
            };
            next[i] += T::of(dsrc) * mm[i];
            gv[i] = mm[i].as_f64() * g;
        }
        for (k, e) in model.modes.iter().enumerate() {
            grad[step * j + k] = dt * e.iter().zip(&gv).map(|(ei, gi)| ei.as_f64() * gi).sum::<f64>();
        }
        std::mem::swap(&mut lam, &mut next);
    }
    grad
}

fn dot_f64<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

struct Prepared<T> {
    pairing: Vec<T>,
    base: Option<Vec<Vec<T>>>,
    /// `⟨X⁰(T), ψ⟩` of the uncontrolled skeleton.
    free_endpoint: f64,
}

fn prepare<T: Real>(problem: &EndpointProblem<T>, model: &SpdeModel<T>) -> Result<Prepared<T>> {
    problem.validate(model)?;
    let pairing = model.pairing(&problem.psi);
    let base = match problem.regime {
        Regime::Ldp => None,
        Regime::Mdp => Some(model.deterministic_trajectory(&problem.u0)?),
    };
    let free_endpoint = match problem.regime {
        Regime::Ldp => {
            let z = skeleton_states(model, &problem.u0, &Control::for_model(model), None)?;
            dot_f64(&pairing, z.last().unwrap())
        }
        Regime::Mdp => 0.0,
    };
    Ok(Prepared { pairing, base, free_endpoint })
}

/// Endpoint functional `F(φ) = ⟨X^φ(T), ψ⟩_ν` and its gradient.
pub fn endpoint_value_and_gradient<T: Real>(problem: &EndpointProblem<T>, model: &SpdeModel<T>, phi: &Control) -> Result<(f64, Vec<f64>)> {
    let prep = prepare(problem, model)?;
    eval_endpoint(problem, model, &prep, phi, true)
}

fn eval_endpoint<T: Real>(problem: &EndpointProblem<T>, model: &SpdeModel<T>, prep: &Prepared<T>, phi: &Control, with_grad: bool) -> Result<(f64, Vec<f64>)> {
    let base = prep.base.as_deref();
    let states = skeleton_states(model, &problem.u0, phi, base)?;
    let f = dot_f64(&prep.pairing, states.last().unwrap());
    let g = if with_grad { endpoint_gradient(model, &states, phi, base, &prep.pairing) } else { Vec::new() };
    Ok((f, g))
}

/// Linear-quadratic representer: for `b(u) = cu` (or 0) and `g = 1` the endpoint
/// is affine in `φ`, `F(φ) = F(0) + Δt ∑ a[n,j] φ[n,j]`, with
/// `a[n,j] = ⟨S_Δt^{N−1−n} A⁻¹M e_j^∧, ψ⟩` computed by forward propagation.
/// Returns `σ² = Δt ∑ a²` and `a`.
pub fn lq_sigma2<T: Real>(model: &SpdeModel<T>, psi: &[T]) -> Result<(f64, Vec<f64>)> {
    let c = match model.reaction.name.as_str() {
        "zero" => 0.0,
        "linear" => model.reaction.db(0.0),
        other => return Err(Error::Config(format!("lq oracle needs a linear reaction with g = 1, got '{other}'"))),
    };
    if (model.reaction.g(0.0) - 1.0).abs() > 0.0 || model.reaction.dg(0.3) != 0.0 {
        return Err(Error::Config("lq oracle needs g = 1".into()));
    }
    let p = model.pairing(psi);
    let (n, j, steps) = (model.n_dofs(), model.n_modes(), model.steps);
    let mass = model.scheme.mass();
    let dt = T::of(model.dt);
    let mut a = vec![0.0; steps * j];
    let mut tmp = vec![T::zero(); n];
    for (k, e) in model.modes.iter().enumerate() {
        let mut v: Vec<T> = e.iter().zip(mass).map(|(x, m)| *x * *m).collect();
        model.scheme.solve(&mut v);
        for lag in 0..steps {
            a[(steps - 1 - lag) * j + k] = dot_f64(&p, &v);
            let src: Vec<T> = v.iter().map(|x| dt * T::of(c) * *x).collect();
            model.scheme.step_with_source(&v, &src, &mut tmp);
            std::mem::swap(&mut v, &mut tmp);
        }
    }
    let sigma2 = model.dt * a.iter().map(|x| x * x).sum::<f64>();
    Ok((sigma2, a))
}

/// `J(r) = inf { ½∫‖φ‖² : ⟨X^φ(T), ψ⟩ = r }`.
pub fn minimize_rate_endpoint<T: Real>(problem: &EndpointProblem<T>, model: &SpdeModel<T>, mode: RateMode) -> Result<RateEstimate> {
    let prep = prepare(problem, model)?;
    let shift = problem.target - prep.free_endpoint;
    match mode {
        RateMode::LqOracle => {
            let (sigma2, a) = lq_sigma2(model, &problem.psi)?;
            if !(sigma2 > 0.0) {
                return Err(Error::Optimizer("observable is not reachable by the noise (sigma^2 = 0)".into()));
            }
            // φ = r' a / σ² attains the constraint with energy r'²/(2σ²).
            let mut control = Control::for_model(model);
            control.values = a.iter().map(|x| shift * x / sigma2).collect();
            let (endpoint, _) = eval_endpoint(problem, model, &prep, &control, false)?;
            Ok(RateEstimate {
                value: shift * shift / (2.0 * sigma2),
                residual: (endpoint - problem.target).abs(),
                endpoint,
                control,
                shift,
                sigma2: Some(sigma2),
                trace: Vec::new(),
            })
        }
        RateMode::Adjoint => adjoint_rate(problem, model, &prep, shift),
    }
}

fn adjoint_rate<T: Real>(problem: &EndpointProblem<T>, model: &SpdeModel<T>, prep: &Prepared<T>, shift: f64) -> Result<RateEstimate> {
    let sd = model.dt.sqrt();
    let target = problem.target;
    let allowed = problem.tol * shift.abs() + 1e-12;
    let mut control = Control::for_model(model);
    let mut trace = Vec::new();
    // Optimize in x = φ√Δt so the energy is ½|x|².
    let mut x = vec![0.0; control.values.len()];
    let mut rho = problem.rho0;
    let mut failure: Option<Error> = None;
    for _ in 0..problem.outer_iters {
        let out = lbfgs(
            |xv, g| {
                let mut phi = control.clone();
                phi.values.iter_mut().zip(xv).for_each(|(p, v)| *p = v / sd);
                match eval_endpoint(problem, model, prep, &phi, true) {
                    Ok((f, gf)) => {
                        let res = f - target;
                        for i in 0..xv.len() {
                            g[i] = xv[i] + 2.0 * rho * res * gf[i] / sd;
                        }
                        0.5 * xv.iter().map(|v| v * v).sum::<f64>() + rho * res * res
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::INFINITY
                    }
                }
            },
            x,
            problem.inner,
        );
        x = out.x;
        control.values.iter_mut().zip(&x).for_each(|(p, v)| *p = v / sd);
        let (endpoint, _) = eval_endpoint(problem, model, prep, &control, false)?;
        let residual = (endpoint - target).abs();
        trace.push(PenaltyStep { rho, energy: control.energy(), endpoint, residual, iters: out.iters, grad_norm: out.grad_norm });
        if residual <= allowed {
            return Ok(RateEstimate { value: control.energy(), control, endpoint, residual, shift, sigma2: None, trace });
        }
        rho *= problem.growth;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let summary: Vec<String> = trace.iter().map(|s| format!("rho={:.0e} J={:.6e} residual={:.3e} iters={}", s.rho, s.energy, s.residual, s.iters)).collect();
    Err(Error::Optimizer(format!("penalty loop did not reach residual {allowed:.3e}: {}", summary.join("; "))))
}

/// Largest relative error between the adjoint directional derivative and a
/// central difference of step `h`, over `directions` Gaussian directions
/// (plus the zero direction).
pub fn gradient_check<T: Real>(problem: &EndpointProblem<T>, model: &SpdeModel<T>, phi0: &Control, directions: usize, h: f64, seed: u64) -> Result<f64> {
    let prep = prepare(problem, model)?;
    let (_, grad) = eval_endpoint(problem, model, &prep, phi0, true)?;
    let mut stream = IncrementStream::new(seed, 0);
    let mut worst: f64 = 0.0;
    for k in 0..=directions {
        let d: Vec<f64> = if k == 0 { vec![0.0; grad.len()] } else { (0..grad.len()).map(|_| stream.next_normal()).collect() };
        let shifted = |s: f64| {
            let mut c = phi0.clone();
            c.values.iter_mut().zip(&d).for_each(|(p, v)| *p += s * v);
            c
        };
        let (fp, _) = eval_endpoint(problem, model, &prep, &shifted(h), false)?;
        let (fm, _) = eval_endpoint(problem, model, &prep, &shifted(-h), false)?;
        let fd = (fp - fm) / (2.0 * h);
        let ad: f64 = grad.iter().zip(&d).map(|(g, v)| g * v).sum();
        let scale = ad.abs().max(fd.abs());
        let rel = if scale == 0.0 { 0.0 } else { (fd - ad).abs() / scale };
        worst = worst.max(rel);
    }
    Ok(worst)
}
