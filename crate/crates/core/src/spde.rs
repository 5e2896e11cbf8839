//! Time stepping of the graph SPDE, its deterministic limit, the controlled
//! equations and the moderate-deviation process.
//!
//! Every solver uses the stochastic θ-scheme
//! `(M + θΔtK) u⁺ = (M − (1−θ)ΔtK) u + M s(u)` with the reaction, noise and
//! control collected in the explicit source `s`.

use crate::error::{Error, Result};
use crate::generator::{DiscreteGenerator, ThetaScheme};
use crate::metric_graph::{GraphFunction, GraphSpace, GraphWeight, MeasureRules};
use crate::noise::{IncrementStream, NoiseBasis, WienerSample};
use crate::scalar::Real;
use crate::skeleton::Control;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Reaction `b` and noise intensity `g` with their derivatives.
#[derive(Clone)]
pub struct ReactionSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    b: Scalar,
    db: Scalar,
    g: Scalar,
    dg: Scalar,
    /// Lipschitz constants of `b` and `g`.
    pub lip_b: f64,
    pub lip_g: f64,
    /// Hölder exponent and constant of `b'`.
    pub alpha0: f64,
    pub holder: f64,
}

impl fmt::Debug for ReactionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReactionSpec").field("name", &self.name).field("params", &self.params).finish()
    }
}

fn param(p: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    p.get(key).copied().unwrap_or(default)
}

impl ReactionSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
        db: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dg: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lip_b: f64,
        lip_g: f64,
        alpha0: f64,
        holder: f64,
    ) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
            b: Arc::new(b),
            db: Arc::new(db),
            g: Arc::new(g),
            dg: Arc::new(dg),
            lip_b,
            lip_g,
            alpha0,
            holder,
        }
    }

    #[inline]
    pub fn b(&self, u: f64) -> f64 {
        (self.b)(u)
    }
    #[inline]
    pub fn db(&self, u: f64) -> f64 {
        (self.db)(u)
    }
    #[inline]
    pub fn g(&self, u: f64) -> f64 {
        (self.g)(u)
    }
    #[inline]
    pub fn dg(&self, u: f64) -> f64 {
        (self.dg)(u)
    }

    /// `b = 0`, `g = 1`.
    pub fn zero() -> Self {
        Self::new("zero", |_| 0.0, |_| 0.0, |_| 1.0, |_| 0.0, 0.0, 0.0, 1.0, 0.0)
    }

    /// `b(u) = c u`, `g = 1`.
    pub fn linear(c: f64) -> Self {
        let mut r = Self::new("linear", move |u| c * u, move |_| c, |_| 1.0, |_| 0.0, c.abs(), 0.0, 1.0, 0.0);
        r.params.insert("c".into(), c);
        r
    }

    /// `b(u) = a sin u`, `g(u) = 1 + s sin u`.
    pub fn sine(a: f64, s: f64) -> Self {
        let mut r = Self::new(
            "sine",
            move |u| a * u.sin(),
            move |u| a * u.cos(),
            move |u| 1.0 + s * u.sin(),
            move |u| s * u.cos(),
            a.abs(),
            s.abs(),
            1.0,
            a.abs(),
        );
        r.params.insert("a".into(), a);
        r.params.insert("s".into(), s);
        r
    }

    /// `b(u) = a tanh u − c u`, `g = 1`.
    pub fn tanh(a: f64, c: f64) -> Self {
        let mut r = Self::new(
            "tanh",
            move |u| a * u.tanh() - c * u,
            move |u| a / u.cosh().powi(2) - c,
            |_| 1.0,
            |_| 0.0,
            a.abs() + c.abs(),
            0.0,
            1.0,
            a.abs() * 4.0 / (3.0 * 3f64.sqrt()),
        );
        r.params.insert("a".into(), a);
        r.params.insert("c".into(), c);
        r
    }

    /// Lipschitz `b` whose derivative `min(|u|,1)^{α₀}` is exactly `α₀`-Hölder.
    pub fn holder(alpha0: f64) -> Self {
        let p = 1.0 + alpha0;
        let mut r = Self::new(
            "holder",
            move |u: f64| {
                let a = u.abs();
                let v = if a <= 1.0 { a.powf(p) / p } else { 1.0 / p + (a - 1.0) };
                v.copysign(u)
            },
            move |u: f64| u.abs().min(1.0).powf(alpha0),
            |_| 1.0,
            |_| 0.0,
            1.0,
            0.0,
            alpha0,
            1.0,
        );
        r.params.insert("alpha0".into(), alpha0);
        r
    }

    pub fn from_name(name: &str, p: &BTreeMap<String, f64>) -> Result<Self> {
        let mut r = match name {
            "zero" => Self::zero(),
            "linear" => Self::linear(param(p, "c", -1.0)),
            "sine" => Self::sine(param(p, "a", 1.0), param(p, "s", 0.0)),
            "tanh" => Self::tanh(param(p, "a", 1.0), param(p, "c", 1.0)),
            "holder" => {
                let a = param(p, "alpha0", 0.5);
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::Config(format!("reaction.alpha0 = {a} must lie in (0, 1]")));
                }
                Self::holder(a)
            }
            other => return Err(Error::Config(format!("unknown reaction '{other}' (known: {})", Self::registry().join(", ")))),
        };
        r.params.extend(p.iter().map(|(k, v)| (k.clone(), *v)));
        Ok(r)
    }

    pub fn registry() -> Vec<&'static str> {
        vec!["zero", "linear", "sine", "tanh", "holder"]
    }

    /// Samples the Lipschitz and Hölder bounds on a lattice of `[-range, range]`.
    pub fn check(&self, range: f64, points: usize) -> Result<()> {
        let us: Vec<f64> = (0..points).map(|i| -range + 2.0 * range * i as f64 / (points - 1) as f64).collect();
        let slack = 1.0 + 1e-9;
        for (i, &u) in us.iter().enumerate() {
            for &v in &us[i + 1..] {
                let d = (u - v).abs();
                if (self.b(u) - self.b(v)).abs() > slack * self.lip_b * d + 1e-12 {
                    return Err(Error::Config(format!("reaction {}: b is not {}-Lipschitz near ({u}, {v})", self.name, self.lip_b)));
                }
                if (self.g(u) - self.g(v)).abs() > slack * self.lip_g * d + 1e-12 {
                    return Err(Error::Config(format!("reaction {}: g is not {}-Lipschitz near ({u}, {v})", self.name, self.lip_g)));
                }
                if (self.db(u) - self.db(v)).abs() > slack * self.holder * d.powf(self.alpha0) + 1e-12 {
                    return Err(Error::Config(format!("reaction {}: b' is not {}-Hölder near ({u}, {v})", self.name, self.alpha0)));
                }
            }
        }
        Ok(())
    }
}

/// Stored trajectory: thinned snapshots, running sup of the `H̄_γ` norm, and
/// the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult<T> {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<T>>,
    pub sup_norm: f64,
    pub terminal: Vec<T>,
    /// `(root seed, sample index)` for stochastic runs.
    pub seed: Option<(u64, u64)>,
    /// `ln dℙ/dℚ` of a tilted run (0 without a tilt).
    pub log_weight: f64,
}

pub const MAX_SNAPSHOTS: usize = 256;
pub const BLOW_UP: f64 = 1e12;

/// What drives a run besides the linear part.
#[derive(Clone, Copy)]
pub struct Forcing<'a> {
    /// Noise amplitude in front of `g(u) ∑ e_j^∧ ΔB_j` (0 switches noise off).
    pub noise: f64,
    pub control: Option<&'a Control>,
    /// Multiplier turning the control into a Brownian drift for the weight
    /// (`1/√ε` for the LDP equation, `λ` for the moderate-deviation one).
    pub tilt: f64,
    pub seed: Option<(u64, u64)>,
    /// Prescribed increments; when set they replace the seeded stream.
    pub increments: Option<&'a WienerSample>,
}

impl<'a> Forcing<'a> {
    pub fn none() -> Self {
        Forcing { noise: 0.0, control: None, tilt: 0.0, seed: None, increments: None }
    }

    pub fn seeded(noise: f64, root_seed: u64, index: u64) -> Self {
        Forcing { noise, seed: Some((root_seed, index)), ..Self::none() }
    }

    pub fn with_control(self, control: &'a Control, tilt: f64) -> Self {
        Forcing { control: Some(control), tilt, ..self }
    }
}

/// Discrete model shared by all solvers: generator, scheme, reaction, projected
/// noise modes and the `H̄_γ` measure.
#[derive(Clone)]
pub struct SpdeModel<T> {
    pub space: GraphSpace<T>,
    pub scheme: ThetaScheme<T>,
    pub reaction: ReactionSpec,
    /// `e_j^∧` rows.
    pub modes: Vec<Vec<T>>,
    pub rules: MeasureRules<T>,
    pub weight: GraphWeight<T>,
    pub dt: f64,
    pub steps: usize,
}

impl<T: Real> fmt::Debug for SpdeModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdeModel").field("reaction", &self.reaction).field("dt", &self.dt).field("steps", &self.steps).field("modes", &self.modes.len()).finish()
    }
}

impl<T: Real> SpdeModel<T> {
    /// `horizon` must be an integer multiple of `dt`.
    pub fn new(
        space: &GraphSpace<T>,
        reaction: ReactionSpec,
        basis: &NoiseBasis,
        weight: GraphWeight<T>,
        dt: f64,
        theta: f64,
        horizon: f64,
    ) -> Result<Self> {
        let steps = (horizon / dt).round();
        if !(dt > 0.0) || !(horizon > 0.0) || ((steps * dt - horizon).abs() > 1e-9 * horizon) {
            return Err(Error::Config(format!("dt = {dt} must divide the horizon T = {horizon}")));
        }
        let generator = DiscreteGenerator::assemble(space)?;
        let scheme = ThetaScheme::new(&generator, T::of(theta), T::of(dt))?;
        let modes = basis.projected_values::<T>()?;
        if modes.iter().any(|m| m.len() != space.n_dofs()) {
            return Err(Error::GridMismatch("noise modes were projected on a different graph".into()));
        }
        let rules = MeasureRules::new(space, &weight);
        Ok(Self { space: space.clone(), scheme, reaction, modes, rules, weight, dt, steps: steps as usize })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }

    pub fn norm(&self, u: &[T]) -> f64 {
        self.rules.inner(&self.space, u, u).as_f64().max(0.0).sqrt()
    }

    /// Pairing vector `p` with `p·u = ⟨u, ψ⟩_{ν_γ}`.
    pub fn pairing(&self, psi: &[T]) -> Vec<T> {
        self.rules.pairing_vector(&self.space, psi)
    }

    fn stride(&self) -> usize {
        self.steps.div_ceil(MAX_SNAPSHOTS - 1).max(1)
    }

    fn check_control(&self, c: &Control) -> Result<()> {
        if c.steps != self.steps || c.modes != self.n_modes() || (c.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::GridMismatch(format!(
                "control is {}x{} with dt {}, model needs {}x{} with dt {}",
                c.steps,
                c.modes,
                c.dt,
                self.steps,
                self.n_modes(),
                self.dt
            )));
        }
        Ok(())
    }

    /// Generic stepping loop; `source(n, u, ξ, s)` fills the explicit source
    /// given the state and the noise field `ξ = ∑ e_j^∧ ΔB_j` of step `n`.
    fn run(
        &self,
        u0: &[T],
        forcing: Forcing<'_>,
        mut source: impl FnMut(usize, &[T], &[T], &mut [T]),
    ) -> Result<PathResult<T>> {
        let n = self.n_dofs();
        if u0.len() != n {
            return Err(Error::GridMismatch(format!("initial state has {} values, graph has {n} dofs", u0.len())));
        }
        if let Some(c) = forcing.control {
            self.check_control(c)?;
        }
        if let Some(w) = forcing.increments {
            if w.steps != self.steps || w.modes != self.n_modes() || (w.dt - self.dt).abs() > 1e-12 * self.dt {
                return Err(Error::GridMismatch(format!("increments are {}x{} with dt {}, model needs {}x{} with dt {}", w.steps, w.modes, w.dt, self.steps, self.n_modes(), self.dt)));
            }
        }
        let j = self.n_modes();
        let stride = self.stride();
        let noisy = forcing.noise != 0.0;
        let mut stream = forcing.seed.filter(|_| noisy && forcing.increments.is_none()).map(|(s, i)| IncrementStream::new(s, i));
        let sd = self.dt.sqrt();
        let mut u = u0.to_vec();
        let mut next = vec![T::zero(); n];
        let mut src = vec![T::zero(); n];
        let mut xi = vec![T::zero(); n];
        let mut db = vec![T::zero(); j];
        let mut times = vec![0.0];
        let mut snapshots = vec![u.clone()];
        let mut sup = self.norm(&u);
        let mut log_w = 0.0;
        for step in 0..self.steps {
            if noisy && (stream.is_some() || forcing.increments.is_some()) {
                for (k, b) in db.iter_mut().enumerate() {
                    let x = match (forcing.increments, stream.as_mut()) {
                        (Some(w), _) => w.row(step)[k],
                        (None, Some(s)) => sd * s.next_normal(),
                        _ => unreachable!(),
                    };
                    *b = T::of(x);
                    if let Some(c) = forcing.control {
                        let h = forcing.tilt * c.get(step, k);
                        log_w -= h * x + 0.5 * h * h * self.dt;
                    }
                }
                NoiseBasis::graph_increment(&self.modes, &db, &mut xi);
            }
            source(step, &u, &xi, &mut src);
            self.scheme.step_with_source(&u, &src, &mut next);
            std::mem::swap(&mut u, &mut next);
            let nrm = self.norm(&u);
            if !(nrm <= BLOW_UP) {
                return Err(Error::BlowUp { step: step + 1, norm: nrm });
            }
            sup = sup.max(nrm);
            if (step + 1) % stride == 0 {
                times.push((step + 1) as f64 * self.dt);
                snapshots.push(u.clone());
            }
        }
        Ok(PathResult { times, snapshots, sup_norm: sup, terminal: u, seed: forcing.seed, log_weight: log_w })
    }

    /// `∑_j e_j^∧ c_j` for the control row of step `n`.
    fn control_field(&self, c: &Control, n: usize, out: &mut [T]) {
        let row: Vec<T> = (0..c.modes).map(|j| T::of(c.get(n, j))).collect();
        NoiseBasis::graph_increment(&self.modes, &row, out);
    }

    /// `du = L̄u dt + b(u) dt + g(u)(noise·ξ + v^∧ dt)`.
    pub fn solve_forced(&self, u0: &[T], forcing: Forcing<'_>) -> Result<PathResult<T>> {
        let dt = T::of(self.dt);
        let amp = T::of(forcing.noise);
        let r = &self.reaction;
        let mut vf = vec![T::zero(); self.n_dofs()];
        self.run(u0, forcing, |n, u, xi, s| {
            if let Some(c) = forcing.control {
                self.control_field(c, n, &mut vf);
            }
            for i in 0..u.len() {
                let x = u[i].as_f64();
                s[i] = dt * T::of(r.b(x)) + T::of(r.g(x)) * (amp * xi[i] + dt * vf[i]);
            }
        })
    }

    /// Full deterministic trajectory `u⁰(t_n)`, `n = 0..=N`.
    pub fn deterministic_trajectory(&self, u0: &[T]) -> Result<Vec<Vec<T>>> {
        let dt = T::of(self.dt);
        let r = &self.reaction;
        let mut traj = vec![u0.to_vec()];
        let mut src = vec![T::zero(); u0.len()];
        let mut next = vec![T::zero(); u0.len()];
        for step in 0..self.steps {
            let u = traj.last().unwrap();
            for i in 0..u.len() {
                src[i] = dt * T::of(r.b(u[i].as_f64()));
            }
            self.scheme.step_with_source(u, &src, &mut next);
            let nrm = self.norm(&next);
            if !(nrm <= BLOW_UP) {
                return Err(Error::BlowUp { step: step + 1, norm: nrm });
            }
            traj.push(next.clone());
        }
        Ok(traj)
    }

    /// Moderate-deviation process `𝔐` with control `v`:
    /// `d𝔐 = L̄𝔐 + [B(u⁰+s𝔐) − B(u⁰)]/s + G(u⁰+s𝔐)(ξ/λ + v^∧)`, `s = √ε λ`.
    /// With `ε = 0` the difference quotient becomes `b'(u⁰)𝔐` and the noise is off.
    pub fn solve_mdp(&self, u0_path: &[Vec<T>], eps: f64, lambda: f64, control: Option<&Control>, seed: Option<(u64, u64)>) -> Result<PathResult<T>> {
        if u0_path.len() != self.steps + 1 {
            return Err(Error::GridMismatch(format!("deterministic path has {} states, need {}", u0_path.len(), self.steps + 1)));
        }
        if !(lambda > 0.0) || eps < 0.0 {
            return Err(Error::Config(format!("need lambda > 0 and eps >= 0 (lambda = {lambda}, eps = {eps})")));
        }
        let s = eps.sqrt() * lambda;
        let noise = if eps > 0.0 { 1.0 / lambda } else { 0.0 };
        let forcing = Forcing { noise, control, tilt: lambda, seed, increments: None };
        let dt = T::of(self.dt);
        let amp = T::of(noise);
        let r = &self.reaction;
        let mut vf = vec![T::zero(); self.n_dofs()];
        let zero = vec![T::zero(); self.n_dofs()];
        self.run(&zero, forcing, |n, m, xi, src| {
            if let Some(c) = control {
                self.control_field(c, n, &mut vf);
            }
            let base = &u0_path[n];
            for i in 0..m.len() {
                let (u, x) = (base[i].as_f64(), m[i].as_f64());
                let (drift, gv) = if s > 0.0 {
                    ((r.b(u + s * x) - r.b(u)) / s, r.g(u + s * x))
                } else {
                    (r.db(u) * x, r.g(u))
                };
                src[i] = dt * T::of(drift) + T::of(gv) * (amp * xi[i] + dt * vf[i]);
            }
        })
    }
}

pub fn solve_deterministic<T: Real>(model: &SpdeModel<T>, u0: &GraphFunction<T>) -> Result<PathResult<T>> {
    model.solve_forced(&u0.values, Forcing::none())
}

pub fn solve_spde<T: Real>(model: &SpdeModel<T>, u0: &GraphFunction<T>, eps: f64, root_seed: u64, index: u64) -> Result<PathResult<T>> {
    if eps < 0.0 {
        return Err(Error::Config(format!("eps = {eps} must be non-negative")));
    }
    model
        .solve_forced(&u0.values, Forcing::seeded(eps.sqrt(), root_seed, index))
        .map_err(|e| Error::Sample { index, source: Box::new(e) })
}

/// Controlled equation with drift `g(u) v^∧`; the log Girsanov weight of the
/// tilt `v/√ε` is accumulated in [`PathResult::log_weight`].
pub fn solve_controlled<T: Real>(
    model: &SpdeModel<T>,
    u0: &GraphFunction<T>,
    eps: f64,
    control: &Control,
    root_seed: u64,
    index: u64,
) -> Result<PathResult<T>> {
    let tilt = if eps > 0.0 { 1.0 / eps.sqrt() } else { 0.0 };
    model
        .solve_forced(&u0.values, Forcing::seeded(eps.max(0.0).sqrt(), root_seed, index).with_control(control, tilt))
        .map_err(|e| Error::Sample { index, source: Box::new(e) })
}

pub fn solve_mdp_controlled<T: Real>(
    model: &SpdeModel<T>,
    u0_path: &[Vec<T>],
    eps: f64,
    lambda: f64,
    control: Option<&Control>,
    root_seed: u64,
    index: u64,
) -> Result<PathResult<T>> {
    model.solve_mdp(u0_path, eps, lambda, control, Some((root_seed, index))).map_err(|e| Error::Sample { index, source: Box::new(e) })
}

/// `X̄ = (u^ε − u⁰)/(√ε λ)` on the common snapshot grid.
pub fn deviation_path<T: Real>(ueps: &PathResult<T>, u0: &PathResult<T>, eps: f64, lambda: f64) -> Result<PathResult<T>> {
    if ueps.times != u0.times || ueps.terminal.len() != u0.terminal.len() {
        return Err(Error::GridMismatch("paths are stored on different grids".into()));
    }
    let s = eps.sqrt() * lambda;
    if !(s > 0.0) {
        return Err(Error::Config("sqrt(eps) * lambda must be positive".into()));
    }
    let inv = T::of(1.0 / s);
    let diff = |a: &[T], b: &[T]| -> Vec<T> { a.iter().zip(b).map(|(x, y)| (*x - *y) * inv).collect() };
    let snapshots: Vec<Vec<T>> = ueps.snapshots.iter().zip(&u0.snapshots).map(|(a, b)| diff(a, b)).collect();
    Ok(PathResult {
        times: ueps.times.clone(),
        snapshots,
        sup_norm: f64::NAN,
        terminal: diff(&ueps.terminal, &u0.terminal),
        seed: ueps.seed,
        log_weight: ueps.log_weight,
    })
}

/// Named initial conditions on the graph.
pub fn initial_condition<T: Real>(space: &GraphSpace<T>, name: &str, p: &BTreeMap<String, f64>) -> Result<GraphFunction<T>> {
    let a = param(p, "amplitude", 1.0);
    Ok(match name {
        "zero" => space.zeros(),
        "constant" => space.constant(T::of(a)),
        "bump" => {
            let (c, w) = (param(p, "center", 0.5), param(p, "width", 0.25));
            space.function(|z, _| T::of(a * (-((z.as_f64() - c) / w).powi(2)).exp()))
        }
        "cos" => {
            let k = param(p, "wavenumber", 1.0);
            space.function(|z, _| T::of(a * (k * std::f64::consts::PI * z.as_f64()).cos()))
        }
        "edge_index" => space.function(|z, e| T::of(a * (1.0 + e as f64) * (-z.as_f64().abs()).exp())),
        other => return Err(Error::Config(format!("unknown initial condition '{other}' (known: zero, constant, bump, cos, edge_index)"))),
    })
}
