//! The averaged generator `L̄f = (1/(2T_k)) d/dz(α_k df/dz)` discretized by
//! conforming piecewise-linear elements with shared vertex unknowns and a
//! lumped mass, its θ-scheme semigroup, and structural audits.

use crate::error::{Error, Result};
use crate::linalg::{dot, SkylineCholesky, SymBuilder, SymSparse};
use crate::metric_graph::{EdgeCoefficientTable, EdgeCoefficients, GraphFunction, GraphSpace, GraphWeight, MeasureRules, MetricGraph, VertexKind};
use crate::scalar::Real;

/// Stiffness `K` and lumped mass `M` on the shared-vertex node set.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator<T> {
    pub space: GraphSpace<T>,
    pub stiffness: SymSparse<T>,
    pub mass: Vec<T>,
    /// Cell rules of `ν = T dz`, kept for pairings.
    pub rules: MeasureRules<T>,
}

impl<T: Real> DiscreteGenerator<T> {
    pub fn assemble(space: &GraphSpace<T>) -> Result<Self> {
        let rules = MeasureRules::new(space, &GraphWeight::unit());
        let mass = rules.lumped(space);
        if let Some(node) = mass.iter().position(|m| !(*m > T::zero()) || !m.is_finite()) {
            return Err(Error::NonpositiveMass { node });
        }
        let half = T::of(0.5);
        let mut b = SymBuilder::new(space.n_dofs());
        for (k, sk) in rules.stiff.iter().enumerate() {
            let dofs = &space.layout.edge_dofs[k];
            for (i, &d) in sk.iter().enumerate() {
                let (p, q) = (dofs[i], dofs[i + 1]);
                let w = d * half;
                b.add_sym(p, p, w);
                b.add_sym(q, q, w);
                b.add_sym(p, q, -w);
            }
        }
        Ok(Self { space: space.clone(), stiffness: b.build(), mass, rules })
    }

    pub fn n_dofs(&self) -> usize {
        self.mass.len()
    }

    /// `-M⁻¹K f`, the discrete action of `L̄`.
    pub fn apply(&self, f: &[T]) -> Vec<T> {
        let mut y = self.stiffness.apply(f);
        for (yi, &m) in y.iter_mut().zip(&self.mass) {
            *yi = -*yi / m;
        }
        y
    }

    /// Coordinate text dump of `K` followed by the diagonal of `M`.
    pub fn dump(&self) -> String {
        let mut s = String::from("# stiffness\n");
        s.push_str(&self.stiffness.to_coordinate_text());
        s.push_str("# lumped mass\n");
        for (i, m) in self.mass.iter().enumerate() {
            s.push_str(&format!("{i} {i} {:e}\n", m.as_f64()));
        }
        s
    }

    /// Smallest positive eigenvalue of `M⁻¹K` by inverse iteration on
    /// `(K + M)⁻¹M`, deflating constants in the `M` inner product.
    pub fn smallest_positive_eigenvalue(&self) -> Result<T> {
        let op = self.stiffness.scaled_plus_diag(T::one(), &self.mass);
        let chol = SkylineCholesky::factor(&op)?;
        let total: T = self.mass.iter().copied().sum();
        let deflate = |x: &mut Vec<T>| {
            let mean = dot(x, &self.mass) / total;
            x.iter_mut().for_each(|v| *v -= mean);
            let nrm = x.iter().zip(&self.mass).map(|(v, m)| *v * *v * *m).sum::<T>().sqrt();
            x.iter_mut().for_each(|v| *v /= nrm);
        };
        let coords = self.space.dof_coordinates();
        let mut x: Vec<T> = coords.iter().enumerate().map(|(i, (z, k))| *z + T::of_usize(*k + 1) * T::of(0.37) + T::of(((i * 7919) % 13) as f64 * 1e-3)).collect();
        deflate(&mut x);
        let mut lambda = T::zero();
        for it in 0..500 {
            let rhs: Vec<T> = x.iter().zip(&self.mass).map(|(a, m)| *a * *m).collect();
            let mut y = chol.solve(&rhs);
            deflate(&mut y);
            x = y;
            let kx = self.stiffness.apply(&x);
            let new = dot(&kx, &x);
            if it > 3 && (new - lambda).abs() <= T::of(1e-13) * new.abs().max(T::epsilon()) {
                return Ok(new);
            }
            lambda = new;
        }
        Ok(lambda)
    }
}

/// Factorized θ-scheme: `(M + θΔtK) f⁺ = (M − (1−θ)ΔtK) f`.
#[derive(Debug, Clone)]
pub struct ThetaScheme<T> {
    pub theta: T,
    pub dt: T,
    system: SkylineCholesky<T>,
    explicit: SymSparse<T>,
    mass: Vec<T>,
}

impl<T: Real> ThetaScheme<T> {
    pub fn new(gen: &DiscreteGenerator<T>, theta: T, dt: T) -> Result<Self> {
        if !(theta >= T::of(0.5) && theta <= T::one()) || !(dt > T::zero()) {
            return Err(Error::Config(format!("theta must lie in [1/2, 1] and dt > 0 (theta = {theta}, dt = {dt})")));
        }
        let system = SkylineCholesky::factor(&gen.stiffness.scaled_plus_diag(theta * dt, &gen.mass))?;
        let explicit = gen.stiffness.scaled_plus_diag(-(T::one() - theta) * dt, &gen.mass);
        Ok(Self { theta, dt, system, explicit, mass: gen.mass.clone() })
    }

    pub fn step(&self, f: &[T]) -> Vec<T> {
        let mut out = self.explicit.apply(f);
        self.system.solve_in_place(&mut out);
        out
    }

    /// One step with an explicit source: `(M+θΔtK)u⁺ = (M−(1−θ)ΔtK)u + M s`.
    pub fn step_with_source(&self, u: &[T], source: &[T], out: &mut [T]) {
        self.explicit.matvec(u, out);
        for ((o, m), s) in out.iter_mut().zip(&self.mass).zip(source) {
            *o += *m * *s;
        }
        self.system.solve_in_place(out);
    }

    /// `(M + θΔtK)⁻¹ b`.
    pub fn solve(&self, b: &mut [T]) {
        self.system.solve_in_place(b);
    }

    /// `(M − (1−θ)ΔtK) x`.
    pub fn apply_explicit(&self, x: &[T], out: &mut [T]) {
        self.explicit.matvec(x, out);
    }

    pub fn mass(&self) -> &[T] {
        &self.mass
    }
}

/// Applies `steps` semigroup steps to `f`.
pub fn step_semigroup<T: Real>(scheme: &ThetaScheme<T>, f: &GraphFunction<T>, steps: usize) -> GraphFunction<T> {
    let mut v = f.values.clone();
    for _ in 0..steps {
        v = scheme.step(&v);
    }
    GraphFunction { layout: f.layout.clone(), values: v }
}

/// `|∑_j ± α_{k_j}(z_i) f'(z_i, k_j)|` with one-sided difference quotients.
pub fn gluing_residual<T: Real>(space: &GraphSpace<T>, f: &GraphFunction<T>, vertex: usize) -> T {
    let g = &space.graph;
    let mut s = T::zero();
    for &(k, sign) in &g.vertices[vertex].incident {
        let e = &g.edges[k];
        let c = &space.coeffs.edges[k];
        let n = e.grid.len();
        let (alpha, slope) = if sign > 0 {
            (c.alpha[0], (f.at(k, 1) - f.at(k, 0)) / (e.grid[1] - e.grid[0]))
        } else {
            (c.alpha[n - 1], (f.at(k, n - 1) - f.at(k, n - 2)) / (e.grid[n - 1] - e.grid[n - 2]))
        };
        s += T::of(sign as f64) * alpha * slope;
    }
    s.abs()
}

/// Cells split in two; new nodal coefficients are the old midpoint samples.
pub fn refine<T: Real>(space: &GraphSpace<T>) -> Result<GraphSpace<T>> {
    let g = &space.graph;
    let half = T::of(0.5);
    let mut edges = Vec::new();
    let mut tables = Vec::new();
    for (e, c) in g.edges.iter().zip(&space.coeffs.edges) {
        let mut grid = Vec::with_capacity(2 * e.grid.len());
        let mut alpha = Vec::with_capacity(2 * e.grid.len());
        let mut period = Vec::with_capacity(2 * e.grid.len());
        for i in 0..e.cells() {
            grid.push(e.grid[i]);
            grid.push((e.grid[i] + e.grid[i + 1]) * half);
            alpha.push(c.alpha[i]);
            alpha.push(c.alpha_mid[i]);
            period.push(c.period[i]);
            period.push(c.period_mid[i]);
        }
        grid.push(*e.grid.last().unwrap());
        alpha.push(*c.alpha.last().unwrap());
        period.push(*c.period.last().unwrap());
        tables.push(EdgeCoefficients::from_nodes(&grid, alpha, period, c.singular_lo, c.singular_hi));
        edges.push((e.v_lo, e.v_hi, grid));
    }
    let verts = g.vertices.iter().map(|v| (v.kind, v.level)).collect();
    GraphSpace::new(MetricGraph::new(verts, edges), EdgeCoefficientTable { edges: tables })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqAuditLevel {
    pub dofs: usize,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// `ln(max ratio)/T`, the fitted exponential rate.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqAuditReport {
    pub q: f64,
    pub horizon: f64,
    pub levels: Vec<LqAuditLevel>,
    /// Relative change of the fitted rate between the two finest levels.
    pub rate_drift: f64,
}

impl LqAuditReport {
    pub fn max_ratio(&self) -> f64 {
        self.levels.iter().map(|l| l.max_ratio).fold(0.0, f64::max)
    }
}

/// `max_t ‖S(t)f‖_{L^q(ν_γ)}/‖f‖_{L^q(ν_γ)}` with lumped node weights and
/// backward Euler steps, repeated over `levels` uniform refinements.
pub fn semigroup_audit_lq<T: Real>(
    space: &GraphSpace<T>,
    weight: &GraphWeight<T>,
    q: T,
    horizon: T,
    steps: usize,
    trials: &[&dyn Fn(T, usize) -> T],
    levels: usize,
) -> Result<LqAuditReport> {
    if q < T::of(2.0) {
        return Err(Error::Config("q must be at least 2".into()));
    }
    let mut out = Vec::new();
    let mut current = space.clone();
    for level in 0..levels.max(1) {
        if level > 0 {
            current = refine(&current)?;
        }
        let gen = DiscreteGenerator::assemble(&current)?;
        let n_steps = steps << level;
        let scheme = ThetaScheme::new(&gen, T::one(), horizon / T::of_usize(n_steps))?;
        let w = MeasureRules::new(&current, weight).lumped(&current);
        let lq = |v: &[T]| v.iter().zip(&w).map(|(x, m)| x.abs().powf(q) * *m).sum::<T>().powf(q.recip());
        let mut ratios = Vec::new();
        for trial in trials {
            let f = current.function(|z, k| trial(z, k));
            let base = lq(&f.values);
            let mut v = f.values.clone();
            let mut worst = T::one();
            for _ in 0..n_steps {
                v = scheme.step(&v);
                worst = worst.max(lq(&v) / base);
            }
            ratios.push(worst.as_f64());
        }
        let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
        out.push(LqAuditLevel { dofs: current.n_dofs(), ratios, max_ratio, rate: max_ratio.ln() / horizon.as_f64() });
    }
    let rate_drift = if out.len() >= 2 {
        let (a, b) = (out[out.len() - 2].rate, out[out.len() - 1].rate);
        if a.abs().max(b.abs()) < 1e-12 { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) }
    } else {
        0.0
    };
    Ok(LqAuditReport { q: q.as_f64(), horizon: horizon.as_f64(), levels: out, rate_drift })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaCheckReport {
    pub sup: f64,
    pub argmax: (f64, usize),
    /// Same supremum on every other node.
    pub sup_coarse: f64,
    /// The maximizer sits at the truncated end of the unbounded edge with the ratio still increasing.
    pub growing_at_truncation: bool,
    pub pass: bool,
}

/// `sup α_k|dγ/dz|²/(T_k γ²)` over all nodes where the ratio is defined.
pub fn assumption_gamma_check<T: Real>(space: &GraphSpace<T>, weight: &GraphWeight<T>) -> GammaCheckReport {
    let mut sup = 0.0f64;
    let mut sup_coarse = 0.0f64;
    let mut argmax = (0.0, 0);
    let mut growing = false;
    for (k, (e, c)) in space.graph.edges.iter().zip(&space.coeffs.edges).enumerate() {
        let ratio = |i: usize| -> f64 {
            let z = e.grid[i];
            let (a, t) = (c.alpha[i].as_f64(), c.period[i].as_f64());
            if a == 0.0 || !t.is_finite() {
                return 0.0;
            }
            let g = weight.value(z, k).as_f64();
            let dg = weight.derivative(z, k).as_f64();
            a * dg * dg / (t * g * g)
        };
        let vals: Vec<f64> = (0..e.grid.len()).map(ratio).collect();
        for (i, &r) in vals.iter().enumerate() {
            if !(r <= sup) {
                sup = r;
                argmax = (e.grid[i].as_f64(), k);
                growing = space.graph.vertices[e.v_hi].kind == VertexKind::Infinity
                    && i == vals.len() - 1
                    && vals.len() >= 2
                    && r > vals[i - 1];
            }
            if i % 2 == 0 || i == vals.len() - 1 {
                sup_coarse = sup_coarse.max(r);
            }
        }
    }
    let stable = sup == 0.0 || (sup - sup_coarse).abs() <= 0.05 * sup;
    GammaCheckReport { sup, argmax, sup_coarse, growing_at_truncation: growing, pass: sup.is_finite() && stable && !growing }
}
