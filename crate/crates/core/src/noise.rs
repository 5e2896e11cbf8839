//! Driving noise: finite mode families on the plane, their graph projections
//! and reproducible Brownian increments.

use crate::error::{Error, Result};
use crate::geometry::{Geometry, NarrowShape};
use crate::metric_graph::{GraphFunction, GraphSpace, GraphWeight, MeasureRules};
use crate::scalar::Real;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

type ModeFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// One mode `e_j = 𝔮_j 𝔢_j` of the noise.
#[derive(Clone)]
pub struct NoiseMode {
    pub label: String,
    /// `𝔮_j`; already folded into [`NoiseMode::eval`].
    pub q: f64,
    f: ModeFn,
}

impl fmt::Debug for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseMode").field("label", &self.label).field("q", &self.q).finish()
    }
}

impl NoiseMode {
    pub fn new(label: impl Into<String>, q: f64, f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        Self { label: label.into(), q, f: Arc::new(f) }
    }

    #[inline]
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.q * (self.f)(x)
    }
}

/// Finite Karhunen–Loève family `{e_j}` with optional graph projections `e_j^∧`.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    pub modes: Vec<NoiseMode>,
    pub projected: Vec<GraphFunction<f64>>,
}

impl NoiseBasis {
    pub fn new(modes: Vec<NoiseMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Config("noise basis needs at least one mode".into()));
        }
        Ok(Self { modes, projected: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn is_projected(&self) -> bool {
        self.projected.len() == self.modes.len()
    }

    /// `e_j^∧` as rows of nodal values in the scalar type of the solver.
    pub fn projected_values<T: Real>(&self) -> Result<Vec<Vec<T>>> {
        if !self.is_projected() {
            return Err(Error::Config("noise basis has not been projected onto the graph".into()));
        }
        Ok(self.projected.iter().map(|f| f.values.iter().map(|&v| T::of(v)).collect()).collect())
    }

    /// `∑_j e_j^∧ ΔB_j`.
    pub fn graph_increment<T: Real>(rows: &[Vec<T>], db: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (row, &b) in rows.iter().zip(db) {
            for (o, &e) in out.iter_mut().zip(row) {
                *o += e * b;
            }
        }
    }
}

/// Neumann cosine modes of `(a, b) × (c, d)`, ordered by eigenvalue.
fn cosine_modes(rect: [f64; 4], j: usize) -> Vec<(usize, usize, f64)> {
    let (l1, l2) = (rect[1] - rect[0], rect[3] - rect[2]);
    let side = (j as f64).sqrt().ceil() as usize * 4 + 2;
    let mut all: Vec<(usize, usize, f64)> = Vec::new();
    for m in 0..side {
        for n in 0..side {
            all.push((m, n, (m as f64 * PI / l1).powi(2) + (n as f64 * PI / l2).powi(2)));
        }
    }
    all.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    all.truncate(j);
    all
}

/// Noise `∑ 𝔮_j 𝔢_j β_j` with `𝔢_j` the Neumann cosine eigenmodes of the
/// bounding rectangle of the narrow domain (unit `L²` norm on the rectangle)
/// and `𝔮_j = j^{-(1+ε₀)}`.
pub fn build_spectral_basis_narrow(shape: &NarrowShape, j: usize, eps0: f64) -> Result<NoiseBasis> {
    if j < 1 {
        return Err(Error::Config("noise needs J >= 1 modes".into()));
    }
    if !(eps0 > 0.0) {
        return Err(Error::Config(format!("decay exponent eps0 = {eps0} must be positive")));
    }
    let (a, b) = shape.x1_range();
    let w = shape.x2_bound();
    let rect = [a, b, -w, w];
    let (l1, l2) = (b - a, 2.0 * w);
    let modes = cosine_modes(rect, j)
        .into_iter()
        .enumerate()
        .map(|(i, (m, n, _))| {
            let c1 = if m == 0 { (1.0 / l1).sqrt() } else { (2.0 / l1).sqrt() };
            let c2 = if n == 0 { (1.0 / l2).sqrt() } else { (2.0 / l2).sqrt() };
            let (k1, k2) = (m as f64 * PI / l1, n as f64 * PI / l2);
            let q = ((i + 1) as f64).powf(-(1.0 + eps0));
            NoiseMode::new(format!("cos({m},{n})"), q, move |x| c1 * c2 * (k1 * (x[0] - a)).cos() * (k2 * (x[1] + w)).cos())
        })
        .collect();
    NoiseBasis::new(modes)
}

/// Finite spectral-measure family: for each atom `ξ_j` with weight `w_j`, the
/// pair `√w_j cos(ξ_j·x)`, `√w_j sin(ξ_j·x)`; `∑_j |e_j(x)|² = ∑ w_j` everywhere.
pub fn spectral_measure_basis(atoms: &[[f64; 2]], weights: &[f64]) -> Result<NoiseBasis> {
    if atoms.len() != weights.len() || atoms.is_empty() {
        return Err(Error::Config("spectral atoms and weights must be non-empty and of equal length".into()));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::Config("spectral weights must be non-negative".into()));
    }
    let mut modes = Vec::new();
    for (&xi, &w) in atoms.iter().zip(weights) {
        let s = w.sqrt();
        modes.push(NoiseMode::new(format!("cos[{},{}]", xi[0], xi[1]), s, move |x| (xi[0] * x[0] + xi[1] * x[1]).cos()));
        if xi != [0.0, 0.0] {
            modes.push(NoiseMode::new(format!("sin[{},{}]", xi[0], xi[1]), s, move |x| (xi[0] * x[0] + xi[1] * x[1]).sin()));
        }
    }
    NoiseBasis::new(modes)
}

/// Fills `e_j^∧` by projecting every mode onto the graph.
pub fn project_basis(basis: &mut NoiseBasis, geometry: &Geometry) -> Result<()> {
    basis.projected = basis
        .modes
        .iter()
        .map(|m| {
            let f = |x: [f64; 2]| m.eval(x);
            geometry.wedge_callable(&f)
        })
        .collect::<Result<_>>()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupBoundReport {
    pub domain_sup: f64,
    pub graph_sup: f64,
    pub pass: bool,
}

/// `sup_D ∑|e_j|²` over `points` and `sup_Γ ∑|e_j^∧|²` over the graph nodes.
pub fn sup_bound_check(basis: &NoiseBasis, points: &[[f64; 2]], tol: f64) -> Result<SupBoundReport> {
    if !basis.is_projected() {
        return Err(Error::Config("noise basis has not been projected onto the graph".into()));
    }
    let domain_sup = points.iter().map(|&x| basis.modes.iter().map(|m| m.eval(x).powi(2)).sum::<f64>()).fold(0.0, f64::max);
    let n = basis.projected[0].values.len();
    let graph_sup = (0..n).map(|d| basis.projected.iter().map(|f| f.values[d].powi(2)).sum::<f64>()).fold(0.0, f64::max);
    Ok(SupBoundReport { domain_sup, graph_sup, pass: graph_sup.is_finite() && graph_sup <= domain_sup + tol })
}

/// `∑_j ‖e_j^∧‖²_{H̄_γ}`: the expected squared norm of a unit-time graph increment.
pub fn trace_norm2(basis: &NoiseBasis, space: &GraphSpace<f64>, weight: &GraphWeight<f64>) -> Result<f64> {
    let rules = MeasureRules::new(space, weight);
    let rows = basis.projected_values::<f64>()?;
    Ok(rows.iter().map(|r| rules.inner(space, r, r)).sum())
}

/// Brownian increments `ΔB[n, j]`, row-major in the step index.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerSample {
    pub modes: usize,
    pub steps: usize,
    pub dt: f64,
    pub root_seed: u64,
    pub index: u64,
    pub db: Vec<f64>,
}

impl WienerSample {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.db[n * self.modes..(n + 1) * self.modes]
    }

    /// Same Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::GridMismatch(format!("{} steps cannot be coarsened by {factor}", self.steps)));
        }
        let steps = self.steps / factor;
        let mut db = vec![0.0; steps * self.modes];
        for n in 0..self.steps {
            for j in 0..self.modes {
                db[(n / factor) * self.modes + j] += self.db[n * self.modes + j];
            }
        }
        Ok(Self { steps, dt: self.dt * factor as f64, db, ..self.clone() })
    }
}

/// Counter-based normal stream: sample `index` is ChaCha stream `index` of the
/// root seed, and draw `(n, j)` uses words `4(nJ + j) .. 4(nJ + j) + 4`.
pub struct IncrementStream {
    rng: ChaCha8Rng,
}

impl IncrementStream {
    pub fn new(root_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
        rng.set_stream(index);
        Self { rng }
    }

    /// Positions the stream at draw `k = nJ + j`.
    pub fn seek(&mut self, k: u64) {
        self.rng.set_word_pos(4 * k as u128);
    }

    /// Standard normal from one Box–Muller pair (always two 64-bit words).
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

pub fn sample_increments(modes: usize, steps: usize, dt: f64, root_seed: u64, index: u64) -> Result<WienerSample> {
    if modes == 0 || steps == 0 || !(dt > 0.0) {
        return Err(Error::Config(format!("increments need positive sizes (J = {modes}, Nt = {steps}, dt = {dt})")));
    }
    let mut s = IncrementStream::new(root_seed, index);
    let sd = dt.sqrt();
    let db = (0..modes * steps).map(|_| sd * s.next_normal()).collect();
    Ok(WienerSample { modes, steps, dt, root_seed, index, db })
}
