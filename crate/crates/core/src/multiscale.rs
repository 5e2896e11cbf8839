//! Desk-scale 2-D solvers for the multiscale equation: the narrow-domain
//! problem on the fixed domain with an anisotropic operator, and fast
//! advection along the level sets of a stream function. Both are
//! finite-volume schemes on a masked tensor grid, fully implicit in the
//! diffusion; projections to the graph and the convergence audits sit on top.

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Hamiltonian, NarrowGeometry};
use crate::linalg::{SkylineCholesky, SymBuilder, SymSparse};
use crate::metric_graph::{GraphFunction, GraphSpace, GraphWeight};
use crate::noise::{IncrementStream, NoiseBasis, NoiseMode};
use crate::skeleton::Control;
use crate::spde::{Forcing, PathResult, ReactionSpec, SpdeModel, BLOW_UP, MAX_SNAPSHOTS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

const INACTIVE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiscaleKind {
    Narrow,
    Advection,
}

/// Masked tensor grid. Cell `(c, j)` sits at `(x1[c], x2[j])` with control
/// volume `w1[c] × w2[j]`; active cells are numbered column by column so the
/// implicit matrices have bandwidth `ny`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain2D {
    pub kind: MultiscaleKind,
    pub x1: Vec<f64>,
    pub w1: Vec<f64>,
    pub x2: Vec<f64>,
    pub w2: Vec<f64>,
    /// `mask[c * ny + j]`.
    pub mask: Vec<bool>,
    index: Vec<usize>,
    /// `(c, j)` of every active cell in numbering order.
    pub cells: Vec<(usize, usize)>,
}

fn widths(nodes: &[f64], vertex_centered: bool, lo: f64, hi: f64) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let a = if i == 0 { if vertex_centered { nodes[0] } else { lo } } else { 0.5 * (nodes[i - 1] + nodes[i]) };
            let b = if i + 1 == n { if vertex_centered { nodes[n - 1] } else { hi } } else { 0.5 * (nodes[i] + nodes[i + 1]) };
            b - a
        })
        .collect()
}

fn cell_centers(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
}

impl Domain2D {
    fn from_parts(kind: MultiscaleKind, x1: Vec<f64>, w1: Vec<f64>, x2: Vec<f64>, w2: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let mut index = vec![INACTIVE; mask.len()];
        let mut cells = Vec::new();
        let ny = x2.len();
        for c in 0..x1.len() {
            for j in 0..ny {
                if mask[c * ny + j] {
                    index[c * ny + j] = cells.len();
                    cells.push((c, j));
                }
            }
        }
        let d = Self { kind, x1, w1, x2, w2, mask, index, cells };
        if d.cells.is_empty() {
            return Err(Error::NarrowDomain("2-D grid has no active cells".into()));
        }
        if !d.is_connected() {
            return Err(Error::NarrowDomain("active cells of the 2-D grid are not connected".into()));
        }
        Ok(d)
    }

    /// Fixed domain `D` of a narrow geometry: `x₁` nodes are the graph nodes
    /// (so `x₂`-independent data reduces exactly to the graph scheme), `x₂`
    /// is cell-centered over the bounding strip, and a cell is active when
    /// its center lies in a cross-section.
    pub fn narrow(geo: &NarrowGeometry, ny: usize) -> Result<Self> {
        if ny == 0 {
            return Err(Error::Config("grid.ny must be positive".into()));
        }
        let x1 = geo.spec.x1_grid.clone();
        let w = geo.spec.sections.iter().flatten().fold(0.0f64, |m, s| m.max(s.0.abs()).max(s.1.abs()));
        let x2 = cell_centers(-w, w, ny);
        let mut mask = vec![false; x1.len() * ny];
        for (c, &z) in x1.iter().enumerate() {
            let sec = geo.section(z);
            for (j, &y) in x2.iter().enumerate() {
                mask[c * ny + j] = sec.iter().any(|s| y > s.0 && y < s.1);
            }
        }
        let w1 = widths(&x1, true, 0.0, 0.0);
        let w2 = widths(&x2, false, -w, w);
        Self::from_parts(MultiscaleKind::Narrow, x1, w1, x2, w2, mask)
    }

    /// Fully active cell-centered grid on `[x_min, x_max] × [y_min, y_max]`.
    pub fn box_grid(bounds: [f64; 4], nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 || !(bounds[1] > bounds[0]) || !(bounds[3] > bounds[2]) {
            return Err(Error::Config(format!("box grid needs nx, ny >= 2 and a non-empty box, got {nx}x{ny} on {bounds:?}")));
        }
        let x1 = cell_centers(bounds[0], bounds[1], nx);
        let x2 = cell_centers(bounds[2], bounds[3], ny);
        let w1 = widths(&x1, false, bounds[0], bounds[1]);
        let w2 = widths(&x2, false, bounds[2], bounds[3]);
        Self::from_parts(MultiscaleKind::Advection, x1, w1, x2, w2, vec![true; nx * ny])
    }

    pub fn nx(&self) -> usize {
        self.x1.len()
    }

    pub fn ny(&self) -> usize {
        self.x2.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Number of the active cell `(c, j)`.
    pub fn cell(&self, c: usize, j: usize) -> Option<usize> {
        if c >= self.nx() || j >= self.ny() {
            return None;
        }
        let p = self.index[c * self.ny() + j];
        (p != INACTIVE).then_some(p)
    }

    pub fn center(&self, p: usize) -> [f64; 2] {
        let (c, j) = self.cells[p];
        [self.x1[c], self.x2[j]]
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.n_cells()).map(|p| self.center(p)).collect()
    }

    /// Control-volume areas.
    pub fn mass(&self) -> Vec<f64> {
        self.cells.iter().map(|&(c, j)| self.w1[c] * self.w2[j]).collect()
    }

    pub fn field(&self, f: impl Fn([f64; 2]) -> f64) -> Field2D {
        Field2D { values: self.centers().into_iter().map(f).collect() }
    }

    /// Faces of active cells without an active neighbour, with outward
    /// normals; these carry the no-flux condition.
    pub fn boundary(&self) -> Vec<(usize, [f64; 2])> {
        let mut out = Vec::new();
        for (p, &(c, j)) in self.cells.iter().enumerate() {
            let nb: [(isize, isize, [f64; 2]); 4] = [(-1, 0, [-1.0, 0.0]), (1, 0, [1.0, 0.0]), (0, -1, [0.0, -1.0]), (0, 1, [0.0, 1.0])];
            for (dc, dj, n) in nb {
                let (cc, jj) = (c as isize + dc, j as isize + dj);
                let inside = cc >= 0 && jj >= 0 && self.cell(cc as usize, jj as usize).is_some();
                if !inside {
                    out.push((p, n));
                }
            }
        }
        out
    }

    fn neighbours(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        let (c, j) = self.cells[p];
        [(c.wrapping_sub(1), j), (c + 1, j), (c, j.wrapping_sub(1)), (c, j + 1)].into_iter().filter_map(|(a, b)| self.cell(a, b))
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_cells()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(p) = queue.pop_front() {
            for q in self.neighbours(p) {
                if !seen[q] {
                    seen[q] = true;
                    count += 1;
                    queue.push_back(q);
                }
            }
        }
        count == self.n_cells()
    }

    /// `∫_D f g dx` with the lumped cell rule.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cells.iter().zip(f.iter().zip(g)).map(|(&(c, j), (a, b))| self.w1[c] * self.w2[j] * a * b).sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    pub fn integral(&self, f: &[f64]) -> f64 {
        self.cells.iter().zip(f).map(|(&(c, j), a)| self.w1[c] * self.w2[j] * a).sum()
    }

    /// Bilinear interpolation through the cell centers; corners outside the
    /// mask drop out, and a point with no active corner takes the nearest
    /// active value in its column.
    pub fn interpolate(&self, values: &[f64], x: [f64; 2]) -> f64 {
        let locate = |g: &[f64], v: f64| -> (usize, f64) {
            if g.len() == 1 || v <= g[0] {
                return (0, 0.0);
            }
            let n = g.len();
            if v >= g[n - 1] {
                return (n - 2, 1.0);
            }
            let i = g.partition_point(|&t| t <= v).max(1) - 1;
            (i, (v - g[i]) / (g[i + 1] - g[i]))
        };
        let (c, s) = locate(&self.x1, x[0]);
        let (j, t) = locate(&self.x2, x[1]);
        let mut num = 0.0;
        let mut den = 0.0;
        for (dc, wc) in [(0, 1.0 - s), (1, s)] {
            for (dj, wj) in [(0, 1.0 - t), (1, t)] {
                let w = wc * wj;
                if w > 0.0 {
                    if let Some(p) = self.cell(c + dc, j + dj) {
                        num += w * values[p];
                        den += w;
                    }
                }
            }
        }
        if den > 1e-12 {
            return num / den;
        }
        let col = if s < 0.5 { c } else { (c + 1).min(self.nx() - 1) };
        let best = (0..self.ny())
            .filter_map(|jj| self.cell(col, jj).map(|p| ((self.x2[jj] - x[1]).abs(), p)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .or_else(|| (0..self.n_cells()).map(|p| (dist2(self.center(p), x), p)).min_by(|a, b| a.0.total_cmp(&b.0)));
        best.map_or(0.0, |(_, p)| values[p])
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Cell values on the active cells of a [`Domain2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub values: Vec<f64>,
}

impl Field2D {
    pub fn new(domain: &Domain2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.n_cells() {
            return Err(Error::GridMismatch(format!("field has {} values, domain has {} cells", values.len(), domain.n_cells())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("field values must be finite".into()));
        }
        Ok(Self { values })
    }
}

/// Discretized 2-D problem: `∂_t u = a₁∂²₁u + a₂∂²₂u + v·∇u + b(u) + g(u)(√ε ξ + φ)`
/// with Neumann walls. The narrow kind uses `a₁ = 1/2`, `a₂ = 1/(2δ²)` and no
/// drift; the advection kind uses `a₁ = a₂ = 1/2` and `v = ∇⊥𝓗/δ`.
#[derive(Clone)]
pub struct MultiscaleModel {
    pub domain: Domain2D,
    pub delta: f64,
    pub reaction: ReactionSpec,
    /// `e_j` at the cell centers.
    pub modes: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    pub stiffness: SymSparse<f64>,
    factor: SkylineCholesky<f64>,
    velocity: Option<Vec<[f64; 2]>>,
    pub dt: f64,
    pub steps: usize,
}

impl fmt::Debug for MultiscaleModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiscaleModel")
            .field("kind", &self.domain.kind)
            .field("cells", &self.domain.n_cells())
            .field("delta", &self.delta)
            .field("dt", &self.dt)
            .field("steps", &self.steps)
            .finish()
    }
}

fn step_count(dt: f64, horizon: f64) -> Result<usize> {
    let steps = (horizon / dt).round();
    if !(dt > 0.0) || !(horizon > 0.0) || (steps * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::Config(format!("dt = {dt} must divide the horizon T = {horizon}")));
    }
    Ok(steps as usize)
}

impl MultiscaleModel {
    fn build(domain: Domain2D, a: [f64; 2], delta: f64, reaction: ReactionSpec, basis: &NoiseBasis, dt: f64, horizon: f64) -> Result<Self> {
        let steps = step_count(dt, horizon)?;
        let n = domain.n_cells();
        let mut k = SymBuilder::new(n);
        for (p, &(c, j)) in domain.cells.iter().enumerate() {
            k.add_sym(p, p, 0.0);
            if let Some(q) = domain.cell(c + 1, j) {
                let f = a[0] * domain.w2[j] / (domain.x1[c + 1] - domain.x1[c]);
                k.add_sym(p, p, f);
                k.add_sym(q, q, f);
                k.add_sym(p, q, -f);
            }
            if let Some(q) = domain.cell(c, j + 1) {
                let f = a[1] * domain.w1[c] / (domain.x2[j + 1] - domain.x2[j]);
                k.add_sym(p, p, f);
                k.add_sym(q, q, f);
                k.add_sym(p, q, -f);
            }
        }
        let stiffness = k.build();
        let mass = domain.mass();
        let factor = SkylineCholesky::factor(&stiffness.scaled_plus_diag(dt, &mass))?;
        let centers = domain.centers();
        let modes = basis.modes.iter().map(|m| centers.iter().map(|&x| m.eval(x)).collect()).collect();
        Ok(Self { domain, delta, reaction, modes, mass, stiffness, factor, velocity: None, dt, steps })
    }

    /// Narrow-domain operator `½∂²₁ + (1/(2δ²))∂²₂` on the fixed domain.
    pub fn narrow(domain: Domain2D, delta: f64, reaction: ReactionSpec, basis: &NoiseBasis, dt: f64, horizon: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Config(format!("multiscale delta must be positive and finite, got {delta}")));
        }
        Self::build(domain, [0.5, 0.5 / (delta * delta)], delta, reaction, basis, dt, horizon)
    }

    /// `½Δ + (1/δ)∇⊥𝓗·∇` on a box; `δ = ∞` switches the advection off.
    /// The explicit advection needs `Δt ≤ ½ Δx δ / max|∇𝓗|`.
    pub fn advection(domain: Domain2D, h: &Hamiltonian, delta: f64, reaction: ReactionSpec, basis: &NoiseBasis, dt: f64, horizon: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Config(format!("multiscale delta must be positive, got {delta}")));
        }
        let mut model = Self::build(domain, [0.5, 0.5], delta, reaction, basis, dt, horizon)?;
        if delta.is_finite() {
            let centers = model.domain.centers();
            let vel: Vec<[f64; 2]> = centers
                .iter()
                .map(|&x| {
                    let g = h.grad(x);
                    [-g[1] / delta, g[0] / delta]
                })
                .collect();
            let vmax = centers.iter().map(|&x| {
                let g = h.grad(x);
                g[0].hypot(g[1])
            }).fold(0.0f64, f64::max);
            let dx = min_spacing(&model.domain.x1).min(min_spacing(&model.domain.x2));
            let limit = if vmax > 0.0 { 0.5 * dx * delta / vmax } else { f64::INFINITY };
            if dt > limit {
                return Err(Error::Cfl { dt, limit });
            }
            model.velocity = Some(vel);
        }
        Ok(model)
    }

    pub fn n_cells(&self) -> usize {
        self.domain.n_cells()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.domain.norm(u)
    }

    fn stride(&self) -> usize {
        self.steps.div_ceil(MAX_SNAPSHOTS - 1).max(1)
    }

    /// `v·∇u` by second-order upwinding, first order next to a wall and
    /// nothing across it.
    fn advect(&self, vel: &[[f64; 2]], u: &[f64], out: &mut [f64]) {
        let d = &self.domain;
        for (p, &(c, j)) in d.cells.iter().enumerate() {
            let v = vel[p];
            let mut s = 0.0;
            for axis in 0..2 {
                let va = v[axis];
                if va == 0.0 {
                    continue;
                }
                let up = va > 0.0;
                let at = |k: isize| -> Option<usize> {
                    let (cc, jj) = if axis == 0 { (c as isize + k, j as isize) } else { (c as isize, j as isize + k) };
                    if cc < 0 || jj < 0 {
                        None
                    } else {
                        d.cell(cc as usize, jj as usize)
                    }
                };
                let sgn: isize = if up { 1 } else { -1 };
                let grid = if axis == 0 { &d.x1 } else { &d.x2 };
                let i = if axis == 0 { c } else { j };
                let deriv = match (at(sgn), at(2 * sgn)) {
                    (Some(q1), Some(q2)) => {
                        let h = (grid[(i as isize + sgn) as usize] - grid[i]).abs();
                        sgn as f64 * (-3.0 * u[p] + 4.0 * u[q1] - u[q2]) / (2.0 * h)
                    }
                    (Some(q1), None) => {
                        let h = (grid[(i as isize + sgn) as usize] - grid[i]).abs();
                        sgn as f64 * (u[q1] - u[p]) / h
                    }
                    _ => 0.0,
                };
                s += va * deriv;
            }
            out[p] = s;
        }
    }

    /// One Heun step of `∂_t u = v·∇u`.
    fn advect_step(&self, vel: &[[f64; 2]], u: &[f64], tmp: &mut [f64], a: &mut [f64], out: &mut [f64]) {
        self.advect(vel, u, a);
        for i in 0..u.len() {
            tmp[i] = u[i] + self.dt * a[i];
        }
        self.advect(vel, tmp, a);
        for i in 0..u.len() {
            out[i] = 0.5 * (u[i] + tmp[i] + self.dt * a[i]);
        }
    }

    /// Runs the scheme from `u0` (cell values). `eps = 0` or `seed = None`
    /// switches the noise off; the control enters as `g(u)∑ e_j φ_j`.
    /// Sample `(root, index)` draws exactly the increments the graph solver draws.
    pub fn solve(&self, u0: &[f64], eps: f64, control: Option<&Control>, seed: Option<(u64, u64)>) -> Result<PathResult<f64>> {
        let n = self.n_cells();
        if u0.len() != n {
            return Err(Error::GridMismatch(format!("initial field has {} values, domain has {n} cells", u0.len())));
        }
        if eps < 0.0 {
            return Err(Error::Config(format!("eps must be non-negative, got {eps}")));
        }
        let jm = self.n_modes();
        if let Some(c) = control {
            if c.steps != self.steps || c.modes != jm || (c.dt - self.dt).abs() > 1e-12 * self.dt {
                return Err(Error::GridMismatch(format!("control is {}x{} with dt {}, model needs {}x{} with dt {}", c.steps, c.modes, c.dt, self.steps, jm, self.dt)));
            }
        }
        let noisy = eps > 0.0 && seed.is_some();
        let mut stream = seed.filter(|_| noisy).map(|(s, i)| IncrementStream::new(s, i));
        let amp = eps.sqrt();
        let sd = self.dt.sqrt();
        let stride = self.stride();
        let r = &self.reaction;
        let mut u = u0.to_vec();
        let mut rhs = vec![0.0; n];
        let mut adv = vec![0.0; n];
        let (mut tmp, mut work) = (vec![0.0; n], vec![0.0; n]);
        let mut db = vec![0.0; jm];
        let mut times = vec![0.0];
        let mut snapshots = vec![u.clone()];
        let mut sup = self.norm(&u);
        for step in 0..self.steps {
            if let Some(s) = stream.as_mut() {
                db.iter_mut().for_each(|b| *b = sd * s.next_normal());
            }
            match &self.velocity {
                Some(vel) => self.advect_step(vel, &u, &mut tmp, &mut work, &mut adv),
                None => adv.copy_from_slice(&u),
            }
            for p in 0..n {
                let mut xi = 0.0;
                let mut vf = 0.0;
                for j in 0..jm {
                    let e = self.modes[j][p];
                    if noisy {
                        xi += e * db[j];
                    }
                    if let Some(c) = control {
                        vf += e * c.get(step, j);
                    }
                }
                let x = u[p];
                rhs[p] = self.mass[p] * (adv[p] + self.dt * r.b(x) + r.g(x) * (amp * xi + self.dt * vf));
            }
            self.factor.solve_in_place(&mut rhs);
            std::mem::swap(&mut u, &mut rhs);
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
        Ok(PathResult { times, snapshots, sup_norm: sup, terminal: u, seed: seed.filter(|_| noisy), log_weight: 0.0 })
    }
}

fn min_spacing(g: &[f64]) -> f64 {
    g.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Narrow-domain run from the field `u0`; `eps = 0` and/or a control select the
/// deterministic and controlled variants.
pub fn solve_narrow(model: &MultiscaleModel, u0: &Field2D, eps: f64, control: Option<&Control>, root_seed: u64, index: u64) -> Result<PathResult<f64>> {
    if model.domain.kind != MultiscaleKind::Narrow {
        return Err(Error::Config("solve_narrow needs a narrow-domain model".into()));
    }
    model.solve(&u0.values, eps, control, Some((root_seed, index)))
}

pub fn solve_fast_advection(model: &MultiscaleModel, u0: &Field2D, eps: f64, root_seed: u64, index: u64) -> Result<PathResult<f64>> {
    if model.domain.kind != MultiscaleKind::Advection {
        return Err(Error::Config("solve_fast_advection needs an advection model".into()));
    }
    model.solve(&u0.values, eps, None, Some((root_seed, index)))
}

/// Pullback `f ↦ f^∨` at the cell centers, stored as interpolation weights.
#[derive(Debug, Clone)]
pub struct Pullback {
    entries: Vec<(usize, usize, f64)>,
}

impl Pullback {
    pub fn new(domain: &Domain2D, geo: &Geometry) -> Result<Self> {
        let space = geo.space();
        let entries = domain
            .centers()
            .into_iter()
            .map(|x| {
                let (z, k) = geo.project_point(x)?;
                let grid = &space.graph.edges[k].grid;
                let dofs = &space.layout.edge_dofs[k];
                let n = grid.len();
                Ok(if z <= grid[0] {
                    (dofs[0], dofs[0], 0.0)
                } else if z >= grid[n - 1] {
                    (dofs[n - 1], dofs[n - 1], 0.0)
                } else {
                    let i = grid.partition_point(|&g| g <= z).max(1) - 1;
                    (dofs[i], dofs[i + 1], (z - grid[i]) / (grid[i + 1] - grid[i]))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.entries.iter().map(|&(a, b, t)| (1.0 - t) * f[a] + t * f[b]).collect()
    }
}

/// `f^∨ = f ∘ Π` on the cell centers.
pub fn pullback(domain: &Domain2D, f: &GraphFunction<f64>, geo: &Geometry) -> Result<Field2D> {
    geo.space().check(f)?;
    Ok(Field2D { values: Pullback::new(domain, geo)?.apply(&f.values) })
}

/// Level-set averages of every stored snapshot.
pub fn project_field(domain: &Domain2D, path: &PathResult<f64>, geo: &Geometry) -> Result<Vec<GraphFunction<f64>>> {
    path.snapshots
        .iter()
        .map(|u| {
            if u.len() != domain.n_cells() {
                return Err(Error::GridMismatch(format!("snapshot has {} values, domain has {} cells", u.len(), domain.n_cells())));
            }
            let f = |x: [f64; 2]| domain.interpolate(u, x);
            geo.wedge_callable(&f)
        })
        .collect()
}

/// Mass-weighted variance of `u` inside each of `bins` level bands of `𝓗`,
/// summed over the bands.
pub fn level_set_variance(domain: &Domain2D, u: &[f64], h: &Hamiltonian, range: (f64, f64), bins: usize) -> f64 {
    let mass = domain.mass();
    let mut acc = vec![(0.0, 0.0, 0.0); bins];
    for (p, x) in domain.centers().into_iter().enumerate() {
        let z = h.value(x);
        if z < range.0 || z >= range.1 {
            continue;
        }
        let b = (((z - range.0) / (range.1 - range.0)) * bins as f64) as usize;
        let a = &mut acc[b.min(bins - 1)];
        a.0 += mass[p];
        a.1 += mass[p] * u[p];
        a.2 += mass[p] * u[p] * u[p];
    }
    acc.iter().filter(|a| a.0 > 0.0).map(|&(m, s, s2)| (s2 - s * s / m).max(0.0)).sum()
}

/// `δ = ψ(ε)` for joint runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeltaCoupling {
    /// `c ε^p`, `p > 0`.
    Power { c: f64, p: f64 },
    /// Tabulated `(ε, δ)`, interpolated linearly in `ln ε`.
    Table(Vec<(f64, f64)>),
}

impl DeltaCoupling {
    /// Accepts `eps^1/2`, `0.5*eps^0.5`, or `table:e1=d1,e2=d2,...`. Specs
    /// whose value does not go to zero with `ε` are rejected.
    pub fn parse(spec: &str) -> Result<Self> {
        let s: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Config(format!("cannot parse multiscale.psi '{spec}' (use eps^1/2, c*eps^p or table:eps=delta,...)"));
        let num = |t: &str| -> Result<f64> {
            match t.split_once('/') {
                Some((a, b)) => Ok(a.parse::<f64>().map_err(|_| bad())? / b.parse::<f64>().map_err(|_| bad())?),
                None => t.parse::<f64>().map_err(|_| bad()),
            }
        };
        let out = if let Some(rest) = s.strip_prefix("table:") {
            let mut rows = Vec::new();
            for item in rest.split(',') {
                let (e, d) = item.split_once('=').ok_or_else(bad)?;
                rows.push((num(e)?, num(d)?));
            }
            DeltaCoupling::Table(rows)
        } else if let Some(i) = s.find("eps") {
            let c = match s[..i].strip_suffix('*') {
                Some(t) => num(t)?,
                None if i == 0 => 1.0,
                None => return Err(bad()),
            };
            let p = match &s[i + 3..] {
                "" => 1.0,
                t => num(t.strip_prefix('^').ok_or_else(bad)?)?,
            };
            DeltaCoupling::Power { c, p }
        } else {
            // a bare number is a constant coupling; it parses so the check can name the problem
            let c = num(&s)?;
            DeltaCoupling::Table(vec![(1.0, c), (1e-12, c)])
        };
        out.check()?;
        Ok(out)
    }

    pub fn eval(&self, eps: f64) -> f64 {
        match self {
            DeltaCoupling::Power { c, p } => c * eps.powf(*p),
            DeltaCoupling::Table(rows) => {
                let mut r = rows.clone();
                r.sort_by(|a, b| a.0.total_cmp(&b.0));
                let x = eps.ln();
                if x <= r[0].0.ln() {
                    return r[0].1;
                }
                for w in r.windows(2) {
                    let (a, b) = (w[0].0.ln(), w[1].0.ln());
                    if x <= b {
                        let t = (x - a) / (b - a);
                        return w[0].1 * (1.0 - t) + w[1].1 * t;
                    }
                }
                r[r.len() - 1].1
            }
        }
    }

    /// `ψ > 0`, non-decreasing in `ε`, and `ψ → 0`: checked on `ε = 10^{-1..-12}`
    /// by requiring a tenfold drop from the top to the bottom of the ladder.
    pub fn check(&self) -> Result<()> {
        if let DeltaCoupling::Table(rows) = self {
            if rows.len() < 2 || rows.iter().any(|r| !(r.0 > 0.0) || !(r.1 > 0.0)) {
                return Err(Error::Config("multiscale.psi table needs at least two rows with positive eps and delta".into()));
            }
        }
        if let DeltaCoupling::Power { c, p } = self {
            if !(*c > 0.0) || !(*p > 0.0) {
                return Err(Error::Config(format!("multiscale.psi = {c}*eps^{p} does not vanish as eps -> 0 (need c > 0, p > 0)")));
            }
        }
        let vals: Vec<f64> = (1..=12).map(|k| self.eval(10f64.powi(-k))).collect();
        let monotone = vals.windows(2).all(|w| w[1] <= w[0]);
        if !monotone || vals.iter().any(|v| !(*v > 0.0)) || !(vals[11] < 0.1 * vals[0]) {
            return Err(Error::Config(format!("multiscale.psi must be positive and decrease to 0 with eps; sampled {:?} .. {:?}", vals[0], vals[11])));
        }
        Ok(())
    }
}

impl fmt::Display for DeltaCoupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaCoupling::Power { c, p } if *c == 1.0 => write!(f, "eps^{p}"),
            DeltaCoupling::Power { c, p } => write!(f, "{c}*eps^{p}"),
            DeltaCoupling::Table(rows) => {
                let items: Vec<String> = rows.iter().map(|(e, d)| format!("{e}={d}")).collect();
                write!(f, "table:{}", items.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleConfig {
    pub kind: MultiscaleKind,
    pub delta_ladder: Vec<f64>,
    pub epsilon: f64,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub horizon: f64,
    pub tau0: f64,
    pub psi: Option<DeltaCoupling>,
    pub delta_min: f64,
}

impl MultiscaleConfig {
    pub fn new(kind: MultiscaleKind) -> Self {
        let delta_min = match kind {
            MultiscaleKind::Narrow => 0.02,
            MultiscaleKind::Advection => 0.05,
        };
        Self { kind, delta_ladder: vec![0.4, 0.2, 0.1], epsilon: 0.0, nx: 32, ny: 16, dt: 0.01, horizon: 1.0, tau0: 0.2, psi: None, delta_min }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_ladder.is_empty() || self.delta_ladder.iter().any(|&d| !(d >= self.delta_min) || !d.is_finite()) {
            return Err(Error::Config(format!("multiscale.delta_ladder must be finite values >= delta_min = {}, got {:?}", self.delta_min, self.delta_ladder)));
        }
        if self.nx < 2 || self.ny < 1 {
            return Err(Error::Config(format!("grid.nx must be >= 2 and grid.ny >= 1, got {} and {}", self.nx, self.ny)));
        }
        step_count(self.dt, self.horizon)?;
        if !(self.tau0 > 0.0 && self.tau0 < self.horizon) {
            return Err(Error::Config(format!("audit.tau0 must lie in (0, T), got {} with T = {}", self.tau0, self.horizon)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("multiscale epsilon must be >= 0, got {}", self.epsilon)));
        }
        if let Some(p) = &self.psi {
            p.check()?;
        }
        Ok(())
    }
}

/// Named test function on the plane.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub f: Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
}

impl TestFunction {
    pub fn new(name: impl Into<String>, f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("TestFunction").field(&self.name).finish()
    }
}

/// Grid and time data shared by the narrow-domain audits.
#[derive(Debug, Clone)]
pub struct NarrowSetup {
    pub geo: NarrowGeometry,
    pub ny: usize,
    pub dt: f64,
    pub horizon: f64,
    pub tau0: f64,
}

impl NarrowSetup {
    pub fn domain(&self) -> Result<Domain2D> {
        Domain2D::narrow(&self.geo, self.ny)
    }

    /// Graph model with the implicit Euler scheme the 2-D solver uses.
    pub fn graph_model(&self, reaction: ReactionSpec, basis: &NoiseBasis) -> Result<SpdeModel<f64>> {
        SpdeModel::new(&self.geo.space, reaction, basis, GraphWeight::unit(), self.dt, 1.0, self.horizon)
    }

    fn trivial_basis(space: &GraphSpace<f64>) -> Result<NoiseBasis> {
        let mut b = NoiseBasis::new(vec![NoiseMode::new("one", 0.0, |_| 1.0)])?;
        b.projected = vec![space.constant(1.0)];
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub test: String,
    pub delta: f64,
    /// `‖u_δ(0) − (ū(0))^∨‖`.
    pub initial_error: f64,
    /// Same at the first stored time after 0.
    pub early_error: f64,
    /// `sup_{t∈[τ₀,T]} ‖u_δ(t) − (ū(t))^∨‖`.
    pub sup_error: f64,
    /// `sup_t ‖(u_δ(t))^∧ − ū(t)‖` on the graph nodes, column averages.
    pub projected_error: f64,
    pub reference_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitAudit {
    pub tau0: f64,
    pub horizon: f64,
    pub rows: Vec<LimitRow>,
    /// Per test: `sup_error` strictly decreasing along the δ ladder.
    pub monotone: Vec<(String, bool)>,
}

impl LimitAudit {
    pub fn all_monotone(&self) -> bool {
        self.monotone.iter().all(|m| m.1)
    }

    pub fn rows_for<'a>(&'a self, test: &'a str) -> impl Iterator<Item = &'a LimitRow> + 'a {
        self.rows.iter().filter(move |r| r.test == test)
    }
}

/// Runs the 2-D narrow-domain problem and the graph problem from `φ` and
/// `φ^∧` for every test function and every δ, deterministically.
pub fn narrow_limit_audit(setup: &NarrowSetup, reaction: &ReactionSpec, deltas: &[f64], tests: &[TestFunction]) -> Result<LimitAudit> {
    if !(setup.tau0 > 0.0 && setup.tau0 < setup.horizon) {
        return Err(Error::Config(format!("tau0 must lie in (0, T), got {} with T = {}", setup.tau0, setup.horizon)));
    }
    let domain = setup.domain()?;
    let geo = Geometry::Narrow(setup.geo.clone());
    let pull = Pullback::new(&domain, &geo)?;
    let basis = NarrowSetup::trivial_basis(&setup.geo.space)?;
    let graph = setup.graph_model(reaction.clone(), &basis)?;
    let column = ColumnAverage::new(&domain, &setup.geo)?;
    let refs: Vec<PathResult<f64>> = tests
        .iter()
        .map(|t| {
            let f = |x: [f64; 2]| (t.f)(x);
            let bar = setup.geo.wedge_callable(&f)?;
            graph.solve_forced(&bar.values, Forcing::none())
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, f64)> = (0..tests.len()).flat_map(|i| deltas.iter().map(move |&d| (i, d))).collect();
    let rows: Vec<LimitRow> = jobs
        .par_iter()
        .map(|&(i, delta)| {
            let t = &tests[i];
            let model = MultiscaleModel::narrow(domain.clone(), delta, reaction.clone(), &basis, setup.dt, setup.horizon)?;
            let u0 = domain.field(|x| (t.f)(x));
            let path = model.solve(&u0.values, 0.0, None, None)?;
            let reference = &refs[i];
            let mut row = LimitRow {
                test: t.name.clone(),
                delta,
                initial_error: 0.0,
                early_error: 0.0,
                sup_error: 0.0,
                projected_error: 0.0,
                reference_norm: 0.0,
            };
            for (k, (time, u)) in path.times.iter().zip(&path.snapshots).enumerate() {
                let vee = pull.apply(&reference.snapshots[k]);
                let diff: Vec<f64> = u.iter().zip(&vee).map(|(a, b)| a - b).collect();
                let e = domain.norm(&diff);
                if k == 0 {
                    row.initial_error = e;
                }
                if k == 1 {
                    row.early_error = e;
                }
                if *time >= setup.tau0 - 1e-12 {
                    row.sup_error = row.sup_error.max(e);
                    row.reference_norm = row.reference_norm.max(domain.norm(&vee));
                }
                let wedge = column.apply(u);
                let pe = wedge.iter().zip(&reference.snapshots[k]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if k > 0 {
                    row.projected_error = row.projected_error.max(pe);
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let monotone = tests
        .iter()
        .map(|t| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.test == t.name).map(|r| r.sup_error).collect();
            let mut order: Vec<(f64, f64)> = rows.iter().filter(|r| r.test == t.name).map(|r| (r.delta, r.sup_error)).collect();
            order.sort_by(|a, b| b.0.total_cmp(&a.0));
            let dec = errs.len() >= 2 && order.windows(2).all(|w| w[1].1 < w[0].1);
            (t.name.clone(), dec)
        })
        .collect();
    Ok(LimitAudit { tau0: setup.tau0, horizon: setup.horizon, rows, monotone })
}

/// `sup_{t∈[τ₀,T]}‖S_δ(t)φ − (S̄(t)φ^∧)^∨‖` for the heat flows alone.
pub fn semigroup_convergence_audit(setup: &NarrowSetup, deltas: &[f64], tests: &[TestFunction]) -> Result<LimitAudit> {
    narrow_limit_audit(setup, &ReactionSpec::zero(), deltas, tests)
}

/// Cross-section means of cell values at every graph node, for domains
/// whose `x₁` nodes are the graph nodes.
#[derive(Debug, Clone)]
struct ColumnAverage {
    /// `(dof, cells)` per node.
    nodes: Vec<(usize, Vec<usize>)>,
    n_dofs: usize,
    w2: Vec<f64>,
}

impl ColumnAverage {
    fn new(domain: &Domain2D, geo: &NarrowGeometry) -> Result<Self> {
        let space = &geo.space;
        let mut nodes = Vec::new();
        for (k, e) in space.graph.edges.iter().enumerate() {
            for (i, &z) in e.grid.iter().enumerate() {
                let Some(c) = domain.x1.iter().position(|&x| (x - z).abs() <= 1e-12 * (1.0 + z.abs())) else {
                    return Err(Error::GridMismatch(format!("graph node {z} is not a column of the 2-D grid")));
                };
                let cells: Vec<usize> = (0..domain.ny())
                    .filter_map(|j| domain.cell(c, j))
                    .filter(|&p| geo.project_point(domain.center(p)).map(|(_, kk)| kk == k).unwrap_or(false))
                    .collect();
                nodes.push((space.layout.edge_dofs[k][i], cells));
            }
        }
        let w2 = domain.cells.iter().map(|&(_, j)| domain.w2[j]).collect();
        Ok(Self { nodes, n_dofs: space.n_dofs(), w2 })
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut num = vec![0.0; self.n_dofs];
        let mut den = vec![0.0; self.n_dofs];
        for (d, cells) in &self.nodes {
            for &p in cells {
                num[*d] += self.w2[p] * u[p];
                den[*d] += self.w2[p];
            }
        }
        num.iter().zip(&den).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect()
    }
}

/// Endpoint event `⟨u(T), ψ⟩ > r` shared by the 2-D and the graph runs; the
/// pairing on `D` uses `ψ^∨`.
#[derive(Debug, Clone)]
pub struct JointEvent {
    pub psi: GraphFunction<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub epsilon: f64,
    pub delta: f64,
    pub p_2d: f64,
    pub se_2d: f64,
    pub p_graph: f64,
    pub se_graph: f64,
    pub rate_2d: f64,
    pub rate_graph: f64,
    /// Three combined standard errors of the scaled log estimates.
    pub tolerance: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimitReport {
    pub psi: String,
    pub rows: Vec<JointRow>,
    pub agree_at_smallest: bool,
    /// `|rate_2d − rate_graph|` does not grow from the largest to the smallest ε.
    pub trend: bool,
}

/// Runs the 2-D problem at `(ε, ψ(ε))` and the graph problem at `ε` with common
/// random numbers and compares `−ε ln p̂` of the same endpoint event.
#[allow(clippy::too_many_arguments)]
pub fn joint_limit_audit(
    setup: &NarrowSetup,
    coupling: &DeltaCoupling,
    reaction: &ReactionSpec,
    basis: &NoiseBasis,
    u0: &TestFunction,
    event: &JointEvent,
    eps_grid: &[f64],
    n: usize,
    root_seed: u64,
) -> Result<JointLimitReport> {
    coupling.check()?;
    if n < 100 {
        return Err(Error::InsufficientSampling(format!("joint audit needs at least 100 samples per point, got {n}")));
    }
    if !basis.is_projected() {
        return Err(Error::Config("joint audit needs a noise basis projected onto the graph".into()));
    }
    let domain = setup.domain()?;
    let geo = Geometry::Narrow(setup.geo.clone());
    let pull = Pullback::new(&domain, &geo)?;
    let graph = setup.graph_model(reaction.clone(), basis)?;
    let lumped = crate::metric_graph::lumped_weights(&setup.geo.space, &GraphWeight::unit());
    let p_graph: Vec<f64> = lumped.iter().zip(&event.psi.values).map(|(m, p)| m * p).collect();
    let psi_vee = pull.apply(&event.psi.values);
    let mass = domain.mass();
    let p_2d: Vec<f64> = mass.iter().zip(&psi_vee).map(|(m, p)| m * p).collect();
    let f = |x: [f64; 2]| (u0.f)(x);
    let bar0 = setup.geo.wedge_callable(&f)?.values;
    let field0 = domain.field(|x| (u0.f)(x)).values;
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut rows = Vec::new();
    for (k, &eps) in eps_grid.iter().enumerate() {
        let delta = coupling.eval(eps);
        let model = MultiscaleModel::narrow(domain.clone(), delta, reaction.clone(), basis, setup.dt, setup.horizon)?;
        let base = root_seed.wrapping_add(k as u64);
        let hits: Vec<(bool, bool)> = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let a = model.solve(&field0, eps, None, Some((base, i))).map_err(|e| Error::Sample { index: i, source: Box::new(e) })?;
                let b = graph.solve_forced(&bar0, Forcing::seeded(eps.sqrt(), base, i)).map_err(|e| Error::Sample { index: i, source: Box::new(e) })?;
                Ok((dot(&p_2d, &a.terminal) > event.threshold, dot(&p_graph, &b.terminal) > event.threshold))
            })
            .collect::<Result<_>>()?;
        let h2 = hits.iter().filter(|h| h.0).count();
        let hg = hits.iter().filter(|h| h.1).count();
        if h2 == 0 || hg == 0 {
            return Err(Error::InsufficientSampling(format!("joint audit at eps = {eps}: {h2} hits (2-D) and {hg} hits (graph) out of {n}")));
        }
        let est = |h: usize| {
            let p = h as f64 / n as f64;
            (p, (p * (1.0 - p) / n as f64).sqrt())
        };
        let ((pa, sa), (pb, sb)) = (est(h2), est(hg));
        let (ra, rb) = (-eps * pa.ln(), -eps * pb.ln());
        let tolerance = 3.0 * eps * ((sa / pa).powi(2) + (sb / pb).powi(2)).sqrt();
        rows.push(JointRow {
            epsilon: eps,
            delta,
            p_2d: pa,
            se_2d: sa,
            p_graph: pb,
            se_graph: sb,
            rate_2d: ra,
            rate_graph: rb,
            tolerance,
            agree: (ra - rb).abs() <= tolerance,
        });
    }
    let smallest = rows.iter().min_by(|a, b| a.epsilon.total_cmp(&b.epsilon)).cloned();
    let largest = rows.iter().max_by(|a, b| a.epsilon.total_cmp(&b.epsilon)).cloned();
    let agree_at_smallest = smallest.as_ref().is_some_and(|r| r.agree);
    let trend = match (smallest, largest) {
        (Some(s), Some(l)) => (s.rate_2d - s.rate_graph).abs() <= (l.rate_2d - l.rate_graph).abs() + s.tolerance,
        _ => false,
    };
    Ok(JointLimitReport { psi: coupling.to_string(), rows, agree_at_smallest, trend })
}
