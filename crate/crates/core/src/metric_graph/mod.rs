//! The graph Γ: vertices typed by critical-point kind, edges identified with
//! real intervals, coefficient tables, weights, graph functions and norms.

mod coefficients;
mod function;
mod io;
mod norms;
pub mod quadrature;

pub use coefficients::{EdgeCoefficientTable, EdgeCoefficients, GraphWeight};
pub use function::{GraphFunction, GraphLayout, GraphSpace};
pub use io::GraphDocument;
pub use norms::{MeasureRules, inner_product_h, lumped_weights, measure_total, norm_h, norm_lq, norm_w12};

use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VertexKind {
    Minimum,
    Maximum,
    Saddle,
    BoundaryFold,
    Infinity,
}

impl VertexKind {
    /// Vertices at which `α` may vanish.
    pub fn is_extremum(self) -> bool {
        matches!(self, VertexKind::Minimum | VertexKind::Maximum | VertexKind::BoundaryFold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex<T> {
    pub id: usize,
    pub kind: VertexKind,
    /// Value of the Hamiltonian at the vertex; `+∞` only for [`VertexKind::Infinity`].
    pub level: T,
    /// `(edge id, sign)`; sign is `+1` when the level coordinate increases away
    /// from this vertex along the edge.
    pub incident: Vec<(usize, i8)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge<T> {
    pub id: usize,
    pub a: T,
    /// Upper end; `+∞` for the edge attached to the vertex at infinity.
    pub b: T,
    pub v_lo: usize,
    pub v_hi: usize,
    /// Strictly increasing nodes from `a` to `b` (or to the truncation level).
    pub grid: Vec<T>,
}

impl<T: Real> Edge<T> {
    pub fn is_unbounded(&self) -> bool {
        self.b.is_infinite()
    }

    pub fn cells(&self) -> usize {
        self.grid.len().saturating_sub(1)
    }

    pub fn z_max(&self) -> T {
        *self.grid.last().expect("non-empty grid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph<T> {
    pub vertices: Vec<Vertex<T>>,
    pub edges: Vec<Edge<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, subject: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { subject: subject.into(), message: message.into() });
    }
}

impl<T: Real> MetricGraph<T> {
    /// Builds the graph and derives every vertex's incidence list from the edges.
    pub fn new(vertices: Vec<(VertexKind, T)>, edges: Vec<(usize, usize, Vec<T>)>) -> Self {
        let mut vs: Vec<Vertex<T>> = vertices
            .into_iter()
            .enumerate()
            .map(|(id, (kind, level))| Vertex { id, kind, level, incident: Vec::new() })
            .collect();
        let mut es = Vec::with_capacity(edges.len());
        for (id, (v_lo, v_hi, grid)) in edges.into_iter().enumerate() {
            let a = vs.get(v_lo).map(|v| v.level).unwrap_or_else(T::nan);
            let b = vs.get(v_hi).map(|v| v.level).unwrap_or_else(T::nan);
            if let Some(v) = vs.get_mut(v_lo) {
                v.incident.push((id, 1));
            }
            if v_hi != v_lo {
                if let Some(v) = vs.get_mut(v_hi) {
                    v.incident.push((id, -1));
                }
            }
            es.push(Edge { id, a, b, v_lo, v_hi, grid });
        }
        Self { vertices: vs, edges: es }
    }

    /// Single edge `(a, b)` between two vertices of the given kinds with a uniform grid.
    pub fn interval(a: T, b: T, cells: usize, lo: VertexKind, hi: VertexKind) -> Self {
        let grid = uniform_grid(a, b, cells);
        Self::new(vec![(lo, a), (hi, b)], vec![(0, 1, grid)])
    }

    /// `legs` identical edges `(0, 1)` glued at a common vertex at level 1.
    pub fn star(legs: usize, cells: usize) -> Self {
        let mut vertices = vec![(VertexKind::Saddle, T::one())];
        let mut edges = Vec::new();
        for _ in 0..legs {
            vertices.push((VertexKind::Minimum, T::zero()));
            edges.push((vertices.len() - 1, 0, uniform_grid(T::zero(), T::one(), cells)));
        }
        Self::new(vertices, edges)
    }

    /// Y-shaped graph: two lower edges `(0,1)` meeting an upper edge `(1,2)` at a saddle.
    pub fn y_graph(cells: usize) -> Self {
        let vertices = vec![
            (VertexKind::Minimum, T::zero()),
            (VertexKind::Minimum, T::zero()),
            (VertexKind::Saddle, T::one()),
            (VertexKind::Maximum, T::of(2.0)),
        ];
        let edges = vec![
            (0, 2, uniform_grid(T::zero(), T::one(), cells)),
            (1, 2, uniform_grid(T::zero(), T::one(), cells)),
            (2, 3, uniform_grid(T::one(), T::of(2.0), cells)),
        ];
        Self::new(vertices, edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn unbounded_edge(&self) -> Option<&Edge<T>> {
        self.edges.iter().find(|e| e.is_unbounded())
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> MetricGraph<U> {
        let cv = |x: T| U::of(x.as_f64());
        MetricGraph {
            vertices: self
                .vertices
                .iter()
                .map(|v| Vertex { id: v.id, kind: v.kind, level: cv(v.level), incident: v.incident.clone() })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    id: e.id,
                    a: cv(e.a),
                    b: cv(e.b),
                    v_lo: e.v_lo,
                    v_hi: e.v_hi,
                    grid: e.grid.iter().map(|&z| cv(z)).collect(),
                })
                .collect(),
        }
    }

    pub fn is_connected(&self) -> bool {
        if self.vertices.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.vertices.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &(e, _) in &self.vertices[v].incident {
                let Some(edge) = self.edges.get(e) else { continue };
                for w in [edge.v_lo, edge.v_hi] {
                    if w < seen.len() && !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Checks every structural invariant; an empty report means the graph is valid.
pub fn validate_graph<T: Real>(g: &MetricGraph<T>) -> ValidationReport {
    let mut r = ValidationReport::default();
    let nv = g.vertices.len();
    for (i, v) in g.vertices.iter().enumerate() {
        let subj = format!("vertex {i}");
        if v.id != i {
            r.push(&subj, format!("id {} does not match position", v.id));
        }
        match v.kind {
            VertexKind::Infinity => {
                if !(v.level.is_infinite() && v.level > T::zero()) {
                    r.push(&subj, "infinity vertex must have level +inf");
                }
                if v.incident.len() != 1 {
                    r.push(&subj, format!("infinity vertex has {} incident edges, expected 1", v.incident.len()));
                }
            }
            _ => {
                if !v.level.is_finite() {
                    r.push(&subj, "non-finite level on a finite vertex");
                }
            }
        }
        if v.incident.is_empty() && v.kind != VertexKind::Infinity {
            r.push(&subj, "isolated vertex");
        }
    }
    let mut unbounded = 0;
    let mut appearances = vec![0usize; g.edges.len()];
    for v in &g.vertices {
        for &(e, _) in &v.incident {
            if e < appearances.len() {
                appearances[e] += 1;
            }
        }
    }
    for (k, e) in g.edges.iter().enumerate() {
        let subj = format!("edge {k}");
        if e.id != k {
            r.push(&subj, format!("id {} does not match position", e.id));
        }
        if e.v_lo >= nv || e.v_hi >= nv {
            r.push(&subj, "endpoint vertex does not exist");
            continue;
        }
        if appearances[k] != 2 {
            r.push(&subj, format!("appears at {} vertices, expected 2", appearances[k]));
        }
        if !(e.a < e.b) {
            r.push(&subj, "degenerate interval (a >= b)");
        }
        if e.a != g.vertices[e.v_lo].level {
            r.push(&subj, "a differs from the level of v_lo");
        }
        if e.b.is_finite() && e.b != g.vertices[e.v_hi].level {
            r.push(&subj, "b differs from the level of v_hi");
        }
        if e.b.is_infinite() {
            unbounded += 1;
            if g.vertices[e.v_hi].kind != VertexKind::Infinity {
                r.push(&subj, "unbounded edge must end at the vertex at infinity");
            }
        }
        if e.grid.len() < 2 {
            r.push(&subj, "grid needs at least two nodes");
            continue;
        }
        if e.grid.windows(2).any(|w| !(w[1] > w[0])) {
            r.push(&subj, "grid not strictly increasing");
        }
        if e.grid[0] != e.a {
            r.push(&subj, "grid does not start at a");
        }
        let last = *e.grid.last().unwrap();
        if e.b.is_finite() && last != e.b {
            r.push(&subj, "grid does not end at b");
        }
        if e.b.is_infinite() && !last.is_finite() {
            r.push(&subj, "unbounded edge needs a finite truncation level");
        }
    }
    if unbounded > 1 {
        r.push("graph", format!("{unbounded} unbounded edges, at most one allowed"));
    }
    if !g.is_connected() {
        r.push("graph", "not connected");
    }
    r
}

pub fn uniform_grid<T: Real>(a: T, b: T, cells: usize) -> Vec<T> {
    let h = (b - a) / T::of_usize(cells);
    (0..=cells)
        .map(|i| if i == cells { b } else { a + h * T::of_usize(i) })
        .collect()
}

/// Graded mesh on `(a, b)` with geometric refinement toward the flagged ends.
///
/// Cell sizes grow by `ratio` away from each refined end and are capped once
/// they reach 100× the smallest cell.
pub fn graded_grid<T: Real>(a: T, b: T, cells: usize, ratio: f64, refine_lo: bool, refine_hi: bool) -> Vec<T> {
    let cap = (100f64.ln() / ratio.ln()).ceil();
    let sizes: Vec<f64> = (0..cells)
        .map(|i| {
            let dlo = if refine_lo { i as f64 } else { f64::INFINITY };
            let dhi = if refine_hi { (cells - 1 - i) as f64 } else { f64::INFINITY };
            let d = dlo.min(dhi).min(cap);
            ratio.powf(d)
        })
        .collect();
    let total: f64 = sizes.iter().sum();
    let (af, bf) = (a.as_f64(), b.as_f64());
    let mut grid = Vec::with_capacity(cells + 1);
    let mut z = af;
    grid.push(a);
    for s in &sizes[..cells - 1] {
        z += (bf - af) * s / total;
        grid.push(T::of(z));
    }
    grid.push(b);
    grid
}

/// Geometric ladder for a truncated unbounded edge: refined toward `a`, cells
/// growing by a constant factor up to `z_max`.
pub fn geometric_grid<T: Real>(a: T, z_max: T, cells: usize, first: f64) -> Vec<T> {
    let (af, zf) = (a.as_f64(), z_max.as_f64());
    let span = zf - af;
    // solve first * (q^cells - 1)/(q - 1) = span for q by bisection
    let total = |q: f64| if (q - 1.0).abs() < 1e-12 { first * cells as f64 } else { first * (q.powi(cells as i32) - 1.0) / (q - 1.0) };
    let (mut lo, mut hi): (f64, f64) = (1.0, 2.0);
    while total(hi) < span {
        hi *= 2.0;
    }
    if total(lo) > span {
        return uniform_grid(a, z_max, cells);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < span {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    let mut grid = vec![a];
    let mut z = af;
    let mut h = first;
    for _ in 0..cells - 1 {
        z += h;
        h *= q;
        grid.push(T::of(z));
    }
    grid.push(z_max);
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_graph_is_valid() {
        let g = MetricGraph::<f64>::interval(0.0, 1.0, 8, VertexKind::Minimum, VertexKind::Maximum);
        assert!(validate_graph(&g).is_valid());
    }

    #[test]
    fn y_graph_is_valid() {
        let g = MetricGraph::<f64>::y_graph(16);
        let rep = validate_graph(&g);
        assert!(rep.is_valid(), "{:?}", rep);
        assert_eq!(g.vertices[2].incident.len(), 3);
        let signs: Vec<i8> = g.vertices[2].incident.iter().map(|&(_, s)| s).collect();
        assert_eq!(signs, vec![-1, -1, 1]);
    }

    #[test]
    fn degenerate_interval_is_reported() {
        let g = MetricGraph::<f64>::new(
            vec![(VertexKind::Minimum, 1.0), (VertexKind::Maximum, 1.0)],
            vec![(0, 1, vec![1.0, 1.0])],
        );
        let rep = validate_graph(&g);
        assert!(rep.contains("degenerate interval"));
    }

    #[test]
    fn infinity_vertex_rules() {
        let mut g = MetricGraph::<f64>::new(
            vec![(VertexKind::Minimum, 0.0), (VertexKind::Infinity, f64::INFINITY)],
            vec![(0, 1, uniform_grid(0.0, 10.0, 10))],
        );
        assert!(validate_graph(&g).is_valid(), "{:?}", validate_graph(&g));
        g.vertices[1].level = 5.0;
        assert!(!validate_graph(&g).is_valid());
    }

    #[test]
    fn disconnected_graph_is_reported() {
        let g = MetricGraph::<f64>::new(
            vec![
                (VertexKind::Minimum, 0.0),
                (VertexKind::Maximum, 1.0),
                (VertexKind::Minimum, 0.0),
                (VertexKind::Maximum, 1.0),
            ],
            vec![(0, 1, uniform_grid(0.0, 1.0, 2)), (2, 3, uniform_grid(0.0, 1.0, 2))],
        );
        assert!(validate_graph(&g).contains("not connected"));
    }

    #[test]
    fn graded_grid_is_monotone_and_refined() {
        let g: Vec<f64> = graded_grid(0.0, 1.0, 128, 1.15, true, true);
        assert_eq!(g.len(), 129);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        let h0 = g[1] - g[0];
        let hmid = g[65] - g[64];
        assert!(hmid / h0 > 50.0);
        let geo: Vec<f64> = geometric_grid(0.0, 100.0, 64, 0.01);
        assert!((geo[64] - 100.0).abs() < 1e-12 && geo.windows(2).all(|w| w[1] > w[0]));
    }
}
