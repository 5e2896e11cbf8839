use super::{EdgeCoefficientTable, MetricGraph};
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::sync::Arc;

/// Degree-of-freedom map: edge interior nodes first (edge by edge), then one
/// shared unknown per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphLayout {
    pub edge_dofs: Vec<Vec<usize>>,
    pub n_interior: usize,
    pub n_vertices: usize,
}

impl GraphLayout {
    pub fn new<T: Real>(g: &MetricGraph<T>) -> Self {
        let mut next = 0;
        let mut interior = Vec::with_capacity(g.edges.len());
        for e in &g.edges {
            let n = e.grid.len();
            interior.push((next, n));
            next += n.saturating_sub(2);
        }
        let n_interior = next;
        let edge_dofs = g
            .edges
            .iter()
            .zip(interior)
            .map(|(e, (start, n))| {
                (0..n)
                    .map(|i| match i {
                        0 => n_interior + e.v_lo,
                        i if i == n - 1 => n_interior + e.v_hi,
                        i => start + i - 1,
                    })
                    .collect()
            })
            .collect();
        Self { edge_dofs, n_interior, n_vertices: g.vertices.len() }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_interior + self.n_vertices
    }

    pub fn vertex_dof(&self, v: usize) -> usize {
        self.n_interior + v
    }
}

/// The state space: graph, coefficients and dof layout, shared read-only.
#[derive(Debug, Clone)]
pub struct GraphSpace<T> {
    pub graph: Arc<MetricGraph<T>>,
    pub coeffs: Arc<EdgeCoefficientTable<T>>,
    pub layout: Arc<GraphLayout>,
}

impl<T: Real> GraphSpace<T> {
    pub fn new(graph: MetricGraph<T>, coeffs: EdgeCoefficientTable<T>) -> Result<Self> {
        let report = super::validate_graph(&graph);
        if !report.is_valid() {
            let msg: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidGraph(msg.join("; ")));
        }
        coeffs.check(&graph)?;
        let layout = GraphLayout::new(&graph);
        Ok(Self { graph: Arc::new(graph), coeffs: Arc::new(coeffs), layout: Arc::new(layout) })
    }

    pub fn n_dofs(&self) -> usize {
        self.layout.n_dofs()
    }

    /// `(z, k)` coordinate of each dof; vertex dofs report their first incident edge.
    pub fn dof_coordinates(&self) -> Vec<(T, usize)> {
        let mut out = vec![(T::zero(), usize::MAX); self.n_dofs()];
        for (k, e) in self.graph.edges.iter().enumerate() {
            for (i, &d) in self.layout.edge_dofs[k].iter().enumerate() {
                if out[d].1 == usize::MAX {
                    out[d] = (e.grid[i], k);
                }
            }
        }
        out
    }

    /// Samples `f(z, k)`; at a vertex the first incident edge supplies the value.
    pub fn function(&self, f: impl Fn(T, usize) -> T) -> GraphFunction<T> {
        let values = self.dof_coordinates().into_iter().map(|(z, k)| f(z, k)).collect();
        GraphFunction { layout: self.layout.clone(), values }
    }

    pub fn constant(&self, c: T) -> GraphFunction<T> {
        GraphFunction { layout: self.layout.clone(), values: vec![c; self.n_dofs()] }
    }

    pub fn zeros(&self) -> GraphFunction<T> {
        self.constant(T::zero())
    }

    pub fn from_values(&self, values: Vec<T>) -> Result<GraphFunction<T>> {
        if values.len() != self.n_dofs() {
            return Err(Error::GridMismatch(format!("{} values for {} dofs", values.len(), self.n_dofs())));
        }
        Ok(GraphFunction { layout: self.layout.clone(), values })
    }

    /// Builds a function from per-edge nodal arrays; vertex values must agree
    /// across incident edges within `tol`.
    pub fn from_edge_values(&self, per_edge: &[Vec<T>], tol: T) -> Result<GraphFunction<T>> {
        let mut values = vec![T::nan(); self.n_dofs()];
        for (k, vals) in per_edge.iter().enumerate() {
            let dofs = self
                .layout
                .edge_dofs
                .get(k)
                .ok_or_else(|| Error::GridMismatch(format!("no edge {k}")))?;
            if vals.len() != dofs.len() {
                return Err(Error::GridMismatch(format!("edge {k}: {} values for {} nodes", vals.len(), dofs.len())));
            }
            for (&d, &v) in dofs.iter().zip(vals) {
                if values[d].is_nan() {
                    values[d] = v;
                } else if (values[d] - v).abs() > tol {
                    return Err(Error::GridMismatch(format!("discontinuous at vertex dof {d}")));
                }
            }
        }
        self.from_values(values)
    }

    pub fn check(&self, f: &GraphFunction<T>) -> Result<()> {
        if f.layout != self.layout && *f.layout != *self.layout {
            return Err(Error::GridMismatch("function defined on a different graph grid".into()));
        }
        Ok(())
    }
}

/// Element of `H̄_γ`: one value per dof, continuous at vertices by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFunction<T> {
    pub layout: Arc<GraphLayout>,
    pub values: Vec<T>,
}

impl<T: Real> GraphFunction<T> {
    pub fn edge_values(&self, k: usize) -> Vec<T> {
        self.layout.edge_dofs[k].iter().map(|&d| self.values[d]).collect()
    }

    pub fn at(&self, k: usize, i: usize) -> T {
        self.values[self.layout.edge_dofs[k][i]]
    }

    pub fn vertex_value(&self, v: usize) -> T {
        self.values[self.layout.vertex_dof(v)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { layout: self.layout.clone(), values: self.values.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self { layout: self.layout.clone(), values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Linear interpolation at level `z` on edge `k`.
    pub fn eval(&self, grid: &[T], k: usize, z: T) -> T {
        let dofs = &self.layout.edge_dofs[k];
        if z <= grid[0] {
            return self.values[dofs[0]];
        }
        let n = grid.len();
        if z >= grid[n - 1] {
            return self.values[dofs[n - 1]];
        }
        let i = grid.partition_point(|&g| g <= z).max(1) - 1;
        let t = (z - grid[i]) / (grid[i + 1] - grid[i]);
        self.values[dofs[i]] * (T::one() - t) + self.values[dofs[i + 1]] * t
    }
}
