//! Construction of Γ and its coefficients from a Hamiltonian or from a narrow
//! domain, and the projections between the plane and the graph.

mod contour;
mod critical;
mod hamiltonian;
mod narrow;
mod reeb;

pub use contour::{compute_coefficients, polyline_coefficients, project_to_level, trace_contour, trace_contour_with, LevelContour, Observer, TraceOptions};
pub use critical::{find_critical_points, CriticalPoint};
pub use hamiltonian::Hamiltonian;
pub use narrow::{narrow_domain_coefficients, narrow_shape_geometry, NarrowDomainSpec, NarrowGeometry, NarrowShape};
pub use reeb::{build_reeb_graph, LabelGrid, ReebGeometry, ReebOptions};

use crate::error::{Error, Result};
use crate::metric_graph::{GraphFunction, GraphSpace, VertexKind};

/// Either kind of geometry, behind one projection interface.
#[derive(Debug, Clone)]
pub enum Geometry {
    Hamiltonian(Box<ReebGeometry>),
    Narrow(NarrowGeometry),
}

impl Geometry {
    pub fn space(&self) -> &GraphSpace<f64> {
        match self {
            Geometry::Hamiltonian(g) => &g.space,
            Geometry::Narrow(g) => &g.space,
        }
    }

    pub fn project_point(&self, x: [f64; 2]) -> Result<(f64, usize)> {
        match self {
            Geometry::Hamiltonian(g) => g.project_point(x),
            Geometry::Narrow(g) => g.project_point(x),
        }
    }

    /// `φ^∧` at every node of the graph.
    pub fn wedge_callable(&self, phi: Observer<'_>) -> Result<GraphFunction<f64>> {
        match self {
            Geometry::Hamiltonian(g) => g.wedge_callable(phi),
            Geometry::Narrow(g) => g.wedge_callable(phi),
        }
    }

    /// Points of the domain on an `n × n` lattice: the search box for a
    /// Hamiltonian, the cross-sections plus their end points for a narrow domain.
    pub fn sample_points(&self, n: usize) -> Vec<[f64; 2]> {
        let lattice = |b: [f64; 4]| -> Vec<[f64; 2]> {
            (0..n * n)
                .map(|c| {
                    [
                        b[0] + (b[1] - b[0]) * ((c / n) as f64 + 0.5) / n as f64,
                        b[2] + (b[3] - b[2]) * ((c % n) as f64 + 0.5) / n as f64,
                    ]
                })
                .collect()
        };
        match self {
            Geometry::Hamiltonian(g) => lattice(g.hamiltonian.search_box),
            Geometry::Narrow(g) => {
                let g0 = &g.spec.x1_grid;
                let w = g.shape.as_ref().map_or_else(
                    || g.spec.sections.iter().flatten().fold(0.0f64, |m, s| m.max(s.0.abs()).max(s.1.abs())),
                    |s| s.x2_bound(),
                );
                let mut pts: Vec<[f64; 2]> = lattice([g0[0], *g0.last().unwrap(), -w, w])
                    .into_iter()
                    .filter(|&x| g.section(x[0]).iter().any(|s| x[1] > s.0 && x[1] < s.1))
                    .collect();
                // boundary of the closure, where sups of smooth fields often sit
                let cols = (0..n).map(|i| g0[0] + (g0[g0.len() - 1] - g0[0]) * (i as f64 + 0.5) / n as f64);
                for x1 in cols.chain(g0.iter().copied()) {
                    for s in g.section(x1) {
                        pts.push([x1, s.0]);
                        pts.push([x1, s.1]);
                    }
                }
                pts
            }
        }
    }

    pub fn hamiltonian(&self) -> Option<&Hamiltonian> {
        match self {
            Geometry::Hamiltonian(g) => Some(&g.hamiltonian),
            Geometry::Narrow(_) => None,
        }
    }
}

/// Least-squares fit of the vertex asymptotics on one incident edge.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticFit {
    pub vertex: usize,
    pub edge: usize,
    pub kind: VertexKind,
    /// Extrema: `α ≈ a·d`; saddles: `α ≈ a`; infinity: `α ≈ a·z`.
    pub alpha_coeff: f64,
    /// Extrema and infinity: `T ≈ c₂`; saddles: `T ≈ c₁|log d| + c₂`.
    pub period_log: f64,
    pub period_const: f64,
    pub alpha_r2: f64,
    pub period_r2: f64,
    /// Root-mean-square residuals.
    pub alpha_residual: f64,
    pub period_residual: f64,
    pub samples: usize,
}

fn r_squared(y: &[f64], fitted: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_res: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    let rms = (ss_res / n).sqrt();
    let r2 = if ss_tot > 1e-300 { 1.0 - ss_res / ss_tot } else if ss_res <= 1e-24 * (1.0 + mean * mean) * n { 1.0 } else { 0.0 };
    (r2, rms)
}

/// Fits the coefficient table near `vertex` on every incident edge using the
/// `count` nodes closest to the vertex at distance at least `min_distance`
/// (farthest nodes for the vertex at infinity).
pub fn coefficient_asymptotics_check(space: &GraphSpace<f64>, vertex: usize, min_distance: f64, count: usize) -> Result<Vec<AsymptoticFit>> {
    let g = &space.graph;
    let v = g.vertices.get(vertex).ok_or_else(|| Error::InvalidGraph(format!("no vertex {vertex}")))?;
    let mut out = Vec::new();
    for &(k, _) in &v.incident {
        let e = &g.edges[k];
        let c = &space.coeffs.edges[k];
        let at_lo = e.v_lo == vertex;
        let mut pts: Vec<(f64, f64, f64)> = e
            .grid
            .iter()
            .enumerate()
            .filter_map(|(i, &z)| {
                let d = if v.kind == VertexKind::Infinity { z } else if at_lo { z - e.a } else { e.b - z };
                (d >= min_distance && c.alpha[i].is_finite() && c.period[i].is_finite()).then_some((d, c.alpha[i], c.period[i]))
            })
            .collect();
        if v.kind == VertexKind::Infinity {
            pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        } else {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        pts.truncate(count);
        if pts.len() < 3 {
            return Err(Error::InvalidGraph(format!("only {} usable nodes near vertex {vertex} on edge {k}", pts.len())));
        }
        let d: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let a: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let t: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let mean = |y: &[f64]| y.iter().sum::<f64>() / y.len() as f64;
        let through_origin = |x: &[f64], y: &[f64]| {
            x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / x.iter().map(|a| a * a).sum::<f64>()
        };
        let (alpha_coeff, a_fit, period_log, period_const, t_fit) = match v.kind {
            VertexKind::Saddle => {
                let ac = mean(&a);
                let logs: Vec<f64> = d.iter().map(|x| -x.ln()).collect();
                let (c1, c2, _) = crate::linalg::linear_fit(&logs, &t);
                let tf = logs.iter().map(|l| c1 * l + c2).collect::<Vec<_>>();
                (ac, vec![ac; a.len()], c1, c2, tf)
            }
            _ => {
                let ac = through_origin(&d, &a);
                let tc = mean(&t);
                (ac, d.iter().map(|x| ac * x).collect(), 0.0, tc, vec![tc; t.len()])
            }
        };
        let (alpha_r2, alpha_residual) = r_squared(&a, &a_fit);
        let (period_r2, period_residual) = r_squared(&t, &t_fit);
        out.push(AsymptoticFit {
            vertex,
            edge: k,
            kind: v.kind,
            alpha_coeff,
            period_log,
            period_const,
            alpha_r2,
            period_r2,
            alpha_residual,
            period_residual,
            samples: pts.len(),
        });
    }
    Ok(out)
}
