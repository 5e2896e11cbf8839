use super::{EdgeCoefficientTable, EdgeCoefficients, MetricGraph, VertexKind};
use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// JSON form of a graph with its coefficient tables. Infinite values
/// (the level of `O_∞`, `T` at a saddle node) are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub vertices: Vec<VertexDoc>,
    pub edges: Vec<EdgeDoc>,
    pub coefficients: BTreeMap<String, CoefficientDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexDoc {
    pub id: usize,
    pub kind: VertexKind,
    pub level: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub id: usize,
    pub a: f64,
    pub b: Option<f64>,
    pub vlo: usize,
    pub vhi: usize,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDoc {
    pub alpha: Vec<Option<f64>>,
    #[serde(rename = "T")]
    pub period: Vec<Option<f64>>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl GraphDocument {
    pub fn from_graph<T: Real>(g: &MetricGraph<T>, coeffs: &EdgeCoefficientTable<T>) -> Self {
        let vertices = g.vertices.iter().map(|v| VertexDoc { id: v.id, kind: v.kind, level: finite(v.level.as_f64()) }).collect();
        let edges = g
            .edges
            .iter()
            .map(|e| EdgeDoc {
                id: e.id,
                a: e.a.as_f64(),
                b: finite(e.b.as_f64()),
                vlo: e.v_lo,
                vhi: e.v_hi,
                grid: e.grid.iter().map(|z| z.as_f64()).collect(),
            })
            .collect();
        let coefficients = coeffs
            .edges
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let cv = |v: &Vec<T>| v.iter().map(|x| finite(x.as_f64())).collect();
                (k.to_string(), CoefficientDoc { alpha: cv(&c.alpha), period: cv(&c.period) })
            })
            .collect();
        Self { vertices, edges, coefficients }
    }

    /// Rebuilds graph and coefficients; cells next to a saddle vertex use the
    /// logarithmic midpoint fit.
    pub fn to_graph<T: Real>(&self) -> Result<(MetricGraph<T>, EdgeCoefficientTable<T>)> {
        let mut order: Vec<&VertexDoc> = self.vertices.iter().collect();
        order.sort_by_key(|v| v.id);
        if order.iter().enumerate().any(|(i, v)| v.id != i) {
            return Err(Error::Parse("vertex ids must be 0..n".into()));
        }
        let vertices = order.iter().map(|v| (v.kind, T::of(v.level.unwrap_or(f64::INFINITY)))).collect();
        let mut edocs: Vec<&EdgeDoc> = self.edges.iter().collect();
        edocs.sort_by_key(|e| e.id);
        if edocs.iter().enumerate().any(|(i, e)| e.id != i) {
            return Err(Error::Parse("edge ids must be 0..m".into()));
        }
        for e in &edocs {
            if e.vlo >= order.len() || e.vhi >= order.len() {
                return Err(Error::Parse(format!("edge {} references a missing vertex", e.id)));
            }
        }
        let edges = edocs.iter().map(|e| (e.vlo, e.vhi, e.grid.iter().map(|&z| T::of(z)).collect())).collect();
        let g = MetricGraph::new(vertices, edges);
        let mut tables = Vec::with_capacity(g.edges.len());
        for e in &g.edges {
            let c = self
                .coefficients
                .get(&e.id.to_string())
                .ok_or_else(|| Error::Parse(format!("missing coefficients for edge {}", e.id)))?;
            if c.alpha.len() != e.grid.len() || c.period.len() != e.grid.len() {
                return Err(Error::GridMismatch(format!("edge {}: coefficient length differs from grid", e.id)));
            }
            let cv = |v: &Vec<Option<f64>>| v.iter().map(|x| T::of(x.unwrap_or(f64::INFINITY))).collect::<Vec<T>>();
            let sing_lo = g.vertices[e.v_lo].kind == VertexKind::Saddle;
            let sing_hi = g.vertices[e.v_hi].kind == VertexKind::Saddle;
            tables.push(EdgeCoefficients::from_nodes(&e.grid, cv(&c.alpha), cv(&c.period), sing_lo, sing_hi));
        }
        Ok((g, EdgeCoefficientTable { edges: tables }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
