use crate::error::{Error, Result};
use crate::linalg::gauss_legendre;
use crate::metric_graph::{uniform_grid, EdgeCoefficientTable, EdgeCoefficients, GraphFunction, GraphSpace, MetricGraph, VertexKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Cross-sections `C(x₁)` of a narrow domain on a grid of `x₁` values, each a
/// list of `[lo, hi, label]` intervals; labels identify edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrowDomainSpec {
    pub x1_grid: Vec<f64>,
    pub sections: Vec<Vec<(f64, f64, usize)>>,
}

impl NarrowDomainSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Built-in analytic narrow domains.
#[derive(Debug, Clone, PartialEq)]
pub enum NarrowShape {
    /// `(a, b) × (−w, w)`.
    Rectangle { a: f64, b: f64, half_width: f64 },
    /// Unit disk.
    Disk,
    /// Elliptic body on `(−1, x_f)` splitting at `x_f` into two fins ending at `x₁ = 1`.
    Fish { fold: f64 },
    /// `{|x₂| < w₀ + w₁ cos(2πx₁/L)}` on `(0, L)`.
    Bulge { length: f64, w0: f64, w1: f64 },
}

impl NarrowShape {
    pub fn x1_range(&self) -> (f64, f64) {
        match *self {
            NarrowShape::Rectangle { a, b, .. } => (a, b),
            NarrowShape::Disk | NarrowShape::Fish { .. } => (-1.0, 1.0),
            NarrowShape::Bulge { length, .. } => (0.0, length),
        }
    }

    /// Interior `x₁` values where the topology of the cross-section changes.
    pub fn folds(&self) -> Vec<f64> {
        match *self {
            NarrowShape::Fish { fold } => vec![fold],
            _ => vec![],
        }
    }

    /// Labelled cross-section intervals at `x₁`; at a fold both the ending and
    /// the starting intervals are listed.
    pub fn section(&self, x1: f64) -> Vec<(f64, f64, usize)> {
        let (lo, hi) = self.x1_range();
        if x1 < lo || x1 > hi {
            return vec![];
        }
        match *self {
            NarrowShape::Rectangle { half_width, .. } => vec![(-half_width, half_width, 0)],
            NarrowShape::Disk => {
                let w = (1.0 - x1 * x1).max(0.0).sqrt();
                vec![(-w, w, 0)]
            }
            NarrowShape::Fish { fold } => {
                let mut out = Vec::new();
                if x1 <= fold {
                    let t = (fold - x1) / (fold + 1.0);
                    let w = 0.5 * (1.0 - t * t).max(0.0).sqrt();
                    out.push((-w, w, 0));
                }
                if x1 >= fold {
                    let n = 0.5 * ((x1 - fold) / (1.0 - fold)).max(0.0).sqrt();
                    out.push((-0.5, -n, 1));
                    out.push((n, 0.5, 2));
                }
                out
            }
            NarrowShape::Bulge { length, w0, w1 } => {
                let w = w0 + w1 * (2.0 * std::f64::consts::PI * x1 / length).cos();
                vec![(-w, w, 0)]
            }
        }
    }

    /// `l_k(x₁)` for the interval labelled `label`.
    pub fn length(&self, x1: f64, label: usize) -> f64 {
        self.section(x1).iter().find(|s| s.2 == label).map_or(0.0, |s| s.1 - s.0)
    }

    /// Half-width envelope `max |x₂|` over the domain, for bounding boxes.
    pub fn x2_bound(&self) -> f64 {
        match *self {
            NarrowShape::Rectangle { half_width, .. } => half_width,
            NarrowShape::Disk => 1.0,
            NarrowShape::Fish { .. } => 0.5,
            NarrowShape::Bulge { w0, w1, .. } => w0 + w1.abs(),
        }
    }

    /// Spec sampled on `cells` uniform cells per fold-free piece.
    pub fn spec(&self, cells: usize) -> NarrowDomainSpec {
        let (a, b) = self.x1_range();
        let mut breaks = vec![a];
        breaks.extend(self.folds());
        breaks.push(b);
        let mut grid: Vec<f64> = Vec::new();
        for w in breaks.windows(2) {
            let n = ((cells as f64) * (w[1] - w[0]) / (b - a)).round().max(2.0) as usize;
            let piece = uniform_grid(w[0], w[1], n);
            let skip = usize::from(!grid.is_empty());
            grid.extend_from_slice(&piece[skip..]);
        }
        let sections = grid.iter().map(|&x| self.section(x)).collect();
        NarrowDomainSpec { x1_grid: grid, sections }
    }
}

/// Graph and projection data of a narrow domain.
#[derive(Debug, Clone)]
pub struct NarrowGeometry {
    pub spec: NarrowDomainSpec,
    pub shape: Option<NarrowShape>,
    pub space: GraphSpace<f64>,
    /// Spec label → edge id.
    pub edge_of_label: BTreeMap<usize, usize>,
    /// First and last grid index of each edge.
    pub span: Vec<(usize, usize)>,
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Graph with `α_k = T_k = l_k`, vertices at the ends of the labelled
/// intervals (kind `BoundaryFold`).
pub fn narrow_domain_coefficients(spec: &NarrowDomainSpec) -> Result<NarrowGeometry> {
    build(spec, None)
}

/// As [`narrow_domain_coefficients`], with exact midpoint lengths from the shape.
pub fn narrow_shape_geometry(shape: &NarrowShape, cells: usize) -> Result<NarrowGeometry> {
    build(&shape.spec(cells), Some(shape.clone()))
}

fn build(spec: &NarrowDomainSpec, shape: Option<NarrowShape>) -> Result<NarrowGeometry> {
    let g = &spec.x1_grid;
    let n = g.len();
    if n < 2 || spec.sections.len() != n {
        return Err(Error::NarrowDomain(format!("{} grid points but {} sections", n, spec.sections.len())));
    }
    if g.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::NarrowDomain("x1_grid must be strictly increasing".into()));
    }
    let mut presence: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, sec) in spec.sections.iter().enumerate() {
        for &(lo, hi, label) in sec {
            if !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NarrowDomain(format!("interval [{lo}, {hi}] at x1 = {} is malformed", g[i])));
            }
            let p = presence.entry(label).or_default();
            if p.contains(&i) {
                return Err(Error::NarrowDomain(format!("label {label} listed twice at x1 = {}", g[i])));
            }
            p.push(i);
        }
    }
    let interval = |i: usize, label: usize| -> (f64, f64) {
        let s = spec.sections[i].iter().find(|s| s.2 == label).unwrap();
        (s.0, s.1)
    };
    let mut span = BTreeMap::new();
    for (&label, idx) in &presence {
        let (f, l) = (idx[0], *idx.last().unwrap());
        if l - f + 1 != idx.len() {
            return Err(Error::NarrowDomain(format!("(D4) violated: label {label} disappears and reappears")));
        }
        if l == f {
            return Err(Error::NarrowDomain(format!("label {label} spans a single grid point")));
        }
        for i in f + 1..l {
            let (lo, hi) = interval(i, label);
            if !(hi - lo > 0.0) {
                return Err(Error::NarrowDomain(format!("(D3) violated: zero-length component {label} at x1 = {}", g[i])));
            }
        }
        span.insert(label, (f, l));
    }
    // disjointness of continuing intervals
    for (i, sec) in spec.sections.iter().enumerate() {
        for (p, a) in sec.iter().enumerate() {
            for b in &sec[p + 1..] {
                let (fa, la) = span[&a.2];
                let (fb, lb) = span[&b.2];
                let a_end = i == fa || i == la;
                let b_end = i == fb || i == lb;
                if a.0 < b.1 && b.0 < a.1 && !(a_end && b_end) {
                    return Err(Error::NarrowDomain(format!(
                        "(D4) violated: intervals of labels {} and {} overlap at x1 = {} away from a fold",
                        a.2, b.2, g[i]
                    )));
                }
            }
        }
    }
    // vertices: groups of overlapping endpoints at the same grid index
    let mut ends: Vec<(usize, usize, bool)> = Vec::new(); // (index, label, is_start)
    for (&label, &(f, l)) in &span {
        ends.push((f, label, true));
        ends.push((l, label, false));
    }
    ends.sort_by_key(|e| (e.0, e.1, e.2));
    let mut vertex_of_end: BTreeMap<(usize, bool), usize> = BTreeMap::new();
    let mut vertices: Vec<(VertexKind, f64)> = Vec::new();
    let mut i = 0;
    while i < ends.len() {
        let idx = ends[i].0;
        let mut j = i;
        while j < ends.len() && ends[j].0 == idx {
            j += 1;
        }
        let group = &ends[i..j];
        let mut owner: Vec<usize> = (0..group.len()).collect();
        for a in 0..group.len() {
            for b in a + 1..group.len() {
                if overlaps(interval(idx, group[a].1), interval(idx, group[b].1)) {
                    let (ra, rb) = (owner[a], owner[b]);
                    for o in owner.iter_mut() {
                        if *o == rb {
                            *o = ra;
                        }
                    }
                }
            }
        }
        let mut roots: BTreeMap<usize, usize> = BTreeMap::new();
        for (m, e) in group.iter().enumerate() {
            let v = *roots.entry(owner[m]).or_insert_with(|| {
                vertices.push((VertexKind::BoundaryFold, g[idx]));
                vertices.len() - 1
            });
            vertex_of_end.insert((e.1, e.2), v);
        }
        i = j;
    }
    let mut labels: Vec<usize> = span.keys().copied().collect();
    labels.sort_by(|a, b| {
        let (fa, fb) = (span[a].0, span[b].0);
        fa.cmp(&fb).then(interval(fa, *a).0.total_cmp(&interval(fb, *b).0))
    });
    let mut edge_of_label = BTreeMap::new();
    let mut edges = Vec::new();
    let mut tables = Vec::new();
    let mut spans = Vec::new();
    for (k, &label) in labels.iter().enumerate() {
        let (f, l) = span[&label];
        edge_of_label.insert(label, k);
        let grid = g[f..=l].to_vec();
        let len: Vec<f64> = (f..=l).map(|i| {
            let (lo, hi) = interval(i, label);
            hi - lo
        }).collect();
        let table = match &shape {
            Some(s) => {
                let mut t = EdgeCoefficients::from_nodes(&grid, len.clone(), len.clone(), false, false);
                let mids: Vec<f64> = grid.windows(2).map(|w| s.length(0.5 * (w[0] + w[1]), label)).collect();
                t.alpha_mid = mids.clone();
                t.period_mid = mids;
                t
            }
            None => EdgeCoefficients::from_nodes(&grid, len.clone(), len, false, false),
        };
        tables.push(table);
        edges.push((vertex_of_end[&(label, true)], vertex_of_end[&(label, false)], grid));
        spans.push((f, l));
    }
    let graph = MetricGraph::new(vertices, edges);
    let space = GraphSpace::new(graph, EdgeCoefficientTable { edges: tables }).map_err(|e| Error::NarrowDomain(e.to_string()))?;
    Ok(NarrowGeometry { spec: spec.clone(), shape, space, edge_of_label, span: spans })
}

impl NarrowGeometry {
    /// Cross-section at an arbitrary `x₁`: exact for shapes, otherwise
    /// interpolated between neighbouring grid sections.
    pub fn section(&self, x1: f64) -> Vec<(f64, f64, usize)> {
        if let Some(s) = &self.shape {
            return s.section(x1);
        }
        let g = &self.spec.x1_grid;
        if x1 < g[0] || x1 > *g.last().unwrap() {
            return vec![];
        }
        let i = g.partition_point(|&t| t <= x1).clamp(1, g.len() - 1) - 1;
        let t = (x1 - g[i]) / (g[i + 1] - g[i]);
        let (a, b) = (&self.spec.sections[i], &self.spec.sections[i + 1]);
        a.iter()
            .filter_map(|s| {
                b.iter().find(|r| r.2 == s.2).map(|r| (s.0 * (1.0 - t) + r.0 * t, s.1 * (1.0 - t) + r.1 * t, s.2))
            })
            .collect()
    }

    /// `Π(x) = (x₁, k)` with `k` the component containing `x₂`.
    pub fn project_point(&self, x: [f64; 2]) -> Result<(f64, usize)> {
        self.section(x[0])
            .iter()
            .find(|s| x[1] >= s.0 && x[1] <= s.1)
            .map(|s| (x[0], self.edge_of_label[&s.2]))
            .ok_or(Error::OutsideDomain(x[0], x[1]))
    }

    /// Cross-section averages of `φ` at every node; a vertex averages over
    /// all intervals meeting there.
    pub fn wedge_callable(&self, phi: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> Result<GraphFunction<f64>> {
        let (gx, gw) = gauss_legendre(24);
        let space = &self.space;
        let avg = |z: f64, lo: f64, hi: f64| -> (f64, f64) {
            let l = hi - lo;
            if l <= 0.0 {
                return (phi([z, 0.5 * (lo + hi)]), 0.0);
            }
            let s: f64 = gx.iter().zip(&gw).map(|(x, w)| w * phi([z, lo + 0.5 * l * (x + 1.0)])).sum();
            (0.5 * s, l)
        };
        let mut num = vec![0.0; space.n_dofs()];
        let mut den = vec![0.0; space.n_dofs()];
        let mut point = vec![f64::NAN; space.n_dofs()];
        let labels: BTreeMap<usize, usize> = self.edge_of_label.iter().map(|(l, k)| (*k, *l)).collect();
        for (k, e) in space.graph.edges.iter().enumerate() {
            let label = labels[&k];
            let (f, _) = self.span[k];
            for (i, &d) in space.layout.edge_dofs[k].iter().enumerate() {
                let sec = &self.spec.sections[f + i];
                let s = sec.iter().find(|s| s.2 == label).unwrap();
                let z = e.grid[i];
                let (m, l) = avg(z, s.0, s.1);
                num[d] += m * l;
                den[d] += l;
                if point[d].is_nan() {
                    point[d] = m;
                }
            }
        }
        let values = (0..space.n_dofs()).map(|d| if den[d] > 0.0 { num[d] / den[d] } else { point[d] }).collect();
        space.from_values(values)
    }
}
