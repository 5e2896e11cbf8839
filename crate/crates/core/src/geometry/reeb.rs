use super::contour::{project_to_level, trace_contour, trace_contour_with, Observer, TraceOptions};
use super::{CriticalPoint, Hamiltonian};
use crate::error::{Error, Result};
use crate::metric_graph::{geometric_grid, graded_grid, EdgeCoefficientTable, EdgeCoefficients, GraphFunction, GraphSpace, MetricGraph, VertexKind};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct ReebOptions {
    /// Labeling grid resolution per axis.
    pub label_grid: usize,
    pub cells: usize,
    pub grading: f64,
    pub z_max: f64,
    /// First cell of the unbounded edge as a fraction of its length.
    pub first_cell: f64,
    /// Nodes closer than this to an extremum level are extrapolated.
    pub near_extremum: f64,
    pub trace: TraceOptions,
}

impl Default for ReebOptions {
    fn default() -> Self {
        Self {
            label_grid: 1024,
            cells: 128,
            grading: 1.15,
            z_max: 10.0,
            first_cell: 1e-4,
            near_extremum: 1e-6,
            trace: TraceOptions::default(),
        }
    }
}

/// Cell labels over the search box: slab index and chained edge id.
#[derive(Debug, Clone)]
pub struct LabelGrid {
    pub n: usize,
    pub bbox: [f64; 4],
    /// Sorted critical levels.
    pub levels: Vec<f64>,
    slab: Vec<i32>,
    edge: Vec<i32>,
}

impl LabelGrid {
    fn cell_of(&self, x: [f64; 2]) -> Option<(usize, usize)> {
        let b = self.bbox;
        if x[0] < b[0] || x[0] > b[1] || x[1] < b[2] || x[1] > b[3] {
            return None;
        }
        let i = (((x[0] - b[0]) / (b[1] - b[0]) * self.n as f64) as usize).min(self.n - 1);
        let j = (((x[1] - b[2]) / (b[3] - b[2]) * self.n as f64) as usize).min(self.n - 1);
        Some((i, j))
    }

    fn slab_of_level(&self, z: f64) -> i32 {
        self.levels.partition_point(|&l| l < z) as i32 - 1
    }

    /// Edge carrying the point `x` at level `z`.
    pub fn edge_at(&self, x: [f64; 2], z: f64) -> Option<usize> {
        let (i, j) = self.cell_of(x)?;
        let s0 = self.slab_of_level(z).max(0);
        let n = self.n as i64;
        // points on a critical level fall back to the adjacent slabs
        for s in [s0, s0 + 1, s0 - 1] {
            if let Some(e) = self.edge_in_slab(i, j, n, s) {
                return Some(e);
            }
        }
        None
    }

    fn edge_in_slab(&self, i: usize, j: usize, n: i64, s: i32) -> Option<usize> {
        for r in 0..=4i64 {
            let mut best: Option<(f64, usize)> = None;
            for di in -r..=r {
                for dj in -r..=r {
                    if di.abs().max(dj.abs()) != r {
                        continue;
                    }
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= n || b >= n {
                        continue;
                    }
                    let c = (a * n + b) as usize;
                    if self.slab[c] == s && self.edge[c] >= 0 {
                        let d = (di * di + dj * dj) as f64;
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, self.edge[c] as usize));
                        }
                    }
                }
            }
            if let Some((_, e)) = best {
                return Some(e);
            }
        }
        None
    }
}

/// Graph, coefficients and projection data built from a Hamiltonian.
#[derive(Debug, Clone)]
pub struct ReebGeometry {
    pub hamiltonian: Hamiltonian,
    pub critical: Vec<CriticalPoint>,
    /// Critical point index of each vertex (`None` for `O_∞`).
    pub vertex_cp: Vec<Option<usize>>,
    pub space: GraphSpace<f64>,
    pub labels: LabelGrid,
    /// Seed on the level set of each grid node (`None` where extrapolated).
    pub seeds: Vec<Vec<Option<[f64; 2]>>>,
    pub options: ReebOptions,
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, a: usize) -> usize {
        let mut r = a;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut a = a;
        while self.0[a] != r {
            let next = self.0[a];
            self.0[a] = r;
            a = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// 4-connected components of the cells selected by `inside`.
fn flood(n: usize, inside: impl Fn(usize) -> bool) -> (Vec<i32>, usize) {
    let mut comp = vec![-1i32; n * n];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..n * n {
        if comp[start] >= 0 || !inside(start) {
            continue;
        }
        comp[start] = count as i32;
        stack.push(start);
        while let Some(c) = stack.pop() {
            let (i, j) = (c / n, c % n);
            let mut visit = |d: usize| {
                if comp[d] < 0 && inside(d) {
                    comp[d] = count as i32;
                    stack.push(d);
                }
            };
            if i > 0 {
                visit(c - n);
            }
            if i + 1 < n {
                visit(c + n);
            }
            if j > 0 {
                visit(c - 1);
            }
            if j + 1 < n {
                visit(c + 1);
            }
        }
        count += 1;
    }
    (comp, count)
}

struct SlabComponent {
    slab: usize,
    cells: usize,
    touches_box: bool,
    rep: usize,
}

/// Component bookkeeping of the level slabs; each chain of slab components
/// becomes one edge.
struct Chains {
    comps: Vec<SlabComponent>,
    comp_of_cell: Vec<i32>,
    root: Vec<usize>,
    start: BTreeMap<usize, usize>,
    end: BTreeMap<usize, usize>,
}

const MIN_COMPONENT: usize = 3;

fn label_slabs(h: &Hamiltonian, cps: &[CriticalPoint], n: usize) -> Result<(Vec<f64>, Vec<i32>, Chains, Vec<f64>, [f64; 4])> {
    let bbox = h.search_box;
    let levels: Vec<f64> = cps.iter().map(|c| c.level).collect();
    let m = levels.len();
    let dx = (bbox[1] - bbox[0]) / n as f64;
    let dy = (bbox[3] - bbox[2]) / n as f64;
    let values: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|c| h.value([bbox[0] + (c / n) as f64 * dx + 0.5 * dx, bbox[2] + (c % n) as f64 * dy + 0.5 * dy]))
        .collect();
    let slab: Vec<i32> = values.iter().map(|&v| levels.partition_point(|&l| l < v) as i32 - 1).collect();
    let cell_of = |x: [f64; 2]| -> usize {
        let i = (((x[0] - bbox[0]) / dx) as usize).min(n - 1);
        let j = (((x[1] - bbox[2]) / dy) as usize).min(n - 1);
        i * n + j
    };
    // cells around saddles are left out of the slab fills so that lobes meeting
    // at a saddle stay apart on the grid
    let mut blocked = vec![-1i32; n * n];
    for (si, cp) in cps.iter().enumerate().filter(|(_, c)| c.kind == VertexKind::Saddle) {
        let c = cell_of(cp.location);
        let (ci, cj) = ((c / n) as i64, (c % n) as i64);
        for di in -1..=1i64 {
            for dj in -1..=1i64 {
                let (a, b) = (ci + di, cj + dj);
                if a >= 0 && b >= 0 && (a as usize) < n && (b as usize) < n {
                    blocked[a as usize * n + b as usize] = si as i32;
                }
            }
        }
    }
    let mut comps: Vec<SlabComponent> = Vec::new();
    let mut comp_of_cell = vec![-1i32; n * n];
    for s in 0..m {
        let (lab, count) = flood(n, |c| slab[c] == s as i32 && blocked[c] < 0);
        let mut local: Vec<SlabComponent> = (0..count).map(|_| SlabComponent { slab: s, cells: 0, touches_box: false, rep: usize::MAX }).collect();
        let target = if s + 1 < m { 0.5 * (levels[s] + levels[s + 1]) } else { levels[s] + 1.0 };
        for (c, &l) in lab.iter().enumerate() {
            if l < 0 {
                continue;
            }
            let sc = &mut local[l as usize];
            sc.cells += 1;
            let (i, j) = (c / n, c % n);
            if i == 0 || j == 0 || i + 1 == n || j + 1 == n {
                sc.touches_box = true;
            }
            if sc.rep == usize::MAX || (values[c] - target).abs() < (values[sc.rep] - target).abs() {
                sc.rep = c;
            }
        }
        let mut remap = vec![-1i32; count];
        for (l, sc) in local.into_iter().enumerate() {
            if sc.cells >= MIN_COMPONENT {
                remap[l] = comps.len() as i32;
                comps.push(sc);
            }
        }
        for (c, &l) in lab.iter().enumerate() {
            if l >= 0 && remap[l as usize] >= 0 {
                comp_of_cell[c] = remap[l as usize];
            }
        }
    }
    for sc in &comps {
        if sc.touches_box && sc.slab + 1 < m {
            return Err(Error::Config(format!(
                "search box too small: the level slab ({}, {}) reaches the box boundary",
                levels[sc.slab],
                levels[sc.slab + 1]
            )));
        }
    }
    let mut dsu = Dsu((0..comps.len()).collect());
    let mut start = BTreeMap::new();
    let mut end = BTreeMap::new();
    for (ci, cp) in cps.iter().enumerate() {
        let (lab, count) = flood(n, |c| {
            (slab[c] == ci as i32 || (ci > 0 && slab[c] == ci as i32 - 1)) && (blocked[c] < 0 || blocked[c] == ci as i32)
        });
        let cp_union = {
            let c = cell_of(cp.location);
            let (ci0, cj0) = ((c / n) as i64, (c % n) as i64);
            let mut u = -1;
            'search: for r in 0..=2i64 {
                for di in -r..=r {
                    for dj in -r..=r {
                        let (a, b) = (ci0 + di, cj0 + dj);
                        if a >= 0 && b >= 0 && (a as usize) < n && (b as usize) < n && lab[a as usize * n + b as usize] >= 0 {
                            u = lab[a as usize * n + b as usize];
                            break 'search;
                        }
                    }
                }
            }
            u
        };
        let mut lower: Vec<Vec<usize>> = vec![Vec::new(); count];
        let mut upper: Vec<Vec<usize>> = vec![Vec::new(); count];
        for (k, sc) in comps.iter().enumerate() {
            let u = lab[sc.rep];
            if u < 0 {
                continue;
            }
            if sc.slab == ci {
                upper[u as usize].push(k);
            } else if ci > 0 && sc.slab == ci - 1 {
                lower[u as usize].push(k);
            }
        }
        for u in 0..count {
            if u as i32 == cp_union {
                for &k in &lower[u] {
                    end.insert(k, ci);
                }
                for &k in &upper[u] {
                    start.insert(k, ci);
                }
            } else {
                match (lower[u].len(), upper[u].len()) {
                    (0, 0) => {}
                    (1, 1) => dsu.union(lower[u][0], upper[u][0]),
                    (l, up) => {
                        return Err(Error::MissedCriticalPoint(format!(
                            "{l} component(s) below and {up} above level {} merge without a critical point",
                            cp.level
                        )))
                    }
                }
            }
        }
    }
    let root = (0..comps.len()).map(|k| dsu.find(k)).collect();
    Ok((levels, slab, Chains { comps, comp_of_cell, root, start, end }, values, bbox))
}

fn fit_least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..p {
            b[i] += r[i] * yi;
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    // Gaussian elimination with partial pivoting
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..p {
            let f = a[r][c] / a[c][c];
            for k in c..p {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; p];
    for c in (0..p).rev() {
        let s: f64 = (c + 1..p).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    x
}

/// Vertex-end asymptotics fitted to traced samples.
#[derive(Debug, Clone, PartialEq)]
enum EndFit {
    Extremum { t0: f64, t1: f64, a1: f64, a2: f64 },
    Saddle { c1: f64, c2: f64, c3: f64, a0: f64, a1: f64, a2: f64 },
}

impl EndFit {
    fn eval(&self, d: f64) -> (f64, f64) {
        match *self {
            EndFit::Extremum { t0, t1, a1, a2 } => (a1 * d + a2 * d * d, t0 + t1 * d),
            EndFit::Saddle { c1, c2, c3, a0, a1, a2 } => {
                if d == 0.0 {
                    (a0, f64::INFINITY)
                } else {
                    (a0 + a1 * d * d.ln() + a2 * d, -c1 * d.ln() + c2 + c3 * d)
                }
            }
        }
    }
}

fn fit_end(kind: VertexKind, t_extremum: f64, samples: &[(f64, f64, f64)]) -> Result<EndFit> {
    if samples.len() < 3 {
        return Err(Error::InvalidGraph("too few traced samples near a vertex to extrapolate coefficients".into()));
    }
    let d: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let a: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let t: Vec<f64> = samples.iter().map(|s| s.2).collect();
    Ok(match kind {
        VertexKind::Saddle => {
            let rt: Vec<Vec<f64>> = d.iter().map(|&x| vec![-x.ln(), 1.0, x]).collect();
            let ct = fit_least_squares(&rt, &t);
            let ra: Vec<Vec<f64>> = d.iter().map(|&x| vec![1.0, x * x.ln(), x]).collect();
            let ca = fit_least_squares(&ra, &a);
            EndFit::Saddle { c1: ct[0], c2: ct[1], c3: ct[2], a0: ca[0], a1: ca[1], a2: ca[2] }
        }
        _ => {
            let ra: Vec<Vec<f64>> = d.iter().map(|&x| vec![x, x * x]).collect();
            let ca = fit_least_squares(&ra, &a);
            let num: f64 = d.iter().zip(&t).map(|(x, y)| x * (y - t_extremum)).sum();
            let den: f64 = d.iter().map(|x| x * x).sum();
            EndFit::Extremum { t0: t_extremum, t1: num / den, a1: ca[0], a2: ca[1] }
        }
    })
}

/// Gradient-flow spine `dx/dz = ∇𝓗/|∇𝓗|²` from `x` (on level `z0`) to `z1`.
fn spine(h: &Hamiltonian, x: [f64; 2], z0: f64, z1: f64) -> Result<[f64; 2]> {
    let f = |p: [f64; 2]| {
        let g = h.grad(p);
        let g2 = g[0] * g[0] + g[1] * g[1];
        [g[0] / g2, g[1] / g2]
    };
    let mut p = x;
    let mut z = z0;
    let dir = (z1 - z0).signum();
    let mut guard = 0;
    while (z1 - z) * dir > 0.0 {
        guard += 1;
        if guard > 1_000_000 {
            return Err(Error::NearCritical { level: z1, reason: "gradient spine stalled".into() });
        }
        let g = h.grad(p);
        let gn = g[0].hypot(g[1]);
        let dz = (0.02 * gn * gn.max(1e-3)).max(1e-12).min((z1 - z).abs()) * dir;
        let k1 = f(p);
        let k2 = f([p[0] + 0.5 * dz * k1[0], p[1] + 0.5 * dz * k1[1]]);
        let k3 = f([p[0] + 0.5 * dz * k2[0], p[1] + 0.5 * dz * k2[1]]);
        let k4 = f([p[0] + dz * k3[0], p[1] + dz * k3[1]]);
        p = [
            p[0] + dz / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            p[1] + dz / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        z += dz;
        p = project_to_level(h, p, z)?;
    }
    Ok(p)
}

/// Builds `Γ` from the level-set components of `h` with `O_∞` attached to the
/// unbounded edge, and computes `α_k`, `T_k` by contour tracing.
pub fn build_reeb_graph(h: &Hamiltonian, cps: &[CriticalPoint], opts: &ReebOptions) -> Result<ReebGeometry> {
    if cps.is_empty() {
        return Err(Error::HypothesisH("no critical points in the search box".into()));
    }
    let n = opts.label_grid;
    let (levels, slab, chains, _values, bbox) = label_slabs(h, cps, n)?;
    let top = levels.len() - 1;
    // one edge per chain
    let mut roots: Vec<usize> = chains.root.clone();
    roots.sort();
    roots.dedup();
    struct Proto {
        root: usize,
        lo: usize,
        hi: Option<usize>,
        rep: usize,
    }
    let mut protos = Vec::new();
    for &r in &roots {
        let members: Vec<usize> = (0..chains.comps.len()).filter(|&k| chains.root[k] == r).collect();
        let starts: Vec<usize> = members.iter().filter_map(|k| chains.start.get(k).copied()).collect();
        let ends: Vec<usize> = members.iter().filter_map(|k| chains.end.get(k).copied()).collect();
        let unbounded = members.iter().any(|&k| chains.comps[k].slab == top);
        if starts.len() != 1 || ends.len() + usize::from(unbounded) != 1 {
            return Err(Error::MissedCriticalPoint(format!(
                "level-set component chain with {} lower and {} upper vertices",
                starts.len(),
                ends.len() + usize::from(unbounded)
            )));
        }
        let rep_comp = *members.iter().max_by_key(|&&k| chains.comps[k].cells).unwrap();
        protos.push(Proto { root: r, lo: starts[0], hi: ends.first().copied(), rep: chains.comps[rep_comp].rep });
    }
    let dx = (bbox[1] - bbox[0]) / n as f64;
    let dy = (bbox[3] - bbox[2]) / n as f64;
    let center = |c: usize| [bbox[0] + (c / n) as f64 * dx + 0.5 * dx, bbox[2] + (c % n) as f64 * dy + 0.5 * dy];
    protos.sort_by(|a, b| {
        (cps[a.lo].level, a.hi.map_or(f64::INFINITY, |v| cps[v].level), center(a.rep)[0]).partial_cmp(&(
            cps[b.lo].level,
            b.hi.map_or(f64::INFINITY, |v| cps[v].level),
            center(b.rep)[0],
        ))
        .unwrap()
    });
    let mut vertices: Vec<(VertexKind, f64)> = cps.iter().map(|c| (c.kind, c.level)).collect();
    let mut vertex_cp: Vec<Option<usize>> = (0..cps.len()).map(Some).collect();
    let infinity = if protos.iter().any(|p| p.hi.is_none()) {
        vertices.push((VertexKind::Infinity, f64::INFINITY));
        vertex_cp.push(None);
        Some(vertices.len() - 1)
    } else {
        None
    };
    let mut edge_of_root = BTreeMap::new();
    let mut edges = Vec::new();
    for (k, p) in protos.iter().enumerate() {
        edge_of_root.insert(p.root, k);
        let a = cps[p.lo].level;
        let grid = match p.hi {
            Some(v) => graded_grid(a, cps[v].level, opts.cells, opts.grading, true, true),
            None => {
                if opts.z_max <= a {
                    return Err(Error::Config(format!("z_max = {} must exceed the top critical level {a}", opts.z_max)));
                }
                geometric_grid(a, opts.z_max, opts.cells, opts.first_cell * (opts.z_max - a))
            }
        };
        edges.push((p.lo, p.hi.unwrap_or_else(|| infinity.unwrap()), grid));
    }
    let graph = MetricGraph::new(vertices, edges);
    // labels per cell
    let mut edge_label = vec![-1i32; n * n];
    for c in 0..n * n {
        let k = chains.comp_of_cell[c];
        if k >= 0 {
            edge_label[c] = edge_of_root[&chains.root[k as usize]] as i32;
        }
    }
    let labels = LabelGrid { n, bbox, levels: levels.clone(), slab, edge: edge_label };
    let saddle_levels: Vec<f64> = cps.iter().filter(|c| c.kind == VertexKind::Saddle).map(|c| c.level).collect();
    let mut trace_opts = opts.trace.clone();
    trace_opts.critical_levels = saddle_levels;
    let near_saddle = trace_opts.near_critical * 1.000001;
    let t_extremum = |cp: &CriticalPoint| 2.0 * PI / cp.hessian_det.abs().sqrt();
    let mut tables = Vec::new();
    let mut seeds_all = Vec::new();
    for (k, p) in protos.iter().enumerate() {
        let e = &graph.edges[k];
        let nodes = e.grid.len();
        // nodes then midpoints
        let mut levels_k: Vec<f64> = e.grid.clone();
        levels_k.extend(e.grid.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        let lo_cp = &cps[p.lo];
        let hi_cp = p.hi.map(|v| &cps[v]);
        let traceable = |z: f64| {
            let dlo = z - lo_cp.level;
            let lo_ok = if lo_cp.kind == VertexKind::Saddle { dlo >= near_saddle } else { dlo >= opts.near_extremum };
            let hi_ok = match hi_cp {
                Some(c) => {
                    let dhi = c.level - z;
                    if c.kind == VertexKind::Saddle { dhi >= near_saddle } else { dhi >= opts.near_extremum }
                }
                None => true,
            };
            lo_ok && hi_ok
        };
        let x_rep = center(p.rep);
        let z_rep = h.value(x_rep);
        let x_rep = project_to_level(h, x_rep, z_rep)?;
        // walk the spine through the sorted traceable levels on both sides
        let mut order: Vec<usize> = (0..levels_k.len()).filter(|&i| traceable(levels_k[i])).collect();
        order.sort_by(|&a, &b| levels_k[a].total_cmp(&levels_k[b]));
        let mut seeds: Vec<Option<[f64; 2]>> = vec![None; levels_k.len()];
        let split = order.partition_point(|&i| levels_k[i] < z_rep);
        let (mut x, mut z) = (x_rep, z_rep);
        for &i in &order[split..] {
            x = spine(h, x, z, levels_k[i])?;
            z = levels_k[i];
            seeds[i] = Some(x);
        }
        let (mut x, mut z) = (x_rep, z_rep);
        for &i in order[..split].iter().rev() {
            x = spine(h, x, z, levels_k[i])?;
            z = levels_k[i];
            seeds[i] = Some(x);
        }
        let traced: Vec<Option<(f64, f64)>> = seeds
            .par_iter()
            .zip(levels_k.par_iter())
            .map(|(s, &z)| match s {
                Some(x) => trace_contour(h, z, *x, &trace_opts).map(|c| Some((c.alpha, c.period))),
                None => Ok(None),
            })
            .collect::<Result<_>>()?;
        let near = |from_lo: bool| -> Vec<(f64, f64, f64)> {
            let mut v: Vec<(f64, f64, f64)> = traced
                .iter()
                .zip(&levels_k)
                .filter_map(|(t, &z)| {
                    t.map(|(a, tt)| {
                        let d = if from_lo { z - lo_cp.level } else { hi_cp.unwrap().level - z };
                        (d, a, tt)
                    })
                })
                .collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            v.truncate(if lo_cp.kind == VertexKind::Saddle || hi_cp.is_some_and(|c| c.kind == VertexKind::Saddle) { 8 } else { 6 });
            v
        };
        let fit_lo = fit_end(lo_cp.kind, t_extremum(lo_cp), &near(true))?;
        let fit_hi = match hi_cp {
            Some(c) => Some(fit_end(c.kind, t_extremum(c), &near(false))?),
            None => None,
        };
        let mut alpha = vec![0.0; levels_k.len()];
        let mut period = vec![0.0; levels_k.len()];
        for (i, &z) in levels_k.iter().enumerate() {
            let (a, t) = match traced[i] {
                Some(v) => v,
                None => {
                    let dlo = z - lo_cp.level;
                    match (&fit_hi, hi_cp) {
                        (Some(f), Some(c)) if c.level - z < dlo => f.eval((c.level - z).max(0.0)),
                        _ => fit_lo.eval(dlo.max(0.0)),
                    }
                }
            };
            alpha[i] = a;
            period[i] = t;
        }
        let singular_lo = lo_cp.kind == VertexKind::Saddle;
        let singular_hi = hi_cp.is_some_and(|c| c.kind == VertexKind::Saddle);
        tables.push(EdgeCoefficients {
            alpha: alpha[..nodes].to_vec(),
            period: period[..nodes].to_vec(),
            alpha_mid: alpha[nodes..].to_vec(),
            period_mid: period[nodes..].to_vec(),
            singular_lo,
            singular_hi,
        });
        seeds_all.push(seeds[..nodes].to_vec());
    }
    let space = GraphSpace::new(graph, EdgeCoefficientTable { edges: tables })?;
    Ok(ReebGeometry {
        hamiltonian: h.clone(),
        critical: cps.to_vec(),
        vertex_cp,
        space,
        labels,
        seeds: seeds_all,
        options: ReebOptions { trace: trace_opts, ..opts.clone() },
    })
}

impl ReebGeometry {
    /// `Π(x) = (𝓗(x), k(x))`.
    pub fn project_point(&self, x: [f64; 2]) -> Result<(f64, usize)> {
        let z = self.hamiltonian.value(x);
        if let Some(k) = self.labels.edge_at(x, z) {
            return Ok((z, k));
        }
        // beyond the labelled box only the unbounded edge remains
        let top = self.labels.levels.last().copied().unwrap_or(f64::NEG_INFINITY);
        let outside = self.labels.cell_of(x).is_none();
        match self.space.graph.edges.iter().position(|e| e.is_unbounded()) {
            Some(k) if outside && z > top => Ok((z, k)),
            _ => Err(Error::OutsideDomain(x[0], x[1])),
        }
    }

    /// Level-set averages `∮ φ dμ_{z,k}` at every graph node; vertices and
    /// extrapolated nodes take the value at the nearest critical point.
    pub fn wedge_callable(&self, phi: Observer<'_>) -> Result<GraphFunction<f64>> {
        let space = &self.space;
        let mut values = vec![f64::NAN; space.n_dofs()];
        for (k, e) in space.graph.edges.iter().enumerate() {
            let dofs = &space.layout.edge_dofs[k];
            let vals: Vec<f64> = (0..e.grid.len())
                .into_par_iter()
                .map(|i| -> Result<f64> {
                    match self.seeds[k][i] {
                        Some(x) => {
                            let (c, obs) = trace_contour_with(&self.hamiltonian, e.grid[i], x, &self.options.trace, &[phi])?;
                            Ok(obs[0] / c.period)
                        }
                        None => {
                            let v = if e.grid[i] - e.a <= *e.grid.last().unwrap() - e.grid[i] { e.v_lo } else { e.v_hi };
                            let cp = self.vertex_cp[v].ok_or_else(|| Error::InvalidGraph("untraced node at infinity".into()))?;
                            Ok(phi(self.critical[cp].location))
                        }
                    }
                })
                .collect::<Result<_>>()?;
            for (&d, v) in dofs.iter().zip(vals) {
                if values[d].is_nan() {
                    values[d] = v;
                }
            }
        }
        space.from_values(values)
    }

    /// Shell averages of sampled data `(x, y, value, area)`: each sample goes
    /// to the node whose dual cell on its edge contains `𝓗(x, y)`.
    pub fn shell_average(&self, samples: &[([f64; 2], f64, f64)], allow_empty: bool) -> Result<GraphFunction<f64>> {
        let space = &self.space;
        let mut num = vec![0.0; space.n_dofs()];
        let mut den = vec![0.0; space.n_dofs()];
        for &(x, v, a) in samples {
            let Ok((z, k)) = self.project_point(x) else { continue };
            let e = &space.graph.edges[k];
            let g = &e.grid;
            if z < g[0] || z > *g.last().unwrap() {
                continue;
            }
            let i = g.partition_point(|&t| t <= z).clamp(1, g.len() - 1);
            let node = if z - g[i - 1] <= g[i] - z { i - 1 } else { i };
            let d = space.layout.edge_dofs[k][node];
            num[d] += v * a;
            den[d] += a;
        }
        let mut values = vec![0.0; space.n_dofs()];
        for (k, e) in space.graph.edges.iter().enumerate() {
            let dofs = &space.layout.edge_dofs[k];
            let filled: Vec<usize> = (0..dofs.len()).filter(|&i| den[dofs[i]] > 0.0).collect();
            if filled.is_empty() {
                return Err(Error::EmptyShell { edge: k, node: 0 });
            }
            for i in 0..dofs.len() {
                let d = dofs[i];
                if den[d] > 0.0 {
                    values[d] = num[d] / den[d];
                } else if !allow_empty {
                    return Err(Error::EmptyShell { edge: k, node: i });
                } else {
                    // linear interpolation in z between the nearest filled nodes
                    let p = filled.partition_point(|&j| j < i);
                    let v = match (p.checked_sub(1).map(|q| filled[q]), filled.get(p)) {
                        (Some(l), Some(&r)) => {
                            let t = (e.grid[i] - e.grid[l]) / (e.grid[r] - e.grid[l]);
                            num[dofs[l]] / den[dofs[l]] * (1.0 - t) + num[dofs[r]] / den[dofs[r]] * t
                        }
                        (Some(l), None) => num[dofs[l]] / den[dofs[l]],
                        (None, Some(&r)) => num[dofs[r]] / den[dofs[r]],
                        (None, None) => unreachable!(),
                    };
                    if den[d] == 0.0 && values[d] == 0.0 {
                        values[d] = v;
                    }
                }
            }
        }
        space.from_values(values)
    }
}
