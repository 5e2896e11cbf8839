use super::Hamiltonian;
use crate::error::{Error, Result};
use crate::metric_graph::VertexKind;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPoint {
    pub location: [f64; 2],
    pub kind: VertexKind,
    pub level: f64,
    pub hessian_det: f64,
    /// `|det ∇²𝓗| / (1 + ‖∇²𝓗‖²)`, compared against the non-degeneracy tolerance.
    pub margin: f64,
}

const DEGENERACY_TOL: f64 = 1e-8;

fn classify(h: &Hamiltonian, x: [f64; 2]) -> Result<CriticalPoint> {
    let m = h.hess(x);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let fro2 = m[0][0].powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + m[1][1].powi(2);
    let margin = det.abs() / (1.0 + fro2);
    if margin <= DEGENERACY_TOL {
        return Err(Error::HypothesisH(format!("degenerate Hessian at ({:.6}, {:.6}), det = {det:e}", x[0], x[1])));
    }
    let kind = if det < 0.0 {
        VertexKind::Saddle
    } else if m[0][0] + m[1][1] > 0.0 {
        VertexKind::Minimum
    } else {
        VertexKind::Maximum
    };
    Ok(CriticalPoint { location: x, kind, level: h.value(x), hessian_det: det, margin })
}

fn newton(h: &Hamiltonian, mut x: [f64; 2], bx: [f64; 4]) -> Option<[f64; 2]> {
    let span = (bx[1] - bx[0]).max(bx[3] - bx[2]);
    for _ in 0..60 {
        let g = h.grad(x);
        let m = h.hess(x);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < 1e-300 {
            return None;
        }
        let dx = [(m[1][1] * g[0] - m[0][1] * g[1]) / det, (-m[1][0] * g[0] + m[0][0] * g[1]) / det];
        x = [x[0] - dx[0], x[1] - dx[1]];
        if !x[0].is_finite() || x[0] < bx[0] - span || x[0] > bx[1] + span || x[1] < bx[2] - span || x[1] > bx[3] + span {
            return None;
        }
        if dx[0].hypot(dx[1]) < 1e-14 * (1.0 + x[0].hypot(x[1])) {
            let g = h.grad(x);
            return (g[0].hypot(g[1]) < 1e-9).then_some(x);
        }
    }
    // slow (degenerate) convergence still ends on a stationary point
    let g = h.grad(x);
    (g[0].hypot(g[1]) < 1e-10).then_some(x)
}

/// Newton iterations from a `seeds × seeds` grid over the search box,
/// deduplicated within `tol` and classified by the Hessian signature.
pub fn find_critical_points(h: &Hamiltonian, seeds: usize, tol: f64) -> Result<Vec<CriticalPoint>> {
    let bx = h.search_box;
    let mut roots: Vec<[f64; 2]> = Vec::new();
    for i in 0..seeds {
        for j in 0..seeds {
            let x0 = [
                bx[0] + (bx[1] - bx[0]) * (i as f64 + 0.5) / seeds as f64,
                bx[2] + (bx[3] - bx[2]) * (j as f64 + 0.5) / seeds as f64,
            ];
            let Some(x) = newton(h, x0, bx) else { continue };
            if x[0] < bx[0] || x[0] > bx[1] || x[1] < bx[2] || x[1] > bx[3] {
                continue;
            }
            if roots.iter().all(|r| (r[0] - x[0]).hypot(r[1] - x[1]) > tol) {
                roots.push(x);
            }
        }
    }
    let mut cps = roots.into_iter().map(|x| classify(h, x)).collect::<Result<Vec<_>>>()?;
    cps.sort_by(|a, b| a.level.total_cmp(&b.level));
    for w in cps.windows(2) {
        if (w[1].level - w[0].level).abs() < tol {
            return Err(Error::HypothesisH(format!("critical levels {} and {} coincide", w[0].level, w[1].level)));
        }
    }
    Ok(cps)
}
