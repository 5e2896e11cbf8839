use super::Hamiltonian;
use crate::error::{Error, Result};

/// A closed level curve `{𝓗 = z}` with gradient samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelContour {
    pub edge: usize,
    pub level: f64,
    /// Closed polyline, first point repeated at the end.
    pub points: Vec<[f64; 2]>,
    /// `|∇𝓗|` at each point.
    pub grad_norm: Vec<f64>,
    /// Chord length of each segment.
    pub dl: Vec<f64>,
    /// `∮ |∇𝓗| dl`, `∮ dl/|∇𝓗|` and the length, integrated along the flow.
    pub alpha: f64,
    pub period: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOptions {
    /// Maximal chord error between consecutive points.
    pub tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Levels (saddles) that contours must keep away from.
    pub critical_levels: Vec<f64>,
    pub near_critical: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_step: 0.05, max_steps: 2_000_000, critical_levels: Vec::new(), near_critical: 1e-3 }
    }
}

#[inline]
fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Newton projection along the gradient onto `{𝓗 = z}`.
pub fn project_to_level(h: &Hamiltonian, mut x: [f64; 2], z: f64) -> Result<[f64; 2]> {
    for _ in 0..100 {
        let r = h.value(x) - z;
        if r.abs() <= 1e-14 * (1.0 + z.abs()) {
            return Ok(x);
        }
        let g = h.grad(x);
        let g2 = g[0] * g[0] + g[1] * g[1];
        if g2 < 1e-24 {
            return Err(Error::NearCritical { level: z, reason: "vanishing gradient while projecting onto the level".into() });
        }
        x = [x[0] - r * g[0] / g2, x[1] - r * g[1] / g2];
    }
    let r = h.value(x) - z;
    if r.abs() <= 1e-10 * (1.0 + z.abs()) {
        Ok(x)
    } else {
        Err(Error::NearCritical { level: z, reason: format!("projection did not converge (residual {r:e})") })
    }
}

/// Unit tangent of the Hamiltonian flow, `∇⊥𝓗/|∇𝓗|`.
#[inline]
fn tangent(h: &Hamiltonian, x: [f64; 2]) -> [f64; 2] {
    let g = h.grad(x);
    let n = norm(g);
    [-g[1] / n, g[0] / n]
}

fn rk4(h: &Hamiltonian, x: [f64; 2], ds: f64) -> [f64; 2] {
    let k1 = tangent(h, x);
    let k2 = tangent(h, [x[0] + 0.5 * ds * k1[0], x[1] + 0.5 * ds * k1[1]]);
    let k3 = tangent(h, [x[0] + 0.5 * ds * k2[0], x[1] + 0.5 * ds * k2[1]]);
    let k4 = tangent(h, [x[0] + ds * k3[0], x[1] + ds * k3[1]]);
    [
        x[0] + ds / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + ds / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

fn curvature(h: &Hamiltonian, x: [f64; 2]) -> f64 {
    let g = h.grad(x);
    let m = h.hess(x);
    let n = norm(g);
    (m[1][1] * g[0] * g[0] - 2.0 * m[0][1] * g[0] * g[1] + m[0][0] * g[1] * g[1]).abs() / (n * n * n)
}

/// One arclength step of length `ds` split in two projected halves.
fn step(h: &Hamiltonian, x: [f64; 2], ds: f64, z: f64) -> Result<([f64; 2], [f64; 2])> {
    let m = project_to_level(h, rk4(h, x, 0.5 * ds), z)?;
    let e = project_to_level(h, rk4(h, m, 0.5 * ds), z)?;
    Ok((m, e))
}

/// Integrals collected along a contour: `∫ f(x) dl/|∇𝓗|` per observer.
pub type Observer<'a> = &'a (dyn Fn([f64; 2]) -> f64 + Sync);

/// Marches along `{𝓗 = z}` from `seed` (projected onto the level) until the
/// curve closes.
pub fn trace_contour(h: &Hamiltonian, z: f64, seed: [f64; 2], opts: &TraceOptions) -> Result<LevelContour> {
    trace_contour_with(h, z, seed, opts, &[]).map(|(c, _)| c)
}

pub fn trace_contour_with(
    h: &Hamiltonian,
    z: f64,
    seed: [f64; 2],
    opts: &TraceOptions,
    observers: &[Observer<'_>],
) -> Result<(LevelContour, Vec<f64>)> {
    if let Some(c) = opts.critical_levels.iter().find(|&&c| (c - z).abs() < opts.near_critical) {
        return Err(Error::NearCritical { level: z, reason: format!("within {} of the critical level {c}", opts.near_critical) });
    }
    let x0 = project_to_level(h, seed, z)?;
    let t0 = tangent(h, x0);
    let g0 = norm(h.grad(x0));
    let min_grad = 1e-10 * (1.0 + g0);
    let mut points = vec![x0];
    let mut grads = vec![g0];
    let mut dl = Vec::new();
    let (mut alpha, mut period, mut length) = (0.0, 0.0, 0.0);
    let mut obs = vec![0.0; observers.len()];
    let mut x = x0;
    let mut gx = g0;
    let section = |p: [f64; 2]| (p[0] - x0[0]) * t0[0] + (p[1] - x0[1]) * t0[1];
    let mut max_ds = 0.0f64;
    let accumulate = |a: [f64; 2], ga: f64, m: [f64; 2], gm: f64, e: [f64; 2], ge: f64, ds: f64, alpha: &mut f64, period: &mut f64, obs: &mut [f64]| {
        *alpha += ds / 6.0 * (ga + 4.0 * gm + ge);
        *period += ds / 6.0 * (1.0 / ga + 4.0 / gm + 1.0 / ge);
        for (o, f) in obs.iter_mut().zip(observers) {
            *o += ds / 6.0 * (f(a) / ga + 4.0 * f(m) / gm + f(e) / ge);
        }
    };
    for _ in 0..opts.max_steps {
        let kappa = curvature(h, x);
        let ds = opts.max_step.min((8.0 * opts.tol / kappa.max(1e-300)).sqrt());
        max_ds = max_ds.max(ds);
        let (m, e) = step(h, x, ds, z)?;
        let (gm, ge) = (norm(h.grad(m)), norm(h.grad(e)));
        if gm < min_grad || ge < min_grad {
            return Err(Error::NearCritical { level: z, reason: "contour too close to critical point".into() });
        }
        let (d_prev, d_new) = (section(x), section(e));
        let near = ((e[0] - x0[0]).hypot(e[1] - x0[1])) < 4.0 * max_ds;
        if length > 4.0 * max_ds && d_prev < 0.0 && d_new >= 0.0 && near {
            // closing step: find the fraction landing on the section
            let (mut lo, mut hi) = (0.0, ds);
            let mut frac = ds * d_prev / (d_prev - d_new);
            for _ in 0..60 {
                let (_, p) = step(h, x, frac, z)?;
                let d = section(p);
                if d.abs() < 1e-15 * (1.0 + length) {
                    break;
                }
                if d < 0.0 {
                    lo = frac;
                } else {
                    hi = frac;
                }
                frac = 0.5 * (lo + hi);
                if hi - lo < 1e-16 * ds {
                    break;
                }
            }
            let (m, e) = step(h, x, frac, z)?;
            let (gm, ge) = (norm(h.grad(m)), norm(h.grad(e)));
            accumulate(x, gx, m, gm, e, ge, frac, &mut alpha, &mut period, &mut obs);
            length += frac;
            dl.push((x0[0] - x[0]).hypot(x0[1] - x[1]));
            points.push(x0);
            grads.push(g0);
            return Ok((LevelContour { edge: 0, level: z, points, grad_norm: grads, dl, alpha, period, length }, obs));
        }
        accumulate(x, gx, m, gm, e, ge, ds, &mut alpha, &mut period, &mut obs);
        length += ds;
        dl.push((e[0] - x[0]).hypot(e[1] - x[1]));
        points.push(e);
        grads.push(ge);
        x = e;
        gx = ge;
    }
    Err(Error::OpenContour { level: z, steps: opts.max_steps })
}

/// `(α, T)` of a traced contour.
pub fn compute_coefficients(c: &LevelContour) -> Result<(f64, f64)> {
    let floor = 1e-10 * c.grad_norm.iter().cloned().fold(0.0, f64::max).max(1.0);
    if c.grad_norm.iter().any(|&g| g < floor) {
        return Err(Error::NearCritical { level: c.level, reason: "contour too close to critical point".into() });
    }
    Ok((c.alpha, c.period))
}

/// Trapezoid polyline quadrature of `α`, `T` from the stored samples.
pub fn polyline_coefficients(c: &LevelContour) -> Result<(f64, f64)> {
    let floor = 1e-10 * c.grad_norm.iter().cloned().fold(0.0, f64::max).max(1.0);
    let mut a = 0.0;
    let mut t = 0.0;
    for (i, &d) in c.dl.iter().enumerate() {
        let (g0, g1) = (c.grad_norm[i], c.grad_norm[i + 1]);
        if g0 < floor || g1 < floor {
            return Err(Error::NearCritical { level: c.level, reason: "contour too close to critical point".into() });
        }
        a += 0.5 * d * (g0 + g1);
        t += 0.5 * d * (1.0 / g0 + 1.0 / g1);
    }
    Ok((a, t))
}
