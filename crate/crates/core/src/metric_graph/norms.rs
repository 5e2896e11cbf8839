use super::quadrature::{cell_rule, Singular};
use super::{GraphFunction, GraphSpace, GraphWeight};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Precomputed cell rules for the measure `ν_γ = γ T dz` and the derivative
/// weights `∫ α γ̃ dz / h²` on every cell.
#[derive(Debug, Clone)]
pub struct MeasureRules<T> {
    /// `rules[k][i] = (w₀, w_m, w₁)` for cell `i` of edge `k`.
    pub rules: Vec<Vec<[T; 3]>>,
    pub stiff: Vec<Vec<T>>,
}

impl<T: Real> MeasureRules<T> {
    pub fn new(space: &GraphSpace<T>, w: &GraphWeight<T>) -> Self {
        let half = T::of(0.5);
        let mut rules = Vec::with_capacity(space.graph.edges.len());
        let mut stiff = Vec::with_capacity(space.graph.edges.len());
        for (k, (e, c)) in space.graph.edges.iter().zip(&space.coeffs.edges).enumerate() {
            let n = e.cells();
            let mut rk = Vec::with_capacity(n);
            let mut sk = Vec::with_capacity(n);
            for i in 0..n {
                let (z0, z1) = (e.grid[i], e.grid[i + 1]);
                let zm = (z0 + z1) * half;
                let h = z1 - z0;
                let g = [w.value(z0, k), w.value(zm, k), w.value(z1, k)];
                let sing = if i == 0 && c.singular_lo {
                    Singular::Lo
                } else if i + 1 == n && c.singular_hi {
                    Singular::Hi
                } else {
                    Singular::None
                };
                rk.push(cell_rule(h, [c.period[i], c.period_mid[i], c.period[i + 1]], g, sing));
                let aint = h / T::of(6.0) * (c.alpha[i] * g[0] + T::of(4.0) * c.alpha_mid[i] * g[1] + c.alpha[i + 1] * g[2]);
                sk.push(aint / (h * h));
            }
            rules.push(rk);
            stiff.push(sk);
        }
        Self { rules, stiff }
    }

    pub fn total(&self) -> T {
        self.rules.iter().flatten().map(|r| r[0] + r[1] + r[2]).sum()
    }

    /// `∫ f g dν_γ` with `f, g` piecewise linear.
    pub fn inner(&self, space: &GraphSpace<T>, f: &[T], g: &[T]) -> T {
        let quarter = T::of(0.25);
        let mut s = T::zero();
        for (k, rk) in self.rules.iter().enumerate() {
            let dofs = &space.layout.edge_dofs[k];
            for (i, r) in rk.iter().enumerate() {
                let (a, b) = (dofs[i], dofs[i + 1]);
                s += r[0] * f[a] * g[a] + r[1] * (f[a] + f[b]) * (g[a] + g[b]) * quarter + r[2] * f[b] * g[b];
            }
        }
        s
    }

    /// `∫ |f|^q dν_γ`.
    pub fn power_integral(&self, space: &GraphSpace<T>, f: &[T], q: T) -> T {
        let half = T::of(0.5);
        let mut s = T::zero();
        for (k, rk) in self.rules.iter().enumerate() {
            let dofs = &space.layout.edge_dofs[k];
            for (i, r) in rk.iter().enumerate() {
                let (a, b) = (f[dofs[i]], f[dofs[i + 1]]);
                s += r[0] * a.abs().powf(q) + r[1] * ((a + b) * half).abs().powf(q) + r[2] * b.abs().powf(q);
            }
        }
        s
    }

    /// `∑ cells ∫ α γ̃ |f'|² dz`.
    pub fn dirichlet(&self, space: &GraphSpace<T>, f: &[T]) -> T {
        let mut s = T::zero();
        for (k, sk) in self.stiff.iter().enumerate() {
            let dofs = &space.layout.edge_dofs[k];
            for (i, &d) in sk.iter().enumerate() {
                let df = f[dofs[i + 1]] - f[dofs[i]];
                s += d * df * df;
            }
        }
        s
    }

    /// Linear functional `u ↦ ∫ u ψ dν_γ` as a dof vector.
    pub fn pairing_vector(&self, space: &GraphSpace<T>, psi: &[T]) -> Vec<T> {
        let quarter = T::of(0.25);
        let mut out = vec![T::zero(); space.n_dofs()];
        for (k, rk) in self.rules.iter().enumerate() {
            let dofs = &space.layout.edge_dofs[k];
            for (i, r) in rk.iter().enumerate() {
                let (a, b) = (dofs[i], dofs[i + 1]);
                let mid = r[1] * (psi[a] + psi[b]) * quarter;
                out[a] += r[0] * psi[a] + mid;
                out[b] += r[2] * psi[b] + mid;
            }
        }
        out
    }

    /// Lumped node weights `∫ basis_i dν_γ`.
    pub fn lumped(&self, space: &GraphSpace<T>) -> Vec<T> {
        let half = T::of(0.5);
        let mut out = vec![T::zero(); space.n_dofs()];
        for (k, rk) in self.rules.iter().enumerate() {
            let dofs = &space.layout.edge_dofs[k];
            for (i, r) in rk.iter().enumerate() {
                out[dofs[i]] += r[0] + r[1] * half;
                out[dofs[i + 1]] += r[2] + r[1] * half;
            }
        }
        out
    }
}

/// `∑_k ∫ γ T_k dz`.
pub fn measure_total<T: Real>(space: &GraphSpace<T>, w: &GraphWeight<T>) -> Result<T> {
    let total = MeasureRules::new(space, w).total();
    if !total.is_finite() {
        return Err(Error::WeightNotIntegrable(format!("{} gives total mass {}", w.label, total)));
    }
    Ok(total)
}

/// `‖f‖_{H̄_γ} = (∑_k ∫ |f|² γ T_k dz)^{1/2}`.
pub fn norm_h<T: Real>(space: &GraphSpace<T>, f: &GraphFunction<T>, w: &GraphWeight<T>) -> Result<T> {
    space.check(f)?;
    let m = MeasureRules::new(space, w);
    Ok(m.inner(space, &f.values, &f.values).max(T::zero()).sqrt())
}

pub fn inner_product_h<T: Real>(space: &GraphSpace<T>, f: &GraphFunction<T>, g: &GraphFunction<T>, w: &GraphWeight<T>) -> Result<T> {
    space.check(f)?;
    space.check(g)?;
    Ok(MeasureRules::new(space, w).inner(space, &f.values, &g.values))
}

/// `‖f‖_{W̄^{1,2}_γ̃} = (∑_k ∫ [|f|² T_k + |f'|² α_k] γ̃ dz)^{1/2}`.
pub fn norm_w12<T: Real>(space: &GraphSpace<T>, f: &GraphFunction<T>, w: &GraphWeight<T>) -> Result<T> {
    space.check(f)?;
    let m = MeasureRules::new(space, w);
    Ok((m.inner(space, &f.values, &f.values) + m.dirichlet(space, &f.values)).max(T::zero()).sqrt())
}

/// `(∫ |f|^q dν_γ)^{1/q}`.
pub fn norm_lq<T: Real>(space: &GraphSpace<T>, f: &GraphFunction<T>, w: &GraphWeight<T>, q: T) -> Result<T> {
    space.check(f)?;
    Ok(MeasureRules::new(space, w).power_integral(space, &f.values, q).powf(q.recip()))
}

pub fn lumped_weights<T: Real>(space: &GraphSpace<T>, w: &GraphWeight<T>) -> Vec<T> {
    MeasureRules::new(space, w).lumped(space)
}
