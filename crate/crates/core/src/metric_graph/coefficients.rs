use super::MetricGraph;
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::fmt;
use std::sync::Arc;

/// Sampled `α_k`, `T_k` on one edge: nodal values plus one midpoint value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCoefficients<T> {
    pub alpha: Vec<T>,
    pub period: Vec<T>,
    pub alpha_mid: Vec<T>,
    pub period_mid: Vec<T>,
    /// `T` has a logarithmic singularity at the lower / upper end (saddle vertex).
    pub singular_lo: bool,
    pub singular_hi: bool,
}

impl<T: Real> EdgeCoefficients<T> {
    /// Builds the table from closures evaluated at nodes and cell midpoints.
    pub fn from_fns(grid: &[T], alpha: impl Fn(T) -> T, period: impl Fn(T) -> T) -> Self {
        let mids: Vec<T> = grid.windows(2).map(|w| (w[0] + w[1]) * T::of(0.5)).collect();
        Self {
            alpha: grid.iter().map(|&z| alpha(z)).collect(),
            period: grid.iter().map(|&z| period(z)).collect(),
            alpha_mid: mids.iter().map(|&z| alpha(z)).collect(),
            period_mid: mids.iter().map(|&z| period(z)).collect(),
            singular_lo: false,
            singular_hi: false,
        }
    }

    /// Nodal tables only; midpoints are reconstructed by linear interpolation,
    /// or by the logarithmic fit in cells touching a singular end.
    pub fn from_nodes(grid: &[T], alpha: Vec<T>, period: Vec<T>, singular_lo: bool, singular_hi: bool) -> Self {
        let n = grid.len() - 1;
        let half = T::of(0.5);
        let mut alpha_mid: Vec<T> = (0..n).map(|i| (alpha[i] + alpha[i + 1]) * half).collect();
        let mut period_mid: Vec<T> = (0..n).map(|i| (period[i] + period[i + 1]) * half).collect();
        let log_mid = |zs: T, z1: T, z2: T, t1: T, t2: T, zm: T| -> T {
            // T = c1 |log|z - zs|| + c2 through (z1, t1), (z2, t2)
            let l1 = -(z1 - zs).abs().ln();
            let l2 = -(z2 - zs).abs().ln();
            let c1 = (t1 - t2) / (l1 - l2);
            let c2 = t1 - c1 * l1;
            c1 * (-(zm - zs).abs().ln()) + c2
        };
        if singular_lo && n >= 2 {
            alpha_mid[0] = alpha[0] * half + alpha[1] * half;
            period_mid[0] = log_mid(grid[0], grid[1], grid[2], period[1], period[2], (grid[0] + grid[1]) * half);
        }
        if singular_hi && n >= 2 {
            period_mid[n - 1] =
                log_mid(grid[n], grid[n - 1], grid[n - 2], period[n - 1], period[n - 2], (grid[n - 1] + grid[n]) * half);
        }
        Self { alpha, period, alpha_mid, period_mid, singular_lo, singular_hi }
    }

    pub fn cells(&self) -> usize {
        self.alpha_mid.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCoefficientTable<T> {
    pub edges: Vec<EdgeCoefficients<T>>,
}

impl<T: Real> EdgeCoefficientTable<T> {
    /// Same closures on every edge.
    pub fn uniform(g: &MetricGraph<T>, alpha: impl Fn(T) -> T, period: impl Fn(T) -> T) -> Self {
        Self { edges: g.edges.iter().map(|e| EdgeCoefficients::from_fns(&e.grid, &alpha, &period)).collect() }
    }

    /// `α ≡ T ≡ 1` on every edge.
    pub fn unit(g: &MetricGraph<T>) -> Self {
        Self::uniform(g, |_| T::one(), |_| T::one())
    }

    pub fn cast<U: Real>(&self) -> EdgeCoefficientTable<U> {
        let cv = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        EdgeCoefficientTable {
            edges: self
                .edges
                .iter()
                .map(|e| EdgeCoefficients {
                    alpha: cv(&e.alpha),
                    period: cv(&e.period),
                    alpha_mid: cv(&e.alpha_mid),
                    period_mid: cv(&e.period_mid),
                    singular_lo: e.singular_lo,
                    singular_hi: e.singular_hi,
                })
                .collect(),
        }
    }

    /// Checks table shape and the sign invariants against the graph.
    pub fn check(&self, g: &MetricGraph<T>) -> Result<()> {
        if self.edges.len() != g.edges.len() {
            return Err(Error::GridMismatch(format!("{} coefficient edges for {} graph edges", self.edges.len(), g.edges.len())));
        }
        for (k, (c, e)) in self.edges.iter().zip(&g.edges).enumerate() {
            let n = e.grid.len();
            if c.alpha.len() != n || c.period.len() != n || c.alpha_mid.len() != n - 1 || c.period_mid.len() != n - 1 {
                return Err(Error::GridMismatch(format!("edge {k}: coefficient arrays do not match {n} grid nodes")));
            }
            for i in 1..n - 1 {
                if !(c.alpha[i] > T::zero()) || !(c.period[i] > T::zero()) {
                    return Err(Error::InvalidGraph(format!("edge {k}: alpha and T must be positive at interior node {i}")));
                }
            }
            for (i, v) in [(0, e.v_lo), (n - 1, e.v_hi)] {
                let kind = g.vertices[v].kind;
                if c.alpha[i] < T::zero() || (c.alpha[i] == T::zero() && !kind.is_extremum()) {
                    return Err(Error::InvalidGraph(format!("edge {k}: alpha vanishes at a {kind:?} endpoint")));
                }
            }
            if c.alpha_mid.iter().chain(&c.period_mid).any(|x| !(*x > T::zero()) || !x.is_finite()) {
                return Err(Error::InvalidGraph(format!("edge {k}: midpoint coefficients must be positive and finite")));
            }
        }
        Ok(())
    }
}

type ScalarFn<T> = Arc<dyn Fn(T, usize) -> T + Send + Sync>;

/// Graph weight `γ(z, k) > 0` with its `z` derivative.
#[derive(Clone)]
pub struct GraphWeight<T> {
    value: ScalarFn<T>,
    derivative: ScalarFn<T>,
    pub bounded: bool,
    pub label: String,
}

impl<T> fmt::Debug for GraphWeight<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GraphWeight").field("label", &self.label).field("bounded", &self.bounded).finish()
    }
}

impl<T: Real> GraphWeight<T> {
    pub fn constant(c: T) -> Self {
        Self {
            value: Arc::new(move |_, _| c),
            derivative: Arc::new(|_, _| T::zero()),
            bounded: true,
            label: format!("constant({c})"),
        }
    }

    pub fn unit() -> Self {
        Self::constant(T::one())
    }

    /// Edge-independent profile `γ(z, k) = ϑ(z)`.
    pub fn profile(
        label: impl Into<String>,
        value: impl Fn(T) -> T + Send + Sync + 'static,
        derivative: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(move |z, _| value(z)),
            derivative: Arc::new(move |z, _| derivative(z)),
            bounded: true,
            label: label.into(),
        }
    }

    pub fn per_edge(
        label: impl Into<String>,
        value: impl Fn(T, usize) -> T + Send + Sync + 'static,
        derivative: impl Fn(T, usize) -> T + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), derivative: Arc::new(derivative), bounded: true, label: label.into() }
    }

    #[inline]
    pub fn value(&self, z: T, k: usize) -> T {
        (self.value)(z, k)
    }

    #[inline]
    pub fn derivative(&self, z: T, k: usize) -> T {
        (self.derivative)(z, k)
    }

    /// `√γ`, the companion weight used for the compactness argument.
    pub fn sqrt(&self) -> Self {
        let v = self.value.clone();
        let v2 = self.value.clone();
        let d = self.derivative.clone();
        Self {
            value: Arc::new(move |z, k| v(z, k).sqrt()),
            derivative: Arc::new(move |z, k| d(z, k) / (T::of(2.0) * v2(z, k).sqrt())),
            bounded: self.bounded,
            label: format!("sqrt({})", self.label),
        }
    }
}
