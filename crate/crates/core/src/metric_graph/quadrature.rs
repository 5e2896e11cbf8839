//! Per-cell quadrature rules against the measure `γ(z) T(z) dz`.
//!
//! Regular cells use Simpson's rule on node/midpoint samples. Cells touching
//! a saddle vertex, where `T` has an integrable logarithmic singularity, fit
//! `T(z) ≈ c₁|log(z − z_s)| + c₂` through the two samples nearest the vertex
//! and integrate the logarithm exactly.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Singular {
    None,
    Lo,
    Hi,
}

/// Weights `(w₀, w_m, w₁)` such that `∫ g γ T dz ≈ w₀ g(z₀) + w_m g(z_m) + w₁ g(z₁)`.
pub fn cell_rule<T: Real>(h: T, period: [T; 3], gamma: [T; 3], sing: Singular) -> [T; 3] {
    let six = T::of(6.0);
    match sing {
        Singular::None => [
            h / six * gamma[0] * period[0],
            T::of(4.0) * h / six * gamma[1] * period[1],
            h / six * gamma[2] * period[2],
        ],
        Singular::Lo => {
            let (a_s, a_far) = log_moments(h, period[1], period[2]);
            [a_s * gamma[0], T::zero(), a_far * gamma[2]]
        }
        Singular::Hi => {
            let (a_s, a_far) = log_moments(h, period[1], period[0]);
            [a_far * gamma[0], T::zero(), a_s * gamma[2]]
        }
    }
}

/// Integrals of the two linear hat functions against the fitted log profile,
/// `(∫ (1 − s/h) T ds, ∫ (s/h) T ds)` with `s` measured from the singular node.
pub fn log_moments<T: Real>(h: T, t_mid: T, t_far: T) -> (T, T) {
    let ln2 = T::LN_2();
    let c1 = (t_mid - t_far) / ln2;
    let c2 = t_far + c1 * h.ln();
    let i0 = h * (T::one() - h.ln());
    let i1 = h * h * (T::of(0.25) - h.ln() * T::of(0.5));
    let half_h = h * T::of(0.5);
    (c1 * (i0 - i1 / h) + c2 * half_h, c1 * i1 / h + c2 * half_h)
}

/// `∫ |log s| ds` over `(0, h)` for `h < 1`, used by tests as an exact reference.
pub fn abs_log_integral(h: f64) -> f64 {
    h * (1.0 - h.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        // g = z², γT = 3 on (0, 2): exact value 8
        let h: f64 = 2.0;
        let w = cell_rule(h, [3.0; 3], [1.0; 3], Singular::None);
        let approx = w[0] * 0.0 + w[1] * 1.0 + w[2] * 4.0;
        assert!((approx - 8.0).abs() < 1e-14);
    }

    #[test]
    fn log_rule_integrates_pure_log_exactly() {
        // T(s) = -2 ln s + 0.5 on (0, h), g ≡ 1
        let h: f64 = 0.01;
        let t = |s: f64| -2.0 * s.ln() + 0.5;
        let w = cell_rule(h, [f64::INFINITY, t(h / 2.0), t(h)], [1.0; 3], Singular::Lo);
        let exact = 2.0 * abs_log_integral(h) + 0.5 * h;
        assert!((w[0] + w[2] - exact).abs() < 1e-15, "{} vs {}", w[0] + w[2], exact);
        let w_hi = cell_rule(h, [t(h), t(h / 2.0), f64::INFINITY], [1.0; 3], Singular::Hi);
        assert!((w_hi[0] + w_hi[2] - exact).abs() < 1e-15);
    }

    #[test]
    fn log_rule_beats_trapezoid_near_singularity() {
        // plain trapezoid with the far-node value only underestimates
        let h: f64 = 0.01;
        let t = |s: f64| -s.ln();
        let w = cell_rule(h, [f64::INFINITY, t(h / 2.0), t(h)], [1.0; 3], Singular::Lo);
        let exact = abs_log_integral(h);
        let naive = 0.5 * h * (t(h) + t(h)); // finite surrogate at the singular node
        assert!((w[0] + w[2] - exact).abs() < 1e-14);
        assert!(naive < exact * 0.9);
    }
}
