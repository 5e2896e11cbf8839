//! Checks of the weight conditions behind the compact embedding, and a
//! constructive look at the compact / non-compact dichotomy: explicit
//! sequences that are bounded in the `γ` Sobolev norm but keep unit mass
//! escaping to infinity, against the tail bound available under `√γ` control.

use crate::error::{Error, Result};
use crate::generator::refine;
use crate::linalg::gauss_legendre;
use crate::metric_graph::{
    measure_total, norm_h, norm_w12, EdgeCoefficientTable, EdgeCoefficients, GraphFunction, GraphSpace, GraphWeight, MeasureRules,
    MetricGraph, VertexKind,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Machine-readable outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub check: String,
    pub params: BTreeMap<String, f64>,
    pub values: Vec<BTreeMap<String, f64>>,
    pub verdict: String,
}

impl AuditReport {
    fn new(check: &str, params: &[(&str, f64)], verdict: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            values: Vec::new(),
            verdict: verdict.into(),
        }
    }

    fn row(&mut self, items: &[(&str, f64)]) {
        self.values.push(items.iter().map(|(k, v)| (k.to_string(), *v)).collect());
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Parametric family of the weight profile `ϑ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "form")]
pub enum WeightForm {
    /// `c₀ (z₀ + z)^{-κ₁}`; `z₀ > 0` keeps it bounded at the minimum.
    Power { c0: f64, kappa1: f64, z0: f64 },
    /// `c₀ exp(−κ₂(√(z₀ + z) − √z₀))`.
    ExpSqrt { c0: f64, kappa2: f64, z0: f64 },
    /// `c₀ e^{−a z}`.
    Exp { c0: f64, rate: f64 },
    Constant { c0: f64 },
    Custom,
}

type Profile = Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync>;

/// Weight profile `ϑ` with its first two derivatives.
#[derive(Clone)]
pub struct WeightSpec {
    pub form: WeightForm,
    pub label: String,
    eval: Profile,
}

impl fmt::Debug for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightSpec").field("form", &self.form).field("label", &self.label).finish()
    }
}

/// `∫_a^b y^p dy`.
fn pow_int(a: f64, b: f64, p: f64) -> f64 {
    if (p + 1.0).abs() < 1e-14 {
        (b / a).ln()
    } else {
        (b.powf(p + 1.0) - a.powf(p + 1.0)) / (p + 1.0)
    }
}

fn gl_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(16);
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let (lo, hi) = (a + h * p as f64, a + h * (p + 1) as f64);
        let (m, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        s += r * x.iter().zip(&w).map(|(xi, wi)| wi * f(m + r * xi)).sum::<f64>();
    }
    s
}

impl WeightSpec {
    pub fn power(c0: f64, kappa1: f64, z0: f64) -> Self {
        let eval: Profile = Arc::new(move |z| {
            let y = z0 + z;
            let v = c0 * y.powf(-kappa1);
            [v, -kappa1 * v / y, kappa1 * (kappa1 + 1.0) * v / (y * y)]
        });
        Self { form: WeightForm::Power { c0, kappa1, z0 }, label: format!("{c0}*(z+{z0})^-{kappa1}"), eval }
    }

    pub fn exp_sqrt(c0: f64, kappa2: f64, z0: f64) -> Self {
        let eval: Profile = Arc::new(move |z| {
            let s = (z0 + z).sqrt();
            let v = c0 * (-kappa2 * (s - z0.sqrt())).exp();
            [v, -kappa2 / (2.0 * s) * v, (kappa2 * kappa2 / (4.0 * s * s) + kappa2 / (4.0 * s * s * s)) * v]
        });
        Self { form: WeightForm::ExpSqrt { c0, kappa2, z0 }, label: format!("{c0}*exp(-{kappa2}(sqrt(z+{z0})-sqrt({z0})))"), eval }
    }

    pub fn exp(c0: f64, rate: f64) -> Self {
        let eval: Profile = Arc::new(move |z| {
            let v = c0 * (-rate * z).exp();
            [v, -rate * v, rate * rate * v]
        });
        Self { form: WeightForm::Exp { c0, rate }, label: format!("{c0}*exp(-{rate}z)"), eval }
    }

    pub fn constant(c0: f64) -> Self {
        Self { form: WeightForm::Constant { c0 }, label: format!("{c0}"), eval: Arc::new(move |_| [c0, 0.0, 0.0]) }
    }

    /// `f(z) = [ϑ, ϑ', ϑ'']`.
    pub fn custom(label: impl Into<String>, f: impl Fn(f64) -> [f64; 3] + Send + Sync + 'static) -> Self {
        Self { form: WeightForm::Custom, label: label.into(), eval: Arc::new(f) }
    }

    /// `power` (c0, kappa1, z0), `exp_sqrt` (c0, kappa2, z0), `exp` (c0, rate), `constant` (c0).
    pub fn from_name(name: &str, p: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |k: &str, d: f64| p.get(k).copied().unwrap_or(d);
        let w = match name {
            "power" => Self::power(get("c0", 1.0), get("kappa1", 2.5), get("z0", 1.0)),
            "exp_sqrt" => Self::exp_sqrt(get("c0", 1.0), get("kappa2", 1.0), get("z0", 1.0)),
            "exp" => Self::exp(get("c0", 1.0), get("rate", 1.0)),
            "constant" => Self::constant(get("c0", 1.0)),
            other => return Err(Error::Config(format!("unknown weight form '{other}' (known: power, exp_sqrt, exp, constant)"))),
        };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.form {
            WeightForm::Power { c0, z0, .. } if !(c0 > 0.0) || !(z0 >= 0.0) => bad(format!("power weight needs c0 > 0 and z0 >= 0, got {c0}, {z0}")),
            WeightForm::ExpSqrt { c0, kappa2, z0 } if !(c0 > 0.0) || !(kappa2 > 0.0) || !(z0 > 0.0) => {
                bad(format!("exp_sqrt weight needs c0, kappa2, z0 > 0, got {c0}, {kappa2}, {z0}"))
            }
            WeightForm::Exp { c0, rate } if !(c0 > 0.0) || !(rate > 0.0) => bad(format!("exp weight needs c0, rate > 0, got {c0}, {rate}")),
            WeightForm::Constant { c0 } if !(c0 > 0.0) => bad(format!("constant weight needs c0 > 0, got {c0}")),
            _ => Ok(()),
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        (self.eval)(z)[0]
    }

    pub fn d1(&self, z: f64) -> f64 {
        (self.eval)(z)[1]
    }

    pub fn d2(&self, z: f64) -> f64 {
        (self.eval)(z)[2]
    }

    /// `(z|ϑ''| + √z|ϑ'|)/ϑ`.
    pub fn ratio(&self, z: f64) -> f64 {
        let [v, d1, d2] = (self.eval)(z);
        if !(v > 0.0) {
            return f64::INFINITY;
        }
        (z * d2.abs() + z.sqrt() * d1.abs()) / v
    }

    /// `γ(z, k) = ϑ(z)` on every edge.
    pub fn graph_weight(&self) -> GraphWeight<f64> {
        let (a, b) = (self.eval.clone(), self.eval.clone());
        GraphWeight::profile(self.label.clone(), move |z| a(z)[0], move |z| b(z)[1])
    }

    /// `√ϑ` as a weight spec of the same family where possible.
    pub fn sqrt(&self) -> Self {
        match self.form {
            WeightForm::Power { c0, kappa1, z0 } => Self::power(c0.sqrt(), 0.5 * kappa1, z0),
            WeightForm::ExpSqrt { c0, kappa2, z0 } => Self::exp_sqrt(c0.sqrt(), 0.5 * kappa2, z0),
            WeightForm::Exp { c0, rate } => Self::exp(c0.sqrt(), 0.5 * rate),
            WeightForm::Constant { c0 } => Self::constant(c0.sqrt()),
            WeightForm::Custom => {
                let f = self.eval.clone();
                Self::custom(format!("sqrt({})", self.label), move |z| {
                    let [v, d1, d2] = f(z);
                    let s = v.sqrt();
                    [s, d1 / (2.0 * s), d2 / (2.0 * s) - d1 * d1 / (4.0 * v * s)]
                })
            }
        }
    }

    /// `∫_a^∞ ϑ dz`; `Ok(None)` when it diverges.
    pub fn tail_integral(&self, a: f64) -> Result<Option<f64>> {
        Ok(match self.form {
            WeightForm::Power { c0, kappa1, z0 } => (kappa1 > 1.0).then(|| c0 * (z0 + a).powf(1.0 - kappa1) / (kappa1 - 1.0)),
            WeightForm::ExpSqrt { c0, kappa2, z0 } => {
                let s = (z0 + a).sqrt();
                Some(c0 * 2.0 * (-kappa2 * (s - z0.sqrt())).exp() * (s / kappa2 + 1.0 / (kappa2 * kappa2)))
            }
            WeightForm::Exp { c0, rate } => Some(c0 / rate * (-rate * a).exp()),
            WeightForm::Constant { .. } => None,
            WeightForm::Custom => self.numeric_tail(a)?,
        })
    }

    /// Doubling panels until the increments are negligible; a tail that keeps
    /// growing past `z = 2^{600}` counts as divergent.
    fn numeric_tail(&self, a: f64) -> Result<Option<f64>> {
        let mut lo = a;
        let mut total = 0.0;
        for _ in 0..600 {
            let hi = if lo <= 0.0 { 1.0 } else { 2.0 * lo };
            let part = gl_integral(|z| self.value(z), lo, hi, 4);
            if !part.is_finite() {
                return Err(Error::WeightNotIntegrable(format!("{} is not finite on ({lo}, {hi})", self.label)));
            }
            total += part;
            if part.abs() <= 1e-13 * total.abs() {
                return Ok(Some(total));
            }
            lo = hi;
        }
        Ok(None)
    }

    /// `∫_a^b z ϑ dz`.
    pub fn moment_integral(&self, a: f64, b: f64) -> f64 {
        match self.form {
            WeightForm::Power { c0, kappa1, z0 } => c0 * (pow_int(z0 + a, z0 + b, 1.0 - kappa1) - z0 * pow_int(z0 + a, z0 + b, -kappa1)),
            WeightForm::Exp { c0, rate } => {
                let prim = |z: f64| -(-rate * z).exp() * (z / rate + 1.0 / (rate * rate));
                c0 * (prim(b) - prim(a))
            }
            WeightForm::Constant { c0 } => 0.5 * c0 * (b * b - a * a),
            _ => gl_integral(|z| z * self.value(z), a, b, 64),
        }
    }

    /// `∫_a^b ϑ dz`.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        match (self.tail_integral(a)?, self.tail_integral(b)?) {
            (Some(x), Some(y)) if !matches!(self.form, WeightForm::Custom) => Ok(x - y),
            _ => Ok(gl_integral(|z| self.value(z), a, b, 64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSReport {
    /// `∑_k ∫ √γ T_k dz` over the stored graph.
    pub truncated: f64,
    /// Contribution beyond the truncation of the unbounded edge (`∞` if divergent).
    pub tail: f64,
    pub integral: f64,
    /// Relative change of the truncated integral under one refinement.
    pub refinement_change: f64,
    pub ratio_sup: f64,
    /// Same supremum far beyond the stored graph.
    pub ratio_far: f64,
    pub integral_pass: bool,
    pub ratio_pass: bool,
    pub pass: bool,
}

impl GammaSReport {
    pub fn report(&self, w: &WeightSpec) -> AuditReport {
        let mut r = AuditReport::new("hypothesis_gamma_s", &[], verdict(self.pass));
        r.row(&[
            ("truncated", self.truncated),
            ("tail", self.tail),
            ("integral", self.integral),
            ("refinement_change", self.refinement_change),
            ("ratio_sup", self.ratio_sup),
            ("ratio_far", self.ratio_far),
        ]);
        r.params = weight_params(w);
        r
    }
}

fn weight_params(w: &WeightSpec) -> BTreeMap<String, f64> {
    let v = serde_json::to_value(&w.form).unwrap_or_default();
    v.as_object()
        .map(|o| o.iter().filter_map(|(k, v)| v.as_f64().map(|x| (k.clone(), x))).collect())
        .unwrap_or_default()
}

fn period_at_infinity(space: &GraphSpace<f64>) -> Option<(usize, f64, f64)> {
    space.graph.edges.iter().enumerate().find(|(_, e)| space.graph.vertices[e.v_hi].kind == VertexKind::Infinity).map(|(k, e)| {
        let t = *space.coeffs.edges[k].period.last().unwrap();
        (k, *e.grid.last().unwrap(), t)
    })
}

/// Finiteness of `∑∫√γ T dz` (with an analytic tail beyond the stored graph) and
/// boundedness of `(z|ϑ''| + √z|ϑ'|)/ϑ`.
pub fn hypothesis_gamma_s_check(w: &WeightSpec, space: &GraphSpace<f64>) -> Result<GammaSReport> {
    let sq = w.graph_weight().sqrt();
    let truncated = measure_total(space, &sq)?;
    let fine = measure_total(&refine(space)?, &sq)?;
    let refinement_change = (fine - truncated).abs() / truncated.abs().max(f64::MIN_POSITIVE);
    let tail = match period_at_infinity(space) {
        Some((_, zmax, t)) => w.sqrt().tail_integral(zmax)?.map_or(f64::INFINITY, |v| t * v),
        None => 0.0,
    };
    let integral = truncated + tail;
    let mut ratio_sup = 0.0f64;
    for e in &space.graph.edges {
        let (a, b) = (e.grid[0], *e.grid.last().unwrap());
        for i in 0..=2000 {
            ratio_sup = ratio_sup.max(w.ratio(a + (b - a) * i as f64 / 2000.0));
        }
    }
    let mut ratio_far = 0.0f64;
    if let Some((_, zmax, _)) = period_at_infinity(space) {
        for i in 0..=400 {
            ratio_far = ratio_far.max(w.ratio(zmax * 100f64.powf(i as f64 / 400.0)));
        }
    }
    let integral_pass = integral.is_finite() && refinement_change < 1e-3;
    let ratio_pass = ratio_sup.is_finite() && ratio_far.is_finite() && ratio_far <= 1.05 * ratio_sup.max(1e-300);
    Ok(GammaSReport { truncated, tail, integral, refinement_change, ratio_sup, ratio_far, integral_pass, ratio_pass, pass: integral_pass && ratio_pass })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// `(R, sup_{z>R} ϑ)`.
    pub rows: Vec<(f64, f64)>,
    pub pass: bool,
}

impl DecayReport {
    pub fn report(&self, w: &WeightSpec, tol: f64) -> AuditReport {
        let mut r = AuditReport::new("vartheta_decay", &[("tol", tol)], verdict(self.pass));
        r.params.extend(weight_params(w));
        for &(big_r, s) in &self.rows {
            r.row(&[("R", big_r), ("sup", s)]);
        }
        r
    }
}

/// `sup_{z>R} ϑ` on an `R` ladder, sampled over four decades past each `R`;
/// passes when non-increasing and below `tol` at the end of the ladder.
pub fn vartheta_decay_check(w: &WeightSpec, r_ladder: &[f64], tol: f64) -> DecayReport {
    let rows: Vec<(f64, f64)> = r_ladder
        .iter()
        .map(|&r| {
            let s = (0..=400).map(|i| w.value(r * 1e4f64.powf(i as f64 / 400.0))).fold(0.0f64, f64::max);
            (r, s)
        })
        .collect();
    let monotone = rows.windows(2).all(|p| p[1].1 <= p[0].1 * (1.0 + 1e-12));
    let pass = !rows.is_empty() && monotone && rows.last().unwrap().1 < tol;
    DecayReport { rows, pass }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoncompactRow {
    pub r: f64,
    /// `∫_r^∞ h dz`.
    pub tail: f64,
    /// `ϱ ∫_{r−ε}^r z h dz`.
    pub ramp: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoncompactReport {
    pub eps: f64,
    pub rho: f64,
    pub rows: Vec<NoncompactRow>,
    pub all_hold: bool,
    /// Holds on the upper half of the ladder.
    pub holds_eventually: bool,
}

impl NoncompactReport {
    pub fn report(&self) -> AuditReport {
        let mut r = AuditReport::new("noncompact_condition", &[("eps", self.eps), ("rho", self.rho)], verdict(self.holds_eventually));
        for row in &self.rows {
            r.row(&[("r", row.r), ("tail", row.tail), ("ramp", row.ramp), ("holds", f64::from(u8::from(row.holds)))]);
        }
        r
    }
}

/// `∫_r^∞ h > ϱ ∫_{r−ε}^r z h` at each ladder point.
pub fn noncompact_condition_check(h: &WeightSpec, eps: f64, rho: f64, r_ladder: &[f64]) -> Result<NoncompactReport> {
    if !(eps > 0.0) || !(rho > 0.0) {
        return Err(Error::Config(format!("need eps > 0 and rho > 0, got {eps} and {rho}")));
    }
    let mut rows = Vec::with_capacity(r_ladder.len());
    for &r in r_ladder {
        if !(r - eps >= 0.0) {
            return Err(Error::Config(format!("ladder point r = {r} is closer to 0 than eps = {eps}")));
        }
        let tail = h.tail_integral(r)?.ok_or_else(|| Error::WeightNotIntegrable(format!("tail of {} diverges at r = {r}", h.label)))?;
        let ramp = rho * h.moment_integral(r - eps, r);
        rows.push(NoncompactRow { r, tail, ramp, holds: tail > ramp });
    }
    let all_hold = rows.iter().all(|r| r.holds);
    let half = rows.len() / 2;
    let holds_eventually = !rows.is_empty() && rows[half..].iter().all(|r| r.holds);
    Ok(NoncompactReport { eps, rho, rows, all_hold, holds_eventually })
}

/// `3t² − 2t³` on `[0, 1]`, clamped outside.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn smoothstep_d(t: f64) -> f64 {
    if (0.0..=1.0).contains(&t) {
        6.0 * t * (1.0 - t)
    } else {
        0.0
    }
}

/// `ξ_n = K_n φ_n` with smoothstep ramps `φ_n` from 0 at `r_n − ε` to 1 at `r_n`
/// and `K_n = (∫_{r_n}^∞ h)^{-1/2}`, tabulated on a common grid.
#[derive(Debug, Clone)]
pub struct WitnessSequence {
    pub h: WeightSpec,
    pub eps: f64,
    pub rho: f64,
    /// `sup |φ_n'| = 3/(2ε)`.
    pub m_eps: f64,
    pub radii: Vec<f64>,
    pub normalizers: Vec<f64>,
    /// `∫_{r_n}^∞ h`.
    pub tail_masses: Vec<f64>,
    /// `∫_{r_n−ε}^{r_n} z h`.
    pub ramp_moments: Vec<f64>,
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl WitnessSequence {
    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn z_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn eval(&self, n: usize, z: f64) -> f64 {
        self.normalizers[n] * smoothstep((z - self.radii[n] + self.eps) / self.eps)
    }

    /// `(∫ ξ_n² h, ∫ ξ_n'² z h)` over `(0, ∞)`.
    pub fn f_norm_parts(&self, n: usize) -> (f64, f64) {
        let (r, e, k) = (self.radii[n], self.eps, self.normalizers[n]);
        let ramp_mass = gl_integral(|z| smoothstep((z - r + e) / e).powi(2) * self.h.value(z), r - e, r, 16);
        let deriv = gl_integral(|z| (smoothstep_d((z - r + e) / e) / e).powi(2) * z * self.h.value(z), r - e, r, 16);
        (k * k * (ramp_mass + self.tail_masses[n]), k * k * deriv)
    }

    /// `(1 + 1/ϱ) + M_ε²/ϱ`, which dominates `‖ξ_n‖²_F`.
    pub fn f_bound(&self) -> f64 {
        1.0 + 1.0 / self.rho + self.m_eps * self.m_eps / self.rho
    }

    /// Lower bound on `‖ξ_n − ξ_m‖²_{L²(h)}` from the tail masses alone.
    pub fn separation_bound(&self) -> f64 {
        let mut best = f64::INFINITY;
        for n in 0..self.len() {
            for m in n + 1..self.len() {
                let (pn, pm) = (self.tail_masses[n], self.tail_masses[m]);
                let pm_eps = pm + self.h.integral(self.radii[m] - self.eps, self.radii[m]).unwrap_or(f64::INFINITY);
                best = best.min((pn - pm_eps) / pn + (1.0 - (pm / pn).sqrt()).powi(2));
            }
        }
        best
    }
}

/// Radii start at `R + ε` and are pushed out by doubling until the tail mass
/// has dropped by four, so ramps are disjoint and the tails well separated.
pub fn build_witness_sequence(h: &WeightSpec, eps: f64, rho: f64, n_max: usize, big_r: f64) -> Result<WitnessSequence> {
    if n_max < 2 {
        return Err(Error::Config(format!("witness sequence needs n_max >= 2, got {n_max}")));
    }
    let tail = |r: f64| -> Result<f64> { h.tail_integral(r)?.ok_or_else(|| Error::WeightNotIntegrable(format!("tail of {} diverges at r = {r}", h.label))) };
    let mut radii = vec![(big_r + eps).max(2.0 * eps)];
    while radii.len() < n_max {
        let last = *radii.last().unwrap();
        let target = tail(last)? / 4.0;
        let mut r = 2.0 * last;
        let mut guard = 0;
        while tail(r)? > target {
            r *= 2.0;
            guard += 1;
            if guard > 2000 || !r.is_finite() {
                return Err(Error::WeightNotIntegrable(format!("tail of {} does not decay", h.label)));
            }
        }
        radii.push(r);
    }
    let check = noncompact_condition_check(h, eps, rho, &radii)?;
    if let Some(bad) = check.rows.iter().find(|r| !r.holds) {
        return Err(Error::Config(format!(
            "non-compactness condition fails at r = {}: tail {:e} <= rho * moment {:e}",
            bad.r, bad.tail, bad.ramp
        )));
    }
    let tail_masses: Vec<f64> = check.rows.iter().map(|r| r.tail).collect();
    let ramp_moments: Vec<f64> = check.rows.iter().map(|r| r.ramp / rho).collect();
    let normalizers: Vec<f64> = tail_masses.iter().map(|p| 1.0 / p.sqrt()).collect();

    // background ladder plus a uniform patch across every ramp
    let z_max = 4.0 * radii.last().unwrap();
    let mut grid: Vec<f64> = (0..=16).map(|i| big_r * i as f64 / 16.0).collect();
    let mut z = big_r.max(1e-3);
    while z < z_max {
        z *= 1.25;
        grid.push(z.min(z_max));
    }
    for &r in &radii {
        grid.extend((0..=64).map(|i| r - eps + eps * i as f64 / 64.0));
        grid.extend((1..=8).map(|i| r + eps * i as f64 / 8.0));
    }
    grid.push(z_max);
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 + 1e-14 * b.abs());
    let mut seq = WitnessSequence { h: h.clone(), eps, rho, m_eps: 1.5 / eps, radii, normalizers, tail_masses, ramp_moments, grid, values: Vec::new() };
    seq.values = (0..seq.len()).map(|n| seq.grid.iter().map(|&z| seq.eval(n, z)).collect()).collect();
    Ok(seq)
}

/// `α(z)`, `T(z)` along a single unbounded edge `(0, ∞)`.
#[derive(Clone)]
pub struct RadialCoefficients {
    pub label: String,
    pub alpha: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub period: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for RadialCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialCoefficients").field("label", &self.label).finish()
    }
}

impl RadialCoefficients {
    /// `𝓗 = ‖x‖²`: `α = 4πz`, `T = π`.
    pub fn radial() -> Self {
        Self { label: "radial".into(), alpha: Arc::new(|z| 4.0 * std::f64::consts::PI * z), period: Arc::new(|_| std::f64::consts::PI) }
    }

    /// Graph `(0, z_max)` with a minimum at 0 and the point at infinity beyond `z_max`.
    pub fn space(&self, grid: &[f64]) -> Result<GraphSpace<f64>> {
        let g = MetricGraph::new(vec![(VertexKind::Minimum, grid[0]), (VertexKind::Infinity, f64::INFINITY)], vec![(0, 1, grid.to_vec())]);
        let (a, t) = (self.alpha.clone(), self.period.clone());
        let c = EdgeCoefficients::from_fns(grid, |z| a(z), |z| t(z));
        GraphSpace::new(g, EdgeCoefficientTable { edges: vec![c] })
    }
}

/// Function on a truncated unbounded edge that continues as the constant
/// `tail` beyond the last node.
#[derive(Debug, Clone)]
pub struct TailedFunction {
    pub f: GraphFunction<f64>,
    pub tail: f64,
}

fn tail_term(space: &GraphSpace<f64>, w: &WeightSpec, value: f64, from: Option<f64>) -> Result<f64> {
    if value == 0.0 {
        return Ok(0.0);
    }
    let Some((_, zmax, t)) = period_at_infinity(space) else { return Ok(0.0) };
    Ok(w.tail_integral(from.unwrap_or(zmax).max(zmax))?.map_or(f64::INFINITY, |m| value * value * t * m))
}

/// `‖f‖²_{H̄_w}` including the part beyond the truncation.
pub fn tailed_h2(space: &GraphSpace<f64>, f: &TailedFunction, w: &WeightSpec) -> Result<f64> {
    Ok(norm_h(space, &f.f, &w.graph_weight())?.powi(2) + tail_term(space, w, f.tail, None)?)
}

/// `‖f‖²_{W̄^{1,2}_w}` including the part beyond the truncation.
pub fn tailed_w2(space: &GraphSpace<f64>, f: &TailedFunction, w: &WeightSpec) -> Result<f64> {
    Ok(norm_w12(space, &f.f, &w.graph_weight())?.powi(2) + tail_term(space, w, f.tail, None)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessAudit {
    /// `(C₁, C₂, C₃, C₄)` with `C₁z ≤ α ≤ C₂z`, `C₃ ≤ T ≤ C₄` beyond `R`.
    pub constants: [f64; 4],
    pub w_norms: Vec<f64>,
    pub h_norms: Vec<f64>,
    /// `(n, m, ‖ξ_n − ξ_m‖_{H̄_γ})`.
    pub distances: Vec<(usize, usize, f64)>,
    pub bound: f64,
    pub separation: f64,
    /// Norms of the same functions in `W̄^{1,2}_{√γ}`.
    pub sqrt_w_norms: Vec<f64>,
    pub witnessed: bool,
    /// The `√γ` norms are infinite or grow at least fourfold along the sequence.
    pub sqrt_unbounded: bool,
}

impl WitnessAudit {
    pub fn min_distance(&self) -> f64 {
        self.distances.iter().map(|d| d.2).fold(f64::INFINITY, f64::min)
    }

    pub fn max_w_norm(&self) -> f64 {
        self.w_norms.iter().copied().fold(0.0, f64::max)
    }

    pub fn report(&self, seq: &WitnessSequence) -> AuditReport {
        let v = if self.witnessed { "non-compactness witnessed" } else { "no witness" };
        let mut r = AuditReport::new("witness", &[("eps", seq.eps), ("rho", seq.rho), ("bound", self.bound), ("separation", self.separation)], v);
        r.params.extend(weight_params(&seq.h));
        for n in 0..seq.len() {
            r.row(&[("r", seq.radii[n]), ("w_norm", self.w_norms[n]), ("h_norm", self.h_norms[n]), ("sqrt_w_norm", self.sqrt_w_norms[n])]);
        }
        r
    }
}

/// Zero-extends each `ξ_n` onto the graph and measures it: `W̄^{1,2}_γ` norms
/// must stay below the `F` bound (through the norm-equivalence constants)
/// while pairwise `H̄_γ` distances stay above `0.9 √(C₃ · separation)`.
pub fn witness_audit(seq: &WitnessSequence, coeffs: &RadialCoefficients, gamma: &WeightSpec) -> Result<WitnessAudit> {
    let space = coeffs.space(&seq.grid)?;
    let r0 = seq.radii[0] - seq.eps;
    let zmax = seq.z_max();
    let mut c = [f64::INFINITY, 0.0, f64::INFINITY, 0.0];
    for i in 0..=400 {
        let z = r0 * (zmax / r0).powf(i as f64 / 400.0);
        let (a, t) = ((coeffs.alpha)(z) / z, (coeffs.period)(z));
        c = [c[0].min(a), c[1].max(a), c[2].min(t), c[3].max(t)];
    }
    if !(c[0] > 0.0) || !(c[2] > 0.0) || !c[1].is_finite() || !c[3].is_finite() || c[1] / c[0] > 100.0 || c[3] / c[2] > 100.0 {
        return Err(Error::HypothesisH(format!("coefficients of {} are not in the asymptotic regime beyond R: constants {c:?}", coeffs.label)));
    }
    let funcs: Vec<TailedFunction> = (0..seq.len())
        .map(|n| Ok(TailedFunction { f: space.function(|z, _| seq.eval(n, z)), tail: seq.normalizers[n] }))
        .collect::<Result<_>>()?;
    let sq = gamma.sqrt();
    let mut w_norms = Vec::new();
    let mut h_norms = Vec::new();
    let mut sqrt_w_norms = Vec::new();
    for f in &funcs {
        w_norms.push(tailed_w2(&space, f, gamma)?.sqrt());
        h_norms.push(tailed_h2(&space, f, gamma)?.sqrt());
        sqrt_w_norms.push(tailed_w2(&space, f, &sq)?.sqrt());
    }
    let mut distances = Vec::new();
    for n in 0..funcs.len() {
        for m in n + 1..funcs.len() {
            let d = TailedFunction { f: funcs[n].f.sub(&funcs[m].f), tail: funcs[n].tail - funcs[m].tail };
            distances.push((n, m, tailed_h2(&space, &d, gamma)?.sqrt()));
        }
    }
    let bound = c[1].max(c[3]) * seq.f_bound();
    let separation = seq.separation_bound();
    let audit = WitnessAudit {
        constants: c,
        w_norms,
        h_norms,
        distances,
        bound,
        separation,
        sqrt_unbounded: sqrt_w_norms.iter().any(|v| !v.is_finite()) || sqrt_w_norms.last().unwrap() >= &(4.0 * sqrt_w_norms[0]),
        sqrt_w_norms,
        witnessed: false,
    };
    let floor = 0.9 * (c[2] * separation.max(0.0)).sqrt();
    let witnessed = audit.max_w_norm().powi(2) <= 1.01 * bound && audit.min_distance() >= floor && floor > 0.0;
    Ok(WitnessAudit { witnessed, ..audit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeRow {
    pub r: f64,
    /// `sup_w ∫_{z>R} |w|² T γ dz`.
    pub tail_mass: f64,
    /// `(sup_w ‖w‖²_{W̄_{√γ}}) · sup_{z≥R} √γ`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeReport {
    pub family_norm2: f64,
    pub rows: Vec<EscapeRow>,
    pub dominated: bool,
    /// The bound decreases along the ladder and ends below `10⁻³` of its start.
    pub vanishing: bool,
}

impl EscapeReport {
    pub fn pass(&self) -> bool {
        self.dominated && self.vanishing
    }

    pub fn report(&self, w: &WeightSpec) -> AuditReport {
        let v = if self.pass() { "PASS" } else if self.dominated { "FLAGGED: bound does not vanish" } else { "FAIL" };
        let mut r = AuditReport::new("compactness_escape", &[("family_norm2", self.family_norm2)], v);
        r.params.extend(weight_params(w));
        for row in &self.rows {
            r.row(&[("R", row.r), ("tail_mass", row.tail_mass), ("bound", row.bound)]);
        }
        r
    }
}

/// Tail masses of a family bounded in `W̄^{1,2}_{√γ}` against the bound
/// `sup‖w‖² · sup_{z≥R}√γ` that drives compactness.
pub fn compactness_escape_audit(gamma: &WeightSpec, space: &GraphSpace<f64>, family: &[TailedFunction], r_ladder: &[f64]) -> Result<EscapeReport> {
    if family.is_empty() {
        return Err(Error::Config("escape audit needs a non-empty family".into()));
    }
    let sq = gamma.sqrt();
    let mut family_norm2 = 0.0f64;
    for f in family {
        family_norm2 = family_norm2.max(tailed_w2(space, f, &sq)?);
    }
    let rules = MeasureRules::new(space, &gamma.graph_weight());
    let mut rows = Vec::new();
    for &r in r_ladder {
        let mut worst = 0.0f64;
        for f in family {
            let mut s = 0.0;
            for (k, e) in space.graph.edges.iter().enumerate() {
                let dofs = &space.layout.edge_dofs[k];
                for (i, w) in rules.rules[k].iter().enumerate() {
                    if e.grid[i] >= r {
                        let (a, b) = (f.f.values[dofs[i]], f.f.values[dofs[i + 1]]);
                        s += w[0] * a * a + w[1] * 0.25 * (a + b) * (a + b) + w[2] * b * b;
                    }
                }
            }
            s += tail_term(space, gamma, f.tail, Some(r))?;
            worst = worst.max(s);
        }
        let sup_sqrt = (0..=400).map(|i| sq.value(r * 1e4f64.powf(i as f64 / 400.0))).fold(0.0f64, f64::max);
        rows.push(EscapeRow { r, tail_mass: worst, bound: family_norm2 * sup_sqrt });
    }
    let dominated = rows.iter().all(|r| r.tail_mass <= r.bound * (1.0 + 1e-9) + 1e-300);
    let vanishing = rows.len() >= 2 && rows.windows(2).all(|w| w[1].bound < w[0].bound) && rows.last().unwrap().bound <= 1e-3 * rows[0].bound;
    Ok(EscapeReport { family_norm2, rows, dominated, vanishing })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyRow {
    pub kappa1: f64,
    pub witness: Option<WitnessAudit>,
    pub gamma_s: GammaSReport,
    pub escape: Option<EscapeReport>,
}

impl DichotomyRow {
    pub fn witnessed(&self) -> bool {
        self.witness.as_ref().is_some_and(|w| w.witnessed)
    }

    pub fn escape_vanishes(&self) -> bool {
        self.escape.as_ref().is_some_and(|e| e.pass())
    }
}

/// Power weights `(1 + z)^{-κ₁}` on the radial graph: the witness sequence and,
/// where `√γ` is integrable, the escape bound for the witnesses renormalized
/// in `W̄^{1,2}_{√γ}`.
pub fn embedding_dichotomy(kappas: &[f64], n_max: usize) -> Result<Vec<DichotomyRow>> {
    let coeffs = RadialCoefficients::radial();
    kappas
        .iter()
        .map(|&k| {
            let w = WeightSpec::power(1.0, k, 1.0);
            let (eps, rho) = (1.0, 0.25 / (k - 1.0));
            let seq = build_witness_sequence(&w, eps, rho, n_max, 8.0)?;
            let witness = witness_audit(&seq, &coeffs, &w)?;
            let space = coeffs.space(&seq.grid)?;
            let gamma_s = hypothesis_gamma_s_check(&w, &space)?;
            let escape = if gamma_s.integral.is_finite() {
                let sq = w.sqrt();
                let family: Vec<TailedFunction> = (0..seq.len())
                    .map(|n| {
                        let f = TailedFunction { f: space.function(|z, _| seq.eval(n, z)), tail: seq.normalizers[n] };
                        let s = tailed_w2(&space, &f, &sq)?.sqrt();
                        Ok(TailedFunction { f: f.f.map(|v| v / s), tail: f.tail / s })
                    })
                    .collect::<Result<_>>()?;
                let ladder: Vec<f64> = (0..6).map(|i| 10f64.powi(i + 1)).collect();
                Some(compactness_escape_audit(&w, &space, &family, &ladder)?)
            } else {
                None
            };
            Ok(DichotomyRow { kappa1: k, witness: Some(witness), gamma_s, escape })
        })
        .collect()
}
