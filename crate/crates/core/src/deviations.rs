//! Rare-event probabilities by plain and Girsanov-tilted Monte Carlo, the
//! moderate-deviation scale, and the slope audits built on them.

use crate::error::{Error, Result};
use crate::linalg::linear_fit;
use crate::scalar::Real;
use crate::skeleton::{Control, Regime};
use crate::spde::{solve_controlled, solve_mdp_controlled, solve_spde, PathResult, SpdeModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Moderate-deviation scale `λ(ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MdpScale {
    /// `ε^{-p}`.
    Power(f64),
    /// `ln(1 + 1/ε)`.
    Log1p,
    /// `ln(1/ε)`.
    LogInv,
    /// Tabulated `(ε, λ)`, interpolated linearly in `ln ε`.
    Table(Vec<(f64, f64)>),
}

impl MdpScale {
    /// Accepts `eps^-1/4`, `eps^-0.25`, `log1p`, `log(1/eps)`, or `table:e1=l1,e2=l2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let s: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Config(format!("cannot parse lambda spec '{spec}' (use eps^-1/4, log1p, log(1/eps) or table:eps=lambda,...)"));
        if let Some(exp) = s.strip_prefix("eps^") {
            let exp = exp.trim_start_matches('(').trim_end_matches(')');
            let value = match exp.split_once('/') {
                Some((n, d)) => n.parse::<f64>().map_err(|_| bad())? / d.parse::<f64>().map_err(|_| bad())?,
                None => exp.parse::<f64>().map_err(|_| bad())?,
            };
            return Ok(MdpScale::Power(-value));
        }
        match s.as_str() {
            "log1p" => return Ok(MdpScale::Log1p),
            "log(1/eps)" | "log1/eps" | "loginv" => return Ok(MdpScale::LogInv),
            _ => {}
        }
        if let Some(body) = s.strip_prefix("table:") {
            let mut rows = Vec::new();
            for pair in body.split(',') {
                let (e, l) = pair.split_once('=').ok_or_else(bad)?;
                rows.push((e.parse::<f64>().map_err(|_| bad())?, l.parse::<f64>().map_err(|_| bad())?));
            }
            return Self::table(rows);
        }
        Err(bad())
    }

    pub fn table(mut rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.len() < 2 || rows.iter().any(|(e, l)| !(*e > 0.0) || !(*l > 0.0)) {
            return Err(Error::Config("lambda table needs >= 2 rows with positive eps and lambda".into()));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(MdpScale::Table(rows))
    }

    pub fn eval(&self, eps: f64) -> f64 {
        match self {
            MdpScale::Power(p) => eps.powf(-p),
            MdpScale::Log1p => (1.0 + 1.0 / eps).ln(),
            MdpScale::LogInv => (1.0 / eps).ln(),
            MdpScale::Table(rows) => {
                let x = eps.ln();
                let k = rows.partition_point(|r| r.0.ln() < x).clamp(1, rows.len() - 1);
                let (a, b) = (rows[k - 1], rows[k]);
                let t = (x - a.0.ln()) / (b.0.ln() - a.0.ln());
                a.1 + t * (b.1 - a.1)
            }
        }
    }
}

impl fmt::Display for MdpScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MdpScale::Power(p) => write!(f, "eps^-{p}"),
            MdpScale::Log1p => write!(f, "log1p"),
            MdpScale::LogInv => write!(f, "log(1/eps)"),
            MdpScale::Table(r) => write!(f, "table({} rows)", r.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpScaleRow {
    pub epsilon: f64,
    pub lambda: f64,
    pub sqrt_eps_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpScaleReport {
    pub spec: String,
    pub rows: Vec<MdpScaleRow>,
    pub lambda_diverges: bool,
    pub sqrt_eps_lambda_vanishes: bool,
    pub pass: bool,
}

/// Checks `λ → ∞` and `√ε λ → 0` on `eps_grid` extended by two decades:
/// both sequences must be strictly monotone, with `λ` at least doubling and
/// `√ε λ` at least halving from the first to the last point. Tables are only
/// checked on their own rows.
pub fn mdp_scale_check(scale: &MdpScale, eps_grid: &[f64]) -> MdpScaleReport {
    let mut eps: Vec<f64> = match scale {
        MdpScale::Table(rows) => rows.iter().map(|r| r.0).collect(),
        _ => {
            let mut e = eps_grid.to_vec();
            let smallest = e.iter().cloned().fold(f64::INFINITY, f64::min);
            if smallest.is_finite() {
                e.push(smallest * 0.1);
                e.push(smallest * 0.01);
            }
            e
        }
    };
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let rows: Vec<MdpScaleRow> = eps
        .iter()
        .map(|&e| {
            let l = scale.eval(e);
            MdpScaleRow { epsilon: e, lambda: l, sqrt_eps_lambda: e.sqrt() * l }
        })
        .collect();
    let ok = rows.len() >= 2 && rows.iter().all(|r| r.lambda.is_finite() && r.lambda > 0.0);
    let lambda_diverges = ok
        && rows.windows(2).all(|w| w[1].lambda > w[0].lambda)
        && rows.last().unwrap().lambda >= 2.0 * rows[0].lambda;
    let sqrt_eps_lambda_vanishes = ok
        && rows.windows(2).all(|w| w[1].sqrt_eps_lambda < w[0].sqrt_eps_lambda)
        && rows.last().unwrap().sqrt_eps_lambda <= 0.5 * rows[0].sqrt_eps_lambda;
    MdpScaleReport {
        spec: scale.to_string(),
        rows,
        lambda_diverges,
        sqrt_eps_lambda_vanishes,
        pass: lambda_diverges && sqrt_eps_lambda_vanishes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// `⟨X(T), ψ⟩_ν > r`.
    EndpointThreshold,
    /// `sup_t ‖X(t) − X⁰(t)‖_{H̄_γ} > r` over the stored snapshots.
    SupBallExit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RareEvent<T> {
    pub kind: EventKind,
    pub psi: Vec<T>,
    pub threshold: f64,
}

impl<T: Real> RareEvent<T> {
    pub fn endpoint(psi: Vec<T>, threshold: f64) -> Self {
        Self { kind: EventKind::EndpointThreshold, psi, threshold }
    }

    pub fn sup_exit(n: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("exit radius {radius} must be positive")));
        }
        Ok(Self { kind: EventKind::SupBallExit, psi: vec![T::zero(); n], threshold: radius })
    }
}

/// Which process is sampled: `u^ε` (LDP) or the deviation process `𝔐 = X̄^ε` (MDP).
#[derive(Clone)]
pub struct DeviationSetup<'a, T> {
    pub model: &'a SpdeModel<T>,
    pub u0: Vec<T>,
    pub regime: Regime,
    pub eps: f64,
    /// `λ(ε)`; only used for the MDP regime.
    pub lambda: f64,
    base: Vec<Vec<T>>,
    reference: PathResult<T>,
}

impl<'a, T: Real> DeviationSetup<'a, T> {
    pub fn ldp(model: &'a SpdeModel<T>, u0: Vec<T>, eps: f64) -> Result<Self> {
        Self::new(model, u0, Regime::Ldp, eps, 1.0 / eps.sqrt())
    }

    pub fn mdp(model: &'a SpdeModel<T>, u0: Vec<T>, eps: f64, lambda: f64) -> Result<Self> {
        Self::new(model, u0, Regime::Mdp, eps, lambda)
    }

    fn new(model: &'a SpdeModel<T>, u0: Vec<T>, regime: Regime, eps: f64, lambda: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) || !(lambda > 0.0) {
            return Err(Error::Config(format!("need eps in (0, 1] and lambda > 0 (eps = {eps}, lambda = {lambda})")));
        }
        let base = match regime {
            Regime::Ldp => Vec::new(),
            Regime::Mdp => model.deterministic_trajectory(&u0)?,
        };
        let reference = match regime {
            Regime::Ldp => model.solve_forced(&u0, crate::spde::Forcing::none())?,
            Regime::Mdp => model.solve_mdp(&model.deterministic_trajectory(&u0)?, 0.0, lambda, None, None)?,
        };
        Ok(Self { model, u0, regime, eps, lambda, base, reference })
    }

    /// Uncontrolled (`control = None`) or tilted sample `index`.
    pub fn simulate(&self, control: Option<&Control>, root_seed: u64, index: u64) -> Result<PathResult<T>> {
        match self.regime {
            Regime::Ldp => {
                let u0 = self.model.space.from_values(self.u0.clone())?;
                match control {
                    None => solve_spde(self.model, &u0, self.eps, root_seed, index),
                    Some(v) => solve_controlled(self.model, &u0, self.eps, v, root_seed, index),
                }
            }
            Regime::Mdp => solve_mdp_controlled(self.model, &self.base, self.eps, self.lambda, control, root_seed, index),
        }
    }

    /// Event indicator of a simulated path.
    pub fn hit(&self, event: &RareEvent<T>, path: &PathResult<T>) -> bool {
        match event.kind {
            EventKind::EndpointThreshold => {
                let p = self.model.pairing(&event.psi);
                p.iter().zip(&path.terminal).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() > event.threshold
            }
            EventKind::SupBallExit => path.snapshots.iter().zip(&self.reference.snapshots).any(|(a, b)| {
                let d: Vec<T> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
                self.model.norm(&d) > event.threshold
            }),
        }
    }

    /// Speed of the regime: `1/ε` or `λ²`.
    pub fn speed(&self) -> f64 {
        match self.regime {
            Regime::Ldp => 1.0 / self.eps,
            Regime::Mdp => self.lambda * self.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p_hat: f64,
    pub se: f64,
    pub samples: usize,
    pub hits: usize,
    /// Effective sample size `(∑w)²/∑w²` of the weights (equals `samples` without a tilt).
    pub ess: f64,
    pub importance: bool,
    /// Set when no sample hit the event.
    pub zero_hits: bool,
    /// Set when the tilted weights collapse (`ess < 10`).
    pub degenerate: bool,
    /// Mean likelihood ratio and its standard error.
    pub mean_weight: f64,
    pub weight_se: f64,
    pub root_seed: u64,
}

impl McEstimate {
    /// Delta-method standard error of `ln p̂`.
    pub fn se_ln(&self) -> f64 {
        if self.p_hat > 0.0 {
            self.se / self.p_hat
        } else {
            f64::INFINITY
        }
    }
}

fn reduce(samples: &[(bool, f64)], importance: bool, root_seed: u64) -> McEstimate {
    let n = samples.len() as f64;
    let hits = samples.iter().filter(|s| s.0).count();
    let vals: Vec<f64> = samples.iter().map(|&(h, w)| if h { w } else { 0.0 }).collect();
    let p = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - p).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let ws: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let sw: f64 = ws.iter().sum();
    let sw2: f64 = ws.iter().map(|w| w * w).sum();
    let mw = sw / n;
    let wvar = ws.iter().map(|w| (w - mw).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let ess = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
    McEstimate {
        p_hat: p,
        se: (var / n).sqrt(),
        samples: samples.len(),
        hits,
        ess,
        importance,
        zero_hits: hits == 0,
        degenerate: importance && ess < 10.0,
        mean_weight: mw,
        weight_se: (wvar / n).sqrt(),
        root_seed,
    }
}

fn sample_all<T: Real>(setup: &DeviationSetup<'_, T>, event: &RareEvent<T>, control: Option<&Control>, n: usize, root_seed: u64) -> Result<Vec<(bool, f64)>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let p = setup.simulate(control, root_seed, i)?;
            let w = if control.is_some() { p.log_weight.exp() } else { 1.0 };
            Ok((setup.hit(event, &p), w))
        })
        .collect()
}

/// Plain Monte Carlo: indicator mean with binomial standard error.
pub fn estimate_probability<T: Real>(setup: &DeviationSetup<'_, T>, event: &RareEvent<T>, n: usize, root_seed: u64) -> Result<McEstimate> {
    if n < 100 {
        return Err(Error::Config(format!("need at least 100 samples, got {n}")));
    }
    if event.threshold == f64::INFINITY {
        return Ok(reduce(&vec![(false, 1.0); n], false, root_seed));
    }
    let s = sample_all(setup, event, None, n, root_seed)?;
    let mut est = reduce(&s, false, root_seed);
    est.se = (est.p_hat * (1.0 - est.p_hat) / n as f64).sqrt();
    Ok(est)
}

/// Tilted Monte Carlo: runs the controlled equation and weights each sample by
/// its Girsanov density `exp(−∑ h ΔB − ½∑ h² Δt)`.
pub fn girsanov_is_estimate<T: Real>(setup: &DeviationSetup<'_, T>, event: &RareEvent<T>, control: &Control, n: usize, root_seed: u64) -> Result<McEstimate> {
    if n < 2 {
        return Err(Error::Config("importance sampling needs at least 2 samples".into()));
    }
    let s = sample_all(setup, event, Some(control), n, root_seed)?;
    Ok(reduce(&s, true, root_seed))
}

/// Plain sampling first; below `min_hits` hits the estimate is redone with
/// the tilt `control`.
pub fn estimate_auto<T: Real>(setup: &DeviationSetup<'_, T>, event: &RareEvent<T>, control: Option<&Control>, n: usize, root_seed: u64, min_hits: usize) -> Result<McEstimate> {
    let plain = estimate_probability(setup, event, n, root_seed)?;
    match control {
        Some(v) if plain.hits < min_hits => girsanov_is_estimate(setup, event, v, n, root_seed),
        _ => Ok(plain),
    }
}

pub const MIN_HITS: usize = 20;
/// Points with `SE(ln p̂)` above this are excluded from slope fits.
pub const MAX_SE_LN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl SlopeFit {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() || x.len() < 3 {
            return Err(Error::InsufficientSampling(format!("slope fit needs >= 3 points, got {}", x.len().min(y.len()))));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::InsufficientSampling("slope fit points must be finite".into()));
        }
        let (slope, intercept, r2) = linear_fit(x, y);
        Ok(Self { x: x.to_vec(), y: y.to_vec(), slope, intercept, r2 })
    }

    /// Log-log fit of `y` against `x`.
    pub fn loglog(x: &[f64], y: &[f64]) -> Result<Self> {
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        Self::fit(&lx, &ly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpAuditRow {
    pub epsilon: f64,
    pub p_hat: f64,
    pub se: f64,
    pub neg_eps_ln_p: f64,
    #[serde(rename = "J_ref")]
    pub j_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpAuditRow {
    pub epsilon: f64,
    pub lambda: f64,
    pub p_hat: f64,
    pub se: f64,
    pub neg_lam2_ln_p: f64,
    #[serde(rename = "J_ref")]
    pub j_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAuditRow {
    pub epsilon: f64,
    pub mse: f64,
    pub se: f64,
    pub envelope: f64,
}

/// Result of a rate audit: per-ε estimates, `speed⁻¹ · (−ln p̂)` against the
/// rate, and the fit of that quantity against `ln ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAudit {
    pub regime: Regime,
    pub epsilon: Vec<f64>,
    pub lambda: Vec<f64>,
    pub estimates: Vec<McEstimate>,
    /// `−ln p̂ / speed`.
    pub scaled: Vec<f64>,
    /// Indices excluded from the fit because `SE(ln p̂) > 0.3`.
    pub excluded: Vec<usize>,
    pub rate: f64,
    pub fit: Option<SlopeFit>,
    /// `|scaled − J| / J` at the smallest ε.
    pub final_rel_error: f64,
    /// `|scaled − J|` is nonincreasing as ε decreases.
    pub trend_toward_rate: bool,
    /// The comparison is against the endpoint-contracted rate.
    pub note: String,
}

impl RateAudit {
    pub fn ldp_rows(&self) -> Vec<LdpAuditRow> {
        (0..self.epsilon.len())
            .map(|i| LdpAuditRow { epsilon: self.epsilon[i], p_hat: self.estimates[i].p_hat, se: self.estimates[i].se, neg_eps_ln_p: self.scaled[i], j_ref: self.rate })
            .collect()
    }

    pub fn mdp_rows(&self) -> Vec<MdpAuditRow> {
        (0..self.epsilon.len())
            .map(|i| MdpAuditRow {
                epsilon: self.epsilon[i],
                lambda: self.lambda[i],
                p_hat: self.estimates[i].p_hat,
                se: self.estimates[i].se,
                neg_lam2_ln_p: self.scaled[i],
                j_ref: self.rate,
            })
            .collect()
    }
}

fn rate_audit<T: Real>(
    model: &SpdeModel<T>,
    u0: &[T],
    regime: Regime,
    event: &RareEvent<T>,
    eps_grid: &[f64],
    scale: Option<&MdpScale>,
    rate: f64,
    control: Option<&Control>,
    n: usize,
    root_seed: u64,
) -> Result<RateAudit> {
    if eps_grid.len() < 3 {
        return Err(Error::Config("rate audits need at least 3 eps values".into()));
    }
    let mut eps: Vec<f64> = eps_grid.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let mut lambda = Vec::new();
    let mut estimates = Vec::new();
    let mut scaled = Vec::new();
    let mut excluded = Vec::new();
    for (i, &e) in eps.iter().enumerate() {
        let setup = match regime {
            Regime::Ldp => DeviationSetup::ldp(model, u0.to_vec(), e)?,
            Regime::Mdp => DeviationSetup::mdp(model, u0.to_vec(), e, scale.expect("mdp audit has a scale").eval(e))?,
        };
        let est = estimate_auto(&setup, event, control, n, root_seed.wrapping_add(i as u64), MIN_HITS)?;
        if est.hits == 0 {
            return Err(Error::InsufficientSampling(format!("no hits at eps = {e} ({} samples{})", n, if est.importance { ", tilted" } else { "" })));
        }
        if est.se_ln() > MAX_SE_LN {
            excluded.push(i);
        }
        lambda.push(setup.lambda);
        scaled.push(-est.p_hat.ln() / setup.speed());
        estimates.push(est);
    }
    let keep: Vec<usize> = (0..eps.len()).filter(|i| !excluded.contains(i)).collect();
    let fx: Vec<f64> = keep.iter().map(|&i| eps[i].ln()).collect();
    let fy: Vec<f64> = keep.iter().map(|&i| scaled[i]).collect();
    let fit = SlopeFit::fit(&fx, &fy).ok();
    let gaps: Vec<f64> = scaled.iter().map(|s| (s - rate).abs()).collect();
    Ok(RateAudit {
        regime,
        final_rel_error: gaps.last().unwrap() / rate.abs(),
        trend_toward_rate: gaps.windows(2).all(|w| w[1] <= w[0]),
        epsilon: eps,
        lambda,
        estimates,
        scaled,
        excluded,
        rate,
        fit,
        note: "rate is the endpoint-contracted rate function of the skeleton, not the path-space infimum".into(),
    })
}

/// `−ε ln p̂` over the ε ladder against the skeleton rate `J`, with the skeleton
/// minimizer as the automatic tilt.
#[allow(clippy::too_many_arguments)]
pub fn ldp_slope_audit<T: Real>(
    model: &SpdeModel<T>,
    u0: &[T],
    event: &RareEvent<T>,
    eps_grid: &[f64],
    rate: f64,
    control: Option<&Control>,
    n: usize,
    root_seed: u64,
) -> Result<RateAudit> {
    rate_audit(model, u0, Regime::Ldp, event, eps_grid, None, rate, control, n, root_seed)
}

/// `−λ² ln p̂` for events on the deviation process against the MDP rate.
#[allow(clippy::too_many_arguments)]
pub fn mdp_slope_audit<T: Real>(
    model: &SpdeModel<T>,
    u0: &[T],
    event: &RareEvent<T>,
    eps_grid: &[f64],
    scale: &MdpScale,
    rate: f64,
    control: Option<&Control>,
    n: usize,
    root_seed: u64,
) -> Result<RateAudit> {
    let check = mdp_scale_check(scale, eps_grid);
    if !check.pass {
        return Err(Error::Config(format!("lambda spec {scale} is not a moderate-deviation scale")));
    }
    rate_audit(model, u0, Regime::Mdp, event, eps_grid, Some(scale), rate, control, n, root_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAudit {
    pub rows: Vec<ErrorAuditRow>,
    /// `ln mse` against `ln ε`.
    pub fit: SlopeFit,
    /// `ln mse` against `ln envelope`.
    pub envelope_fit: Option<SlopeFit>,
}

fn sup_sq_dist<T: Real>(model: &SpdeModel<T>, a: &PathResult<T>, b: &PathResult<T>) -> f64 {
    a.snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| {
            let d: Vec<T> = x.iter().zip(y).map(|(p, q)| *p - *q).collect();
            model.norm(&d).powi(2)
        })
        .fold(0.0, f64::max)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

fn error_audit(eps: &[f64], per_eps: Vec<Vec<f64>>, envelope: impl Fn(f64) -> f64) -> Result<ErrorAudit> {
    let rows: Vec<ErrorAuditRow> = eps
        .iter()
        .zip(per_eps)
        .map(|(&e, xs)| {
            let (mse, se) = mean_se(&xs);
            ErrorAuditRow { epsilon: e, mse, se, envelope: envelope(e) }
        })
        .collect();
    let fit = SlopeFit::loglog(eps, &rows.iter().map(|r| r.mse).collect::<Vec<_>>())?;
    let env: Vec<f64> = rows.iter().map(|r| r.envelope).collect();
    let envelope_fit = SlopeFit::loglog(&env, &rows.iter().map(|r| r.mse).collect::<Vec<_>>()).ok();
    Ok(ErrorAudit { rows, fit, envelope_fit })
}

/// `E sup_t ‖𝔘_ε^v − Z^v‖²` over the ε grid (`reps` coupled samples per ε).
pub fn controlled_error_rate_audit<T: Real>(model: &SpdeModel<T>, u0: &[T], v: &Control, eps_grid: &[f64], reps: usize, root_seed: u64) -> Result<ErrorAudit> {
    let z = crate::skeleton::solve_skeleton_ldp(model, u0, v)?;
    let uf = model.space.from_values(u0.to_vec())?;
    let per_eps = eps_grid
        .iter()
        .map(|&e| {
            (0..reps as u64)
                .into_par_iter()
                .map(|i| solve_controlled(model, &uf, e, v, root_seed, i).map(|p| sup_sq_dist(model, &p, &z)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    error_audit(eps_grid, per_eps, |e| e)
}

/// `E sup_t ‖𝔐_ε^v − R^v‖²` against the envelope `(√ελ)^{2α₀} + λ^{-2}`.
pub fn mdp_error_rate_audit<T: Real>(
    model: &SpdeModel<T>,
    u0: &[T],
    v: &Control,
    eps_grid: &[f64],
    scale: &MdpScale,
    alpha0: f64,
    reps: usize,
    root_seed: u64,
) -> Result<ErrorAudit> {
    let base = model.deterministic_trajectory(u0)?;
    let r = crate::skeleton::solve_skeleton_mdp(model, &base, v)?;
    let per_eps = eps_grid
        .iter()
        .map(|&e| {
            let l = scale.eval(e);
            (0..reps as u64)
                .into_par_iter()
                .map(|i| solve_mdp_controlled(model, &base, e, l, Some(v), root_seed, i).map(|p| sup_sq_dist(model, &p, &r)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    error_audit(eps_grid, per_eps, |e| {
        let l = scale.eval(e);
        (e.sqrt() * l).powf(2.0 * alpha0) + l.powi(-2)
    })
}

/// Standard normal upper tail `Φ̄(x)`.
pub fn normal_tail(x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().sf(x)
}
