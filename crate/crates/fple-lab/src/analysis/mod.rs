//! Audits: quantitative checks of measured trajectories against the
//! theoretical estimates — weighted-mass Lipschitz decay, mass
//! conservation by regime, the extinction-time sandwich, the L^q → L^∞
//! smoothing envelope, the positivity/extinction dichotomy, and the
//! admissible-growth gate for initial data.

mod calibration;

pub use calibration::{lookup as calibration_lookup, CalibrationEntry};

use crate::grid::{BallRadius, GridFunction, MorreyNorm, RadialGrid, TailSpec};
use crate::operator::{power_map_constant, OperatorError};
use crate::params::{Params, Regime};
use crate::stepper::Trajectory;
use crate::weights::{Weight, WeightError};
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("integrability exponent q0 = {q0} outside the valid range: {requirement}")]
    WrongIntegrability { q0: f64, requirement: String },
    #[error("initial data is not integrable: {0}")]
    NonIntegrableData(String),
    #[error("p = {p} is not in the very fast regime (requires p < p_c = {p_c})")]
    NotVeryFastRegime { p: f64, p_c: f64 },
    #[error("weight is inadmissible: {0}")]
    InadmissibleWeight(String),
    #[error("no extinction calibration entry for (s = {s}, p = {p}, N = {dim})")]
    MissingCalibration { s: f64, p: f64, dim: u32 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error("time stepping failed: {0}")]
    Step(String),
}

impl From<crate::stepper::StepError> for AuditError {
    fn from(e: crate::stepper::StepError) -> Self {
        AuditError::Step(e.to_string())
    }
}

/// Outcome of one audit: a measured quantity against its theoretical
/// bound, with `pass ⇔ measured ≤ bound·(1+tol)` (audits that also carry
/// side conditions fold them into `pass` and record them in `verdict`).
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub kind: String,
    pub theoretical_bound: f64,
    pub measured: f64,
    pub margin: f64,
    pub pass: bool,
    pub tol: f64,
    pub verdict: String,
    pub metadata: BTreeMap<String, String>,
}

impl AuditReport {
    pub(crate) fn new(kind: &str, bound: f64, measured: f64, tol: f64) -> Self {
        let margin = if bound > 0.0 {
            measured / bound
        } else if measured == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        AuditReport {
            kind: kind.to_string(),
            theoretical_bound: bound,
            measured,
            margin,
            pass: measured <= bound * (1.0 + tol),
            tol,
            verdict: "ok".to_string(),
            metadata: BTreeMap::new(),
        }
    }

    pub(crate) fn with(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: {} (measured {:.6e} vs bound {:.6e}, margin {:.3}) [{}]",
            self.kind,
            if self.pass { "PASS" } else { "FAIL" },
            self.measured,
            self.theoretical_bound,
            self.margin,
            self.verdict,
        )
    }
}

fn combine_tails(a: TailSpec, b: TailSpec) -> TailSpec {
    if a.is_zero() || b.is_zero() {
        return TailSpec::zero();
    }
    TailSpec::with_log(
        a.exponent + b.exponent,
        a.coefficient * b.coefficient,
        a.log_exponent + b.log_exponent,
    )
}

/// Weighted mass `X = ∫ u φ dx` including analytic tail contributions.
/// The weight is 1 at the origin and varies negligibly below the first
/// node, so the product keeps `u`'s inner tail.
pub fn weighted_mass(u: &GridFunction, phi: &Weight) -> Result<f64, AuditError> {
    let pv = phi.values.values();
    let prod: Vec<f64> = u
        .values()
        .iter()
        .zip(pv)
        .map(|(a, b)| if a.is_infinite() { *a } else { a * b })
        .collect();
    let outer = combine_tails(u.outer_tail(), phi.values.outer_tail());
    let g = GridFunction::new(u.grid().clone(), prod, u.inner_tail(), outer)?;
    let x = g.integrate(BallRadius::Infinite)?;
    if !x.is_finite() {
        return Err(AuditError::NonIntegrableData(format!(
            "weighted mass is {x}"
        )));
    }
    Ok(x)
}

/// Check the Lipschitz decay of the weighted mass: the max slope of
/// `X^{2-p}` between any two snapshots must not exceed the weight
/// constant `K(φ)`.
pub fn check_weighted_estimate(
    traj: &Trajectory,
    phi: &Weight,
    params: &Params,
) -> Result<AuditReport, AuditError> {
    if params.sp() >= 1.0 {
        return Err(AuditError::Weight(WeightError::RequiresSpLtOne {
            sp: params.sp(),
        }));
    }
    if !phi.admissible {
        return Err(AuditError::InadmissibleWeight(format!(
            "weight family {:?} flagged inadmissible",
            phi.family
        )));
    }
    let k = phi.k_phi.finite().ok_or_else(|| {
        AuditError::InadmissibleWeight("weight constant is infinite".to_string())
    })?;
    let e = 2.0 - params.p;
    let mut xs = Vec::with_capacity(traj.snapshots.len());
    for (t, u) in &traj.snapshots {
        xs.push((*t, weighted_mass(u, phi)?));
    }
    let mut slope: f64 = 0.0;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let dt = xs[j].0 - xs[i].0;
            if dt <= 1e-15 {
                continue;
            }
            slope = slope.max((xs[i].1.powf(e) - xs[j].1.powf(e)).abs() / dt);
        }
    }
    Ok(AuditReport::new("weighted-estimate", k, slope, 0.05)
        .with("lambda", phi.family.lambda())
        .with("snapshots", xs.len())
        .with("x_initial", xs.first().map(|x| x.1).unwrap_or(f64::NAN))
        .with("x_final", xs.last().map(|x| x.1).unwrap_or(f64::NAN)))
}

/// Mass behaviour by regime: near-conservation above the critical
/// exponent (drift per time decade), looser conservation at criticality,
/// monotone decay toward zero below it.
pub fn mass_audit(traj: &Trajectory, params: &Params) -> Result<AuditReport, AuditError> {
    let mut masses = Vec::with_capacity(traj.snapshots.len());
    for (t, u) in &traj.snapshots {
        let m = u.integrate(BallRadius::Infinite)?;
        if !m.is_finite() {
            return Err(AuditError::NonIntegrableData(format!(
                "mass at t = {t} is {m}"
            )));
        }
        masses.push((*t, m));
    }
    let m0 = masses[0].1;
    if !(m0 > 0.0) {
        return Err(AuditError::NonIntegrableData(format!(
            "initial mass {m0} must be positive"
        )));
    }
    let t_first = masses
        .iter()
        .map(|(t, _)| *t)
        .find(|t| *t > 0.0)
        .unwrap_or(1.0);
    let t_last = masses.last().unwrap().0;
    let decades = (t_last / t_first).log10().max(1e-9);
    let max_drift = masses
        .iter()
        .map(|(_, m)| (m - m0).abs() / m0)
        .fold(0.0f64, f64::max);
    let report = match params.classify() {
        Regime::Good { .. } => {
            AuditReport::new("mass-conservation", 0.01, max_drift / decades, 0.0)
                .with("regime", "good")
                .with("decades", decades)
        }
        Regime::Critical => AuditReport::new("mass-conservation", 0.02, max_drift, 0.0)
            .with("regime", "critical")
            .with("sp", params.sp()),
        Regime::VeryFast => {
            let monotone = masses
                .windows(2)
                .all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9) + 1e-12 * m0);
            let ratio = masses.last().unwrap().1 / m0;
            let mut r = AuditReport::new("mass-decay", 0.5, ratio, 0.0)
                .with("regime", "very fast")
                .with("monotone", monotone);
            r.pass = r.pass && monotone;
            if !monotone {
                r.verdict = "mass not nonincreasing".to_string();
            }
            r
        }
    };
    Ok(report.with("mass_initial", m0).with("mass_final", masses.last().unwrap().1))
}

/// Least envelope amplitude `A` with `u0 ≤ A·r^{-γ}` everywhere
/// (nodes and both tails); `None` when no finite envelope exists.
fn power_envelope(u0: &GridFunction, gamma: f64) -> Option<f64> {
    let grid = u0.grid();
    let nodes = grid.nodes();
    let mut a: f64 = 0.0;
    for (i, &v) in u0.values().iter().enumerate() {
        if !v.is_finite() {
            continue; // governed by the inner tail
        }
        if i == 0 {
            if v > 0.0 {
                // r^{-γ} → ∞ at the origin dominates any finite value
                continue;
            }
            continue;
        }
        a = a.max(v * nodes[i].powf(gamma));
    }
    let tol = 1e-12;
    if let Some(t) = u0.inner_tail() {
        if !t.is_zero() {
            let d = t.exponent + gamma;
            if d < -tol || (d.abs() <= tol && t.log_exponent > 0.0) {
                return None;
            }
            let cap = if d.abs() <= tol {
                t.coefficient
            } else {
                t.coefficient * grid.r1().powf(d)
            };
            a = a.max(cap);
        }
    }
    let t = u0.outer_tail();
    if !t.is_zero() {
        let d = t.exponent + gamma;
        if d > tol || (d.abs() <= tol && t.log_exponent > 0.0) {
            return None;
        }
        let cap = if d.abs() <= tol {
            t.coefficient
        } else {
            t.coefficient * grid.r_max().powf(d)
        };
        a = a.max(cap);
    }
    Some(a)
}

/// Sandwich the measured extinction time between the Morrey lower bound
/// and the separated-variables / L^{q*} upper bounds. A run with no
/// extinction passes exactly when the upper bounds do not force one
/// within the simulated horizon.
pub fn extinction_audit(
    u0: &GridFunction,
    traj: &Trajectory,
    params: &Params,
) -> Result<AuditReport, AuditError> {
    let exps = params.critical_exponents();
    if !matches!(params.classify(), Regime::VeryFast) {
        return Err(AuditError::NotVeryFastRegime {
            p: params.p,
            p_c: exps.p_c,
        });
    }
    let cal = calibration::lookup(params)?;
    let two_mp = 2.0 - params.p;

    // separated-variables comparison bound
    let c = power_map_constant(params, -exps.gamma_star)?;
    let c_inf = (two_mp * c.abs()).powf(1.0 / two_mp);
    let upper_vss =
        power_envelope(u0, exps.gamma_star).map(|a| (a / c_inf).powf(two_mp));

    // L^{q*} bound
    let upper_lq = match u0.lp_norm(exps.q_star) {
        Ok(n) if n.is_finite() => Some(cal.k_lq * n.powf(two_mp)),
        _ => None,
    };

    // Morrey lower bound (unbounded norm ⇒ no extinction at all)
    let lower = match u0.morrey_norm(exps.q_star)? {
        MorreyNorm::Finite(m) => (m / cal.c_morrey).powf(two_mp),
        MorreyNorm::Unbounded => f64::INFINITY,
    };

    let upper = upper_vss
        .unwrap_or(f64::INFINITY)
        .min(upper_lq.unwrap_or(f64::INFINITY));
    let t_end = traj.final_time();
    let tol = 0.05;

    let mut report = match traj.extinction_time {
        Some(t_num) => {
            let mut r = AuditReport::new("extinction-sandwich", upper, t_num, tol);
            if lower.is_infinite() {
                r.pass = false;
                r.verdict = "extinct despite unbounded Morrey norm".to_string();
            } else if t_num < lower * (1.0 - tol) {
                r.pass = false;
                r.verdict = format!("extinction at {t_num} beats lower bound {lower}");
            }
            r.with("t_num", t_num)
        }
        None => {
            let mut r = AuditReport::new("extinction-sandwich", upper, t_end, tol);
            // surviving past the upper bound violates it; surviving a
            // horizon shorter than the bound decides nothing
            r.pass = t_end <= upper * (1.0 + tol);
            r.verdict = if lower.is_infinite() {
                "no extinction observed (consistent: unbounded Morrey norm)".to_string()
            } else {
                "no extinction observed".to_string()
            };
            r
        }
    };
    report = report
        .with("lower_morrey", lower)
        .with(
            "upper_vss",
            upper_vss.map_or("none".to_string(), |v| v.to_string()),
        )
        .with(
            "upper_lq",
            upper_lq.map_or("none".to_string(), |v| v.to_string()),
        )
        .with("c_inf", c_inf)
        .with("t_horizon", t_end);
    Ok(report)
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    sxy / sxx
}

/// Fit the sup-norm decay rate over the final time decade and compare it
/// against the smoothing envelope rate `α = Nβ(q0)`: the measured decay
/// must not be steeper than `α` by more than the slack.
pub fn smoothing_audit(
    traj: &Trajectory,
    q0: f64,
    params: &Params,
) -> Result<AuditReport, AuditError> {
    let exps = params.critical_exponents();
    match params.classify() {
        Regime::Good { .. } => {
            if q0 < 1.0 {
                return Err(AuditError::WrongIntegrability {
                    q0,
                    requirement: "q0 >= 1 for p > p_c".to_string(),
                });
            }
        }
        Regime::Critical | Regime::VeryFast => {
            if q0 <= exps.q_star {
                return Err(AuditError::WrongIntegrability {
                    q0,
                    requirement: format!("q0 > q_star = {} for p <= p_c", exps.q_star),
                });
            }
        }
    }
    let u0 = &traj.snapshots[0].1;
    let norm0 = match u0.lp_norm(q0) {
        Ok(v) if v.is_finite() => v,
        _ => {
            let mut r = AuditReport::new("smoothing", f64::INFINITY, 0.0, 0.0);
            r.verdict = "not-in-lq: data has no finite L^q norm, audit skipped".to_string();
            return Ok(r.with("q0", q0));
        }
    };
    let t_last = traj.final_time();
    let mut pts: Vec<(f64, f64)> = traj
        .snapshots
        .iter()
        .filter(|(t, u)| *t >= t_last / 10.0 && u.finite_scale() > 0.0)
        .map(|(t, u)| (t.ln(), u.finite_scale().ln()))
        .collect();
    if pts.len() < 10 {
        pts = traj
            .snapshots
            .iter()
            .filter(|(t, u)| *t > 0.0 && u.finite_scale() > 0.0)
            .map(|(t, u)| (t.ln(), u.finite_scale().ln()))
            .collect();
    }
    if pts.len() < 10 {
        return Err(AuditError::NonIntegrableData(format!(
            "smoothing fit needs at least 10 positive snapshots, got {}",
            pts.len()
        )));
    }
    let slope = least_squares_slope(&pts);
    let alpha = params.lq_rates(q0).alpha;
    let mu = 1.0 + (2.0 - params.p) * alpha;
    let c_implied = traj
        .snapshots
        .iter()
        .filter(|(t, _)| *t >= t_last / 10.0)
        .map(|(t, u)| u.finite_scale() * t.powf(alpha) / norm0.powf(mu))
        .fold(0.0f64, f64::max);
    Ok(AuditReport::new("smoothing", alpha, -slope, 0.05)
        .with("q0", q0)
        .with("fitted_slope", slope)
        .with("alpha_envelope", alpha)
        .with("c_implied", c_implied)
        .with("fit_points", pts.len()))
}

/// Positivity state of a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub enum Dichotomy {
    Positive,
    Zero,
    /// Neither everywhere-positive nor identically zero; lists the first
    /// offending nodes. For a converged nonnegative run this contradicts
    /// the positivity alternative and is a failure.
    Mixed { nodes: Vec<usize> },
}

/// Classify a snapshot as strictly positive, extinct, or mixed. `tol` is
/// the relative positivity threshold; `initial_scale` anchors the
/// absolute zero test (implicit solves floor small values, so machine
/// epsilon would be the wrong yardstick).
pub fn dichotomy_check(u: &GridFunction, tol: f64, initial_scale: f64) -> Dichotomy {
    let scale = u.finite_scale();
    if scale < 1e-10 * initial_scale {
        return Dichotomy::Zero;
    }
    let mut offending = Vec::new();
    for (i, &v) in u.values().iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        if v <= tol * scale {
            offending.push(i);
            if offending.len() >= 16 {
                break;
            }
        }
    }
    if offending.is_empty() {
        Dichotomy::Positive
    } else {
        Dichotomy::Mixed { nodes: offending }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthVerdict {
    Admissible,
    /// Exactly the critical growth rate (or a log correction too weak to
    /// help): existence fails by instantaneous blow-up.
    Critical,
    Inadmissible,
}

/// Gate initial data by its far-field growth against the critical
/// exponent γ₁: below it is admissible, above it is not, and exactly at
/// it only a strong enough logarithmic correction rescues existence.
pub fn growth_gate(u0: &GridFunction, params: &Params) -> GrowthVerdict {
    let tail = u0.outer_tail();
    if tail.is_zero() {
        return GrowthVerdict::Admissible;
    }
    let g1 = params.critical_exponents().gamma1;
    let tol = 1e-9 * g1.max(1.0);
    if tail.exponent < g1 - tol {
        return GrowthVerdict::Admissible;
    }
    if tail.exponent > g1 + tol {
        return GrowthVerdict::Inadmissible;
    }
    // at the critical exponent: need (log r)^{-μ} with μ > 1/(p-1),
    // i.e. log_exponent strictly below -1/(p-1)
    let cut = -1.0 / (params.p - 1.0);
    if tail.log_exponent < cut - 1e-12 {
        GrowthVerdict::Admissible
    } else {
        GrowthVerdict::Critical
    }
}

/// Power data `a·r^γ` (γ < 0) capped at its value at `cap_radius` and
/// cut to zero beyond `cut_radius`: bounded, compactly supported, with
/// exact zero tails. The building block of the extinction reference
/// family and of decaying test data.
pub fn capped_cut_power(
    grid: &Arc<RadialGrid>,
    a: f64,
    gamma: f64,
    cap_radius: f64,
    cut_radius: f64,
) -> Result<GridFunction, AuditError> {
    assert!(gamma < 0.0 && a > 0.0 && cap_radius < cut_radius);
    let cap = a * cap_radius.powf(gamma);
    Ok(GridFunction::sample_with(
        grid.clone(),
        |r| {
            if r > cut_radius {
                0.0
            } else {
                (a * r.powf(gamma)).min(cap)
            }
        },
        None,
        TailSpec::zero(),
    )?)
}
