//! Geometric radial grids and grid functions with analytic power-law tails.
//!
//! A [`RadialGrid`] holds nodes `r₀ = 0 < r₁ < … < r_M` where `r₁..r_M` are
//! geometrically spaced. A [`GridFunction`] holds node values plus two
//! [`TailSpec`] descriptions: the function is `c·r^γ·ln(e+r)^L` outside the
//! grid — below `r₁` (optional inner tail, allowed to be singular) and above
//! `r_M` (mandatory outer tail, possibly zero). If the inner tail is
//! singular (`γ < 0`) the node value at `r₀ = 0` is the sentinel `+∞`.
//!
//! All integrals are volume integrals over origin-centered balls,
//! `∫_{B_R} u dx = ω_{N-1} ∫₀^R u(r) r^{N-1} dr`, evaluated by trapezoid on
//! the nodes and analytically on the tails.

use crate::quad;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("bad grid specification: {0}")]
    BadSpec(String),
    #[error("inner tail r^{exponent} is not integrable against r^{{N-1}} near 0 (needs exponent > -N{extra})")]
    NonIntegrableSingularity { exponent: f64, extra: String },
    #[error("outer tail r^{exponent} makes the L^{q} norm diverge")]
    TailNotInLq { exponent: f64, q: f64 },
    #[error("sentinel violation: {0}")]
    SentinelViolation(String),
    #[error("grid-function mismatch: {0}")]
    Mismatch(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("parse failure: {0}")]
    Parse(String),
}

/// Power-law (optionally log-corrected) tail `c · r^γ · ln(e+r)^L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSpec {
    pub exponent: f64,
    pub coefficient: f64,
    /// Logarithmic correction exponent `L`; 0 for a pure power. Only outer
    /// tails may carry a nonzero value.
    #[serde(default)]
    pub log_exponent: f64,
}

impl TailSpec {
    pub fn new(exponent: f64, coefficient: f64) -> Self {
        TailSpec {
            exponent,
            coefficient,
            log_exponent: 0.0,
        }
    }

    pub fn zero() -> Self {
        TailSpec::new(0.0, 0.0)
    }

    pub fn with_log(exponent: f64, coefficient: f64, log_exponent: f64) -> Self {
        TailSpec {
            exponent,
            coefficient,
            log_exponent,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coefficient == 0.0
    }

    /// Tail value at radius `r > 0`.
    pub fn value(&self, r: f64) -> f64 {
        if self.coefficient == 0.0 {
            return 0.0;
        }
        let mut v = self.coefficient * r.powf(self.exponent);
        if self.log_exponent != 0.0 {
            v *= (std::f64::consts::E + r).ln().powf(self.log_exponent);
        }
        v
    }

    /// Rescale the coefficient (tails are linear in the coefficient).
    pub fn scaled(&self, factor: f64) -> Self {
        TailSpec {
            exponent: self.exponent,
            coefficient: self.coefficient * factor,
            log_exponent: self.log_exponent,
        }
    }
}

/// Geometric radial grid on `[0, r_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    dim: u32,
}

impl RadialGrid {
    /// Geometric grid with `m` intervals above zero: nodes `r₀ = 0`,
    /// `r₁ = r1` (default `1e-3 · r_max`), …, `r_m = r_max` with constant
    /// ratio. Requires `m >= 16`.
    pub fn geometric(m: usize, r_max: f64, r1: Option<f64>, dim: u32) -> Result<Arc<Self>, GridError> {
        if m < 16 {
            return Err(GridError::BadSpec(format!("m = {m} must be >= 16")));
        }
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(GridError::BadSpec(format!("r_max = {r_max} must be positive")));
        }
        if dim < 1 {
            return Err(GridError::BadSpec("dim must be >= 1".into()));
        }
        let r1 = r1.unwrap_or(1e-3 * r_max);
        if !(r1 > 0.0 && r1 < r_max) {
            return Err(GridError::BadSpec(format!(
                "r1 = {r1} must lie strictly inside (0, r_max = {r_max})"
            )));
        }
        let total = r_max / r1;
        let mut nodes = Vec::with_capacity(m + 1);
        nodes.push(0.0);
        for i in 1..=m {
            let frac = (i - 1) as f64 / (m - 1) as f64;
            nodes.push(r1 * total.powf(frac));
        }
        nodes[m] = r_max;
        nodes[1] = r1;
        Self::from_nodes(nodes, dim)
    }

    /// Build from explicit nodes (used when loading saved functions).
    pub fn from_nodes(nodes: Vec<f64>, dim: u32) -> Result<Arc<Self>, GridError> {
        if nodes.len() < 17 {
            return Err(GridError::BadSpec("need at least 17 nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(GridError::BadSpec("first node must be exactly 0".into()));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(GridError::BadSpec("nodes must be finite and strictly increasing".into()));
            }
        }
        Ok(Arc::new(RadialGrid { nodes, dim }))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of intervals above zero (`nodes().len() - 1`).
    pub fn m(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn r_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn r1(&self) -> f64 {
        self.nodes[1]
    }

    /// Surface area of the unit sphere in this dimension.
    pub fn omega(&self) -> f64 {
        quad::unit_sphere_area(self.dim)
    }

    /// Principal-value half-width at node `i`:
    /// `(r_{i+1} - r_{i-1})/2` in the interior, one-sided at the ends.
    pub fn pv_halfwidth(&self, i: usize) -> f64 {
        let n = &self.nodes;
        if i == 0 {
            0.5 * n[1]
        } else if i == self.m() {
            0.5 * (n[i] - n[i - 1])
        } else {
            0.5 * (n[i + 1] - n[i - 1])
        }
    }

    /// Trapezoid volume weight of node `i`: `∫ f dV ≈ Σ w_i f(r_i)` over
    /// `[0, r_max]` (the inner segment `[0, r₁]` contributes through nodes
    /// 0 and 1).
    pub fn volume_weight(&self, i: usize) -> f64 {
        let n = &self.nodes;
        let omega = self.omega();
        let surf = |r: f64| -> f64 {
            if self.dim == 1 {
                1.0
            } else {
                r.powi(self.dim as i32 - 1)
            }
        };
        let mut w = 0.0;
        if i > 0 {
            w += 0.5 * (n[i] - n[i - 1]) * surf(n[i]);
        }
        if i < self.m() {
            w += 0.5 * (n[i + 1] - n[i]) * surf(n[i]);
        }
        omega * w
    }

    /// Index of the interval `[r_k, r_{k+1}]` containing `r` (clamped).
    fn segment_of(&self, r: f64) -> usize {
        let n = &self.nodes;
        if r <= n[1] {
            return 0;
        }
        if r >= n[self.m()] {
            return self.m() - 1;
        }
        // binary search: first node strictly greater than r, minus one
        let k = n.partition_point(|&x| x <= r);
        k - 1
    }
}

/// How far `integrate` should go.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BallRadius {
    Finite(f64),
    Infinite,
}

/// Result of the Morrey-norm scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MorreyNorm {
    Finite(f64),
    Unbounded,
}

/// A radial function: node values plus analytic tails.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
    inner_tail: Option<TailSpec>,
    outer_tail: TailSpec,
    nonneg: bool,
}

impl GridFunction {
    pub fn new(
        grid: Arc<RadialGrid>,
        values: Vec<f64>,
        inner_tail: Option<TailSpec>,
        outer_tail: TailSpec,
    ) -> Result<Self, GridError> {
        if values.len() != grid.nodes().len() {
            return Err(GridError::Mismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.nodes().len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.is_nan() {
                return Err(GridError::SentinelViolation(format!("NaN at node {i}")));
            }
            if v.is_infinite() && i != 0 {
                return Err(GridError::SentinelViolation(format!(
                    "infinite value at node {i}; the sentinel is only allowed at r = 0"
                )));
            }
        }
        let singular_inner = inner_tail
            .map(|t| t.exponent < 0.0 && t.coefficient != 0.0)
            .unwrap_or(false);
        if singular_inner && values[0] != f64::INFINITY {
            return Err(GridError::SentinelViolation(
                "singular inner tail requires the +inf sentinel at r = 0".into(),
            ));
        }
        if !singular_inner && values[0].is_infinite() {
            return Err(GridError::SentinelViolation(
                "+inf sentinel at r = 0 without a singular inner tail".into(),
            ));
        }
        if let Some(t) = inner_tail {
            if t.log_exponent != 0.0 {
                return Err(GridError::BadSpec(
                    "inner tails do not support log corrections".into(),
                ));
            }
        }
        let nonneg = values.iter().all(|&v| v >= 0.0)
            && outer_tail.coefficient >= 0.0
            && inner_tail.map(|t| t.coefficient >= 0.0).unwrap_or(true);
        Ok(GridFunction {
            grid,
            values,
            inner_tail,
            outer_tail,
            nonneg,
        })
    }

    /// Sample `a·r^γ`. For `γ < 0` this sets a singular inner tail and the
    /// sentinel at the origin; for `γ > 0` a growing outer tail.
    pub fn sample_power(grid: Arc<RadialGrid>, a: f64, gamma: f64) -> Result<Self, GridError> {
        let nodes = grid.nodes().to_vec();
        let mut values: Vec<f64> = nodes.iter().map(|&r| {
            if r == 0.0 {
                if gamma > 0.0 {
                    0.0
                } else if gamma == 0.0 {
                    a
                } else {
                    f64::INFINITY
                }
            } else {
                a * r.powf(gamma)
            }
        }).collect();
        if gamma < 0.0 && a == 0.0 {
            values[0] = 0.0;
        }
        let tail = TailSpec::new(gamma, a);
        let inner = if gamma < 0.0 && a != 0.0 { Some(tail) } else { None };
        Self::new(grid, values, inner, tail)
    }

    /// Sample an arbitrary radial function with explicit tails.
    pub fn sample_with<F: Fn(f64) -> f64>(
        grid: Arc<RadialGrid>,
        f: F,
        inner_tail: Option<TailSpec>,
        outer_tail: TailSpec,
    ) -> Result<Self, GridError> {
        let values = grid.nodes().iter().map(|&r| f(r)).collect();
        Self::new(grid, values, inner_tail, outer_tail)
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn inner_tail(&self) -> Option<TailSpec> {
        self.inner_tail
    }

    pub fn outer_tail(&self) -> TailSpec {
        self.outer_tail
    }

    pub fn nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn has_sentinel(&self) -> bool {
        self.values[0].is_infinite()
    }

    /// Replace tails (revalidates the sentinel convention).
    pub fn with_tails(
        &self,
        inner: Option<TailSpec>,
        outer: TailSpec,
    ) -> Result<Self, GridError> {
        Self::new(self.grid.clone(), self.values.clone(), inner, outer)
    }

    /// Pointwise map of node values (keeps tails; caller must keep them
    /// consistent).
    pub fn map_values<F: Fn(usize, f64) -> f64>(&self, f: F) -> Result<Self, GridError> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if v.is_infinite() { v } else { f(i, v) })
            .collect();
        Self::new(self.grid.clone(), values, self.inner_tail, self.outer_tail)
    }

    /// Multiply by a nonnegative scalar (tails scale linearly).
    pub fn scaled(&self, factor: f64) -> Result<Self, GridError> {
        if factor == 0.0 {
            let values = vec![0.0; self.values.len()];
            return Self::new(self.grid.clone(), values, None, TailSpec::zero());
        }
        let values = self
            .values
            .iter()
            .map(|&v| if v.is_infinite() { v } else { v * factor })
            .collect();
        Self::new(
            self.grid.clone(),
            values,
            self.inner_tail.map(|t| t.scaled(factor)),
            self.outer_tail.scaled(factor),
        )
    }

    /// Difference `self - other`; requires identical grids and compatible
    /// tails (equal exponents, or one side zero).
    pub fn try_sub(&self, other: &GridFunction) -> Result<Self, GridError> {
        if self.grid.nodes() != other.grid.nodes() || self.grid.dim() != other.grid.dim() {
            return Err(GridError::Mismatch("different grids".into()));
        }
        if self.has_sentinel() || other.has_sentinel() {
            return Err(GridError::Mismatch("cannot subtract singular functions".into()));
        }
        let sub_tail = |a: TailSpec, b: TailSpec| -> Result<TailSpec, GridError> {
            if b.is_zero() {
                return Ok(a);
            }
            if a.is_zero() {
                return Ok(b.scaled(-1.0));
            }
            if a.exponent == b.exponent && a.log_exponent == b.log_exponent {
                return Ok(TailSpec::with_log(
                    a.exponent,
                    a.coefficient - b.coefficient,
                    a.log_exponent,
                ));
            }
            Err(GridError::Mismatch("incompatible tail exponents".into()))
        };
        let outer = sub_tail(self.outer_tail, other.outer_tail)?;
        let inner = match (self.inner_tail, other.inner_tail) {
            (None, None) => None,
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b.scaled(-1.0)),
            (Some(a), Some(b)) => Some(sub_tail(a, b)?),
        };
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Self::new(self.grid.clone(), values, inner, outer)
    }

    /// Evaluate at an arbitrary radius: tails outside the grid, log-log
    /// interpolation between nodes for positive data (linear fallback).
    pub fn eval(&self, r: f64) -> f64 {
        let n = self.grid.nodes();
        let m = self.grid.m();
        if r <= 0.0 {
            return self.values[0];
        }
        if r < n[1] {
            if let Some(t) = self.inner_tail {
                if !t.is_zero() {
                    return t.value(r);
                }
            }
            // linear between the origin value and the first node
            let a = if self.values[0].is_infinite() { self.values[1] } else { self.values[0] };
            return a + (self.values[1] - a) * r / n[1];
        }
        if r > n[m] {
            return self.outer_tail.value(r);
        }
        let k = self.grid.segment_of(r).max(1);
        let (r0, r1) = (n[k], n[k + 1]);
        let (v0, v1) = (self.values[k], self.values[k + 1]);
        if v0 > 0.0 && v1 > 0.0 {
            let t = (r.ln() - r0.ln()) / (r1.ln() - r0.ln());
            (v0.ln() + t * (v1.ln() - v0.ln())).exp()
        } else {
            let t = (r - r0) / (r1 - r0);
            v0 + t * (v1 - v0)
        }
    }

    /// Supremum norm including tails; `+∞` for singular or growing data.
    pub fn sup_norm(&self) -> f64 {
        let mut sup: f64 = 0.0;
        for &v in &self.values {
            if v.is_infinite() {
                return f64::INFINITY;
            }
            sup = sup.max(v.abs());
        }
        let ot = self.outer_tail;
        if !ot.is_zero() {
            if ot.exponent > 0.0 || (ot.exponent == 0.0 && ot.log_exponent > 0.0) {
                return f64::INFINITY;
            }
            sup = sup.max(ot.value(self.grid.r_max()).abs());
        }
        if let Some(it) = self.inner_tail {
            if !it.is_zero() {
                sup = sup.max(it.value(self.grid.r1()).abs());
            }
        }
        sup
    }

    /// Largest finite node magnitude (ignores the sentinel); used as a
    /// reference scale by steppers and extinction thresholds.
    pub fn finite_scale(&self) -> f64 {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    fn surf(&self, r: f64) -> f64 {
        if self.grid.dim() == 1 {
            1.0
        } else {
            r.powi(self.grid.dim() as i32 - 1)
        }
    }

    /// Analytic volume integral of the inner tail over `[0, r₁]` for the
    /// integrand `|c r^γ|^pow` (signed when `pow == 1`).
    fn inner_tail_ball(&self, pow: f64) -> Result<f64, GridError> {
        let t = match self.inner_tail {
            Some(t) if !t.is_zero() => t,
            _ => return Ok(0.0),
        };
        let n = self.grid.dim() as f64;
        let e = t.exponent * pow + n;
        if e <= 0.0 {
            return Err(GridError::NonIntegrableSingularity {
                exponent: t.exponent,
                extra: if pow == 1.0 {
                    String::new()
                } else {
                    format!("/{pow}")
                },
            });
        }
        let amp = if pow == 1.0 {
            t.coefficient
        } else {
            t.coefficient.abs().powf(pow)
        };
        Ok(self.grid.omega() * amp * self.grid.r1().powf(e) / e)
    }

    /// Analytic volume integral of the outer tail (integrand
    /// `|c r^γ ln^L|^pow`) from `r_max` to `upto` (or ∞).
    fn outer_tail_ball(&self, pow: f64, upto: BallRadius) -> Result<f64, GridError> {
        let t = self.outer_tail;
        if t.is_zero() {
            return Ok(0.0);
        }
        let n = self.grid.dim() as f64;
        let from = self.grid.r_max();
        let e = t.exponent * pow + n; // d/dr exponent + 1
        let l = t.log_exponent * pow;
        let amp = if pow == 1.0 {
            t.coefficient
        } else {
            t.coefficient.abs().powf(pow)
        } * self.grid.omega();
        match upto {
            BallRadius::Finite(rr) => {
                if rr <= from {
                    return Ok(0.0);
                }
                if l == 0.0 {
                    if e.abs() < 1e-14 {
                        Ok(amp * (rr / from).ln())
                    } else {
                        Ok(amp * (rr.powf(e) - from.powf(e)) / e)
                    }
                } else {
                    // log-corrected: geometric panels, 16-pt Gauss
                    let panels = 64usize;
                    let ratio = (rr / from).powf(1.0 / panels as f64);
                    let mut acc = 0.0;
                    let mut a = from;
                    for _ in 0..panels {
                        let b = a * ratio;
                        acc += quad::gauss16(
                            |rho| {
                                rho.powf(t.exponent * pow + n - 1.0)
                                    * (std::f64::consts::E + rho).ln().powf(l)
                            },
                            a,
                            b,
                        );
                        a = b;
                    }
                    Ok(amp * acc)
                }
            }
            BallRadius::Infinite => {
                if l == 0.0 {
                    if e >= 0.0 {
                        return Err(GridError::TailNotInLq {
                            exponent: t.exponent,
                            q: pow,
                        });
                    }
                    Ok(amp * from.powf(e) / (-e))
                } else if e < -1e-10 {
                    // dyadic blocks with geometric remainder extrapolation
                    let mut acc = 0.0;
                    let mut a = from;
                    let mut last = 0.0;
                    let mut prev = f64::NAN;
                    for _ in 0..40 {
                        let b = 2.0 * a;
                        last = quad::gauss16(
                            |rho| {
                                rho.powf(t.exponent * pow + n - 1.0)
                                    * (std::f64::consts::E + rho).ln().powf(l)
                            },
                            a,
                            b,
                        );
                        acc += last;
                        if !prev.is_nan() && prev != 0.0 {
                            let q = last / prev;
                            if q >= 0.995 {
                                return Err(GridError::TailNotInLq {
                                    exponent: t.exponent,
                                    q: pow,
                                });
                            }
                        }
                        prev = last;
                        a = b;
                    }
                    let q = 2.0f64.powf(e); // asymptotic block ratio
                    acc += last * q / (1.0 - q);
                    Ok(amp * acc)
                } else if e.abs() <= 1e-10 {
                    // marginal power with log correction: closed form in
                    // t = ln(e + ρ), convergent only for L·pow < -1.
                    if l >= -1.0 {
                        return Err(GridError::TailNotInLq {
                            exponent: t.exponent,
                            q: pow,
                        });
                    }
                    let lx = (std::f64::consts::E + from).ln();
                    Ok(amp * lx.powf(l + 1.0) / (-(l + 1.0)))
                } else {
                    Err(GridError::TailNotInLq {
                        exponent: t.exponent,
                        q: pow,
                    })
                }
            }
        }
    }

    /// Node-part trapezoid sum of `f(u(r))·ω r^{N-1}` over `[r₁, min(R, r_max)]`
    /// plus the inner segment `[0, r₁]` when no inner tail is present.
    fn grid_ball_integral<F: Fn(f64) -> f64>(&self, f: &F, upto: f64) -> f64 {
        let n = self.grid.nodes();
        let m = self.grid.m();
        let omega = self.grid.omega();
        let mut acc = 0.0;
        // inner segment [0, r1]
        if self.inner_tail.map(|t| t.is_zero()).unwrap_or(true) && upto > 0.0 {
            let hi = upto.min(n[1]);
            let u0 = if self.values[0].is_infinite() { 0.0 } else { f(self.values[0]) };
            let f0 = u0 * self.surf(0.0);
            // value at hi by linear interpolation of u
            let uhi = f(self.eval(hi));
            let fhi = uhi * self.surf(hi);
            acc += 0.5 * (f0 + fhi) * hi;
            if upto <= n[1] {
                return omega * acc;
            }
        }
        for k in 1..m {
            if upto <= n[k] {
                break;
            }
            let hi = upto.min(n[k + 1]);
            let fa = f(self.values[k]) * self.surf(n[k]);
            let fb = if hi == n[k + 1] {
                f(self.values[k + 1]) * self.surf(n[k + 1])
            } else {
                f(self.eval(hi)) * self.surf(hi)
            };
            acc += 0.5 * (fa + fb) * (hi - n[k]);
        }
        omega * acc
    }

    /// Volume integral `∫_{B_R} u dx`; `R = Infinite` integrates the outer
    /// tail and requires it to be integrable.
    pub fn integrate(&self, radius: BallRadius) -> Result<f64, GridError> {
        let mut acc = self.inner_tail_ball(1.0)?;
        match radius {
            BallRadius::Finite(rr) => {
                if rr < 0.0 {
                    return Err(GridError::BadSpec("negative ball radius".into()));
                }
                acc += self.grid_ball_integral(&|u| u, rr);
                acc += self.outer_tail_ball(1.0, BallRadius::Finite(rr))?;
            }
            BallRadius::Infinite => {
                acc += self.grid_ball_integral(&|u| u, self.grid.r_max());
                acc += self.outer_tail_ball(1.0, BallRadius::Infinite)?;
            }
        }
        Ok(acc)
    }

    /// L^q norm over ℝ^N (tails included); errors when a tail fails to be
    /// q-integrable.
    pub fn lp_norm(&self, q: f64) -> Result<f64, GridError> {
        if !(q >= 1.0) {
            return Err(GridError::BadSpec(format!("q = {q} must be >= 1")));
        }
        let mut acc = self.inner_tail_ball(q)?;
        acc += self.grid_ball_integral(&|u| u.abs().powf(q), self.grid.r_max());
        acc += self.outer_tail_ball(q, BallRadius::Infinite)?;
        Ok(acc.powf(1.0 / q))
    }

    /// Morrey functional `sup_{R>0} R^{N/q - N} ∫_{B_R} |u| dx` over
    /// origin-centered balls. Boundedness at the ends is decided from the
    /// analytic tail exponents; the finite part is scanned on node radii and
    /// 20 dyadic extensions of `r_max`.
    pub fn morrey_norm(&self, q: f64) -> Result<MorreyNorm, GridError> {
        if !(q >= 1.0) {
            return Err(GridError::BadSpec(format!("q = {q} must be >= 1")));
        }
        let n = self.grid.dim() as f64;
        let marg = -n / q; // marginal power exponent
        let tol = 1e-12;
        if let Some(t) = self.inner_tail {
            if !t.is_zero() {
                if t.exponent + n <= 1e-14 {
                    return Err(GridError::NonIntegrableSingularity {
                        exponent: t.exponent,
                        extra: String::new(),
                    });
                }
                if t.exponent < marg - tol {
                    return Ok(MorreyNorm::Unbounded);
                }
            }
        }
        let ot = self.outer_tail;
        if !ot.is_zero() {
            if ot.exponent > marg + tol
                || ((ot.exponent - marg).abs() <= tol && ot.log_exponent > 0.0)
            {
                return Ok(MorreyNorm::Unbounded);
            }
        }
        // finite scan
        let nodes = self.grid.nodes();
        let m = self.grid.m();
        let mut sup: f64 = 0.0;
        // cumulative |u| mass at node radii
        let mut cum = match self.inner_tail {
            Some(t) if !t.is_zero() => {
                // |c| r^γ with γ + N > 0 checked above
                let e = t.exponent + n;
                self.grid.omega() * t.coefficient.abs() * self.grid.r1().powf(e) / e
            }
            _ => {
                let u0 = if self.values[0].is_infinite() { 0.0 } else { self.values[0].abs() };
                let f0 = u0 * self.surf(0.0);
                let f1 = self.values[1].abs() * self.surf(nodes[1]);
                self.grid.omega() * 0.5 * (f0 + f1) * nodes[1]
            }
        };
        let weight = |r: f64| r.powf(n / q - n);
        sup = sup.max(weight(nodes[1]) * cum);
        for k in 1..m {
            let fa = self.values[k].abs() * self.surf(nodes[k]);
            let fb = self.values[k + 1].abs() * self.surf(nodes[k + 1]);
            cum += self.grid.omega() * 0.5 * (fa + fb) * (nodes[k + 1] - nodes[k]);
            sup = sup.max(weight(nodes[k + 1]) * cum);
        }
        // dyadic extension with analytic outer mass
        if !ot.is_zero() {
            let mut rr = self.grid.r_max();
            for _ in 0..20 {
                rr *= 2.0;
                let extra = {
                    // |tail| mass between r_max and rr
                    let t_abs = TailSpec::with_log(ot.exponent, ot.coefficient.abs(), ot.log_exponent);
                    let probe = GridFunction {
                        grid: self.grid.clone(),
                        values: vec![0.0; self.values.len()],
                        inner_tail: None,
                        outer_tail: t_abs,
                        nonneg: true,
                    };
                    probe.outer_tail_ball(1.0, BallRadius::Finite(rr))?
                };
                sup = sup.max(weight(rr) * (cum + extra));
            }
            // marginal outer tail: include the asymptotic limit value
            if (ot.exponent - marg).abs() <= tol && ot.log_exponent <= 0.0 {
                let e = ot.exponent + n;
                sup = sup.max(self.grid.omega() * ot.coefficient.abs() / e);
            }
        }
        Ok(MorreyNorm::Finite(sup))
    }

    /// Write `stem.csv` (r,value rows, shortest round-trip formatting) and
    /// `stem.json` (grid metadata and tails).
    pub fn save(&self, stem: &Path) -> Result<(), GridError> {
        use std::io::Write;
        let csv_path = stem.with_extension("csv");
        let json_path = stem.with_extension("json");
        let mut out = String::with_capacity(self.values.len() * 32);
        out.push_str("r,value\n");
        for (r, v) in self.grid.nodes().iter().zip(self.values.iter()) {
            out.push_str(&format!("{},{}\n", r, v));
        }
        std::fs::File::create(&csv_path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| GridError::Io(format!("{}: {e}", csv_path.display())))?;
        let meta = FunctionMeta {
            dim: self.grid.dim(),
            inner_tail: self.inner_tail,
            outer_tail: self.outer_tail,
        };
        let text = serde_json::to_string_pretty(&meta)
            .map_err(|e| GridError::Io(e.to_string()))?;
        std::fs::write(&json_path, text)
            .map_err(|e| GridError::Io(format!("{}: {e}", json_path.display())))?;
        Ok(())
    }

    /// Load a function saved by [`GridFunction::save`]; bit-exact.
    pub fn load(stem: &Path) -> Result<Self, GridError> {
        let csv_path = stem.with_extension("csv");
        let json_path = stem.with_extension("json");
        let text = std::fs::read_to_string(&csv_path)
            .map_err(|e| GridError::Io(format!("{}: {e}", csv_path.display())))?;
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if ln == 0 {
                if line.trim() != "r,value" {
                    return Err(GridError::Parse(format!("bad header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ',');
            let r: f64 = parts
                .next()
                .and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| GridError::Parse(format!("line {}: {line:?}", ln + 1)))?;
            let v: f64 = parts
                .next()
                .and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| GridError::Parse(format!("line {}: {line:?}", ln + 1)))?;
            nodes.push(r);
            values.push(v);
        }
        let meta_text = std::fs::read_to_string(&json_path)
            .map_err(|e| GridError::Io(format!("{}: {e}", json_path.display())))?;
        let meta: FunctionMeta =
            serde_json::from_str(&meta_text).map_err(|e| GridError::Parse(e.to_string()))?;
        let grid = RadialGrid::from_nodes(nodes, meta.dim)?;
        GridFunction::new(grid, values, meta.inner_tail, meta.outer_tail)
    }
}

#[derive(Serialize, Deserialize)]
struct FunctionMeta {
    dim: u32,
    inner_tail: Option<TailSpec>,
    outer_tail: TailSpec,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(m: usize, r_max: f64, dim: u32) -> Arc<RadialGrid> {
        RadialGrid::geometric(m, r_max, None, dim).unwrap()
    }

    #[test]
    fn geometric_grid_shape() {
        let g = grid(128, 50.0, 2);
        let n = g.nodes();
        assert_eq!(n.len(), 129);
        assert_eq!(n[0], 0.0);
        assert_relative_eq!(n[1], 0.05, max_relative = 1e-15);
        assert_eq!(n[128], 50.0);
        // constant ratio
        let q0 = n[2] / n[1];
        for k in 2..127 {
            assert_relative_eq!(n[k + 1] / n[k], q0, max_relative = 1e-10);
        }
        assert!(RadialGrid::geometric(8, 50.0, None, 2).is_err());
    }

    #[test]
    fn constant_function_integrates_to_ball_volume() {
        // exact for N = 1, 2 (trapezoid exact on linear integrands)
        for dim in [1u32, 2] {
            let g = grid(256, 10.0, dim);
            let u = GridFunction::sample_power(g.clone(), 3.0, 0.0).unwrap();
            let n = dim as f64;
            for rr in [0.5f64, 1.0, 7.3, 10.0] {
                let exact = 3.0 * g.omega() * rr.powf(n) / n;
                let got = u.integrate(BallRadius::Finite(rr)).unwrap();
                assert_relative_eq!(got, exact, max_relative = 1e-12);
            }
        }
        // N = 3: second-order accurate
        let g = grid(512, 10.0, 3);
        let u = GridFunction::sample_power(g.clone(), 1.0, 0.0).unwrap();
        let exact = g.omega() * 1000.0 / 3.0;
        let got = u.integrate(BallRadius::Finite(10.0)).unwrap();
        assert_relative_eq!(got, exact, max_relative = 1e-4);
    }

    #[test]
    fn singular_power_integral_matches_closed_form() {
        // u = r^{-1/2} in N = 1: ∫_{B_R} u = 2·2√R
        let g = grid(512, 100.0, 1);
        let u = GridFunction::sample_power(g.clone(), 1.0, -0.5).unwrap();
        assert!(u.has_sentinel());
        for rr in [0.5f64, 1.0, 30.0] {
            let exact = 4.0 * rr.sqrt();
            let got = u.integrate(BallRadius::Finite(rr)).unwrap();
            assert_relative_eq!(got, exact, max_relative = 2e-4);
        }
        // decaying enough for the full-space integral? γ = -1/2 > -N = -1: no
        assert!(matches!(
            u.integrate(BallRadius::Infinite),
            Err(GridError::TailNotInLq { .. })
        ));
        // a steeper tail converges: γ = -2 < -1
        let v = GridFunction::sample_with(
            g.clone(),
            |r| if r == 0.0 { 1.0 } else { (1.0 + r * r).powf(-1.0) },
            None,
            TailSpec::new(-2.0, 1.0),
        )
        .unwrap();
        // ∫_ℝ (1+r²)^{-1} dr = π
        let got = v.integrate(BallRadius::Infinite).unwrap();
        assert_relative_eq!(got, std::f64::consts::PI, max_relative = 1e-3);
    }

    #[test]
    fn non_integrable_inner_tail_is_rejected() {
        let g = grid(128, 10.0, 1);
        let u = GridFunction::sample_power(g, 2.0, -1.2).unwrap();
        assert!(matches!(
            u.integrate(BallRadius::Finite(5.0)),
            Err(GridError::NonIntegrableSingularity { .. })
        ));
    }

    #[test]
    fn lp_norm_gates_and_values() {
        let g = grid(512, 100.0, 1);
        let u = GridFunction::sample_power(g.clone(), 1.0, -0.5).unwrap();
        // q = 4: inner 0.5·4 = 2 > N fails near zero
        assert!(matches!(
            u.lp_norm(4.0),
            Err(GridError::NonIntegrableSingularity { .. })
        ));
        // q = 1.5: outer exponent -0.75 > -1 diverges at infinity
        assert!(matches!(
            u.lp_norm(1.5),
            Err(GridError::TailNotInLq { .. })
        ));
        // compact bump: all norms finite; compare L² of 1_{r<1} in N=1
        let v = GridFunction::sample_with(
            g.clone(),
            |r| if r <= 1.0 { 1.0 } else { 0.0 },
            None,
            TailSpec::zero(),
        )
        .unwrap();
        let l2 = v.lp_norm(2.0).unwrap();
        assert_relative_eq!(l2, 2.0f64.sqrt(), max_relative = 2e-2);
    }

    #[test]
    fn morrey_marginal_power_is_flat() {
        // N=1, q=2: u = r^{-1/2} is exactly marginal; the functional is the
        // constant ω |c| / (N - N/q) = 2/(1/2) = 4.
        let g = grid(512, 100.0, 1);
        let u = GridFunction::sample_power(g.clone(), 1.0, -0.5).unwrap();
        match u.morrey_norm(2.0).unwrap() {
            MorreyNorm::Finite(v) => assert_relative_eq!(v, 4.0, max_relative = 1e-3),
            MorreyNorm::Unbounded => panic!("marginal power must be bounded"),
        }
        // shallower decay: unbounded at infinity
        let v = GridFunction::sample_power(g.clone(), 1.0, -0.4).unwrap();
        assert_eq!(v.morrey_norm(2.0).unwrap(), MorreyNorm::Unbounded);
        // steeper singularity: unbounded at zero
        let w = GridFunction::sample_power(g.clone(), 1.0, -0.6).unwrap();
        assert_eq!(w.morrey_norm(2.0).unwrap(), MorreyNorm::Unbounded);
        // compact data: finite
        let b = GridFunction::sample_with(
            g,
            |r| (-r * r).exp(),
            None,
            TailSpec::zero(),
        )
        .unwrap();
        assert!(matches!(b.morrey_norm(2.0).unwrap(), MorreyNorm::Finite(_)));
    }

    #[test]
    fn sentinel_conventions_are_enforced() {
        let g = grid(128, 10.0, 1);
        // singular inner tail without sentinel
        let vals = vec![1.0; 129];
        let r = GridFunction::new(
            g.clone(),
            vals,
            Some(TailSpec::new(-0.5, 1.0)),
            TailSpec::zero(),
        );
        assert!(matches!(r, Err(GridError::SentinelViolation(_))));
        // sentinel without singular inner tail
        let mut vals = vec![1.0; 129];
        vals[0] = f64::INFINITY;
        let r = GridFunction::new(g.clone(), vals, None, TailSpec::zero());
        assert!(matches!(r, Err(GridError::SentinelViolation(_))));
        // infinity away from the origin is always rejected
        let mut vals = vec![1.0; 129];
        vals[64] = f64::INFINITY;
        let r = GridFunction::new(g, vals, None, TailSpec::zero());
        assert!(matches!(r, Err(GridError::SentinelViolation(_))));
    }

    #[test]
    fn eval_interpolates_powers_well() {
        let g = grid(256, 100.0, 2);
        let u = GridFunction::sample_power(g, 2.0, 0.75).unwrap();
        for r in [0.31, 1.7, 9.9, 55.0] {
            assert_relative_eq!(u.eval(r), 2.0 * r.powf(0.75), max_relative = 1e-10);
        }
        // outside the grid: tails
        assert_relative_eq!(u.eval(400.0), 2.0 * 400f64.powf(0.75), max_relative = 1e-12);
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid(64, 10.0, 2);
        let u = GridFunction::sample_with(
            g,
            |r| (1.0 + r / 3.0).recip() * 0.1 + r.sin() * 1e-7,
            None,
            TailSpec::new(-2.5, 0.123456789123456789),
        )
        .unwrap();
        let stem = dir.path().join("field");
        u.save(&stem).unwrap();
        let v = GridFunction::load(&stem).unwrap();
        assert_eq!(u.grid.dim(), v.grid.dim());
        for (a, b) in u.grid.nodes().iter().zip(v.grid.nodes().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in u.values.iter().zip(v.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(u.outer_tail, v.outer_tail);
        assert_eq!(u.inner_tail, v.inner_tail);
    }

    #[test]
    fn sub_and_scale_respect_tails() {
        let g = grid(64, 10.0, 1);
        let u = GridFunction::sample_power(g.clone(), 3.0, 0.5).unwrap();
        let v = GridFunction::sample_power(g.clone(), 1.0, 0.5).unwrap();
        let d = u.try_sub(&v).unwrap();
        assert_relative_eq!(d.outer_tail().coefficient, 2.0, max_relative = 1e-15);
        assert_relative_eq!(d.eval(2.0), 2.0 * 2f64.powf(0.5), max_relative = 1e-12);
        let w = GridFunction::sample_power(g, 1.0, 0.25).unwrap();
        assert!(u.try_sub(&w).is_err());
        let s = u.scaled(0.5).unwrap();
        assert_relative_eq!(s.outer_tail().coefficient, 1.5, max_relative = 1e-15);
    }

    #[test]
    fn volume_weights_sum_to_ball_volume() {
        for dim in [1u32, 2, 3] {
            let g = grid(if dim <= 2 { 256 } else { 768 }, 5.0, dim);
            let total: f64 = (0..=g.m()).map(|i| g.volume_weight(i)).sum();
            let n = dim as f64;
            let exact = g.omega() * 5.0f64.powf(n) / n;
            // trapezoid of r^{N-1}: exact for N <= 2, second order in the
            // mesh ratio for N = 3
            let tol = if dim <= 2 { 1e-12 } else { 1e-4 };
            assert_relative_eq!(total, exact, max_relative = tol);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn integrate_monotone_in_radius(gamma in -0.9f64..2.0, a in 0.1f64..10.0) {
                let g = grid(64, 10.0, 1);
                let u = GridFunction::sample_power(g, a, gamma).unwrap();
                let mut last = 0.0;
                for rr in [0.1, 1.0, 5.0, 10.0, 20.0] {
                    let v = u.integrate(BallRadius::Finite(rr)).unwrap();
                    prop_assert!(v >= last - 1e-12);
                    last = v;
                }
            }

            #[test]
            fn scaling_is_linear_in_amplitude(gamma in -0.5f64..1.5, a in 0.1f64..4.0) {
                let g = grid(64, 10.0, 2);
                let u = GridFunction::sample_power(g.clone(), a, gamma).unwrap();
                let w = GridFunction::sample_power(g, 2.0 * a, gamma).unwrap();
                let iu = u.integrate(BallRadius::Finite(8.0)).unwrap();
                let iw = w.integrate(BallRadius::Finite(8.0)).unwrap();
                prop_assert!((iw - 2.0 * iu).abs() <= 1e-10 * iw.abs().max(1.0));
            }
        }
    }
}
