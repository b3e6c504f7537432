//! Implicit Euler step as a proximal solve.
//!
//! One backward step of size `h` from `u` minimizes the strictly convex
//! functional
//!
//! ```text
//! J_h(v) = ½ Σᵢ mᵢ (vᵢ-uᵢ)²  +  (h/p) [ Σ_{i<j} W_ij |vᵢ-vⱼ|^p
//!          + Σᵢ Σ_k mᵢ w_{ik} |vᵢ-θ_{ik}|^p ],
//! ```
//!
//! where `mᵢ` are radial volume weights, `W_ij` symmetrized
//! kernel-quadrature pair weights, and the `θ` terms freeze the tail
//! regions at the values induced by `u`. Since `1 < p < 2` the Hessian of
//! `|z|^p` blows up at coincidence, so Newton runs on the regularization
//! `(z²+ε²)^{p/2}` with continuation `ε → 0`, followed by a polish on the
//! true gradient; the convergence certificate is the unregularized
//! first-order residual.

use crate::grid::GridFunction;
use crate::operator::{signed_power, KernelTable};
use crate::params::Params;
use nalgebra::{Cholesky, DMatrix, DVector};

use super::StepError;

#[derive(Debug, Clone, Copy)]
pub struct ProxConfig {
    /// Initial regularization width in solution units; 0 selects
    /// `1e-2 × sup|u|` automatically.
    pub epsilon0: f64,
    /// Multiplicative shrink of ε per continuation stage.
    pub continuation_factor: f64,
    /// Relative tolerance of the final (unregularized) residual.
    pub newton_tol: f64,
    /// Newton iteration budget across all stages.
    pub max_iters: u32,
}

impl Default for ProxConfig {
    fn default() -> Self {
        ProxConfig {
            epsilon0: 0.0,
            continuation_factor: 0.1,
            newton_tol: 1e-10,
            max_iters: 2000,
        }
    }
}

/// Result of one proximal solve.
#[derive(Debug, Clone)]
pub struct ProxSolution {
    pub u: GridFunction,
    pub iterations: u32,
    /// Final unregularized residual `max_i |∇J_h(v)_i| / m_i`, after
    /// subtracting the rounding floor of the gradient evaluation.
    pub residual: f64,
}

/// Discrete pair system shared by the resolvent, the energy functional,
/// and the orbit precondition check.
struct PairSystem {
    /// DOF node indices (positive volume weight, finite value).
    dofs: Vec<usize>,
    /// Volume weight per DOF.
    mass: Vec<f64>,
    /// (a, b, weight) with a < b indices into `dofs`.
    pairs: Vec<(usize, usize, f64)>,
    /// Frozen terms per DOF: (weight, frozen value); weight includes mᵢ.
    frozen: Vec<Vec<(f64, f64)>>,
}

fn build_system(u: &GridFunction, table: &KernelTable) -> PairSystem {
    let grid = u.grid();
    let m = grid.m();
    let vals = u.values();
    let dofs: Vec<usize> = (0..=m)
        .filter(|&i| grid.volume_weight(i) > 0.0 && vals[i].is_finite())
        .collect();
    let mut index = vec![usize::MAX; m + 1];
    for (k, &i) in dofs.iter().enumerate() {
        index[i] = k;
    }
    let mass: Vec<f64> = dofs.iter().map(|&i| grid.volume_weight(i)).collect();

    let mut pairs = Vec::new();
    for (ka, &i) in dofs.iter().enumerate() {
        for &j in dofs.iter().skip(ka + 1) {
            let kb = index[j];
            let w = 0.5
                * (mass[ka] * table.quadrature_weight(i, j) * table.entry(i, j)
                    + mass[kb] * table.quadrature_weight(j, i) * table.entry(j, i));
            if w > 0.0 {
                pairs.push((ka, kb, w));
            }
        }
    }

    // frozen interactions: tail regions, and (for singular data) the value
    // closure below r1 induced by u at solve start
    let inner_tail = u.inner_tail().filter(|t| !t.is_zero());
    let r1 = grid.r1();
    let inner_value = |rho: f64| -> f64 {
        match inner_tail {
            Some(t) => t.value(rho),
            None => {
                let v0 = if vals[0].is_finite() { vals[0] } else { 0.0 };
                v0 + (vals[1] - v0) * rho / r1
            }
        }
    };
    let outer = u.outer_tail();
    let frozen = dofs
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut terms = Vec::new();
            for pt in table.inner_points(i) {
                if pt.wj > 0.0 {
                    terms.push((mass[k] * pt.wj, inner_value(pt.rho)));
                }
            }
            for pt in table.outer_points(i) {
                if pt.wj > 0.0 {
                    terms.push((mass[k] * pt.wj, outer.value(pt.rho)));
                }
            }
            terms
        })
        .collect();

    PairSystem {
        dofs,
        mass,
        pairs,
        frozen,
    }
}

/// Regularized signed power and its (positive) derivative.
#[inline]
fn phi_eps(z: f64, eps: f64, p: f64) -> f64 {
    z * (z * z + eps * eps).powf(0.5 * (p - 2.0))
}

#[inline]
fn psi_eps(z: f64, eps: f64, p: f64) -> f64 {
    let q = z * z + eps * eps;
    q.powf(0.5 * (p - 4.0)) * ((p - 1.0) * z * z + eps * eps)
}

impl PairSystem {
    fn n(&self) -> usize {
        self.dofs.len()
    }

    /// `(h/p)`-free Gagliardo part `Σ W|Δv|^p + frozen terms`.
    fn gagliardo(&self, v: &[f64], p: f64) -> f64 {
        let mut e = 0.0;
        for &(a, b, w) in &self.pairs {
            e += w * (v[a] - v[b]).abs().powf(p);
        }
        for (a, terms) in self.frozen.iter().enumerate() {
            for &(w, theta) in terms {
                e += w * (v[a] - theta).abs().powf(p);
            }
        }
        e
    }

    fn energy(&self, v: &[f64], u: &[f64], h: f64, p: f64, eps: f64) -> f64 {
        let mut e = 0.0;
        for a in 0..self.n() {
            let d = v[a] - u[a];
            e += 0.5 * self.mass[a] * d * d;
        }
        let reg = |z: f64| (z * z + eps * eps).powf(0.5 * p);
        let mut g = 0.0;
        for &(a, b, w) in &self.pairs {
            g += w * reg(v[a] - v[b]);
        }
        for (a, terms) in self.frozen.iter().enumerate() {
            for &(w, theta) in terms {
                g += w * reg(v[a] - theta);
            }
        }
        e + h / p * g
    }

    /// Gradient of the (possibly regularized) energy; `eps = 0` gives the
    /// true subgradient selection with `Φ_p`. Alongside the gradient it
    /// accumulates, per DOF, the sum of the absolute values of all
    /// contributions — the scale against which rounding noise in the
    /// cancellation is measured.
    fn gradient(
        &self,
        v: &[f64],
        u: &[f64],
        h: f64,
        p: f64,
        eps: f64,
        out: &mut [f64],
        noise: &mut [f64],
    ) {
        for a in 0..self.n() {
            out[a] = self.mass[a] * (v[a] - u[a]);
            noise[a] = self.mass[a] * (v[a].abs() + u[a].abs());
        }
        let phi = |z: f64| {
            if eps > 0.0 {
                phi_eps(z, eps, p)
            } else {
                signed_power(z, p - 1.0)
            }
        };
        for &(a, b, w) in &self.pairs {
            let f = h * w * phi(v[a] - v[b]);
            out[a] += f;
            out[b] -= f;
            let fa = f.abs();
            noise[a] += fa;
            noise[b] += fa;
        }
        for (a, terms) in self.frozen.iter().enumerate() {
            for &(w, theta) in terms {
                let f = h * w * phi(v[a] - theta);
                out[a] += f;
                noise[a] += f.abs();
            }
        }
    }

    /// Max-norm residual scaled per-DOF by the volume weight, minus the
    /// double-precision floor of the gradient accumulation. The gradient
    /// at the minimizer is a cancellation of terms of combined magnitude
    /// `noise[i]`; dividing by a small volume weight amplifies that
    /// rounding debris, so the raw residual can sit permanently above a
    /// tight tolerance. Subtracting the attainable floor keeps the
    /// certificate meaningful: pass ⇔ the computed gradient is
    /// indistinguishable from one satisfying the tolerance.
    fn residual(&self, g: &[f64], noise: &[f64]) -> f64 {
        const NOISE_GUARD: f64 = 64.0;
        g.iter()
            .zip(noise)
            .zip(&self.mass)
            .map(|((gi, ni), mi)| (gi.abs() - NOISE_GUARD * f64::EPSILON * ni).max(0.0) / mi)
            .fold(0.0, f64::max)
    }

    fn hessian(&self, v: &[f64], h: f64, p: f64, eps: f64, floor: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut hess = DMatrix::zeros(n, n);
        for a in 0..n {
            hess[(a, a)] = self.mass[a];
        }
        let psi = |z: f64| {
            if eps > 0.0 {
                psi_eps(z, eps, p)
            } else {
                // curvature floor keeps the polish Hessian bounded
                (p - 1.0) * z.abs().max(floor).powf(p - 2.0)
            }
        };
        for &(a, b, w) in &self.pairs {
            let c = h * w * psi(v[a] - v[b]);
            hess[(a, a)] += c;
            hess[(b, b)] += c;
            hess[(a, b)] -= c;
            hess[(b, a)] -= c;
        }
        for (a, terms) in self.frozen.iter().enumerate() {
            for &(w, theta) in terms {
                hess[(a, a)] += h * w * psi(v[a] - theta);
            }
        }
        hess
    }
}

/// One damped-Newton descent loop at fixed ε; returns iterations used.
#[allow(clippy::too_many_arguments)]
fn newton_loop(
    sys: &PairSystem,
    v: &mut [f64],
    u: &[f64],
    h: f64,
    p: f64,
    eps: f64,
    floor: f64,
    tol: f64,
    budget: u32,
) -> u32 {
    let n = sys.n();
    let mut g = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut nt = vec![0.0; n];
    let mut iters = 0;
    while iters < budget {
        sys.gradient(v, u, h, p, eps, &mut g, &mut noise);
        let res0 = sys.residual(&g, &noise);
        if res0 <= tol {
            break;
        }
        let hess = sys.hessian(v, h, p, eps, floor);
        let rhs = DVector::from_iterator(n, g.iter().map(|x| -x));
        let dir = match Cholesky::new(hess) {
            Some(ch) => ch.solve(&rhs),
            None => break, // leave to the caller's certificate check
        };
        // Armijo backtracking on the regularized energy. Near the
        // minimum the true decrement per step (~residual²) drops below
        // the double-precision resolution of the energy itself; at that
        // point energy comparisons are blind and acceptance switches to
        // strict residual descent.
        let e0 = sys.energy(v, u, h, p, eps);
        let slope: f64 = g.iter().zip(dir.iter()).map(|(gi, di)| gi * di).sum();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = v
                .iter()
                .zip(dir.iter())
                .map(|(vi, di)| vi + alpha * di)
                .collect();
            let energy_blind =
                (1e-4 * alpha * slope).abs() <= 64.0 * f64::EPSILON * e0.abs();
            let ok = if energy_blind {
                sys.gradient(&trial, u, h, p, eps, &mut gt, &mut nt);
                sys.residual(&gt, &nt) < res0
            } else {
                sys.energy(&trial, u, h, p, eps) <= e0 + 1e-4 * alpha * slope
            };
            if ok {
                v.copy_from_slice(&trial);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        iters += 1;
        if !accepted {
            break;
        }
    }
    iters
}

/// Resolvent `v = (I + h ℒ)^{-1} u` as the proximal minimizer of `J_h`.
pub fn resolvent(
    u: &GridFunction,
    table: &KernelTable,
    params: &Params,
    h: f64,
    cfg: &ProxConfig,
) -> Result<ProxSolution, StepError> {
    let p = params.p;
    let sys = build_system(u, table);
    let uv: Vec<f64> = sys.dofs.iter().map(|&i| u.values()[i]).collect();
    let scale = uv.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1e-300);
    let tol = cfg.newton_tol * (1.0 + scale);
    let floor = 1e-13 * scale;

    let mut v = uv.clone();
    let mut g = vec![0.0; sys.n()];
    let mut noise = vec![0.0; sys.n()];
    let mut iterations = 0;

    // early exit: the input may already satisfy the certificate
    sys.gradient(&v, &uv, h, p, 0.0, &mut g, &mut noise);
    let mut residual = sys.residual(&g, &noise);
    if residual > tol {
        let eps0 = if cfg.epsilon0 > 0.0 {
            cfg.epsilon0
        } else {
            1e-2 * scale
        };
        // Continue deep enough that the regularization error at the last
        // stage is already close to the target accuracy: the final polish
        // then starts near the kink-resolved solution instead of having
        // to cross many decades on the nonsmooth landscape.
        let eps_final = 1e-12 * scale;
        let mut eps = eps0;
        while eps > eps_final {
            // each stage only needs the accuracy its own regularization
            // error permits (the φ_ε-vs-Φ_p gap scales like ε^{p-1})
            let stage_tol = ((eps / scale).powf(p - 1.0) * (1.0 + scale)).max(tol);
            iterations += newton_loop(
                &sys, &mut v, &uv, h, p, eps, floor, stage_tol,
                cfg.max_iters.saturating_sub(iterations),
            );
            eps *= cfg.continuation_factor;
        }
        // polish on the true gradient
        iterations += newton_loop(
            &sys, &mut v, &uv, h, p, 0.0, floor, tol,
            cfg.max_iters.saturating_sub(iterations),
        );
        sys.gradient(&v, &uv, h, p, 0.0, &mut g, &mut noise);
        residual = sys.residual(&g, &noise);
    }

    let mut out = u.values().to_vec();
    for (k, &i) in sys.dofs.iter().enumerate() {
        out[i] = v[k];
    }
    // interior nodes excluded from the DOF set (zero volume weight at the
    // origin for N ≥ 2) follow their neighbor smoothly
    if !out.is_empty() && out[0].is_finite() && u.grid().volume_weight(0) == 0.0 {
        out[0] = out[1];
    }
    if u.nonneg() {
        for (i, x) in out.iter_mut().enumerate() {
            if *x < 0.0 {
                if *x >= -1e-12 * (1.0 + scale) {
                    *x = 0.0;
                } else {
                    return Err(StepError::NegativeValue { node: i });
                }
            }
        }
    }
    let next = GridFunction::new(
        u.grid().clone(),
        out,
        u.inner_tail(),
        u.outer_tail(),
    )?;
    if residual > tol {
        return Err(StepError::ProxNoConvergence {
            residual,
            best: Box::new(next),
        });
    }
    Ok(ProxSolution {
        u: next,
        iterations,
        residual,
    })
}

/// Gagliardo part of the implicit energy, `(1/p)·[Σ W|Δu|^p + frozen]` —
/// decreases across every resolvent application.
pub fn gagliardo_energy(
    u: &GridFunction,
    table: &KernelTable,
    params: &Params,
) -> Result<f64, StepError> {
    let sys = build_system(u, table);
    let v: Vec<f64> = sys.dofs.iter().map(|&i| u.values()[i]).collect();
    Ok(sys.gagliardo(&v, params.p) / params.p)
}

/// The discrete energy-gradient operator `(L_E u)_i = ∇E(u)_i / m_i` seen
/// by the resolvent (pair part only, tails frozen at `u`). Entries follow
/// `u`'s node order restricted to DOFs; non-DOF nodes report NaN.
pub fn energy_operator(
    u: &GridFunction,
    table: &KernelTable,
    params: &Params,
) -> Result<Vec<f64>, StepError> {
    let sys = build_system(u, table);
    let v: Vec<f64> = sys.dofs.iter().map(|&i| u.values()[i]).collect();
    let n = sys.n();
    let p = params.p;
    let mut g = vec![0.0; n];
    // pure operator part: gradient of (1/p)·Gagliardo, i.e. h = 1, no mass term
    for &(a, b, w) in &sys.pairs {
        let f = w * signed_power(v[a] - v[b], p - 1.0);
        g[a] += f;
        g[b] -= f;
    }
    for (a, terms) in sys.frozen.iter().enumerate() {
        for &(w, theta) in terms {
            g[a] += w * signed_power(v[a] - theta, p - 1.0);
        }
    }
    let mut out = vec![f64::NAN; u.values().len()];
    for (k, &i) in sys.dofs.iter().enumerate() {
        out[i] = g[k] / sys.mass[k];
    }
    Ok(out)
}
