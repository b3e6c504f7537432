//! Self-similar structure of the flow: dynamic extraction of first-kind
//! profiles (with a monotone approximation ladder for singular data),
//! the very singular separated-variables solutions, blow-up probing near
//! the growth threshold, and an explicit supersolution envelope.

use crate::grid::{GridFunction, RadialGrid, TailSpec};
use crate::operator::{apply_flap, power_map_constant, KernelTable, OperatorError};
use crate::params::{Params, Regime, Similarity};
use crate::stepper::{evolve, EvolveConfig, Scheme, StepError, Trajectory};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SelfSimilarError {
    #[error("requested object does not exist in this parameter regime: {0}")]
    WrongRegime(String),
    #[error("profile ladder diverged: level {level} growth ratio {ratio:.3}")]
    BlowupDetected { level: usize, ratio: f64 },
    #[error("gamma = {gamma} outside admissible range ({lo}, {hi})")]
    PreconditionGamma { gamma: f64, lo: f64, hi: f64 },
    #[error("supersolution splice failed: {0}")]
    SpliceFailure(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Param(#[from] crate::params::ParamError),
}

/// Knobs for profile extraction. The ladder geometry (cap radii halving
/// per level, support radii doubling) and the divergence threshold are
/// calibration constants surfaced here so runs can record them.
#[derive(Debug, Clone)]
pub struct ProfileConfig {
    pub evolve: EvolveConfig,
    /// Times at which the self-similar collapse is measured.
    pub collapse_times: Vec<f64>,
    pub ladder_levels: usize,
    /// Cap radius of the least-resolved ladder level; halves per level.
    pub cap_radius0: f64,
    /// Successive-level growth ratio above which the ladder is declared
    /// divergent (checked at the last three levels).
    pub blowup_ratio: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            evolve: EvolveConfig {
                snapshots_per_decade: 10,
                decades: 3,
                ..Default::default()
            },
            collapse_times: vec![0.25, 0.5, 2.0, 4.0],
            ladder_levels: 8,
            cap_radius0: 1.0,
            blowup_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProfileResult {
    pub gamma: f64,
    pub amplitude: f64,
    pub exponents: Similarity,
    /// The profile `F(y) = u(y, 1)`.
    pub f: GridFunction,
    /// Max relative deviation of `u(r,t)·t^{-α}` from `F(r·t^{-β})` over
    /// mid-grid nodes at the configured collapse times.
    pub collapse_error: f64,
    /// Residual of the stationary profile equation.
    pub residual: f64,
    /// The run that produced `F` (snapshots up to t = 1).
    pub trajectory: Trajectory,
    /// Probe values per ladder level (singular data only).
    pub ladder_probe: Vec<f64>,
}

/// Data of one ladder level: `min(A r^γ, H)` for integrable singularities
/// (cap radius `cap`), additionally truncated to compact support
/// `min((A r^γ - k)_+, H)` when the singularity is non-integrable.
fn ladder_data(
    grid: &Arc<RadialGrid>,
    a: f64,
    gamma: f64,
    cap: f64,
    support: Option<f64>,
) -> Result<GridFunction, SelfSimilarError> {
    let h = a * cap.powf(gamma);
    match support {
        None => Ok(GridFunction::sample_with(
            grid.clone(),
            |r| (a * r.powf(gamma)).min(h),
            None,
            TailSpec::new(gamma, a),
        )?),
        Some(s) => {
            let k = a * s.powf(gamma);
            Ok(GridFunction::sample_with(
                grid.clone(),
                |r| (a * r.powf(gamma) - k).max(0.0).min(h),
                None,
                TailSpec::zero(),
            )?)
        }
    }
}

fn check_gamma(params: &Params, gamma: f64) -> Result<(), SelfSimilarError> {
    let e = params.critical_exponents();
    if gamma >= 0.0 {
        if gamma >= e.gamma1 {
            return Err(SelfSimilarError::PreconditionGamma {
                gamma,
                lo: 0.0,
                hi: e.gamma1,
            });
        }
        return Ok(());
    }
    // singular data: regular branch down to γ₂ = max(-N, -γ*); the
    // non-integrable branch continues to -γ* when it exists at all
    if gamma > e.gamma2 {
        return Ok(());
    }
    if gamma > -e.gamma_star && e.gamma_star > params.n() {
        match params.classify() {
            Regime::Good { .. } => return Ok(()),
            other => {
                return Err(SelfSimilarError::WrongRegime(format!(
                    "non-integrable singular data needs p > p_c, regime is {other}"
                )))
            }
        }
    }
    Err(SelfSimilarError::PreconditionGamma {
        gamma,
        lo: -e.gamma_star.min(params.n()),
        hi: e.gamma1,
    })
}

/// Evolve `u0 = A|x|^γ` to `t = 1` and read off the self-similar profile
/// `F = u(·,1)`, together with the collapse error at the configured
/// comparison times and the stationary-equation residual.
///
/// Singular data (γ < 0) is approached through a monotone ladder of
/// bounded truncations; a diverging ladder reports `BlowupDetected`.
pub fn compute_profile(
    params: &Params,
    gamma: f64,
    amplitude: f64,
    table: &KernelTable,
    cfg: &ProfileConfig,
) -> Result<ProfileResult, SelfSimilarError> {
    assert!(amplitude > 0.0, "amplitude must be positive");
    check_gamma(params, gamma)?;
    let grid = table.grid().clone();
    let exponents = params.similarity_exponents(gamma)?;

    let mut ladder_probe = Vec::new();
    let (data, trajectory) = if gamma >= 0.0 {
        let u0 = GridFunction::sample_power(grid.clone(), amplitude, gamma)?;
        let traj = evolve(&u0, table, params, Scheme::Explicit, 1.0, &cfg.evolve)?;
        (u0, traj)
    } else {
        let compact = gamma <= e_gamma2(params);
        let levels = cfg.ladder_levels.max(2);
        let probe_idx = grid.m() / 2;
        let mut last: Option<(GridFunction, Trajectory)> = None;
        for n in 0..levels {
            let cap = cfg.cap_radius0 / f64::powi(2.0, n as i32);
            let support = compact.then(|| {
                grid.r_max() / 3.0 / f64::powi(2.0, (levels - 1 - n) as i32)
            });
            let u0 = ladder_data(&grid, amplitude, gamma, cap, support)?;
            let traj = evolve(&u0, table, params, Scheme::Explicit, 1.0, &cfg.evolve)?;
            ladder_probe.push(traj.snapshots.last().unwrap().1.values()[probe_idx]);
            last = Some((u0, traj));
        }
        // Cauchy test on the probe values: persistent growth by more than
        // the threshold over the last three level pairs means divergence
        if ladder_probe.len() >= 4 {
            let k = ladder_probe.len();
            let diverging = (k - 3..k).all(|j| {
                let prev = ladder_probe[j - 1].abs().max(1e-300);
                ladder_probe[j] / prev > cfg.blowup_ratio
            });
            if diverging {
                return Err(SelfSimilarError::BlowupDetected {
                    level: k - 1,
                    ratio: ladder_probe[k - 1] / ladder_probe[k - 2].abs().max(1e-300),
                });
            }
        }
        last.expect("ladder_levels >= 2")
    };

    let f = trajectory.snapshots.last().unwrap().1.clone();
    let collapse_error = collapse_error(params, &data, &f, &exponents, table, cfg)?;
    let residual = profile_residual(&f, params, gamma, table)?;
    Ok(ProfileResult {
        gamma,
        amplitude,
        exponents,
        f,
        collapse_error,
        residual,
        trajectory,
        ladder_probe,
    })
}

fn e_gamma2(params: &Params) -> f64 {
    params.critical_exponents().gamma2
}

/// Max relative deviation of `u(r,t)·t^{-α}` from `F(r t^{-β})` over
/// mid-quartile nodes, at the configured times (each reached by a fresh
/// run from the same data).
fn collapse_error(
    params: &Params,
    data: &GridFunction,
    f: &GridFunction,
    sim: &Similarity,
    table: &KernelTable,
    cfg: &ProfileConfig,
) -> Result<f64, SelfSimilarError> {
    let grid = f.grid();
    let m = grid.m();
    let mut worst: f64 = 0.0;
    for &t in &cfg.collapse_times {
        let traj = evolve(data, table, params, Scheme::Explicit, t, &cfg.evolve)?;
        let (t_got, u) = traj.snapshots.last().unwrap();
        let t_fac = t_got.powf(-sim.alpha);
        let y_fac = t_got.powf(-sim.beta);
        let mut compared = 0usize;
        for i in m / 4..=3 * m / 4 {
            let y = grid.nodes()[i] * y_fac;
            if y < grid.r1() || y > grid.r_max() {
                continue;
            }
            let lhs = u.values()[i] * t_fac;
            let rhs = f.eval(y);
            if rhs.abs() > 1e-300 {
                worst = worst.max((lhs - rhs).abs() / rhs.abs());
                compared += 1;
            }
        }
        if compared * 4 < m / 2 {
            return Err(SelfSimilarError::WrongRegime(format!(
                "collapse window at t = {t_got} leaves too few in-grid nodes ({compared})"
            )));
        }
    }
    Ok(worst)
}

/// Relative residual of the stationary profile equation
/// `ℒF + βγF - βyF' = 0`, as a volume-weighted L¹ average over the
/// middle two quartiles of the grid, normalized by the same norm of the
/// zeroth-order term.
pub fn profile_residual(
    f: &GridFunction,
    params: &Params,
    gamma: f64,
    table: &KernelTable,
) -> Result<f64, SelfSimilarError> {
    let sim = params.similarity_exponents(gamma)?;
    let lf = apply_flap(f, table, params.p)?;
    let grid = f.grid();
    let nodes = grid.nodes();
    let vals = f.values();
    let m = grid.m();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut den_fallback = 0.0;
    for i in m / 4..=3 * m / 4 {
        let fp = (vals[i + 1] - vals[i - 1]) / (nodes[i + 1] - nodes[i - 1]);
        let resid = lf[i] + sim.beta * gamma * vals[i] - sim.beta * nodes[i] * fp;
        let w = grid.volume_weight(i);
        num += w * resid.abs();
        den += w * (sim.beta * gamma * vals[i]).abs();
        den_fallback += w * (sim.beta * vals[i]).abs();
    }
    let den = if den > 1e-300 { den } else { den_fallback.max(1e-300) };
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VssMode {
    /// Growing branch `(t+T)^{1/(2-p)}`; exists for `p > p_c`.
    Forward,
    /// Extinction branch `(T-t)^{1/(2-p)}`; exists for `p < p_c`.
    Backward,
}

/// The separated-variables very singular solution
/// `C_∞ (t ± T)^{1/(2-p)} |x|^{-γ*}`.
#[derive(Debug, Clone, Copy)]
pub struct VssParams {
    pub c_inf: f64,
    /// Time offset (Forward) or extinction time (Backward).
    pub t_offset: f64,
    pub mode: VssMode,
}

impl VssParams {
    pub fn gamma_star(&self, params: &Params) -> f64 {
        params.critical_exponents().gamma_star
    }

    /// Amplitude in front of `r^{-γ*}` at time `t` (zero after backward
    /// extinction).
    pub fn amplitude(&self, params: &Params, t: f64) -> f64 {
        let e = 1.0 / (2.0 - params.p);
        match self.mode {
            VssMode::Forward => self.c_inf * (t + self.t_offset).powf(e),
            VssMode::Backward => {
                if t >= self.t_offset {
                    0.0
                } else {
                    self.c_inf * (self.t_offset - t).powf(e)
                }
            }
        }
    }

    pub fn value(&self, params: &Params, r: f64, t: f64) -> f64 {
        let amp = self.amplitude(params, t);
        if amp == 0.0 {
            return 0.0;
        }
        amp * r.powf(-self.gamma_star(params))
    }

    /// Sample onto a grid with matching analytic tails.
    pub fn data(
        &self,
        params: &Params,
        grid: &Arc<RadialGrid>,
        t: f64,
    ) -> Result<GridFunction, SelfSimilarError> {
        let amp = self.amplitude(params, t);
        let gs = self.gamma_star(params);
        if amp == 0.0 {
            let u = GridFunction::sample_with(grid.clone(), |_| 0.0, None, TailSpec::zero())?;
            return Ok(u);
        }
        Ok(GridFunction::sample_power(grid.clone(), amp, -gs)?)
    }
}

/// Build the very singular solution of the requested branch. `C_∞` comes
/// from the separated-variables balance `C_∞^{2-p} = (2-p)·|c|` with `c`
/// the power-map constant of `r^{-γ*}` — negative on the extinction
/// branch (`p < p_c`), positive on the growth branch (`p > p_c`).
pub fn vss(params: &Params, mode: VssMode, t_offset: f64) -> Result<VssParams, SelfSimilarError> {
    assert!(t_offset > 0.0);
    let regime = params.classify();
    match (mode, regime) {
        (VssMode::Forward, Regime::Good { .. }) => {}
        (VssMode::Backward, Regime::VeryFast) => {}
        (m, r) => {
            return Err(SelfSimilarError::WrongRegime(format!(
                "{m:?} VSS requires {}, regime is {r}",
                match m {
                    VssMode::Forward => "p > p_c",
                    VssMode::Backward => "p < p_c",
                }
            )))
        }
    }
    let e = params.critical_exponents();
    let c = power_map_constant(params, -e.gamma_star)?;
    let sign_ok = match mode {
        VssMode::Forward => c > 0.0,
        VssMode::Backward => c < 0.0,
    };
    if !sign_ok {
        return Err(SelfSimilarError::WrongRegime(format!(
            "power map constant at -γ* is {c}, wrong sign for the {mode:?} branch"
        )));
    }
    let c_inf = ((2.0 - params.p) * c.abs()).powf(1.0 / (2.0 - params.p));
    Ok(VssParams {
        c_inf,
        t_offset,
        mode,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ProbeReport {
    pub gammas: Vec<f64>,
    /// `F_γ(0)` per γ.
    pub origin_values: Vec<f64>,
    pub nondecreasing: bool,
    /// Ratio of the last origin value to the first.
    pub growth_ratio: f64,
}

/// Track `F_γ(0)` along an increasing sequence of growth exponents
/// approaching `γ₁`; the origin values must be nondecreasing and blow up
/// in the limit.
pub fn blowup_probe(
    params: &Params,
    gamma_sequence: &[f64],
    amplitude: f64,
    table: &KernelTable,
    cfg: &ProfileConfig,
) -> Result<ProbeReport, SelfSimilarError> {
    let g1 = params.critical_exponents().gamma1;
    if gamma_sequence.is_empty()
        || gamma_sequence.windows(2).any(|w| w[1] <= w[0])
        || gamma_sequence.iter().any(|&g| g <= 0.0 || g >= g1)
    {
        return Err(SelfSimilarError::PreconditionGamma {
            gamma: *gamma_sequence.last().unwrap_or(&f64::NAN),
            lo: 0.0,
            hi: g1,
        });
    }
    let mut origin_values = Vec::with_capacity(gamma_sequence.len());
    for &g in gamma_sequence {
        let res = compute_profile(params, g, amplitude, table, cfg)?;
        origin_values.push(res.f.values()[0]);
    }
    let nondecreasing = origin_values.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    let growth_ratio = origin_values.last().unwrap() / origin_values.first().unwrap();
    Ok(ProbeReport {
        gammas: gamma_sequence.to_vec(),
        origin_values,
        nondecreasing,
        growth_ratio,
    })
}

/// Explicit separable supersolution `U(x,t) = K (1+t)^{1/(2-p)} f₁(x)`
/// dominating the flow from data `|x|^γ`, `0 < γ < γ₁`.
#[derive(Debug, Clone, Copy)]
pub struct Supersolution {
    pub k: f64,
    /// Time exponent `1/(2-p)`.
    pub a_exp: f64,
    /// Measured operator bound `sup (-ℒf₁/f₁)₊`.
    pub c_sup: f64,
    pub splice_radius: f64,
    pub gamma: f64,
    cap_a: f64,
    cap_b: f64,
}

impl Supersolution {
    /// The spliced profile: quadratic cap below the splice radius,
    /// `r^γ` beyond; C¹ at the junction and ≥ 1 everywhere.
    pub fn f1(&self, r: f64) -> f64 {
        if r < self.splice_radius {
            self.cap_a + self.cap_b * r * r
        } else {
            r.powf(self.gamma)
        }
    }

    pub fn value(&self, r: f64, t: f64) -> f64 {
        self.k * (1.0 + t).powf(self.a_exp) * self.f1(r)
    }
}

/// Construct the supersolution for data `|x|^γ`. The splice radius is
/// enlarged beyond 2 when needed to keep the cap ≥ 1; for γ ≥ 2 no
/// C¹ quadratic cap lies above the power and the construction fails.
pub fn supersolution_bound(
    params: &Params,
    gamma: f64,
    table: &KernelTable,
) -> Result<Supersolution, SelfSimilarError> {
    let g1 = params.critical_exponents().gamma1;
    if gamma <= 0.0 || gamma >= g1 {
        return Err(SelfSimilarError::PreconditionGamma {
            gamma,
            lo: 0.0,
            hi: g1,
        });
    }
    if gamma >= 2.0 {
        return Err(SelfSimilarError::SpliceFailure(format!(
            "quadratic cap is concave-deficient for gamma = {gamma} >= 2"
        )));
    }
    // C¹ matching at R: cap = a + b r², b = γ R^{γ-2}/2, a = R^γ (1-γ/2);
    // a ≥ 1 needs R ≥ (2/(2-γ))^{1/γ}
    let r_need = (2.0 / (2.0 - gamma)).powf(1.0 / gamma);
    let splice_radius = r_need.max(2.0);
    let cap_b = 0.5 * gamma * splice_radius.powf(gamma - 2.0);
    let cap_a = splice_radius.powf(gamma) * (1.0 - 0.5 * gamma);
    if !(cap_a >= 1.0 - 1e-12) {
        return Err(SelfSimilarError::SpliceFailure(format!(
            "cap minimum {cap_a} < 1 at splice radius {splice_radius}"
        )));
    }
    let grid = table.grid();
    let f1 = GridFunction::sample_with(
        grid.clone(),
        |r| {
            if r < splice_radius {
                cap_a + cap_b * r * r
            } else {
                r.powf(gamma)
            }
        },
        None,
        TailSpec::new(gamma, 1.0),
    )?;
    let lf = apply_flap(&f1, table, params.p)?;
    let c_sup = lf
        .iter()
        .zip(f1.values())
        .map(|(l, v)| (-l / v).max(0.0))
        .fold(0.0f64, f64::max);
    let a_exp = 1.0 / (2.0 - params.p);
    // find K with a·K ≥ C·K^{p-1} by bisection on the increasing part
    let balance = |k: f64| a_exp * k - c_sup * k.powf(params.p - 1.0);
    let mut lo = 1e-12;
    let mut hi = 1.0;
    while balance(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e30 {
            return Err(SelfSimilarError::SpliceFailure(
                "no finite K balances the supersolution inequality".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let k = hi.max(1.0) * (1.0 + 1e-9);
    debug_assert!(balance(k) >= 0.0);
    Ok(Supersolution {
        k,
        a_exp,
        c_sup,
        splice_radius,
        gamma,
        cap_a,
        cap_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quick_cfg() -> ProfileConfig {
        ProfileConfig {
            evolve: EvolveConfig {
                snapshots_per_decade: 6,
                decades: 3,
                ..Default::default()
            },
            collapse_times: vec![0.5, 2.0],
            ladder_levels: 6,
            ..Default::default()
        }
    }

    fn setup(m: usize, r_max: f64) -> (Params, KernelTable) {
        let prm = Params::new(0.5, 1.5, 1).unwrap();
        let grid = RadialGrid::geometric(m, r_max, Some(1e-3), 1).unwrap();
        let table = KernelTable::build(grid, prm.sigma(), 1e-8).unwrap();
        (prm, table)
    }

    #[test]
    fn constant_data_gives_trivial_profile() {
        let (prm, table) = setup(96, 1e3);
        let res = compute_profile(&prm, 0.0, 1.0, &table, &quick_cfg()).unwrap();
        assert_relative_eq!(res.exponents.beta, 1.0 / prm.sp(), max_relative = 1e-12);
        for v in res.f.values() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-10);
        }
        assert!(res.collapse_error < 1e-8, "collapse {}", res.collapse_error);
        assert!(res.residual < 1e-8, "residual {}", res.residual);
    }

    #[test]
    fn zz_probe_timing() {
        let (prm, table) = setup(128, 1e3);
        let grid = table.grid().clone();
        let u0 = GridFunction::sample_power(grid.clone(), 1.0, 0.75).unwrap();
        let t0 = std::time::Instant::now();
        let lf = apply_flap(&u0, &table, prm.p).unwrap();
        eprintln!("apply: {:?} lf[1]={}", t0.elapsed(), lf[1]);
        let t0 = std::time::Instant::now();
        let cfg = EvolveConfig {
            snapshots_per_decade: 6,
            decades: 3,
            ..Default::default()
        };
        let traj = evolve(&u0, &table, &prm, Scheme::Explicit, 1.0, &cfg).unwrap();
        eprintln!("evolve: {:?} steps={}", t0.elapsed(), traj.steps.len());
        for r in traj.steps.iter().take(6) {
            eprintln!("t={:.3e} dt={:.3e} halv?", r.t, r.dt);
        }
        for r in traj.steps.iter().rev().take(6) {
            eprintln!("t={:.3e} dt={:.3e}", r.t, r.dt);
        }
        let f = &traj.snapshots.last().unwrap().1;
        let vals = f.values();
        let nodes = grid.nodes();
        let mut worst = (0usize, 0.0f64);
        for i in 1..=grid.m() {
            let gap = (vals[i - 1] - vals[i]) / vals[i - 1].abs().max(1e-300);
            if gap > worst.1 {
                worst = (i, gap);
            }
        }
        eprintln!(
            "worst mono violation: i={} rel={:.3e} r={:.4e} v_prev={:.16e} v={:.16e}",
            worst.0, worst.1, nodes[worst.0], vals[worst.0 - 1], vals[worst.0]
        );
        panic!("probe done");
    }

    #[test]
    fn growing_profile_matches_theory_at_half_gamma1() {
        let (prm, table) = setup(128, 1e3);
        let e = prm.critical_exponents();
        let gamma = 0.5 * e.gamma1;
        let res = compute_profile(&prm, gamma, 1.0, &table, &quick_cfg()).unwrap();
        let f = &res.f;
        let vals = f.values();
        assert!(vals[0] > 0.0, "F(0) = {} must be positive", vals[0]);
        // F nondecreasing, F ≥ A r^γ, and G = F r^{-γ} nonincreasing
        let nodes = f.grid().nodes();
        let m = f.grid().m();
        for i in 1..=m {
            assert!(vals[i] >= vals[i - 1] * (1.0 - 1e-10));
            assert!(vals[i] >= nodes[i].powf(gamma) * (1.0 - 1e-6));
        }
        for i in 2..=m {
            let g_prev = vals[i - 1] * nodes[i - 1].powf(-gamma);
            let g_here = vals[i] * nodes[i].powf(-gamma);
            assert!(g_here <= g_prev * (1.0 + 1e-10));
        }
        // far field approaches the data power in the outer decade
        let i_far = m - m / 8;
        let ratio = vals[i_far] / nodes[i_far].powf(gamma);
        assert!((ratio - 1.0).abs() < 0.03, "far-field ratio {ratio}");
        assert!(res.collapse_error < 0.03, "collapse {}", res.collapse_error);
        assert!(res.residual < 5e-2, "residual {}", res.residual);
        // u_t ≥ 0 along the run
        for w in res.trajectory.snapshots.windows(2) {
            let scale = w[1].1.finite_scale();
            for (b, a) in w[1].1.values().iter().zip(w[0].1.values()) {
                assert!(*b >= a - 1e-6 * scale);
            }
        }
    }

    #[test]
    fn amplitude_scaling_reduces_to_unit_profile() {
        // F_A(y) = A^{spβ} F₁(A^{(2-p)β} y)
        let (prm, table) = setup(128, 1e3);
        let gamma = 0.5 * prm.critical_exponents().gamma1;
        let cfg = quick_cfg();
        let sim = prm.similarity_exponents(gamma).unwrap();
        let f1 = compute_profile(&prm, gamma, 1.0, &table, &cfg).unwrap().f;
        let f2 = compute_profile(&prm, gamma, 2.0, &table, &cfg).unwrap().f;
        let a: f64 = 2.0;
        let amp = a.powf(prm.sp() * sim.beta);
        let arg = a.powf((2.0 - prm.p) * sim.beta);
        let grid = f1.grid();
        let m = grid.m();
        for i in (m / 4..=3 * m / 4).step_by(8) {
            let y = grid.nodes()[i] * arg;
            if y > grid.r_max() {
                continue;
            }
            let predicted = amp * f1.eval(y);
            assert_relative_eq!(f2.values()[i], predicted, max_relative = 0.02);
        }
    }

    #[test]
    fn residual_shrinks_under_refinement_and_detects_perturbation() {
        let prm = Params::new(0.5, 1.5, 1).unwrap();
        let gamma = 0.5 * prm.critical_exponents().gamma1;
        let cfg = quick_cfg();
        let mut residuals = Vec::new();
        let mut coarse_profile = None;
        for m in [96usize, 192] {
            let grid = RadialGrid::geometric(m, 1e3, Some(1e-3), 1).unwrap();
            let table = KernelTable::build(grid, prm.sigma(), 1e-8).unwrap();
            let res = compute_profile(&prm, gamma, 1.0, &table, &cfg).unwrap();
            residuals.push(res.residual);
            if m == 96 {
                coarse_profile = Some((res.f, table));
            }
        }
        let order = (residuals[0] / residuals[1]).log2();
        assert!(
            order >= 0.8,
            "refinement order {order} from residuals {residuals:?}"
        );
        // a 10% bump on the profile must be clearly visible
        let (f, table) = coarse_profile.unwrap();
        let grid = f.grid().clone();
        let base = profile_residual(&f, &prm, gamma, &table).unwrap();
        let bumped = f
            .map_values(|i, v| {
                let r = grid.nodes()[i];
                v * (1.0 + 0.1 * (-(r.ln() - 1.0) * (r.ln() - 1.0)).exp())
            })
            .unwrap();
        let pert = profile_residual(&bumped, &prm, gamma, &table).unwrap();
        assert!(
            pert > 3.0 * base,
            "perturbed residual {pert} vs base {base}"
        );
    }

    #[test]
    fn integrable_singular_data_decays_in_time() {
        let (prm, table) = setup(128, 1e3);
        let e = prm.critical_exponents();
        let gamma = -0.5 * e.gamma2.abs().min(1.0);
        let res = compute_profile(&prm, gamma, 1.0, &table, &quick_cfg()).unwrap();
        let f = &res.f;
        let vals = f.values();
        let nodes = f.grid().nodes();
        let m = f.grid().m();
        assert!(vals[0].is_finite() && vals[0] > 0.0);
        // F nonincreasing, F ≤ A r^γ, G = F r^{-γ} nondecreasing
        for i in 1..=m {
            assert!(vals[i] <= vals[i - 1] * (1.0 + 1e-10));
            assert!(vals[i] <= nodes[i].powf(gamma) * (1.0 + 1e-8));
        }
        for i in m / 4..=3 * m / 4 {
            let g_prev = vals[i - 1] * nodes[i - 1].powf(-gamma);
            let g_here = vals[i] * nodes[i].powf(-gamma);
            assert!(g_here >= g_prev * (1.0 - 1e-9));
        }
        // ladder probe settled: last two levels agree to 1%
        let k = res.ladder_probe.len();
        let rel = (res.ladder_probe[k - 1] - res.ladder_probe[k - 2]).abs()
            / res.ladder_probe[k - 1].abs();
        assert!(rel < 0.01, "ladder probe not settled: {:?}", res.ladder_probe);
        // u_t ≤ 0 along the run
        for w in res.trajectory.snapshots.windows(2) {
            let scale = w[0].1.finite_scale();
            for (b, a) in w[1].1.values().iter().zip(w[0].1.values()) {
                assert!(*b <= a + 1e-6 * scale);
            }
        }
    }

    #[test]
    fn vss_regime_gates_and_extinction() {
        let fast = Params::new(0.5, 1.2, 1).unwrap();
        // p inside (p_c, ~1.56) keeps the forward profile pointwise
        // integrable at the origin (γ*(p-1) < N)
        let good = Params::new(0.5, 1.45, 1).unwrap();
        assert!(matches!(
            vss(&fast, VssMode::Forward, 1.0),
            Err(SelfSimilarError::WrongRegime(_))
        ));
        assert!(matches!(
            vss(&good, VssMode::Backward, 1.0),
            Err(SelfSimilarError::WrongRegime(_))
        ));
        let v = vss(&fast, VssMode::Backward, 1.0).unwrap();
        assert!(v.c_inf > 0.0);
        assert_eq!(v.value(&fast, 0.7, 1.0), 0.0);
        assert_eq!(v.value(&fast, 0.7, 2.0), 0.0);
        assert!(v.value(&fast, 0.7, 0.5) > 0.0);
        let fwd = vss(&good, VssMode::Forward, 1.0).unwrap();
        // same balance constant, growing in time
        assert!(fwd.value(&good, 1.0, 2.0) > fwd.value(&good, 1.0, 0.0));
    }

    #[test]
    fn backward_vss_satisfies_the_flow_pointwise() {
        // ∂ₜu = -ℒu checked discretely in the middle of the grid
        let prm = Params::new(0.5, 1.2, 1).unwrap();
        let grid = RadialGrid::geometric(160, 1e3, Some(1e-2), 1).unwrap();
        let table = KernelTable::build(grid.clone(), prm.sigma(), 1e-8).unwrap();
        let v = vss(&prm, VssMode::Backward, 1.0).unwrap();
        let t = 0.3;
        let u = v.data(&prm, &grid, t).unwrap();
        let lu = apply_flap(&u, &table, prm.p).unwrap();
        let e = 1.0 / (2.0 - prm.p);
        let m = grid.m();
        for i in (m / 4..=3 * m / 4).step_by(7) {
            let r = grid.nodes()[i];
            let dudt = -e * v.c_inf * (v.t_offset - t).powf(e - 1.0)
                * r.powf(-v.gamma_star(&prm));
            assert_relative_eq!(-lu[i], dudt, max_relative = 2e-2);
        }
    }

    #[test]
    fn origin_values_grow_toward_gamma1() {
        let (prm, table) = setup(96, 1e3);
        let g1 = prm.critical_exponents().gamma1;
        let seq: Vec<f64> = [0.3, 0.5, 0.7].iter().map(|f| f * g1).collect();
        let report = blowup_probe(&prm, &seq, 1.0, &table, &quick_cfg()).unwrap();
        assert!(report.nondecreasing, "origin values {:?}", report.origin_values);
        assert!(report.growth_ratio > 1.0);
        let degenerate = blowup_probe(&prm, &seq[..1], 1.0, &table, &quick_cfg()).unwrap();
        assert_relative_eq!(degenerate.growth_ratio, 1.0);
        assert!(blowup_probe(&prm, &[0.5 * g1, 0.4 * g1], 1.0, &table, &quick_cfg()).is_err());
    }

    #[test]
    fn supersolution_dominates_the_flow() {
        let (prm, table) = setup(96, 200.0);
        let gamma = 0.6;
        let sup = supersolution_bound(&prm, gamma, &table).unwrap();
        assert!(sup.k >= 1.0);
        let grid = table.grid();
        // U(·,0) = K f₁ ≥ r^γ nodewise, and f₁ ≥ 1
        for &r in grid.nodes() {
            assert!(sup.f1(r) >= 1.0 - 1e-12);
            assert!(sup.value(r, 0.0) >= r.powf(gamma) * (1.0 - 1e-12));
        }
        // C¹ splice: value and slope match at the junction
        let rj = sup.splice_radius;
        assert_relative_eq!(sup.f1(rj * (1.0 - 1e-9)), rj.powf(gamma), max_relative = 1e-6);
        let slope_in = (sup.f1(rj) - sup.f1(rj - 1e-6)) / 1e-6;
        let slope_out = gamma * rj.powf(gamma - 1.0);
        assert_relative_eq!(slope_in, slope_out, max_relative = 1e-3);
        // trajectory from the power data stays below U
        let u0 = GridFunction::sample_power(grid.clone(), 1.0, gamma).unwrap();
        let cfg = EvolveConfig {
            snapshots_per_decade: 5,
            decades: 2,
            ..Default::default()
        };
        let traj = evolve(&u0, &table, &prm, Scheme::Explicit, 1.0, &cfg).unwrap();
        for (t, u) in &traj.snapshots {
            for (i, &r) in grid.nodes().iter().enumerate() {
                let cap = sup.value(r, *t);
                assert!(
                    u.values()[i] <= cap * (1.0 + 1e-6),
                    "comparison fails at t={t}, r={r}"
                );
            }
        }
    }

    #[test]
    fn gamma_at_least_two_has_no_quadratic_cap() {
        let prm = Params::new(0.9, 1.3, 1).unwrap();
        assert!(prm.critical_exponents().gamma1 > 2.0);
        let grid = RadialGrid::geometric(64, 100.0, None, 1).unwrap();
        let table = KernelTable::build(grid, prm.sigma(), 1e-8).unwrap();
        assert!(matches!(
            supersolution_bound(&prm, 2.5, &table),
            Err(SelfSimilarError::SpliceFailure(_))
        ));
    }
}
