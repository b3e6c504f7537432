//! Weight functions for the weighted-mass estimate.
//!
//! A weight `φ` is *admissible* when the constant
//!
//! ```text
//! C(φ) = ∫ (ℳφ)(x)^{1/(2-p)} · φ(x)^{-(p-1)/(2-p)} dx,
//! ```
//!
//! built from the absolute-difference operator `ℳ` of order `sp` (see
//! [`crate::operator::apply_maximal`]), is finite; the weighted mass
//! `X(t) = ∫ u φ` then obeys `|X^{2-p}(t₁) - X^{2-p}(t₂)| ≤ K(φ)|t₁-t₂|`
//! with `K(φ) = (2-p)·C(φ)^{2-p}`.
//!
//! Two families are provided: the power family `φ = (1+r²)^{-(N+λ)/2}`
//! (admissible iff `λ < sp/(p-1)`) and, at the critical decay itself, the
//! log-refined family `φ = (1+r²)^{-(N+γ₁)/2}·ln(e+r)^λ` (admissible iff
//! `λ > (2-p)/(p-1)`). Both require `sp < 1` so that `ℳ` has order below
//! one. Divergence of `C(φ)` is detected by a Cauchy test on dyadic tail
//! blocks and reported as an explicit flag, never as a float infinity.

use crate::grid::{GridError, GridFunction, RadialGrid, TailSpec};
use crate::operator::{apply_maximal, KernelTable, OperatorError};
use crate::params::Params;
use crate::quad;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum WeightError {
    #[error("weight class requires sp < 1, got sp = {sp}")]
    RequiresSpLtOne { sp: f64 },
    #[error("weight constant diverges: {0}")]
    DivergentWeightConstant(String),
    #[error("decay parameter must be positive, got {0}")]
    BadLambda(f64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Weight family: decay power `λ` relative to the dimension, or the
/// log-refined family sitting at the critical decay `N + γ₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightFamily {
    /// `φ(r) = (1+r²)^{-(N+λ)/2}`.
    Power { lambda: f64 },
    /// `φ(r) = (1+r²)^{-(N+γ₁)/2} · ln(e+r)^λ`.
    Log { lambda: f64 },
}

impl WeightFamily {
    pub fn lambda(&self) -> f64 {
        match *self {
            WeightFamily::Power { lambda } | WeightFamily::Log { lambda } => lambda,
        }
    }
}

/// `C(φ)` or `K(φ)`: finite value, or an explicit divergence flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightConstant {
    Finite(f64),
    Infinite,
}

impl WeightConstant {
    pub fn finite(&self) -> Option<f64> {
        match *self {
            WeightConstant::Finite(v) => Some(v),
            WeightConstant::Infinite => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Weight {
    pub family: WeightFamily,
    pub values: GridFunction,
    pub c_phi: WeightConstant,
    pub k_phi: WeightConstant,
    pub admissible: bool,
    /// Rescale factor accumulated through [`rescale_weight`] (1 for base).
    pub r_scale: f64,
    /// Exponent in the rescaling law `K(φ_R) = K(φ)·R^{N(2-p)-sp}`.
    pub scaling_exponent: f64,
}

fn family_values(
    params: &Params,
    family: WeightFamily,
    grid: Arc<RadialGrid>,
    r_scale: f64,
) -> Result<GridFunction, WeightError> {
    let n = params.n();
    let g1 = params.critical_exponents().gamma1;
    let f = |r: f64| -> f64 {
        let r = r / r_scale;
        match family {
            WeightFamily::Power { lambda } => (1.0 + r * r).powf(-0.5 * (n + lambda)),
            WeightFamily::Log { lambda } => {
                (1.0 + r * r).powf(-0.5 * (n + g1)) * (std::f64::consts::E + r).ln().powf(lambda)
            }
        }
    };
    let outer = match family {
        WeightFamily::Power { lambda } => {
            TailSpec::new(-(n + lambda), r_scale.powf(n + lambda))
        }
        // asymptote ln(e+r/R) ~ ln(e+r); exact for R = 1, approximate
        // (lower-order log shift) for rescaled log weights
        WeightFamily::Log { lambda } => {
            TailSpec::with_log(-(n + g1), r_scale.powf(n + g1), lambda)
        }
    };
    Ok(GridFunction::sample_with(grid, f, None, outer)?)
}

/// Construct a power-family weight, building the `ℳ` kernel table for the
/// grid (cached via `FPLE_CACHE_DIR` if set). Inadmissible `λ` yields a
/// weight with `C(φ)` flagged [`WeightConstant::Infinite`], not an error.
pub fn make_weight(
    params: &Params,
    lambda: f64,
    grid: Arc<RadialGrid>,
) -> Result<Weight, WeightError> {
    if lambda <= 0.0 {
        return Err(WeightError::BadLambda(lambda));
    }
    let table = build_m_table(params, grid)?;
    make_weight_with(params, WeightFamily::Power { lambda }, &table)
}

/// Construct a log-family weight at the critical decay `N + γ₁`.
pub fn make_log_weight(
    params: &Params,
    lambda: f64,
    grid: Arc<RadialGrid>,
) -> Result<Weight, WeightError> {
    let table = build_m_table(params, grid)?;
    make_weight_with(params, WeightFamily::Log { lambda }, &table)
}

/// Build the absolute-difference kernel table of order `sp` for a grid.
pub fn build_m_table(
    params: &Params,
    grid: Arc<RadialGrid>,
) -> Result<Arc<KernelTable>, WeightError> {
    if params.sp() >= 1.0 {
        return Err(WeightError::RequiresSpLtOne { sp: params.sp() });
    }
    Ok(Arc::new(
        KernelTable::build(grid, params.sigma(), 1e-8).map_err(OperatorError::from)?,
    ))
}

/// Construct a weight against an existing kernel table (reuse across λ).
pub fn make_weight_with(
    params: &Params,
    family: WeightFamily,
    table: &KernelTable,
) -> Result<Weight, WeightError> {
    if params.sp() >= 1.0 {
        return Err(WeightError::RequiresSpLtOne { sp: params.sp() });
    }
    if (table.sigma() - params.sigma()).abs() > 1e-12 {
        return Err(OperatorError::GridMismatch(
            "kernel table order must equal sp for the weight constant".into(),
        )
        .into());
    }
    let values = family_values(params, family, table.grid().clone(), 1.0)?;
    let scaling_exponent = params.n() * (2.0 - params.p) - params.sp();
    match weight_constant_impl(&values, params, table) {
        Ok(c) => {
            let k = (2.0 - params.p) * c.powf(2.0 - params.p);
            Ok(Weight {
                family,
                values,
                c_phi: WeightConstant::Finite(c),
                k_phi: WeightConstant::Finite(k),
                admissible: true,
                r_scale: 1.0,
                scaling_exponent,
            })
        }
        Err(WeightError::DivergentWeightConstant(_)) => Ok(Weight {
            family,
            values,
            c_phi: WeightConstant::Infinite,
            k_phi: WeightConstant::Infinite,
            admissible: false,
            r_scale: 1.0,
            scaling_exponent,
        }),
        Err(e) => Err(e),
    }
}

/// Recompute `C(φ)` for a weight (public cross-check entry point).
pub fn weight_constant(
    phi: &Weight,
    params: &Params,
    table: &KernelTable,
) -> Result<f64, WeightError> {
    weight_constant_impl(&phi.values, params, table)
}

fn weight_constant_impl(
    phi: &GridFunction,
    params: &Params,
    table: &KernelTable,
) -> Result<f64, WeightError> {
    let mphi = apply_maximal(phi, table)?;
    let p = params.p;
    let n = params.n();
    let sp = params.sp();
    let e2p = 1.0 / (2.0 - p);
    let ep = (p - 1.0) / (2.0 - p);
    let grid = phi.grid();
    let vals = phi.values();
    let mut total = 0.0;
    for i in 0..=grid.m() {
        let w = grid.volume_weight(i);
        if w > 0.0 {
            total += w * mphi[i].max(0.0).powf(e2p) * vals[i].powf(-ep);
        }
    }

    // measured amplitude of the proven decay ℳφ ~ C_M r^{-(N+sp)}
    let nodes = grid.nodes();
    let m = grid.m();
    let mut samples: Vec<f64> = (0..=m)
        .filter(|&i| nodes[i] >= grid.r_max() / 3.0 && nodes[i] <= 0.9 * grid.r_max())
        .map(|i| mphi[i] * nodes[i].powf(n + sp))
        .collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let c_m = samples[samples.len() / 2];

    // integrand model beyond r_max: coeff · r^{pow} · ln(e+r)^{log}
    let ot = phi.outer_tail();
    let pow = -(n + sp) * e2p - ot.exponent * ep;
    let log_exp = -ot.log_exponent * ep;
    let coeff = c_m.powf(e2p) * ot.coefficient.powf(-ep);
    let omega = grid.omega();
    let model = |r: f64| {
        coeff * r.powf(pow + n - 1.0) * (std::f64::consts::E + r).ln().powf(log_exp) * omega
    };

    // dyadic tail blocks with Cauchy gate
    const BLOCKS: usize = 20;
    let mut lo = grid.r_max();
    let mut blocks = [0.0f64; BLOCKS];
    for b in blocks.iter_mut() {
        let hi = 2.0 * lo;
        let mid = (lo * hi).sqrt();
        *b = quad::gauss8(&model, lo, mid) + quad::gauss8(&model, mid, hi);
        lo = hi;
    }
    let tail_sum: f64 = blocks.iter().sum();
    let q = blocks[BLOCKS - 1] / blocks[BLOCKS - 2];
    if q >= 0.9999995 {
        return Err(WeightError::DivergentWeightConstant(format!(
            "dyadic tail blocks fail the Cauchy test (ratio {q:.7})"
        )));
    }
    let s_pow = pow + n; // per-block scaling exponent (up to log drift)
    let remainder = if s_pow < -1e-9 {
        blocks[BLOCKS - 1] * q / (1.0 - q)
    } else if s_pow <= 1e-9 {
        // marginal power: convergence decided by the log exponent
        if log_exp >= -1.0 - 1e-9 {
            return Err(WeightError::DivergentWeightConstant(format!(
                "marginal tail with log exponent {log_exp} diverges"
            )));
        }
        let l_end = (std::f64::consts::E + lo).ln();
        coeff * omega * l_end.powf(log_exp + 1.0) / (-(log_exp + 1.0))
    } else {
        return Err(WeightError::DivergentWeightConstant(format!(
            "tail exponent {s_pow} is nonintegrable"
        )));
    };
    Ok(total + tail_sum + remainder)
}

/// Rescale: `φ_R(x) = φ(x/R)`, with the exact constant laws
/// `K(φ_R) = K(φ)·R^{N(2-p)-sp}` and `C(φ_R) = C(φ)·R^{(N(2-p)-sp)/(2-p)}`.
///
/// The node values are resampled from the closed-form family (no
/// interpolation); for log-family weights the outer-tail log shift
/// `ln(e+r/R) → ln(e+r)` is absorbed as a lower-order error.
pub fn rescale_weight(phi: &Weight, r: f64, params: &Params) -> Result<Weight, WeightError> {
    assert!(r > 0.0, "rescale factor must be positive");
    let r_scale = phi.r_scale * r;
    let values = family_values(params, phi.family, phi.values.grid().clone(), r_scale)?;
    let kmul = r.powf(phi.scaling_exponent);
    let cmul = r.powf(phi.scaling_exponent / (2.0 - params.p));
    let map = |c: WeightConstant, mul: f64| match c {
        WeightConstant::Finite(v) => WeightConstant::Finite(v * mul),
        WeightConstant::Infinite => WeightConstant::Infinite,
    };
    Ok(Weight {
        family: phi.family,
        values,
        c_phi: map(phi.c_phi, cmul),
        k_phi: map(phi.k_phi, kmul),
        admissible: phi.admissible,
        r_scale,
        scaling_exponent: phi.scaling_exponent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn std_params() -> Params {
        Params::new(0.5, 1.5, 1).unwrap()
    }

    #[test]
    fn power_family_threshold_and_consistency() {
        let prm = std_params(); // threshold sp/(p-1) = 1.5
        let grid = RadialGrid::geometric(200, 1e3, None, 1).unwrap();
        let table = build_m_table(&prm, grid.clone()).unwrap();
        let w_ok = make_weight_with(&prm, WeightFamily::Power { lambda: 1.4 }, &table).unwrap();
        assert!(w_ok.admissible);
        let c = w_ok.c_phi.finite().expect("admissible weight has finite C");
        assert!(c > 0.0);
        let k = w_ok.k_phi.finite().unwrap();
        assert_relative_eq!(k, (2.0 - prm.p) * c.powf(2.0 - prm.p), max_relative = 1e-12);

        let w_bad = make_weight_with(&prm, WeightFamily::Power { lambda: 1.65 }, &table).unwrap();
        assert!(!w_bad.admissible);
        assert_eq!(w_bad.c_phi, WeightConstant::Infinite);
        assert!(matches!(
            weight_constant(&w_bad, &prm, &table),
            Err(WeightError::DivergentWeightConstant(_))
        ));

        // heavier admissible decay gives a larger constant
        let w_mid = make_weight_with(&prm, WeightFamily::Power { lambda: 1.0 }, &table).unwrap();
        assert!(c > w_mid.c_phi.finite().unwrap());
    }

    #[test]
    fn weight_is_one_at_origin() {
        let prm = std_params();
        let grid = RadialGrid::geometric(64, 100.0, None, 1).unwrap();
        let table = build_m_table(&prm, grid).unwrap();
        for family in [
            WeightFamily::Power { lambda: 0.3 },
            WeightFamily::Power { lambda: 1.0 },
            WeightFamily::Log { lambda: 2.0 },
        ] {
            let w = make_weight_with(&prm, family, &table).unwrap();
            assert_eq!(w.values.values()[0], 1.0);
        }
    }

    #[test]
    fn near_threshold_constant_stable_under_domain_doubling() {
        let prm = std_params();
        let lambda = 0.99 * 1.5;
        let g1 = RadialGrid::geometric(256, 1e3, Some(0.05), 1).unwrap();
        let g2 = RadialGrid::geometric(274, 2e3, Some(0.05), 1).unwrap();
        let c: Vec<f64> = [g1, g2]
            .into_iter()
            .map(|g| {
                make_weight(&prm, lambda, g)
                    .unwrap()
                    .c_phi
                    .finite()
                    .expect("0.99·threshold is admissible")
            })
            .collect();
        assert_relative_eq!(c[0], c[1], max_relative = 0.02);
    }

    #[test]
    fn sp_at_least_one_is_rejected() {
        let prm = Params::new(0.6, 1.8, 1).unwrap(); // sp = 1.08
        let grid = RadialGrid::geometric(32, 10.0, None, 1).unwrap();
        assert!(matches!(
            make_weight(&prm, 0.5, grid),
            Err(WeightError::RequiresSpLtOne { .. })
        ));
    }

    #[test]
    fn rescale_matches_shifted_nodes_and_constant_law() {
        let prm = std_params();
        let grid = RadialGrid::geometric(200, 1e3, None, 1).unwrap();
        let table = build_m_table(&prm, grid.clone()).unwrap();
        let w = make_weight_with(&prm, WeightFamily::Power { lambda: 1.0 }, &table).unwrap();
        let nodes = grid.nodes();
        let ratio = nodes[2] / nodes[1];
        let k_shift = 16usize;
        let r = ratio.powi(k_shift as i32);
        let w_r = rescale_weight(&w, r, &prm).unwrap();
        for j in (k_shift + 1)..=grid.m() {
            assert_relative_eq!(
                w_r.values.values()[j],
                w.values.values()[j - k_shift],
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(
            w_r.k_phi.finite().unwrap() / w.k_phi.finite().unwrap(),
            r.powf(prm.n() * (2.0 - prm.p) - prm.sp()),
            max_relative = 1e-12
        );
        // identity rescale
        let w_1 = rescale_weight(&w, 1.0, &prm).unwrap();
        assert_eq!(w_1.values.values(), w.values.values());
    }

    #[test]
    fn rescale_exponent_example_dimension_two() {
        // N(2-p)-sp = 2·0.8-0.6 = 1, so R = 10 multiplies K by 10
        let prm = Params::new(0.5, 1.2, 2).unwrap();
        let grid = RadialGrid::geometric(96, 100.0, None, 2).unwrap();
        let w = make_weight(&prm, 1.0, grid).unwrap();
        assert!(w.admissible, "λ=1 is far below threshold sp/(p-1)=3");
        let w10 = rescale_weight(&w, 10.0, &prm).unwrap();
        assert_relative_eq!(
            w10.k_phi.finite().unwrap(),
            10.0 * w.k_phi.finite().unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn mass_scaling_exponent_sign_matches_regime() {
        // N(2-p)-sp > 0 iff p < p_c, over random parameter draws
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..100 {
            let s: f64 = rng.gen_range(0.1..0.9);
            let p: f64 = rng.gen_range(1.05..1.95);
            let dim = rng.gen_range(1..=3u32);
            let prm = match Params::new(s, p, dim) {
                Ok(prm) => prm,
                Err(_) => continue,
            };
            let expo = prm.n() * (2.0 - p) - prm.sp();
            let pc = crate::params::p_critical(s, dim);
            if p < pc {
                assert!(expo > 0.0, "s={s} p={p} N={dim}");
            } else if p > pc {
                assert!(expo < 0.0, "s={s} p={p} N={dim}");
            }
        }
    }

    #[test]
    fn log_family_gate_matches_analytic_threshold() {
        let prm = std_params(); // (2-p)/(p-1) = 1
        let grid = RadialGrid::geometric(200, 1e3, None, 1).unwrap();
        let table = build_m_table(&prm, grid).unwrap();
        let w_ok = make_weight_with(&prm, WeightFamily::Log { lambda: 2.0 }, &table).unwrap();
        assert!(w_ok.admissible);
        assert!(w_ok.c_phi.finite().unwrap() > 0.0);
        let w_bad = make_weight_with(&prm, WeightFamily::Log { lambda: 0.8 }, &table).unwrap();
        assert!(!w_bad.admissible);
    }
}
