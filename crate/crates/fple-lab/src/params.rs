//! Parameter validation and the exponent dictionary.
//!
//! Everything downstream is driven by the triple `(s, p, N)` with
//! `0 < s < 1`, `1 < p < 2`, `N >= 1`, and the derived exponents:
//!
//! * `p_c = 2N/(N+s)` — below it mass is lost in finite time, above it mass
//!   is conserved;
//! * `q_star = N(2-p)/(sp)` — the integrability index separating extinction
//!   from positivity-forever (only > 1 when `p < p_c`);
//! * `gamma1 = sp/(p-1)` — the critical growth rate for existence;
//! * `gamma_star = sp/(2-p)` — the spatial rate of the very singular
//!   solution;
//! * `gamma2 = max(-N, -gamma_star)` — the lower bound on admissible
//!   decaying power data;
//! * `beta_fund = 1/(sp + N(2-p))` — the fundamental time exponent field.
//!
//! First-kind similarity solutions `u = t^{-α} F(|x| t^{-β})` for power data
//! `A |x|^γ` have `β = 1/(sp + γ(2-p))`, `α = γβ`; the line
//! `γ = -gamma_star` makes the denominator vanish (second-kind scaling) and
//! is reported as [`ParamError::DegenerateExponent`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used when deciding `p == p_c`.
pub const CRITICAL_REL_TOL: f64 = 1e-12;
/// Absolute tolerance on `sp + γ(2-p)` below which similarity exponents are
/// reported as degenerate.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("s must lie strictly in (0,1), got {0}")]
    InvalidS(f64),
    #[error("p must lie strictly in (1,2), got {0}")]
    InvalidP(f64),
    #[error("spatial dimension must be >= 1, got {0}")]
    InvalidDim(u32),
    #[error("p1_override = {0} must lie strictly between p_c and 2")]
    InvalidP1(f64),
    #[error("gamma = {gamma} is degenerate: sp + gamma*(2-p) = {value:e} vanishes within {tol:e}")]
    DegenerateExponent { gamma: f64, value: f64, tol: f64 },
    #[error("the singular-branch split inside the good range needs p1_override, none was provided")]
    MissingP1,
    #[error("operation requires regime `{required}`, parameters are in `{actual}`")]
    WrongRegime {
        required: &'static str,
        actual: String,
    },
}

/// Validated problem parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub s: f64,
    pub p: f64,
    pub dim: u32,
    /// Optional numeric value of the secondary critical exponent `p₁`
    /// separating singular-profile existence from blow-up inside the good
    /// range. There is no closed formula for it here; callers that need the
    /// split must supply a value.
    #[serde(default)]
    pub p1_override: Option<f64>,
}

/// The derived critical exponents for a parameter triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub p_c: f64,
    pub q_star: f64,
    pub gamma1: f64,
    pub gamma_star: f64,
    pub gamma2: f64,
    pub beta_fund: f64,
}

/// Similarity exponents of a first-kind self-similar solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub alpha: f64,
    pub beta: f64,
}

/// Diffusion regime of a parameter triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `p_c < p < 2`: mass-conserving good fast diffusion. The flag tells
    /// whether `p < p₁` (singular-profile existence); `None` when no
    /// `p1_override` is available.
    Good { singular_branch: Option<bool> },
    /// `p = p_c` within [`CRITICAL_REL_TOL`].
    Critical,
    /// `1 < p < p_c`: very fast diffusion (finite-time extinction exists).
    VeryFast,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Good { singular_branch } => match singular_branch {
                Some(true) => write!(f, "good (singular branch, p < p1)"),
                Some(false) => write!(f, "good (p >= p1)"),
                None => write!(f, "good"),
            },
            Regime::Critical => write!(f, "critical (p = p_c)"),
            Regime::VeryFast => write!(f, "very fast (p < p_c)"),
        }
    }
}

/// Critical mass-conservation exponent `p_c = 2N/(N+s)`.
pub fn p_critical(s: f64, dim: u32) -> f64 {
    let n = dim as f64;
    2.0 * n / (n + s)
}

impl Params {
    pub fn new(s: f64, p: f64, dim: u32) -> Result<Self, ParamError> {
        if !(s > 0.0 && s < 1.0) || !s.is_finite() {
            return Err(ParamError::InvalidS(s));
        }
        if !(p > 1.0 && p < 2.0) || !p.is_finite() {
            return Err(ParamError::InvalidP(p));
        }
        if dim < 1 {
            return Err(ParamError::InvalidDim(dim));
        }
        Ok(Params {
            s,
            p,
            dim,
            p1_override: None,
        })
    }

    pub fn with_p1(mut self, p1: f64) -> Result<Self, ParamError> {
        let p_c = p_critical(self.s, self.dim);
        if !(p1 > p_c && p1 < 2.0) || !p1.is_finite() {
            return Err(ParamError::InvalidP1(p1));
        }
        self.p1_override = Some(p1);
        Ok(self)
    }

    /// Validate a deserialized instance (config files bypass `new`).
    pub fn validate(&self) -> Result<(), ParamError> {
        let mut q = Params::new(self.s, self.p, self.dim)?;
        if let Some(p1) = self.p1_override {
            q = q.with_p1(p1)?;
        }
        let _ = q;
        Ok(())
    }

    pub fn sp(&self) -> f64 {
        self.s * self.p
    }

    pub fn n(&self) -> f64 {
        self.dim as f64
    }

    /// Kernel exponent `σ = N + sp` of the radial reduction.
    pub fn sigma(&self) -> f64 {
        self.n() + self.sp()
    }

    pub fn critical_exponents(&self) -> ExponentSet {
        let n = self.n();
        let sp = self.sp();
        let gamma_star = sp / (2.0 - self.p);
        ExponentSet {
            p_c: p_critical(self.s, self.dim),
            q_star: n * (2.0 - self.p) / sp,
            gamma1: sp / (self.p - 1.0),
            gamma_star,
            gamma2: (-n).max(-gamma_star),
            beta_fund: 1.0 / (sp + n * (2.0 - self.p)),
        }
    }

    /// First-kind similarity exponents for power data `A |x|^γ`.
    pub fn similarity_exponents(&self, gamma: f64) -> Result<Similarity, ParamError> {
        let denom = self.sp() + gamma * (2.0 - self.p);
        if denom.abs() < DEGENERATE_TOL {
            return Err(ParamError::DegenerateExponent {
                gamma,
                value: denom,
                tol: DEGENERATE_TOL,
            });
        }
        let beta = 1.0 / denom;
        Ok(Similarity {
            alpha: gamma * beta,
            beta,
        })
    }

    /// Smoothing rates for data in L^q: `beta_q = 1/(N(p-2) + spq)`,
    /// `alpha_q = N beta_q`. Only meaningful when the denominator is
    /// positive, i.e. `q > q_star`; gating is the caller's concern.
    pub fn lq_rates(&self, q: f64) -> Similarity {
        let denom = self.n() * (self.p - 2.0) + self.sp() * q;
        let beta = 1.0 / denom;
        Similarity {
            alpha: self.n() * beta,
            beta,
        }
    }

    pub fn classify(&self) -> Regime {
        let p_c = p_critical(self.s, self.dim);
        if (self.p - p_c).abs() <= CRITICAL_REL_TOL * p_c {
            Regime::Critical
        } else if self.p > p_c {
            Regime::Good {
                singular_branch: self.p1_override.map(|p1| self.p < p1),
            }
        } else {
            Regime::VeryFast
        }
    }

    /// Whether `p < p₁` (singular-profile existence inside the good range);
    /// errors when the regime is not good or no override is available.
    pub fn singular_branch(&self) -> Result<bool, ParamError> {
        match self.classify() {
            Regime::Good { singular_branch } => singular_branch.ok_or(ParamError::MissingP1),
            other => Err(ParamError::WrongRegime {
                required: "good (p > p_c)",
                actual: other.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pars(s: f64, p: f64, n: u32) -> Params {
        Params::new(s, p, n).unwrap()
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        assert!(matches!(
            Params::new(0.0, 1.5, 1),
            Err(ParamError::InvalidS(_))
        ));
        assert!(matches!(
            Params::new(1.0, 1.5, 1),
            Err(ParamError::InvalidS(_))
        ));
        assert!(matches!(
            Params::new(0.5, 1.0, 1),
            Err(ParamError::InvalidP(_))
        ));
        assert!(matches!(
            Params::new(0.5, 2.0, 1),
            Err(ParamError::InvalidP(_))
        ));
        assert!(matches!(
            Params::new(0.5, 1.5, 0),
            Err(ParamError::InvalidDim(0))
        ));
    }

    #[test]
    fn exponent_set_reference_values() {
        // (s, p, N) = (1/2, 3/2, 1)
        let e = pars(0.5, 1.5, 1).critical_exponents();
        assert_relative_eq!(e.p_c, 4.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(e.q_star, 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(e.gamma1, 1.5, max_relative = 1e-15);
        assert_relative_eq!(e.gamma_star, 1.5, max_relative = 1e-15);
        assert_relative_eq!(e.gamma2, -1.0, max_relative = 1e-15);
        assert_relative_eq!(e.beta_fund, 0.8, max_relative = 1e-15);
    }

    #[test]
    fn q_star_is_one_exactly_at_critical_p() {
        for &(s, n) in &[(0.5f64, 2u32), (0.3, 1), (0.7, 3)] {
            let p_c = p_critical(s, n);
            let e = pars(s, p_c, n).critical_exponents();
            assert_relative_eq!(e.q_star, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn mass_scaling_exponent_changes_sign_at_p_c() {
        // β at γ = -N is positive above p_c and negative below it.
        let above = pars(0.5, 1.5, 1).similarity_exponents(-1.0).unwrap();
        assert!(above.beta > 0.0);
        assert_relative_eq!(above.beta, 4.0, max_relative = 1e-13);
        assert_relative_eq!(above.alpha, -4.0, max_relative = 1e-13);
        let below = pars(0.5, 1.2, 1).similarity_exponents(-1.0).unwrap();
        assert!(below.beta < 0.0);
        assert_relative_eq!(below.beta, -5.0, max_relative = 1e-13);
    }

    #[test]
    fn degenerate_at_minus_gamma_star() {
        let p = pars(0.5, 1.5, 2);
        let gs = p.critical_exponents().gamma_star;
        assert!(matches!(
            p.similarity_exponents(-gs),
            Err(ParamError::DegenerateExponent { .. })
        ));
        // just off the degenerate line it works
        assert!(p.similarity_exponents(-gs + 1e-3).is_ok());
    }

    #[test]
    fn classify_splits_regimes() {
        assert_eq!(pars(0.5, 1.2, 2).classify(), Regime::VeryFast);
        assert_eq!(
            pars(0.5, p_critical(0.5, 2), 2).classify(),
            Regime::Critical
        );
        assert_eq!(
            pars(0.5, 1.7, 2).classify(),
            Regime::Good {
                singular_branch: None
            }
        );
        let with_p1 = pars(0.5, 1.45, 1).with_p1(1.5616).unwrap();
        assert_eq!(
            with_p1.classify(),
            Regime::Good {
                singular_branch: Some(true)
            }
        );
        assert!(with_p1.singular_branch().unwrap());
        assert_eq!(
            pars(0.5, 1.45, 1).singular_branch(),
            Err(ParamError::MissingP1)
        );
        assert!(matches!(
            pars(0.5, 1.2, 2).singular_branch(),
            Err(ParamError::WrongRegime { .. })
        ));
    }

    #[test]
    fn lq_rates_match_similarity_at_marginal_power() {
        // data |x|^{-N/q} is marginal for L^q: the L^q smoothing rate equals
        // the similarity rate of that power.
        let p = pars(0.95, 1.9, 1);
        let q = 2.0;
        let lq = p.lq_rates(q);
        let sim = p.similarity_exponents(-p.n() / q).unwrap();
        assert_relative_eq!(lq.alpha, -sim.alpha, max_relative = 1e-12);
        assert_relative_eq!(lq.beta, sim.beta / q, max_relative = 1e-12);
        // and the fundamental field matches lq_rates at q = 1 up to sign
        // conventions: beta_fund uses N(2-p) with a plus sign.
        let e = p.critical_exponents();
        assert_relative_eq!(
            e.beta_fund,
            1.0 / (p.sp() + p.n() * (2.0 - p.p)),
            max_relative = 1e-15
        );
    }

    #[test]
    fn serde_round_trip_and_unknown_field_rejection() {
        let p = pars(0.5, 1.5, 2);
        let text = toml::to_string(&p).unwrap();
        let back: Params = toml::from_str(&text).unwrap();
        assert_eq!(p, back);
        let bad: Result<Params, _> = toml::from_str("s = 0.5\np = 1.5\ndim = 2\nbogus = 1\n");
        assert!(bad.is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn param_strategy() -> impl Strategy<Value = Params> {
            (0.05f64..0.95, 1.05f64..1.95, 1u32..4).prop_map(|(s, p, n)| {
                Params::new(s, p, n).unwrap()
            })
        }

        proptest! {
            #[test]
            fn gamma1_identity(prm in param_strategy()) {
                let e = prm.critical_exponents();
                prop_assert!((e.gamma1 * (prm.p - 1.0) - prm.sp()).abs() <= 1e-12 * prm.sp());
            }

            #[test]
            fn q_star_above_one_iff_very_fast(prm in param_strategy()) {
                let e = prm.critical_exponents();
                if (prm.p - e.p_c).abs() > 1e-6 {
                    prop_assert_eq!(e.q_star > 1.0, prm.p < e.p_c);
                }
            }

            #[test]
            fn gamma_star_positive_and_gamma2_consistent(prm in param_strategy()) {
                let e = prm.critical_exponents();
                prop_assert!(e.gamma_star > 0.0);
                prop_assert!(e.gamma2 >= -prm.n() - 1e-15);
                prop_assert!(e.gamma2 >= -e.gamma_star - 1e-15);
                prop_assert!(e.gamma2 == -prm.n() || e.gamma2 == -e.gamma_star);
            }

            #[test]
            fn beta_fund_always_positive(prm in param_strategy()) {
                prop_assert!(prm.critical_exponents().beta_fund > 0.0);
            }

            #[test]
            fn similarity_beta_decreases_in_gamma_on_growing_side(prm in param_strategy(), t in 0.05f64..0.95) {
                // for 0 < γa < γb < γ1 both β are positive and decreasing
                let e = prm.critical_exponents();
                let ga = t * 0.5 * e.gamma1;
                let gb = ga + 0.25 * e.gamma1;
                let sa = prm.similarity_exponents(ga).unwrap();
                let sb = prm.similarity_exponents(gb).unwrap();
                prop_assert!(sa.beta > 0.0 && sb.beta > 0.0);
                prop_assert!(sa.beta > sb.beta);
            }

            #[test]
            fn similarity_at_zero_gamma_is_pure_time_scaling(prm in param_strategy()) {
                let s0 = prm.similarity_exponents(0.0).unwrap();
                prop_assert!((s0.alpha).abs() < 1e-15);
                prop_assert!((s0.beta - 1.0 / prm.sp()).abs() <= 1e-12 / prm.sp());
            }
        }
    }
}
