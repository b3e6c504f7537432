//! fple-lab: a numerical laboratory for the radial fractional p-Laplacian
//! evolution `∂ₜu + (−Δ_p)ˢ u = 0` on ℝᴺ in the fast-diffusion range
//! `0 < s < 1`, `1 < p < 2`.
//!
//! The crate is organised around eight public modules:
//!
//! * [`params`] — parameter validation and the exponent dictionary
//!   (critical exponent `p_c`, similarity exponents, regime classification).
//! * [`grid`] — geometric radial grids, grid functions with analytic
//!   power-law tails, radial quadrature and norms.
//! * [`operator`] — kernel tables for the radial reduction of the nonlocal
//!   operator, principal-value application, and the power-map constant.
//! * [`weights`] — admissible weight families and the weighted-mass
//!   estimate constants `C(φ)`, `K(φ)`.
//! * [`stepper`] — explicit adaptive stepping, the implicit resolvent
//!   (proximal Newton), Crandall–Liggett orbits, and the evolution driver.
//! * [`selfsimilar`] — forward/backward self-similar profiles, very
//!   singular solutions, blow-up probes, and explicit supersolutions.
//! * [`analysis`] — audits that compare measured trajectories against
//!   theoretical bounds, plus positivity dichotomy and growth gates.
//! * [`cli`] — the command-line front end (`fple-lab` binary).
//!
//! Heavy loops (kernel assembly, operator application, sweeps) run through
//! [`par`], which dispatches to rayon when the default `parallel` feature is
//! enabled and to plain sequential iteration otherwise. Both paths produce
//! bitwise-identical results.

pub mod analysis;
pub mod cli;
pub mod grid;
pub mod operator;
pub mod par;
pub mod params;
pub mod quad;
pub mod selfsimilar;
pub mod stepper;
pub mod weights;

pub use grid::{GridFunction, RadialGrid, TailSpec};
pub use operator::KernelTable;
pub use params::{ExponentSet, Params, Regime};

/// Umbrella error for library consumers that do not care which stage failed.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Param(#[from] params::ParamError),
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error(transparent)]
    Operator(#[from] operator::OperatorError),
    #[error(transparent)]
    Weight(#[from] weights::WeightError),
    #[error(transparent)]
    Step(#[from] stepper::StepError),
    #[error(transparent)]
    SelfSimilar(#[from] selfsimilar::SelfSimilarError),
    #[error(transparent)]
    Audit(#[from] analysis::AuditError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 for configuration/validation
    /// problems, 3 for numerical failures (non-convergence, divergent
    /// quadrature), 1 is reserved for failed audits.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Param(_) | Error::Grid(_) | Error::Io(_) => 2,
            Error::Weight(weights::WeightError::RequiresSpLtOne { .. }) => 2,
            Error::Weight(weights::WeightError::BadLambda(_)) => 2,
            Error::Audit(analysis::AuditError::WrongIntegrability { .. }) => 2,
            Error::Audit(analysis::AuditError::NonIntegrableData(_)) => 2,
            _ => 3,
        }
    }
}
