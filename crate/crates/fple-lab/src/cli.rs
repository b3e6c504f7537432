//! Command-line front end: configuration parsing, subcommand dispatch,
//! and deterministic file output.
//!
//! One flat configuration ([`RunConfig`]) drives every subcommand; it can
//! come from a TOML file (`--config run.toml`), from command-line flags,
//! or both (flags win key-by-key). Unknown keys are rejected so that a
//! manifest diff always tells the whole story. Every artifact-producing
//! command writes a `manifest.json` with the fully resolved configuration
//! and a content hash of the kernel quadrature table — identical
//! config+seed reproduce every output file byte for byte.
//!
//! Exit codes: `0` success, `1` a requested audit measured a violation,
//! `2` configuration/validation problems, `3` numerical failures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    capped_cut_power, check_weighted_estimate, dichotomy_check, extinction_audit, growth_gate,
    mass_audit, smoothing_audit, AuditReport, Dichotomy, GrowthVerdict,
};
use crate::grid::{BallRadius, GridFunction, RadialGrid, TailSpec};
use crate::operator::KernelTable;
use crate::params::{Params, Regime};
use crate::selfsimilar::{blowup_probe, compute_profile, vss, ProfileConfig, VssMode};
use crate::stepper::{evolve, EvolveConfig, ProxConfig, Scheme, TailLaw, Trajectory};
use crate::weights::{build_m_table, make_weight_with, WeightConstant, WeightFamily};
use crate::{par, Error};

/// Quadrature tolerance used for every kernel table the CLI builds; part
/// of the cache key, so changing it invalidates cached tables.
const KERNEL_QUAD_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or missing configuration; exit code 2.
    #[error("config: {0}")]
    Config(String),
    /// Propagated library failure; exit code from [`Error::exit_code`].
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Lib(e) => e.exit_code(),
        }
    }
}

/// Wrap any module error in the umbrella type (`?` only applies one
/// `From` hop, so module errors need the explicit lift).
fn lib<E: Into<Error>>(e: E) -> CliError {
    CliError::Lib(e.into())
}

/// Kernel table for the flow operator at the CLI-wide quadrature
/// tolerance (two `From` hops away from the umbrella error).
fn build_table(grid: Arc<RadialGrid>, prm: &Params) -> Result<KernelTable, CliError> {
    KernelTable::build(grid, prm.sigma(), KERNEL_QUAD_TOL)
        .map_err(|e| lib(crate::operator::OperatorError::from(e)))
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!(
        "missing required key `{key}` (set it in the config file or pass --{key})"
    ))
}

// ---------------------------------------------------------------------------
// Flat run configuration
// ---------------------------------------------------------------------------

/// Flat key-value run configuration. Every field is optional so that a
/// config file and flag overrides merge field-by-field; resolution fills
/// in defaults and records them back into the struct, which is then
/// written to the manifest — the manifest alone re-runs the experiment.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // parameters
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    // grid
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_inner: Option<f64>,
    // initial data
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_offset: Option<f64>,
    // scheme
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub newton_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<u32>,
    // evolution window
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots_per_decade: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decades: Option<usize>,
    // experiment-specific
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse_times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder_levels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap_radius0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blowup_ratio: Option<f64>,
    // output
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Flag groups (merged over the config file, field by field)
// ---------------------------------------------------------------------------

macro_rules! override_some {
    ($dst:expr, $src:expr; $($f:ident),+ $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )+
    };
}

#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArg {
    /// TOML config file; explicit flags override its keys
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct ParamArgs {
    /// Fractional order s in (0,1)
    #[arg(long)]
    pub s: Option<f64>,
    /// Nonlinearity exponent p in (1,2)
    #[arg(long)]
    pub p: Option<f64>,
    /// Space dimension N >= 1
    #[arg(long = "N")]
    pub n: Option<u32>,
    /// Optional secondary critical exponent override (no closed formula)
    #[arg(long)]
    pub p1: Option<f64>,
}

impl ParamArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        override_some!(cfg, self; s, p, n, p1);
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct GridArgs {
    /// Number of geometric cells (nodes are 0..=M)
    #[arg(long)]
    pub grid_m: Option<usize>,
    /// Outer radius of the computational domain
    #[arg(long)]
    pub r_max: Option<f64>,
    /// First positive node (defaults to r_max/1000)
    #[arg(long)]
    pub r_inner: Option<f64>,
}

impl GridArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        override_some!(cfg, self; grid_m, r_max, r_inner);
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct DataArgs {
    /// Initial data kind: power | bump | vss | file
    #[arg(long)]
    pub data: Option<String>,
    /// Amplitude A of the data
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Power exponent of `A r^gamma` data
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Gaussian width of bump data
    #[arg(long)]
    pub width: Option<f64>,
    /// Truncate power data to zero outside this radius
    #[arg(long)]
    pub support: Option<f64>,
    /// Cap power data at its value at this radius (bounded data)
    #[arg(long)]
    pub cap_radius: Option<f64>,
    /// Load initial data from `<stem>.csv` + `<stem>.json`
    #[arg(long, value_name = "STEM")]
    pub file: Option<PathBuf>,
    /// Time offset T of very-singular-solution data
    #[arg(long)]
    pub t_offset: Option<f64>,
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        override_some!(cfg, self; data, amplitude, gamma, width, support, cap_radius, file, t_offset);
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct SchemeArgs {
    /// Time scheme: explicit | implicit
    #[arg(long)]
    pub scheme: Option<String>,
    /// Implicit step size (defaults to t_end/100)
    #[arg(long)]
    pub h: Option<f64>,
    /// Proximal Newton certificate tolerance
    #[arg(long)]
    pub newton_tol: Option<f64>,
    /// Proximal Newton iteration budget
    #[arg(long)]
    pub max_iters: Option<u32>,
}

impl SchemeArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        override_some!(cfg, self; scheme, h, newton_tol, max_iters);
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct TimeArgs {
    /// Final time of the run
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Snapshots per time decade
    #[arg(long)]
    pub snapshots_per_decade: Option<usize>,
    /// Time decades below t_end covered by snapshots
    #[arg(long)]
    pub decades: Option<usize>,
}

impl TimeArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        override_some!(cfg, self; t_end, snapshots_per_decade, decades);
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct OutArgs {
    /// Output directory for artifacts
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for randomized experiments (recorded in the manifest)
    #[arg(long)]
    pub seed: Option<u64>,
}

impl OutArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        override_some!(cfg, self; out, seed);
    }
}

// ---------------------------------------------------------------------------
// Command tree
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "fple-lab",
    version,
    about = "Numerical laboratory for the radial fractional p-Laplacian evolution",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the derived exponent dictionary for (s, p, N)
    Exponents {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Weight-family admissibility and constants C(phi), K(phi) as CSV
    Weight {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Decay offsets lambda (comma-separated list)
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        /// Weight family: power | log
        #[arg(long)]
        family: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evolve initial data and write trajectory artifacts
    Evolve {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[command(flatten)]
        time: TimeArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Extract the self-similar profile of power data A r^gamma
    Profile {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Power exponent of the data
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<f64>,
        /// Amplitude A of the data
        #[arg(long)]
        amplitude: Option<f64>,
        /// Times at which the self-similar collapse is measured
        #[arg(long, value_delimiter = ',')]
        collapse_times: Option<Vec<f64>>,
        #[command(flatten)]
        time: TimeArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Very-singular-solution balance constants and sampled data
    Vss {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Branch: forward (growth) | backward (extinction); default by regime
        #[arg(long)]
        mode: Option<String>,
        /// Time offset T of the branch
        #[arg(long)]
        t_offset: Option<f64>,
        /// Sample time for the emitted data file
        #[arg(long)]
        at: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Track the profile origin value along a ladder of growth exponents
    BlowupProbe {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Increasing growth exponents (comma-separated), all below gamma1
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        /// Amplitude A of the data
        #[arg(long)]
        amplitude: Option<f64>,
        #[command(flatten)]
        time: TimeArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare a run against a theoretical bound; exit 1 on FAIL
    Audit {
        #[command(subcommand)]
        kind: AuditCmd,
    },
    /// Run one command over a list of configurations (bounded worker pool)
    Sweep {
        /// Sweep TOML: base run keys plus sweep_key/sweep_values/sweep_command
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Root output directory (one subdirectory per sweep value)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default, Clone)]
pub struct AuditCommon {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    #[command(flatten)]
    pub time: TimeArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

impl AuditCommon {
    fn merge(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        self.params.apply(&mut cfg);
        self.grid.apply(&mut cfg);
        self.data.apply(&mut cfg);
        self.scheme.apply(&mut cfg);
        self.time.apply(&mut cfg);
        self.out.apply(&mut cfg);
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum AuditCmd {
    /// Lipschitz decay of the weighted mass X^(2-p) against K(phi)
    Weighted {
        #[command(flatten)]
        common: AuditCommon,
        /// Weight decay offset lambda
        #[arg(long)]
        lambda: Option<f64>,
        /// Weight family: power | log
        #[arg(long)]
        family: Option<String>,
        /// Number of random bump trials (0 = use the configured data)
        #[arg(long)]
        trials: Option<u32>,
    },
    /// Mass conservation / decay according to the diffusion regime
    Mass {
        #[command(flatten)]
        common: AuditCommon,
    },
    /// Extinction-time sandwich between lower and upper bounds
    Extinction {
        #[command(flatten)]
        common: AuditCommon,
    },
    /// Sup-norm smoothing rate for data in L^q0
    Smoothing {
        #[command(flatten)]
        common: AuditCommon,
        /// Integrability exponent of the initial data
        #[arg(long)]
        q0: Option<f64>,
    },
    /// Positivity alternative: every snapshot positive or extinct, never mixed
    Dichotomy {
        #[command(flatten)]
        common: AuditCommon,
        /// Relative positivity threshold
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Far-field growth gate of the initial data against gamma1
    Growth {
        #[command(flatten)]
        common: AuditCommon,
    },
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Parse `std::env::args` and run; returns the process exit code.
pub fn run_main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn merged(config: &ConfigArg, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, CliError> {
    let mut cfg = match &config.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    apply(&mut cfg);
    Ok(cfg)
}

pub fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Exponents {
            config,
            params,
            out,
        } => {
            let cfg = merged(&config, |c| {
                params.apply(c);
                out.apply(c);
            })?;
            cmd_exponents(cfg)
        }
        Command::Weight {
            config,
            params,
            grid,
            lambda,
            family,
            out,
        } => {
            let mut cfg = merged(&config, |c| {
                params.apply(c);
                grid.apply(c);
                out.apply(c);
            })?;
            if let Some(f) = family {
                cfg.family = Some(f);
            }
            // a single lambda flows through the config; a list stays local
            if let Some(ls) = &lambda {
                if ls.len() == 1 {
                    cfg.lambda = Some(ls[0]);
                }
            }
            cmd_weight(cfg, lambda)
        }
        Command::Evolve {
            config,
            params,
            grid,
            data,
            scheme,
            time,
            out,
        } => {
            let cfg = merged(&config, |c| {
                params.apply(c);
                grid.apply(c);
                data.apply(c);
                scheme.apply(c);
                time.apply(c);
                out.apply(c);
            })?;
            cmd_evolve(cfg)
        }
        Command::Profile {
            config,
            params,
            grid,
            gamma,
            amplitude,
            collapse_times,
            time,
            out,
        } => {
            let mut cfg = merged(&config, |c| {
                params.apply(c);
                grid.apply(c);
                time.apply(c);
                out.apply(c);
            })?;
            if gamma.is_some() {
                cfg.gamma = gamma;
            }
            if amplitude.is_some() {
                cfg.amplitude = amplitude;
            }
            if collapse_times.is_some() {
                cfg.collapse_times = collapse_times;
            }
            cmd_profile(cfg)
        }
        Command::Vss {
            config,
            params,
            grid,
            mode,
            t_offset,
            at,
            out,
        } => {
            let mut cfg = merged(&config, |c| {
                params.apply(c);
                grid.apply(c);
                out.apply(c);
            })?;
            if mode.is_some() {
                cfg.mode = mode;
            }
            if t_offset.is_some() {
                cfg.t_offset = t_offset;
            }
            if at.is_some() {
                cfg.at = at;
            }
            cmd_vss(cfg)
        }
        Command::BlowupProbe {
            config,
            params,
            grid,
            gammas,
            amplitude,
            time,
            out,
        } => {
            let mut cfg = merged(&config, |c| {
                params.apply(c);
                grid.apply(c);
                time.apply(c);
                out.apply(c);
            })?;
            if gammas.is_some() {
                cfg.gammas = gammas;
            }
            if amplitude.is_some() {
                cfg.amplitude = amplitude;
            }
            cmd_blowup_probe(cfg)
        }
        Command::Audit { kind } => match kind {
            AuditCmd::Weighted {
                common,
                lambda,
                family,
                trials,
            } => {
                let mut cfg = common.merge()?;
                if lambda.is_some() {
                    cfg.lambda = lambda;
                }
                if family.is_some() {
                    cfg.family = family;
                }
                if trials.is_some() {
                    cfg.trials = trials;
                }
                cmd_audit_weighted(cfg)
            }
            AuditCmd::Mass { common } => cmd_audit_mass(common.merge()?),
            AuditCmd::Extinction { common } => cmd_audit_extinction(common.merge()?),
            AuditCmd::Smoothing { common, q0 } => {
                let mut cfg = common.merge()?;
                if q0.is_some() {
                    cfg.q0 = q0;
                }
                cmd_audit_smoothing(cfg)
            }
            AuditCmd::Dichotomy { common, tol } => {
                let mut cfg = common.merge()?;
                if tol.is_some() {
                    cfg.tol = tol;
                }
                cmd_audit_dichotomy(cfg)
            }
            AuditCmd::Growth { common } => cmd_audit_growth(common.merge()?),
        },
        Command::Sweep { config, out } => cmd_sweep(&config, out),
    }
}

/// Run a command by name on a resolved configuration (used by `sweep` and
/// by in-process reproducibility tests).
pub fn dispatch_named(command: &str, cfg: RunConfig) -> i32 {
    let result = match command {
        "exponents" => cmd_exponents(cfg),
        "weight" => cmd_weight(cfg, None),
        "evolve" => cmd_evolve(cfg),
        "profile" => cmd_profile(cfg),
        "vss" => cmd_vss(cfg),
        "blowup-probe" => cmd_blowup_probe(cfg),
        "audit-weighted" => cmd_audit_weighted(cfg),
        "audit-mass" => cmd_audit_mass(cfg),
        "audit-extinction" => cmd_audit_extinction(cfg),
        "audit-smoothing" => cmd_audit_smoothing(cfg),
        "audit-dichotomy" => cmd_audit_dichotomy(cfg),
        "audit-growth" => cmd_audit_growth(cfg),
        other => Err(CliError::Config(format!(
            "unknown sweep command `{other}`"
        ))),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---------------------------------------------------------------------------
// Resolution helpers
// ---------------------------------------------------------------------------

fn require<T: Copy>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| missing(key))
}

fn resolve_params(cfg: &RunConfig) -> Result<Params, CliError> {
    let s = require(cfg.s, "s")?;
    let p = require(cfg.p, "p")?;
    let dim = require(cfg.n, "N")?;
    let mut prm = Params::new(s, p, dim).map_err(lib)?;
    if let Some(p1) = cfg.p1 {
        prm = prm.with_p1(p1).map_err(lib)?;
    }
    Ok(prm)
}

fn resolve_grid(cfg: &mut RunConfig, dim: u32) -> Result<Arc<RadialGrid>, CliError> {
    let m = *cfg.grid_m.get_or_insert(512);
    let r_max = *cfg.r_max.get_or_insert(1e3);
    RadialGrid::geometric(m, r_max, cfg.r_inner, dim).map_err(lib)
}

/// Build the initial data; the returned grid is the one the run must use
/// (file data brings its own grid).
fn resolve_data(
    cfg: &mut RunConfig,
    prm: &Params,
    grid: &Arc<RadialGrid>,
) -> Result<(GridFunction, TailLaw), CliError> {
    let kind = cfg.data.get_or_insert_with(|| "bump".into()).clone();
    let a = *cfg.amplitude.get_or_insert(1.0);
    if !(a > 0.0) {
        return Err(CliError::Config(format!("amplitude must be positive, got {a}")));
    }
    match kind.as_str() {
        "bump" => {
            let w = *cfg.width.get_or_insert(1.0);
            if !(w > 0.0) {
                return Err(CliError::Config(format!("width must be positive, got {w}")));
            }
            let u = GridFunction::sample_with(
                grid.clone(),
                move |r| a * (-(r / w) * (r / w)).exp(),
                None,
                TailSpec::zero(),
            )
            .map_err(lib)?;
            Ok((u, TailLaw::Frozen))
        }
        "power" => {
            let gamma = require(cfg.gamma, "gamma")?;
            let u = match (cfg.support, cfg.cap_radius) {
                (Some(cut), Some(cap)) => {
                    if !(gamma < 0.0) {
                        return Err(CliError::Config(
                            "cap_radius with support requires gamma < 0".into(),
                        ));
                    }
                    if !(cap > 0.0 && cap < cut) {
                        return Err(CliError::Config(format!(
                            "need 0 < cap_radius < support, got cap_radius = {cap}, support = {cut}"
                        )));
                    }
                    capped_cut_power(grid, a, gamma, cap, cut).map_err(lib)?
                }
                (Some(cut), None) => {
                    if !(cut > 0.0) {
                        return Err(CliError::Config(format!(
                            "support must be positive, got {cut}"
                        )));
                    }
                    let inner = if gamma < 0.0 {
                        Some(TailSpec::new(gamma, a))
                    } else {
                        None
                    };
                    GridFunction::sample_with(
                        grid.clone(),
                        move |r| {
                            if r > cut {
                                0.0
                            } else {
                                a * r.powf(gamma)
                            }
                        },
                        inner,
                        TailSpec::zero(),
                    )
                    .map_err(lib)?
                }
                (None, Some(cap)) => {
                    if !(gamma < 0.0) {
                        return Err(CliError::Config("cap_radius requires gamma < 0".into()));
                    }
                    let top = a * cap.powf(gamma);
                    GridFunction::sample_with(
                        grid.clone(),
                        move |r| (a * r.powf(gamma)).min(top),
                        None,
                        TailSpec::new(gamma, a),
                    )
                    .map_err(lib)?
                }
                (None, None) => GridFunction::sample_power(grid.clone(), a, gamma).map_err(lib)?,
            };
            Ok((u, TailLaw::Frozen))
        }
        "vss" => {
            let t0 = *cfg.t_offset.get_or_insert(1.0);
            let mode = resolve_vss_mode(cfg, prm)?;
            let v = vss(prm, mode, t0).map_err(lib)?;
            let u = v.data(prm, grid, 0.0).map_err(lib)?;
            let law = match mode {
                VssMode::Backward => TailLaw::BackwardVss { t_ext: t0 },
                VssMode::Forward => TailLaw::Frozen,
            };
            Ok((u, law))
        }
        "file" => {
            let stem = cfg.file.clone().ok_or_else(|| missing("file"))?;
            let u = GridFunction::load(&stem).map_err(lib)?;
            if u.grid().dim() != prm.dim {
                return Err(CliError::Config(format!(
                    "data file has dimension {} but N = {}",
                    u.grid().dim(),
                    prm.dim
                )));
            }
            Ok((u, TailLaw::Frozen))
        }
        other => Err(CliError::Config(format!(
            "unknown data kind `{other}` (expected power | bump | vss | file)"
        ))),
    }
}

fn resolve_vss_mode(cfg: &mut RunConfig, prm: &Params) -> Result<VssMode, CliError> {
    let mode = match cfg.mode.as_deref() {
        Some("forward") => VssMode::Forward,
        Some("backward") => VssMode::Backward,
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown mode `{other}` (expected forward | backward)"
            )))
        }
        None => match prm.classify() {
            Regime::VeryFast => VssMode::Backward,
            Regime::Good { .. } => VssMode::Forward,
            Regime::Critical => {
                return Err(CliError::Config(
                    "no separated-variables branch at p = p_c; pass --mode".into(),
                ))
            }
        },
    };
    cfg.mode = Some(
        match mode {
            VssMode::Forward => "forward",
            VssMode::Backward => "backward",
        }
        .to_string(),
    );
    Ok(mode)
}

fn resolve_prox(cfg: &mut RunConfig) -> ProxConfig {
    let d = ProxConfig::default();
    ProxConfig {
        newton_tol: *cfg.newton_tol.get_or_insert(d.newton_tol),
        max_iters: *cfg.max_iters.get_or_insert(d.max_iters),
        ..d
    }
}

fn resolve_scheme(cfg: &mut RunConfig, t_end: f64) -> Result<Scheme, CliError> {
    let name = cfg.scheme.get_or_insert_with(|| "explicit".into()).clone();
    match name.as_str() {
        "explicit" => Ok(Scheme::Explicit),
        "implicit" => {
            let h = *cfg.h.get_or_insert(t_end / 100.0);
            if !(h > 0.0) {
                return Err(CliError::Config(format!("h must be positive, got {h}")));
            }
            Ok(Scheme::Implicit { h })
        }
        other => Err(CliError::Config(format!(
            "unknown scheme `{other}` (expected explicit | implicit)"
        ))),
    }
}

fn resolve_evolve(cfg: &mut RunConfig, tail_law: TailLaw) -> EvolveConfig {
    let prox = resolve_prox(cfg);
    EvolveConfig {
        snapshots_per_decade: *cfg.snapshots_per_decade.get_or_insert(8),
        decades: *cfg.decades.get_or_insert(3),
        tail_law,
        prox,
        ..EvolveConfig::default()
    }
}

struct RunPieces {
    prm: Params,
    u0: GridFunction,
    table: KernelTable,
    traj: Trajectory,
}

/// Shared resolution + evolution path of `evolve` and the trajectory
/// audits.
fn run_evolution(cfg: &mut RunConfig) -> Result<RunPieces, CliError> {
    let prm = resolve_params(cfg)?;
    let grid = resolve_grid(cfg, prm.dim)?;
    let (u0, tail_law) = resolve_data(cfg, &prm, &grid)?;
    let grid = u0.grid().clone();
    let t_end = *cfg.t_end.get_or_insert(1.0);
    if !(t_end > 0.0) {
        return Err(CliError::Config(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    let scheme = resolve_scheme(cfg, t_end)?;
    let ecfg = resolve_evolve(cfg, tail_law);
    let table = build_table(grid, &prm)?;
    let traj = evolve(&u0, &table, &prm, scheme, t_end, &ecfg).map_err(lib)?;
    Ok(RunPieces {
        prm,
        u0,
        table,
        traj,
    })
}

// ---------------------------------------------------------------------------
// Deterministic file output
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GridSummary {
    m: usize,
    r_max: f64,
    r1: f64,
    dim: u32,
}

impl GridSummary {
    fn of(grid: &RadialGrid) -> Self {
        GridSummary {
            m: grid.m(),
            r_max: grid.r_max(),
            r1: grid.r1(),
            dim: grid.dim(),
        }
    }
}

/// Run manifest: the resolved configuration plus provenance of the
/// numerical kernel. Deliberately timestamp-free so identical runs
/// produce identical manifests.
#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<GridSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_table_hash: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    notes: BTreeMap<String, String>,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(Error::Io).map_err(CliError::Lib)?;
    }
    std::fs::write(path, text).map_err(Error::Io).map_err(CliError::Lib)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    grid: Option<&RadialGrid>,
    table: Option<&KernelTable>,
    notes: BTreeMap<String, String>,
) -> Result<(), CliError> {
    let manifest = Manifest {
        tool: "fple-lab",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
        grid: grid.map(GridSummary::of),
        kernel_table_hash: table.map(|t| t.content_hash()),
        notes,
    };
    write_json(&out.join("manifest.json"), &manifest)
}

/// Long-format trajectory CSV: one `(t, r, u)` row per snapshot and node.
fn trajectory_csv(traj: &Trajectory) -> String {
    let grid = traj.grid();
    let mut s = String::from("t,r,u\n");
    for (t, u) in &traj.snapshots {
        for (r, v) in grid.nodes().iter().zip(u.values()) {
            s.push_str(&format!("{t},{r},{v}\n"));
        }
    }
    s
}

fn steps_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t,dt,scheme,iterations,residual\n");
    for rec in &traj.step_log {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.t, rec.dt, rec.scheme, rec.iterations, rec.residual
        ));
    }
    s
}

/// Space-separated two-column data file with a comment header
/// (plot-ready; non-finite rows are skipped).
fn dat_file(header: &str, rows: impl Iterator<Item = (f64, f64)>) -> String {
    let mut s = format!("# {header}\n");
    for (x, y) in rows {
        if x.is_finite() && y.is_finite() {
            s.push_str(&format!("{x} {y}\n"));
        }
    }
    s
}

fn supnorm_dat(traj: &Trajectory) -> String {
    dat_file(
        "t sup_norm",
        traj.snapshots.iter().map(|(t, u)| (*t, u.sup_norm())),
    )
}

/// Total mass per snapshot; `None` when the data is not integrable.
fn mass_dat(traj: &Trajectory) -> Option<String> {
    let mut rows = Vec::with_capacity(traj.snapshots.len());
    for (t, u) in &traj.snapshots {
        match u.integrate(BallRadius::Infinite) {
            Ok(m) if m.is_finite() => rows.push((*t, m)),
            _ => return None,
        }
    }
    Some(dat_file("t mass", rows.into_iter()))
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

fn cmd_exponents(cfg: RunConfig) -> Result<i32, CliError> {
    let prm = resolve_params(&cfg)?;
    let e = prm.critical_exponents();
    let regime = prm.classify();
    println!("{:<12} {}", "s", prm.s);
    println!("{:<12} {}", "p", prm.p);
    println!("{:<12} {}", "N", prm.dim);
    println!("{:<12} {}", "sp", prm.sp());
    println!("{:<12} {}", "sigma", prm.sigma());
    println!("{:<12} {}", "regime", regime);
    println!("{:<12} {}", "p_c", e.p_c);
    println!("{:<12} {}", "q_star", e.q_star);
    println!("{:<12} {}", "gamma1", e.gamma1);
    println!("{:<12} {}", "gamma_star", e.gamma_star);
    println!("{:<12} {}", "gamma2", e.gamma2);
    println!("{:<12} {}", "beta_fund", e.beta_fund);
    println!();
    let csv = format!(
        "s,p,N,sp,sigma,p_c,q_star,gamma1,gamma_star,gamma2,beta_fund,regime\n{},{},{},{},{},{},{},{},{},{},{},\"{}\"\n",
        prm.s,
        prm.p,
        prm.dim,
        prm.sp(),
        prm.sigma(),
        e.p_c,
        e.q_star,
        e.gamma1,
        e.gamma_star,
        e.gamma2,
        e.beta_fund,
        regime,
    );
    print!("{csv}");
    if let Some(out) = cfg.out.clone() {
        write_text(&out.join("exponents.csv"), &csv)?;
        write_manifest(&out, "exponents", &cfg, None, None, BTreeMap::new())?;
    }
    Ok(0)
}

fn weight_constant_cell(c: &WeightConstant) -> String {
    match c {
        WeightConstant::Finite(v) => format!("{v}"),
        WeightConstant::Infinite => "inf".to_string(),
    }
}

fn cmd_weight(mut cfg: RunConfig, lambdas: Option<Vec<f64>>) -> Result<i32, CliError> {
    let prm = resolve_params(&cfg)?;
    let grid = resolve_grid(&mut cfg, prm.dim)?;
    let family_name = cfg.family.get_or_insert_with(|| "power".into()).clone();
    let lambdas = match lambdas {
        Some(ls) if !ls.is_empty() => ls,
        _ => vec![*cfg.lambda.get_or_insert(1.0)],
    };
    let table = build_m_table(&prm, grid.clone()).map_err(lib)?;
    let mut csv = String::from("family,lambda,admissible,c_phi,k_phi\n");
    for &l in &lambdas {
        let fam = match family_name.as_str() {
            "power" => WeightFamily::Power { lambda: l },
            "log" => WeightFamily::Log { lambda: l },
            other => {
                return Err(CliError::Config(format!(
                    "unknown family `{other}` (expected power | log)"
                )))
            }
        };
        let w = make_weight_with(&prm, fam, &table).map_err(lib)?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            family_name,
            l,
            w.admissible,
            weight_constant_cell(&w.c_phi),
            weight_constant_cell(&w.k_phi),
        ));
    }
    print!("{csv}");
    if let Some(out) = cfg.out.clone() {
        write_text(&out.join("weight.csv"), &csv)?;
        write_manifest(&out, "weight", &cfg, Some(&grid), Some(&*table), BTreeMap::new())?;
    }
    Ok(0)
}

fn cmd_evolve(mut cfg: RunConfig) -> Result<i32, CliError> {
    let out = cfg
        .out
        .get_or_insert_with(|| PathBuf::from("fple-out"))
        .clone();
    let pieces = run_evolution(&mut cfg)?;
    let traj = &pieces.traj;
    let mut notes = BTreeMap::new();
    write_text(&out.join("trajectory.csv"), &trajectory_csv(traj))?;
    write_text(&out.join("steps.csv"), &steps_csv(traj))?;
    write_text(&out.join("supnorm.dat"), &supnorm_dat(traj))?;
    match mass_dat(traj) {
        Some(text) => write_text(&out.join("mass.dat"), &text)?,
        None => {
            notes.insert(
                "mass.dat".into(),
                "skipped: data is not integrable on the whole space".into(),
            );
        }
    }
    let (t_last, last) = traj.snapshots.last().expect("runs record snapshots");
    last.save(&out.join("final")).map_err(lib)?;
    notes.insert("final_time".into(), format!("{t_last}"));
    if let Some(t_ext) = traj.extinction_time {
        notes.insert("extinction_time".into(), format!("{t_ext}"));
    }
    write_manifest(
        &out,
        "evolve",
        &cfg,
        Some(traj.grid()),
        Some(&pieces.table),
        notes,
    )?;
    println!(
        "evolved to t = {} ({} snapshots, {} steps){}",
        t_last,
        traj.snapshots.len(),
        traj.step_log.len(),
        match traj.extinction_time {
            Some(t) => format!(", extinction at t = {t}"),
            None => String::new(),
        }
    );
    println!("artifacts in {}", out.display());
    Ok(0)
}

#[derive(Serialize)]
struct ProfileReport {
    gamma: f64,
    amplitude: f64,
    alpha: f64,
    beta: f64,
    collapse_error: f64,
    residual: f64,
    ladder_probe: Vec<f64>,
}

fn resolve_profile_cfg(cfg: &mut RunConfig) -> ProfileConfig {
    let d = ProfileConfig::default();
    let prox = resolve_prox(cfg);
    ProfileConfig {
        evolve: EvolveConfig {
            snapshots_per_decade: *cfg
                .snapshots_per_decade
                .get_or_insert(d.evolve.snapshots_per_decade),
            decades: *cfg.decades.get_or_insert(d.evolve.decades),
            prox,
            ..EvolveConfig::default()
        },
        collapse_times: cfg
            .collapse_times
            .get_or_insert_with(|| d.collapse_times.clone())
            .clone(),
        ladder_levels: *cfg.ladder_levels.get_or_insert(d.ladder_levels),
        cap_radius0: *cfg.cap_radius0.get_or_insert(d.cap_radius0),
        blowup_ratio: *cfg.blowup_ratio.get_or_insert(d.blowup_ratio),
    }
}

fn cmd_profile(mut cfg: RunConfig) -> Result<i32, CliError> {
    let out = cfg
        .out
        .get_or_insert_with(|| PathBuf::from("fple-out"))
        .clone();
    let prm = resolve_params(&cfg)?;
    let grid = resolve_grid(&mut cfg, prm.dim)?;
    let gamma = require(cfg.gamma, "gamma")?;
    let amplitude = *cfg.amplitude.get_or_insert(1.0);
    let pcfg = resolve_profile_cfg(&mut cfg);
    let table = build_table(grid.clone(), &prm)?;
    let res = compute_profile(&prm, gamma, amplitude, &table, &pcfg).map_err(lib)?;

    res.f.save(&out.join("profile")).map_err(lib)?;
    write_text(
        &out.join("profile.dat"),
        &dat_file(
            "y F",
            grid.nodes()
                .iter()
                .zip(res.f.values())
                .map(|(r, v)| (*r, *v)),
        ),
    )?;
    // self-similar collapse overlays at a spread of snapshot times
    let snaps = &res.trajectory.snapshots;
    let picks: Vec<usize> = [snaps.len() / 4, snaps.len() / 2, 3 * snaps.len() / 4, snaps.len() - 1]
        .into_iter()
        .filter(|&i| i > 0 && i < snaps.len())
        .collect();
    let mut seen = Vec::new();
    for (k, &i) in picks.iter().enumerate() {
        if seen.contains(&i) {
            continue;
        }
        seen.push(i);
        let (t, u) = &snaps[i];
        if *t <= 0.0 {
            continue;
        }
        let ta = t.powf(res.exponents.alpha);
        let tb = t.powf(res.exponents.beta);
        let mut text = format!("# t = {t}\n# y u_rescaled profile\n");
        for (r, v) in grid.nodes().iter().zip(u.values()) {
            let y = r / tb;
            let w = v / ta;
            if y.is_finite() && w.is_finite() && y <= grid.r_max() {
                text.push_str(&format!("{y} {w} {}\n", res.f.eval(y)));
            }
        }
        write_text(&out.join(format!("collapse_{k}.dat")), &text)?;
    }
    let report = ProfileReport {
        gamma: res.gamma,
        amplitude: res.amplitude,
        alpha: res.exponents.alpha,
        beta: res.exponents.beta,
        collapse_error: res.collapse_error,
        residual: res.residual,
        ladder_probe: res.ladder_probe.clone(),
    };
    write_json(&out.join("profile_report.json"), &report)?;
    let csv = format!(
        "gamma,amplitude,alpha,beta,collapse_error,residual\n{},{},{},{},{},{}\n",
        report.gamma,
        report.amplitude,
        report.alpha,
        report.beta,
        report.collapse_error,
        report.residual
    );
    write_text(&out.join("collapse.csv"), &csv)?;
    write_manifest(&out, "profile", &cfg, Some(&grid), Some(&table), BTreeMap::new())?;
    println!(
        "profile gamma = {}: alpha = {}, beta = {}, collapse error = {:.3e}, residual = {:.3e}",
        report.gamma, report.alpha, report.beta, report.collapse_error, report.residual
    );
    println!("artifacts in {}", out.display());
    Ok(0)
}

#[derive(Serialize)]
struct VssReport {
    mode: String,
    s: f64,
    p: f64,
    #[serde(rename = "N")]
    dim: u32,
    gamma_star: f64,
    c_inf: f64,
    t_offset: f64,
}

fn cmd_vss(mut cfg: RunConfig) -> Result<i32, CliError> {
    let prm = resolve_params(&cfg)?;
    let t0 = *cfg.t_offset.get_or_insert(1.0);
    let mode = resolve_vss_mode(&mut cfg, &prm)?;
    let v = vss(&prm, mode, t0).map_err(lib)?;
    let report = VssReport {
        mode: cfg.mode.clone().unwrap_or_default(),
        s: prm.s,
        p: prm.p,
        dim: prm.dim,
        gamma_star: prm.critical_exponents().gamma_star,
        c_inf: v.c_inf,
        t_offset: v.t_offset,
    };
    println!(
        "{} branch: C_inf = {}, gamma_star = {}, t_offset = {}",
        report.mode, report.c_inf, report.gamma_star, report.t_offset
    );
    if let Some(out) = cfg.out.clone() {
        let grid = resolve_grid(&mut cfg, prm.dim)?;
        let at = *cfg.at.get_or_insert(0.0);
        let u = v.data(&prm, &grid, at).map_err(lib)?;
        u.save(&out.join("vss")).map_err(lib)?;
        write_json(&out.join("vss_report.json"), &report)?;
        write_manifest(&out, "vss", &cfg, Some(&grid), None, BTreeMap::new())?;
        println!("artifacts in {}", out.display());
    }
    Ok(0)
}

fn cmd_blowup_probe(mut cfg: RunConfig) -> Result<i32, CliError> {
    let out = cfg
        .out
        .get_or_insert_with(|| PathBuf::from("fple-out"))
        .clone();
    let prm = resolve_params(&cfg)?;
    let grid = resolve_grid(&mut cfg, prm.dim)?;
    let gammas = cfg.gammas.clone().ok_or_else(|| missing("gammas"))?;
    let amplitude = *cfg.amplitude.get_or_insert(1.0);
    let pcfg = resolve_profile_cfg(&mut cfg);
    let table = build_table(grid.clone(), &prm)?;
    let report = blowup_probe(&prm, &gammas, amplitude, &table, &pcfg).map_err(lib)?;
    for (g, f0) in report.gammas.iter().zip(&report.origin_values) {
        println!("gamma = {g}: F(0) = {f0}");
    }
    println!(
        "nondecreasing: {}, growth ratio (last/first): {}",
        report.nondecreasing, report.growth_ratio
    );
    write_json(&out.join("probe.json"), &report)?;
    write_text(
        &out.join("probe.dat"),
        &dat_file(
            "gamma F(0)",
            report
                .gammas
                .iter()
                .zip(&report.origin_values)
                .map(|(g, v)| (*g, *v)),
        ),
    )?;
    write_manifest(&out, "blowup-probe", &cfg, Some(&grid), Some(&table), BTreeMap::new())?;
    println!("artifacts in {}", out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// Audits
// ---------------------------------------------------------------------------

/// Print the summary line, write the report JSON + manifest, and map
/// pass/fail onto the exit code.
#[allow(clippy::too_many_arguments)]
fn finish_audit(
    name: &str,
    report: &AuditReport,
    cfg: &RunConfig,
    out: &Path,
    grid: Option<&RadialGrid>,
    table: Option<&KernelTable>,
) -> Result<i32, CliError> {
    println!("{}", report.summary_line());
    write_json(&out.join(format!("audit_{}.json", name.replace('-', "_"))), report)?;
    write_manifest(out, &format!("audit-{name}"), cfg, grid, table, BTreeMap::new())?;
    Ok(if report.pass { 0 } else { 1 })
}

fn audit_out(cfg: &mut RunConfig) -> PathBuf {
    cfg.out
        .get_or_insert_with(|| PathBuf::from("fple-audit"))
        .clone()
}

fn cmd_audit_weighted(mut cfg: RunConfig) -> Result<i32, CliError> {
    let out = audit_out(&mut cfg);
    let trials = *cfg.trials.get_or_insert(0);
    let lambda = *cfg.lambda.get_or_insert(1.0);
    let family_name = cfg.family.get_or_insert_with(|| "power".into()).clone();
    let seed = *cfg.seed.get_or_insert(0);
    let prm = resolve_params(&cfg)?;
    let fam = match family_name.as_str() {
        "power" => WeightFamily::Power { lambda },
        "log" => WeightFamily::Log { lambda },
        other => {
            return Err(CliError::Config(format!(
                "unknown family `{other}` (expected power | log)"
            )))
        }
    };

    if trials == 0 {
        // single run on the configured data
        let mut inner = cfg.clone();
        let pieces = run_evolution(&mut inner)?;
        cfg = inner;
        let phi = make_weight_with(&prm, fam, &pieces.table).map_err(lib)?;
        let report = check_weighted_estimate(&pieces.traj, &phi, &prm).map_err(lib)?;
        return finish_audit(
            "weighted",
            &report,
            &cfg,
            &out,
            Some(pieces.traj.grid()),
            Some(&pieces.table),
        );
    }

    // randomized bump family, all sharing one grid and kernel table
    let grid = resolve_grid(&mut cfg, prm.dim)?;
    let t_end = *cfg.t_end.get_or_insert(1.0);
    let scheme = resolve_scheme(&mut cfg, t_end)?;
    let ecfg = resolve_evolve(&mut cfg, TailLaw::Frozen);
    let table = build_table(grid.clone(), &prm)?;
    let phi = make_weight_with(&prm, fam, &table).map_err(lib)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<AuditReport> = None;
    let mut all_pass = true;
    let mut meta = Vec::new();
    for k in 0..trials {
        let amp = rng.gen_range(0.5..2.0);
        let width = grid.r_max() * rng.gen_range(0.002..0.01);
        let u0 = GridFunction::sample_with(
            grid.clone(),
            move |r| amp * (-(r / width) * (r / width)).exp(),
            None,
            TailSpec::zero(),
        )
        .map_err(lib)?;
        let traj = evolve(&u0, &table, &prm, scheme, t_end, &ecfg).map_err(lib)?;
        let rep = check_weighted_estimate(&traj, &phi, &prm).map_err(lib)?;
        all_pass &= rep.pass;
        meta.push((format!("trial_{k:02}_measured"), format!("{}", rep.measured)));
        let is_worse = worst
            .as_ref()
            .map(|w| rep.measured > w.measured)
            .unwrap_or(true);
        if is_worse {
            worst = Some(rep);
        }
    }
    let mut report = worst.expect("at least one trial");
    report.pass = all_pass && report.pass;
    report.verdict = format!("worst of {trials} random bump trials (seed {seed})");
    for (k, v) in meta {
        report.metadata.insert(k, v);
    }
    report.metadata.insert("trials".into(), format!("{trials}"));
    report.metadata.insert("seed".into(), format!("{seed}"));
    finish_audit("weighted", &report, &cfg, &out, Some(&grid), Some(&table))
}

fn cmd_audit_mass(mut cfg: RunConfig) -> Result<i32, CliError> {
    let out = audit_out(&mut cfg);
    let pieces = run_evolution(&mut cfg)?;
    let report = mass_audit(&pieces.traj, &pieces.prm).map_err(lib)?;
    finish_audit(
        "mass",
        &report,
        &cfg,
        &out,
        Some(pieces.traj.grid()),
        Some(&pieces.table),
    )
}

fn cmd_audit_extinction(mut cfg: RunConfig) -> Result<i32, CliError> {
    let out = audit_out(&mut cfg);
    let pieces = run_evolution(&mut cfg)?;
    let report = extinction_audit(&pieces.u0, &pieces.traj, &pieces.prm).map_err(lib)?;
    finish_audit(
        "extinction",
        &report,
        &cfg,
        &out,
        Some(pieces.traj.grid()),
        Some(&pieces.table),
    )
}

fn cmd_audit_smoothing(mut cfg: RunConfig) -> Result<i32, CliError> {
    let out = audit_out(&mut cfg);
    let q0 = *cfg.q0.get_or_insert(2.0);
    let pieces = run_evolution(&mut cfg)?;
    let report = smoothing_audit(&pieces.traj, q0, &pieces.prm).map_err(lib)?;
    finish_audit(
        "smoothing",
        &report,
        &cfg,
        &out,
        Some(pieces.traj.grid()),
        Some(&pieces.table),
    )
}

fn cmd_audit_dichotomy(mut cfg: RunConfig) -> Result<i32, CliError> {
    let out = audit_out(&mut cfg);
    let tol = *cfg.tol.get_or_insert(1e-12);
    let pieces = run_evolution(&mut cfg)?;
    let scale0 = pieces.u0.finite_scale();
    let mut mixed = 0usize;
    let mut verdicts = Vec::new();
    for (t, u) in pieces.traj.snapshots.iter().skip(1) {
        match dichotomy_check(u, tol, scale0) {
            Dichotomy::Positive => verdicts.push((*t, "positive".to_string())),
            Dichotomy::Zero => verdicts.push((*t, "zero".to_string())),
            Dichotomy::Mixed { nodes } => {
                mixed += 1;
                verdicts.push((*t, format!("mixed at nodes {nodes:?}")));
            }
        }
    }
    let mut report = AuditReport::new("dichotomy", 0.0, mixed as f64, 0.0);
    report.verdict = match verdicts.last() {
        Some((t, v)) => format!("final snapshot (t = {t}): {v}"),
        None => "no snapshots after t = 0".to_string(),
    };
    for (t, v) in &verdicts {
        report.metadata.insert(format!("t_{t}"), v.clone());
    }
    report.metadata.insert("tol".into(), format!("{tol}"));
    finish_audit(
        "dichotomy",
        &report,
        &cfg,
        &out,
        Some(pieces.traj.grid()),
        Some(&pieces.table),
    )
}

fn cmd_audit_growth(mut cfg: RunConfig) -> Result<i32, CliError> {
    let out = audit_out(&mut cfg);
    let prm = resolve_params(&cfg)?;
    let grid = resolve_grid(&mut cfg, prm.dim)?;
    let (u0, _) = resolve_data(&mut cfg, &prm, &grid)?;
    let verdict = growth_gate(&u0, &prm);
    let g1 = prm.critical_exponents().gamma1;
    let tail = u0.outer_tail();
    let measured = if tail.is_zero() { 0.0 } else { tail.exponent };
    let mut report = AuditReport::new("growth-gate", g1, measured, 0.0);
    report.pass = verdict == GrowthVerdict::Admissible;
    report.verdict = match verdict {
        GrowthVerdict::Admissible => "far-field growth below gamma1".to_string(),
        GrowthVerdict::Critical => {
            "critical growth rate: existence fails by instantaneous blow-up".to_string()
        }
        GrowthVerdict::Inadmissible => "far-field growth above gamma1".to_string(),
    };
    report
        .metadata
        .insert("log_exponent".into(), format!("{}", tail.log_exponent));
    finish_audit("growth", &report, &cfg, &out, Some(u0.grid()), None)
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

fn toml_scalar(v: &toml::Value) -> String {
    match v {
        toml::Value::Float(f) => format!("{f}"),
        toml::Value::Integer(i) => format!("{i}"),
        toml::Value::String(s) => s.clone(),
        toml::Value::Boolean(b) => format!("{b}"),
        other => format!("{other}"),
    }
}

fn cmd_sweep(config: &Path, out_override: Option<PathBuf>) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let key = match table.remove("sweep_key") {
        Some(toml::Value::String(s)) => s,
        _ => return Err(CliError::Config("sweep_key (string) is required".into())),
    };
    let values = match table.remove("sweep_values") {
        Some(toml::Value::Array(a)) if !a.is_empty() => a,
        _ => {
            return Err(CliError::Config(
                "sweep_values (non-empty array) is required".into(),
            ))
        }
    };
    let command = match table.remove("sweep_command") {
        Some(toml::Value::String(s)) => s,
        _ => {
            return Err(CliError::Config(
                "sweep_command (string) is required".into(),
            ))
        }
    };
    let base: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let root = out_override
        .or_else(|| base.out.clone())
        .unwrap_or_else(|| PathBuf::from("fple-sweep"));

    // one fully resolved config and run directory per sweep value
    let mut runs: Vec<(String, RunConfig)> = Vec::with_capacity(values.len());
    for v in &values {
        let mut t = match toml::Value::try_from(&base)
            .map_err(|e| CliError::Config(format!("sweep base: {e}")))?
        {
            toml::Value::Table(t) => t,
            other => {
                return Err(CliError::Config(format!(
                    "sweep base serialized to {other:?}, expected a table"
                )))
            }
        };
        t.insert(key.clone(), v.clone());
        let mut cfg: RunConfig = toml::Value::Table(t)
            .try_into()
            .map_err(|e| CliError::Config(format!("sweep value {v} for `{key}`: {e}")))?;
        let dir = format!("{key}-{}", toml_scalar(v));
        cfg.out = Some(root.join(&dir));
        runs.push((dir, cfg));
    }

    let codes: Vec<i32> = par::map_indexed(runs.len(), |i| {
        dispatch_named(&command, runs[i].1.clone())
    });
    let mut worst = 0;
    for ((dir, _), code) in runs.iter().zip(&codes) {
        println!("sweep {dir}: exit {code}");
        worst = worst.max(*code);
    }
    Ok(worst)
}
