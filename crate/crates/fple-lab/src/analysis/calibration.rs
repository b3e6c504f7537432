//! Frozen constants for the extinction-time bounds.
//!
//! The two inequalities `T ≤ k_lq·‖u0‖_{q*}^{2-p}` and
//! `T ≥ (morrey(u0,q*)/c_morrey)^{2-p}` hold with constants that are not
//! determined analytically here. They are calibrated once per parameter
//! triple against a reference family of capped and truncated separated-
//! variables data (whose extinction times are measured on a reference
//! grid), padded by a safety factor, and committed; audits afterwards
//! test the functional form, never the calibration point itself. The
//! ignored test `calibration_reference` in the parent module regenerates
//! the table.

use super::AuditError;
use crate::params::Params;
use serde::Deserialize;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct CalibrationEntry {
    pub s: f64,
    pub p: f64,
    pub dim: u32,
    /// Constant of the `L^{q*}` extinction upper bound.
    pub k_lq: f64,
    /// Constant of the Morrey extinction lower bound.
    pub c_morrey: f64,
}

#[derive(Debug, Deserialize)]
struct CalibrationFile {
    entries: Vec<CalibrationEntry>,
}

static RAW: &str = include_str!("calibration.json");
static PARSED: OnceLock<Vec<CalibrationEntry>> = OnceLock::new();

fn entries() -> &'static [CalibrationEntry] {
    PARSED.get_or_init(|| {
        let f: CalibrationFile =
            serde_json::from_str(RAW).expect("embedded calibration table must parse");
        f.entries
    })
}

/// Find the calibration entry for a parameter triple.
pub fn lookup(params: &Params) -> Result<CalibrationEntry, AuditError> {
    entries()
        .iter()
        .find(|e| {
            (e.s - params.s).abs() < 1e-9 && (e.p - params.p).abs() < 1e-9 && e.dim == params.dim
        })
        .copied()
        .ok_or_else(|| AuditError::MissingCalibration {
            s: params.s,
            p: params.p,
            dim: params.dim,
        })
}
