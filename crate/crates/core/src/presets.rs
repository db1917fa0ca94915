//! Reference matrices shipped with the crate.
//!
//! The traced 18-step entries are reference values printed to three decimals,
//! useful both as golden data for the tracer and as runnable matrices. The
//! `sd3-*` and `opt-*` matrices are hand-tuned and carry explicit row targets;
//! pass them through [`normalize_rows`](crate::coeffmatrix::normalize_rows)
//! before running them.

use crate::coeffmatrix::{from_text, CoefficientMatrix};
use crate::error::{Error, Result};

macro_rules! preset {
    ($name:literal, $desc:literal) => {
        ($name, $desc, include_str!(concat!("../presets/", $name, ".nimatrix")))
    };
}

const PRESETS: &[(&str, &str, &str)] = &[
    preset!("ddpm-18", "DDPM ancestral sampling, 18 steps, signal and noise weights"),
    preset!("ddim-18", "DDIM, 18 steps"),
    preset!("flow-euler-18", "rectified-flow Euler, 18 steps"),
    preset!("deis-3-18", "DEIS third order, 18 quadratic steps"),
    preset!("dpm-solver-2s-18", "DPM-Solver-2S, 18 evaluations"),
    preset!("dpm-solver-3s-18", "DPM-Solver-3S, 18 evaluations"),
    preset!("dpmpp-2s-18", "DPM-Solver++(2S), 18 evaluations"),
    preset!("dpmpp-3s-18", "DPM-Solver++(3S), 18 evaluations"),
    preset!("sd3-euler-28", "28-step Euler matrix of a shift-3 flow model (x100)"),
    preset!("sd3-sharp-28", "28-step flow matrix adjusted for sharper output (x100)"),
    preset!("opt-5", "tuned 5-step matrix, diagonal scaled to 1"),
    preset!("opt-10", "tuned 10-step matrix, diagonal scaled to 1"),
    preset!("opt-15", "tuned 15-step matrix, diagonal scaled to 1"),
];

/// `(name, description)` of every preset.
pub fn list() -> Vec<(&'static str, &'static str)> {
    PRESETS.iter().map(|(n, d, _)| (*n, *d)).collect()
}

/// Raw text of a preset in the matrix file format.
pub fn text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, t)| *t)
        .ok_or_else(|| Error::Parameter(format!("unknown preset '{name}'")))
}

pub fn get(name: &str) -> Result<CoefficientMatrix> {
    from_text(text(name)?)
}
