//! Reproducible Monte Carlo studies driven by JSON configurations.
//!
//! Every runner returns a [`ScenarioReport`] that echoes its configuration
//! and lists each acceptance check with the exact inequality it tested,
//! plus a [`Trace`] of the first replication for plotting.

mod ar;
mod config;
mod linear;
mod polynomial;
mod rate;
mod report;

use std::fs;
use std::path::Path;

pub use ar::run_ar;
pub use config::{
    ArParams, ArTruncation, CheckParams, LinearParams, PolyTruncation, PolynomialParams, RateParams, Regressors,
    ScenarioConfig, ScenarioKind,
};
pub use linear::run_linear;
pub use polynomial::run_polynomial;
pub use rate::run_rate_link;
pub use report::{
    Check, ConditionSummary, RateEntry, Relation, ReplicationSummary, ScenarioOutcome, ScenarioReport, Trace,
};

use crate::diagnostics::{check_drift, uniform_grid, DriftCondition, DriftOptions, DriftReport};
use crate::engine::SaProblem;
use crate::error::{Error, Result};

/// Dispatch on the configured scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    match cfg.scenario {
        ScenarioKind::Polynomial => run_polynomial(cfg),
        ScenarioKind::RateLink | ScenarioKind::HarmonicRate => run_rate_link(cfg),
        ScenarioKind::ArRls | ScenarioKind::ArRml | ScenarioKind::ArRobust => run_ar(cfg),
        ScenarioKind::Linear => run_linear(cfg),
    }
}

/// Write `trajectories.csv`, `report.json` and `rates.csv` into `dir`.
pub fn write_outputs(outcome: &ScenarioOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    outcome.trace.write_csv(fs::File::create(dir.join("trajectories.csv"))?)?;
    fs::write(dir.join("report.json"), outcome.report.to_json())?;
    outcome
        .report
        .write_rates_csv(fs::File::create(dir.join("rates.csv"))?)?;
    Ok(())
}

/// The SA problem whose field the drift conditions are probed on.
fn check_problem(cfg: &ScenarioConfig) -> Result<SaProblem> {
    match cfg.scenario {
        ScenarioKind::Polynomial => polynomial::problem(cfg),
        ScenarioKind::RateLink | ScenarioKind::HarmonicRate => rate::problem(cfg, cfg.rate.step_exponents[0]),
        other => Err(Error::Config(format!(
            "scenario {other} has no regression field to check"
        ))),
    }
}

/// Probe drift conditions on the configured field, grid and time range.
pub fn check_conditions(cfg: &ScenarioConfig, conditions: &[DriftCondition]) -> Result<Vec<DriftReport>> {
    cfg.validate()?;
    let problem = check_problem(cfg)?;
    let root = problem
        .root()
        .cloned()
        .ok_or_else(|| Error::Config("field has no declared root".into()))?;
    let c = &cfg.check;
    let grid = uniform_grid(problem.dim(), c.grid_lo, c.grid_hi, c.grid_points);
    let opts = DriftOptions {
        t_min: c.t_min,
        gain: problem.step().scalar_sequence(),
    };
    let schedule = (!problem.schedule().is_whole_space()).then(|| problem.schedule());
    conditions
        .iter()
        .map(|&cond| check_drift(problem.field(), schedule, &root, cond, &grid, (c.t_start, c.t_end), &opts))
        .collect()
}
