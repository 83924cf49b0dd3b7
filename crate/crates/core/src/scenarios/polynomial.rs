use nalgebra::dvector;

use super::config::{PolyTruncation, ScenarioConfig};
use super::report::{ConditionSummary, RateEntry, Relation, ReplicationSummary, ScenarioOutcome, ScenarioReport, Trace};
use crate::diagnostics::{check_drift, rate_fit, uniform_grid, DriftCondition, DriftOptions};
use crate::engine::{replicate_with, GainSequence, NoiseField, RegressionField, RunOptions, SaProblem, StepSizePolicy};
use crate::error::{Error, Result};
use crate::truncation::{admissibility_horizon, BoundLaw, TruncationSchedule};

pub(crate) fn schedule(cfg: &ScenarioConfig) -> Result<TruncationSchedule> {
    let p = &cfg.polynomial;
    let origin = dvector![0.0];
    let law = match p.truncation {
        PolyTruncation::None => return Ok(TruncationSchedule::whole_space()),
        PolyTruncation::Log { scale, shift } => BoundLaw::Log { scale, shift },
        PolyTruncation::Power { scale, r } => BoundLaw::Power {
            scale,
            exponent: r / (2.0 * p.coefficients.len() as f64),
        },
    };
    TruncationSchedule::expanding_box(origin, law).map_err(|e| Error::Config(e.to_string()))
}

pub(crate) fn problem(cfg: &ScenarioConfig) -> Result<SaProblem> {
    let p = &cfg.polynomial;
    let field = RegressionField::polynomial(p.coefficients.clone(), p.root)?;
    let noise = if p.noise_sigma == 0.0 {
        NoiseField::zero()
    } else {
        NoiseField::gaussian(p.noise_sigma)?
    };
    let step = StepSizePolicy::Reciprocal(GainSequence::power(1.0, p.step_exponent));
    SaProblem::new(dvector![p.start], step, field, noise, schedule(cfg)?)
}

pub fn run_polynomial(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let p = &cfg.polynomial;
    let mut report = ScenarioReport::new(cfg);
    let truncated = problem(cfg)?;
    let root = dvector![p.root];
    let opts = RunOptions::new(cfg.horizon).with_stride(cfg.record_stride);
    let runs = replicate_with(&truncated, opts, cfg.replications, cfg.seed);
    let reps = cfg.replications as f64;

    report.replications = runs
        .iter()
        .enumerate()
        .map(|(r, t)| ReplicationSummary::from_trajectory(r as u64, t))
        .collect();
    let converged = runs
        .iter()
        .filter(|t| t.status().is_completed())
        .filter(|t| t.terminal_error2().is_some_and(|e| e.sqrt() < p.convergence_tolerance))
        .count() as f64;
    let diverged = runs.iter().filter(|t| t.status().is_diverged()).count() as f64;
    report.metric("converged_fraction", converged / reps);
    report.metric("diverged_fraction", diverged / reps);
    if let Some(t0) = admissibility_horizon(truncated.schedule(), &root, cfg.horizon) {
        report.metric("root_admissible_from", t0 as f64);
    }
    report.check(
        "converged_fraction",
        Some(converged / reps),
        Relation::AtLeast {
            threshold: p.min_converged_fraction,
        },
    );

    if p.compare_untruncated && p.truncation != PolyTruncation::None {
        let free = truncated.clone().with_schedule(TruncationSchedule::whole_space());
        let free_runs = replicate_with(&free, opts, cfg.replications, cfg.seed);
        let overflow = free_runs.iter().filter(|t| t.status().is_diverged()).count() as f64;
        let free_conv = free_runs
            .iter()
            .filter(|t| t.status().is_completed())
            .filter(|t| t.terminal_error2().is_some_and(|e| e.sqrt() < p.convergence_tolerance))
            .count() as f64;
        report.metric("untruncated_overflow_fraction", overflow / reps);
        report.metric("untruncated_converged_fraction", free_conv / reps);
        report.check(
            "untruncated_overflow_fraction",
            Some(overflow / reps),
            Relation::AtLeast {
                threshold: p.min_overflow_fraction,
            },
        );
    }

    let deltas = cfg.deltas();
    if !deltas.is_empty() {
        match rate_fit(&runs, &root, &deltas, cfg.rate_windows()) {
            Ok(rate) => report.rates.push(RateEntry {
                label: "truncated".into(),
                step_exponent: Some(p.step_exponent),
                sup_exponents: deltas.clone(),
                rate,
            }),
            Err(e) => report.warnings.push(format!("rate statistics unavailable: {e}")),
        }
    }

    let c = &cfg.check;
    let grid = uniform_grid(1, c.grid_lo, c.grid_hi, c.grid_points);
    let drift_opts = DriftOptions {
        t_min: c.t_min,
        gain: None,
    };
    let mut conditions = vec![DriftCondition::H1];
    if p.coefficients[0] >= 0.5 {
        conditions.push(DriftCondition::B1);
    }
    for cond in conditions {
        let r = check_drift(
            truncated.field(),
            Some(truncated.schedule()),
            &root,
            cond,
            &grid,
            (c.t_start, c.t_end),
            &drift_opts,
        )?;
        report.conditions.push(ConditionSummary::from(&r));
    }

    Ok(ScenarioOutcome {
        report: report.finish(),
        trace: Trace::Trajectory(runs.into_iter().next().expect("at least one replication")),
    })
}
