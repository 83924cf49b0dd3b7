use nalgebra::DVector;

use super::config::{ScenarioConfig, ScenarioKind};
use super::report::{ConditionSummary, RateEntry, Relation, ReplicationSummary, ScenarioOutcome, ScenarioReport, Trace};
use crate::diagnostics::{check_drift, rate_fit, uniform_grid, DriftCondition, DriftOptions};
use crate::engine::{replicate_with, NoiseField, RegressionField, RunOptions, SaProblem, StepSizePolicy};
use crate::error::Result;
use crate::truncation::TruncationSchedule;

pub(crate) fn problem(cfg: &ScenarioConfig, eps: f64) -> Result<SaProblem> {
    let r = &cfg.rate;
    let m = cfg.dimension;
    let field = RegressionField::linear_scalar(r.slope, DVector::from_element(m, r.root));
    SaProblem::new(
        DVector::from_element(m, r.start),
        StepSizePolicy::power_decay(eps)?,
        field,
        NoiseField::new(r.noise)?,
        TruncationSchedule::whole_space(),
    )
}

fn label(eps: f64) -> String {
    format!("eps={eps}")
}

/// Covers both `rate-link` and `harmonic-rate`.
pub fn run_rate_link(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let r = &cfg.rate;
    let mut report = ScenarioReport::new(cfg);
    let deltas = cfg.deltas();
    let root = DVector::from_element(cfg.dimension, r.root);
    let opts = RunOptions::new(cfg.horizon).with_stride(cfg.record_stride);
    let mut trace = None;

    for &eps in &r.step_exponents {
        let tag = label(eps);
        let problem = problem(cfg, eps)?;
        let runs = replicate_with(&problem, opts, cfg.replications, cfg.seed);
        if report.replications.is_empty() {
            report.replications = runs
                .iter()
                .enumerate()
                .map(|(i, t)| ReplicationSummary::from_trajectory(i as u64, t))
                .collect();
        }
        let rate = rate_fit(&runs, &root, &deltas, cfg.rate_windows())?;
        if rate.excluded_incomplete > 0 {
            report.warnings.push(format!(
                "{tag}: {} replications did not complete and were excluded",
                rate.excluded_incomplete
            ));
        }

        let delta_bound = 2.0 - 1.0 / eps;
        for b in &rate.boundedness {
            let name = format!("median_ratio[{tag},delta={}]", b.delta);
            if b.delta < delta_bound {
                report.check(name, Some(b.median_ratio()), Relation::AtMost { threshold: r.max_ratio });
            } else {
                report.warnings.push(format!(
                    "{tag}: delta={} is outside the guaranteed range delta < {delta_bound}; reported only",
                    b.delta
                ));
            }
        }
        let slope_name = format!("tail_slope[{tag}]");
        match r.expected_slope {
            Some(target) => report.check(
                slope_name,
                rate.slope,
                Relation::Within {
                    target,
                    tolerance: r.slope_tolerance,
                },
            ),
            None => report.check(
                slope_name,
                rate.slope,
                Relation::AtMost {
                    threshold: r.max_tail_slope.unwrap_or(-delta_bound + 0.1),
                },
            ),
        }
        if eps < 1.0 {
            report.check(
                format!("rate_exponent[{tag}]"),
                rate.rate_exponent,
                Relation::AtLeast {
                    threshold: 1.0 - 1.0 / (2.0 * eps),
                },
            );
        }
        report.rates.push(RateEntry {
            label: tag,
            step_exponent: Some(eps),
            sup_exponents: deltas.clone(),
            rate,
        });
        if trace.is_none() {
            trace = runs.into_iter().next();
        }
    }

    if cfg.scenario == ScenarioKind::HarmonicRate && cfg.dimension == 1 {
        let c = &cfg.check;
        let problem = problem(cfg, 1.0)?;
        let grid = uniform_grid(1, c.grid_lo, c.grid_hi, c.grid_points);
        let y1 = check_drift(
            problem.field(),
            None,
            &root,
            DriftCondition::Y1,
            &grid,
            (c.t_start, c.t_end),
            &DriftOptions {
                t_min: c.t_min,
                gain: None,
            },
        )?;
        report.check(
            "Y1_violations",
            Some(y1.violations as f64),
            Relation::AtMost { threshold: 0.0 },
        );
        report.conditions.push(ConditionSummary::from(&y1));
    }

    Ok(ScenarioOutcome {
        report: report.finish(),
        trace: Trace::Trajectory(trace.expect("at least one step exponent")),
    })
}
