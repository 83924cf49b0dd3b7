use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::config::{ArTruncation, ScenarioConfig, ScenarioKind};
use super::report::{RateEntry, Relation, ReplicationSummary, ScenarioOutcome, ScenarioReport, Trace};
use crate::diagnostics::{median, rate_fit_series, ErrorSeries};
use crate::engine::{derive_stream, TerminalStatus};
use crate::error::{Error, Result};
use crate::estimators::{
    huber, rls_step, rml_step, robust_step, sherman_morrison_update, simulate_ar, ArModel, EstimatorState,
    Innovation, RunningMad,
};
use crate::truncation::TruncationSchedule;

const MAD_WINDOW: usize = 200;

pub(crate) fn model(cfg: &ScenarioConfig) -> Result<ArModel> {
    let a = &cfg.ar;
    let coeffs = DVector::from_vec(a.coefficients.clone());
    match &a.presample {
        Some(p) => ArModel::with_presample(coeffs, a.innovation, p.clone()),
        None => ArModel::new(coeffs, a.innovation),
    }
}

/// Growth exponent `ε₀` of the innovation variance.
fn growth_exponent(innovation: Innovation) -> f64 {
    match innovation {
        Innovation::GaussianGrowing { exponent, .. } => exponent,
        _ => 0.0,
    }
}

struct RepResult {
    series: Option<ErrorSeries>,
    summary: ReplicationSummary,
    info_half: Option<DMatrix<f64>>,
    info_end: Option<DMatrix<f64>>,
    trace: Vec<Vec<f64>>,
}

fn run_rep(cfg: &ScenarioConfig, model: &ArModel, rep: u64, keep_trace: bool) -> Result<RepResult> {
    let a = &cfg.ar;
    let kind = cfg.scenario;
    let m = model.order();
    let horizon = cfg.horizon;
    let theta = model.coeffs();
    let innovation = model.innovation();
    let data = simulate_ar(model, horizon as usize, derive_stream(cfg.seed, rep));

    let homogeneous_fisher = match innovation {
        Innovation::GaussianGrowing { .. } => None,
        other => Some(other.fisher_information(1)),
    };
    let fisher_at = |t: u64| homogeneous_fisher.unwrap_or_else(|| 1.0 / innovation.variance(t));
    let schedule = match a.truncation {
        ArTruncation::None => TruncationSchedule::whole_space(),
        ArTruncation::ShrinkingSphere { initial_radius, decay } => {
            TruncationSchedule::shrinking_sphere(DVector::zeros(m), initial_radius, decay)
                .map_err(|e| Error::Config(e.to_string()))?
        }
    };
    let initial = EstimatorState::new(
        DVector::zeros(m),
        DMatrix::identity(m, m) * a.initial_info_inv_scale,
    )?;
    let mut state = initial.clone();
    let mut aux = initial;
    let mut mad = RunningMad::new(MAD_WINDOW, innovation.variance(1).sqrt());

    let mut times = Vec::new();
    let mut sq_err = Vec::new();
    let mut trace = Vec::new();
    let mut info_half = None;
    let mut status = data.status.clone();
    let mut projections = 0;
    let mut steps = 0;
    let half = horizon / 2;

    for t in 1..=data.len() as u64 {
        let x = data.window(t as usize);
        let obs = data.value(t as i64);
        let next = match kind {
            ScenarioKind::ArRml => rml_step(&state, &x, obs, |u| innovation.score(t, u), fisher_at(t)),
            ScenarioKind::ArRobust => {
                aux = rls_step(&aux, &x, obs)?;
                let clip = a.huber_clip.unwrap_or_else(|| mad.huber_clip());
                let residual = obs - x.dot(&state.theta);
                mad.push(residual);
                let step_matrix = &aux.info_inv;
                let candidate = &state.theta + step_matrix * &x * huber(residual, clip);
                robust_step(&state, &x, obs, |u| huber(u, clip), step_matrix, &schedule, t, Some(&aux.theta)).map(
                    |mut s| {
                        if s.theta != candidate {
                            projections += 1;
                        }
                        s.info_inv = sherman_morrison_update(&state.info_inv, &x, 1.0);
                        s
                    },
                )
            }
            _ => rls_step(&state, &x, obs),
        };
        state = match next {
            Ok(s) if s.theta.iter().all(|v| v.is_finite()) => s,
            Ok(_) => {
                status = TerminalStatus::Diverged { t };
                break;
            }
            Err(e) => {
                status = TerminalStatus::Rejected {
                    t,
                    reason: e.to_string(),
                };
                break;
            }
        };
        steps = t;
        if t == half {
            info_half = state.information().ok().map(|i| i / t as f64);
        }
        if t % cfg.record_stride == 0 || t == horizon {
            let e2 = (&state.theta - theta).norm_squared();
            times.push(t);
            sq_err.push(e2);
            if keep_trace {
                let q = state.fisher_quadform(theta)? * (t as f64).powf(-a.fisher_delta);
                let mut row = vec![t as f64];
                row.extend(state.theta.iter());
                row.extend([q, e2]);
                trace.push(row);
            }
        }
    }

    let completed = status.is_completed() && steps == horizon;
    let statistic = if completed {
        Some(state.fisher_quadform(theta)? * (horizon as f64).powf(-a.fisher_delta))
    } else {
        None
    };
    let info_end = if completed {
        state.information().ok().map(|i| i / horizon as f64)
    } else {
        None
    };
    Ok(RepResult {
        series: completed.then_some(ErrorSeries { times, sq_err }),
        summary: ReplicationSummary {
            rep,
            status,
            steps,
            terminal_sq_err: completed.then(|| (&state.theta - theta).norm_squared()),
            projections,
            statistic,
        },
        info_half,
        info_end,
        trace,
    })
}

pub fn run_ar(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    if !cfg.scenario.is_ar() {
        return Err(Error::Config(format!("{} is not an AR scenario", cfg.scenario)));
    }
    let a = &cfg.ar;
    let model = model(cfg)?;
    let mut report = ScenarioReport::new(cfg);
    let eps0 = growth_exponent(a.innovation);
    let stationary = model.is_stationary();
    if !stationary {
        report.warnings.push(
            "AR coefficients are not stationary: rate and information assertions with kappa_t = t are disabled"
                .into(),
        );
    }

    let results = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_rep(cfg, &model, r, r == 0))
        .collect::<Result<Vec<_>>>()?;

    let series: Vec<ErrorSeries> = results.iter().filter_map(|r| r.series.clone()).collect();
    let incomplete = results.len() - series.len();
    if incomplete > 0 {
        report
            .warnings
            .push(format!("{incomplete} replications did not complete and were excluded"));
    }
    report.metric("completed_fraction", series.len() as f64 / results.len() as f64);

    let statistics: Vec<f64> = results.iter().filter_map(|r| r.summary.statistic).collect();
    if let Some(med) = median(&statistics) {
        report.metric("median_fisher_statistic", med);
    }
    let drifts: Vec<f64> = results
        .iter()
        .filter_map(|r| match (&r.info_half, &r.info_end) {
            (Some(h), Some(e)) => Some((e - h).norm()),
            _ => None,
        })
        .collect();
    if let Some(med) = median(&drifts) {
        report.metric("median_info_rate_drift", med);
    }

    let deltas = cfg.deltas();
    let sup_exponents: Vec<f64> = deltas.iter().map(|d| 1.0 - d).collect();
    if !series.is_empty() {
        let rate = rate_fit_series(&series, &sup_exponents, cfg.rate_windows())?;
        if stationary {
            for (b, &delta) in rate.boundedness.iter().zip(&deltas) {
                let name = format!("median_ratio[delta={delta}]");
                if delta > eps0 {
                    report.check(name, Some(b.median_ratio()), Relation::AtMost { threshold: a.max_ratio });
                } else {
                    report.warnings.push(format!(
                        "delta={delta} does not exceed the variance growth exponent {eps0}; reported only"
                    ));
                }
            }
            let expected = a.expected_slope.or((eps0 == 0.0).then_some(-1.0));
            if let Some(target) = expected {
                report.check(
                    "tail_slope",
                    rate.slope,
                    Relation::Within {
                        target,
                        tolerance: a.slope_tolerance,
                    },
                );
            }
        }
        report.rates.push(RateEntry {
            label: cfg.scenario.to_string(),
            step_exponent: None,
            sup_exponents,
            rate,
        });
    } else {
        report.check("tail_slope", None, Relation::AtMost { threshold: 0.0 });
    }

    if let Some(gamma) = model.stationary_regressor_covariance() {
        let weight = match cfg.scenario {
            ScenarioKind::ArRml => a.innovation.fisher_information(1),
            _ => 1.0,
        };
        let target = gamma * weight;
        let errors: Vec<f64> = results
            .iter()
            .filter_map(|r| r.info_end.as_ref().map(|e| (e - &target).norm()))
            .collect();
        let med = median(&errors);
        if let Some(v) = med {
            report.metric("median_info_rate_error", v);
        }
        report.check(
            "info_rate_error",
            med,
            Relation::AtMost {
                threshold: a.info_rate_tolerance,
            },
        );
    }

    let mut header = vec!["t".to_string()];
    header.extend((1..=model.order()).map(|i| format!("theta_hat_{i}")));
    header.extend(["stat_fisher_quadform".to_string(), "norm2_err".to_string()]);
    let mut results = results;
    let rows = std::mem::take(&mut results[0].trace);
    report.replications = results.into_iter().map(|r| r.summary).collect();

    Ok(ScenarioOutcome {
        report: report.finish(),
        trace: Trace::Table { header, rows },
    })
}
