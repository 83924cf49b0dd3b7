use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ar;
use super::config::{Regressors, ScenarioConfig};
use super::report::{Relation, ReplicationSummary, ScenarioOutcome, ScenarioReport, Trace};
use crate::diagnostics::median;
use crate::engine::{derive_stream, NoiseStream, TerminalStatus};
use crate::error::Result;
use crate::estimators::{g1_matrix, linear_step, sherman_morrison_update, simulate_ar, ArSeries, LinearProcedureSpec};
use crate::linalg::{eigen_extremes, quad_form};

#[allow(clippy::large_enum_variant)]
enum Source {
    Gaussian { root: DVector<f64>, sigma: f64, stream: NoiseStream },
    Ar(ArSeries),
    Zero,
}

impl Source {
    /// `(x_t, h_t)` with `β_t = x_t x_tᵀ`.
    fn next(&mut self, t: u64, m: usize) -> (DVector<f64>, DVector<f64>) {
        match self {
            Source::Gaussian { root, sigma, stream } => {
                let x = DVector::from_fn(m, |_, _| stream.standard_normal());
                let y = x.dot(root) + *sigma * stream.standard_normal();
                let h = &x * y;
                (x, h)
            }
            Source::Ar(series) => {
                let x = series.window(t as usize);
                let h = &x * series.value(t as i64);
                (x, h)
            }
            Source::Zero => (DVector::zeros(m), DVector::zeros(m)),
        }
    }
}

struct RepResult {
    summary: ReplicationSummary,
    g1_max: f64,
    stat_range: f64,
    trace: Vec<Vec<f64>>,
}

fn run_rep(cfg: &ScenarioConfig, rep: u64, keep_trace: bool) -> Result<RepResult> {
    let l = &cfg.linear;
    let stream = derive_stream(cfg.seed, rep);
    let (root, start, gamma0, mut source) = match l.regressors {
        Regressors::Ar => {
            let model = ar::model(cfg)?;
            let m = model.order();
            let data = simulate_ar(&model, cfg.horizon as usize, stream);
            let scale = cfg.ar.initial_info_inv_scale;
            (model.coeffs().clone(), DVector::zeros(m), DMatrix::identity(m, m) * scale, Source::Ar(data))
        }
        kind => {
            let root = DVector::from_vec(l.root.clone());
            let m = root.len();
            let start = l.start.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(m));
            let source = match kind {
                Regressors::Gaussian => Source::Gaussian {
                    root: root.clone(),
                    sigma: l.noise_sigma,
                    stream: NoiseStream::new(stream),
                },
                _ => Source::Zero,
            };
            (root, start, DMatrix::identity(m, m), source)
        }
    };
    let m = root.len();
    let available = match &source {
        Source::Ar(s) => s.len() as u64,
        _ => cfg.horizon,
    };
    let mut status = match &source {
        Source::Ar(s) => s.status.clone(),
        _ => TerminalStatus::Completed,
    };

    let mut z = start;
    let mut gamma = gamma0.clone();
    let mut inv_gamma = crate::linalg::spd_inverse(&gamma0)?;
    let mut g1_max = f64::NEG_INFINITY;
    let (mut stat_min, mut stat_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut statistic = None;
    let mut trace = Vec::new();
    let mut steps = 0;

    for t in 1..=available {
        let (x, h) = source.next(t, m);
        let beta = &x * x.transpose();
        let gamma_next = sherman_morrison_update(&gamma, &x, 1.0);
        inv_gamma += &beta;
        let spec = LinearProcedureSpec {
            gamma: gamma_next.clone(),
            beta,
        };
        z = linear_step(&spec, &z, &h)?;
        if !z.iter().all(|v| v.is_finite()) {
            status = TerminalStatus::Diverged { t };
            break;
        }
        steps = t;
        let record = t % cfg.record_stride == 0 || t == cfg.horizon;
        if record {
            let g1 = g1_matrix(&gamma, &gamma_next, &spec.beta)?;
            let (_, lmax) = eigen_extremes(&g1);
            g1_max = g1_max.max(lmax);
            let d = &z - &root;
            let s = quad_form(&inv_gamma, &d) * (t as f64).powf(-l.a_exponent);
            stat_min = stat_min.min(s);
            stat_max = stat_max.max(s);
            statistic = Some(s);
            if keep_trace {
                let mut row = vec![t as f64];
                row.extend(z.iter());
                row.extend([s, lmax]);
                trace.push(row);
            }
        }
        gamma = gamma_next;
    }

    let completed = status.is_completed() && steps == cfg.horizon;
    Ok(RepResult {
        summary: ReplicationSummary {
            rep,
            status,
            steps,
            terminal_sq_err: completed.then(|| (&z - &root).norm_squared()),
            projections: 0,
            statistic: if completed { statistic } else { None },
        },
        g1_max,
        stat_range: stat_max - stat_min,
        trace,
    })
}

pub fn run_linear(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let l = &cfg.linear;
    let mut report = ScenarioReport::new(cfg);
    let mut results = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_rep(cfg, r, r == 0))
        .collect::<Result<Vec<_>>>()?;

    let g1_max = results.iter().map(|r| r.g1_max).fold(f64::NEG_INFINITY, f64::max);
    report.metric("g1_max_eigenvalue", g1_max);
    report.check(
        "g1_max_eigenvalue",
        g1_max.is_finite().then_some(g1_max),
        Relation::AtMost {
            threshold: l.g1_tolerance,
        },
    );
    let stats: Vec<f64> = results.iter().filter_map(|r| r.summary.statistic).collect();
    if let Some(med) = median(&stats) {
        report.metric("median_terminal_statistic", med);
    }
    let range = results.iter().map(|r| r.stat_range).fold(0.0, f64::max);
    report.metric("max_statistic_range", range);
    if l.regressors == Regressors::Zero && l.a_exponent == 0.0 {
        report.check("statistic_range", Some(range), Relation::AtMost { threshold: 0.0 });
    }

    let m = match l.regressors {
        Regressors::Ar => cfg.ar.coefficients.len(),
        _ => l.root.len(),
    };
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("z_{i}")));
    header.extend(["statistic".to_string(), "g1_max_eigenvalue".to_string()]);
    let rows = std::mem::take(&mut results[0].trace);
    report.replications = results.into_iter().map(|r| r.summary).collect();

    Ok(ScenarioOutcome {
        report: report.finish(),
        trace: Trace::Table { header, rows },
    })
}
