//! Numerical surrogates for the Lyapunov and drift conditions behind the
//! convergence results, plus empirical convergence-rate fits.
//!
//! Only quadratic Lyapunov fields `V_t(u) = uᵀ C_t u` are supported. For
//! these the second derivative is the constant `2 C_t`, so the supremum in
//! the noise term of the expected decrement is attained everywhere and the
//! decrement has a closed form.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::engine::{GainSequence, RegressionField, SaProblem, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::linalg::quad_form;
use crate::truncation::TruncationSchedule;

/// Time-indexed SPD weight `C_t` of `V_t(u) = uᵀ C_t u`.
#[derive(Clone)]
pub enum QuadraticLyapunov {
    Constant(DMatrix<f64>),
    /// `C_t = a_t^δ I`
    ScaledIdentity {
        dim: usize,
        gain: GainSequence,
        delta: f64,
    },
    /// `C_t = a_t^{-1} γ_t^{-1}`, with `inverse_steps[t] = γ_t^{-1}` for `t ≥ 0`.
    InverseStep {
        gain: GainSequence,
        inverse_steps: Arc<[DMatrix<f64>]>,
    },
    Custom(Arc<dyn Fn(u64) -> DMatrix<f64> + Send + Sync>),
}

impl fmt::Debug for QuadraticLyapunov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuadraticLyapunov::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            QuadraticLyapunov::ScaledIdentity { dim, gain, delta } => f
                .debug_struct("ScaledIdentity")
                .field("dim", dim)
                .field("gain", gain)
                .field("delta", delta)
                .finish(),
            QuadraticLyapunov::InverseStep { inverse_steps, .. } => {
                write!(f, "InverseStep(len={})", inverse_steps.len())
            }
            QuadraticLyapunov::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl QuadraticLyapunov {
    pub fn identity(dim: usize) -> Self {
        QuadraticLyapunov::Constant(DMatrix::identity(dim, dim))
    }

    pub fn custom<F: Fn(u64) -> DMatrix<f64> + Send + Sync + 'static>(f: F) -> Self {
        QuadraticLyapunov::Custom(Arc::new(f))
    }

    /// `C_t` for `t ≥ 0`.
    pub fn matrix(&self, t: u64) -> DMatrix<f64> {
        match self {
            QuadraticLyapunov::Constant(c) => c.clone(),
            QuadraticLyapunov::ScaledIdentity { dim, gain, delta } => {
                DMatrix::identity(*dim, *dim) * gain.at(t).powf(*delta)
            }
            QuadraticLyapunov::InverseStep {
                gain,
                inverse_steps,
            } => {
                let idx = (t as usize).min(inverse_steps.len() - 1);
                let a = gain.at(t);
                let a = if a > 0.0 { a } else { gain.at(1) };
                &inverse_steps[idx] / a
            }
            QuadraticLyapunov::Custom(f) => f(t),
        }
    }

    pub fn value(&self, t: u64, u: &DVector<f64>) -> f64 {
        quad_form(&self.matrix(t), u)
    }
}

/// `V_t(Z_t − z⁰)` for every recorded step of a trajectory.
pub fn lyapunov_track(
    trajectory: &Trajectory,
    lyapunov: &QuadraticLyapunov,
    root: &DVector<f64>,
) -> Result<Vec<f64>> {
    check_dim(trajectory.dim(), root.len())?;
    let mut out = Vec::with_capacity(trajectory.len());
    for (i, &t) in trajectory.times().iter().enumerate() {
        let c = lyapunov.matrix(t);
        check_dim(root.len(), c.nrows())?;
        let delta = trajectory.state(i) - root;
        out.push(quad_form(&c, &delta));
    }
    Ok(out)
}

/// Closed-form expected one-step decrement of a quadratic Lyapunov field at
/// `Z_{t-1} = z⁰ + u`:
///
/// `uᵀ(C_t − C_{t−1})u + 2uᵀC_tγ_tR_t + (γ_tR_t)ᵀC_t(γ_tR_t) + tr(γ_tᵀC_tγ_tΣ_t)`,
///
/// which equals `E[V_t(u + γ_t(R_t + ε_t))] − V_{t−1}(u)`.
pub fn decrement_k(
    problem: &SaProblem,
    lyapunov: &QuadraticLyapunov,
    t: u64,
    u: &DVector<f64>,
) -> Result<f64> {
    let root = problem
        .root()
        .ok_or_else(|| Error::Domain("decrement requires a known root".into()))?;
    check_dim(problem.dim(), u.len())?;
    let z = root + u;
    let covariance = problem.noise().covariance(t, &z, Some(root))?;
    decrement_k_with(problem, lyapunov, t, u, &covariance)
}

/// [`decrement_k`] with an explicitly supplied noise covariance `Σ_t`.
pub fn decrement_k_with(
    problem: &SaProblem,
    lyapunov: &QuadraticLyapunov,
    t: u64,
    u: &DVector<f64>,
    covariance: &DMatrix<f64>,
) -> Result<f64> {
    let root = problem
        .root()
        .ok_or_else(|| Error::Domain("decrement requires a known root".into()))?;
    let m = problem.dim();
    check_dim(m, u.len())?;
    check_dim(m, covariance.nrows())?;
    let z = root + u;
    let c_now = lyapunov.matrix(t);
    let c_prev = lyapunov.matrix(t.saturating_sub(1));
    check_dim(m, c_now.nrows())?;
    let gamma = problem.step().gain(t, &z).to_matrix(m);
    let drift = gamma.clone() * problem.field().eval(t, &z);
    let change = quad_form(&(&c_now - &c_prev), u);
    let cross = 2.0 * u.dot(&(&c_now * &drift));
    let drift_term = quad_form(&c_now, &drift);
    let noise_term = (gamma.transpose() * &c_now * &gamma * covariance).trace();
    Ok(change + cross + drift_term + noise_term)
}

/// Drift and rate conditions that can be probed pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DriftCondition {
    /// `(z − z⁰)ᵀ R_t(z) ≤ 0` on `U_{t−1}`.
    D1,
    /// `(z − z⁰)ᵀ R(z) ≤ 0` on `U_t`.
    H1,
    /// `(z − z⁰)ᵀ R(z) < 0` on `U_t \ {z⁰}`.
    H4,
    /// `Δᵀ R_t(z) ≤ −½ (a_t − a_{t−1}) ‖Δ‖²` on `U_{t−1}`.
    W1,
    /// `uᵀ R(z⁰ + u) ≤ −½ ‖u‖²` near the root.
    B1,
    /// One-dimensional `R_t'(z⁰) ≤ −½`.
    Y1,
}

impl DriftCondition {
    pub const ALL: [DriftCondition; 6] = [
        DriftCondition::D1,
        DriftCondition::H1,
        DriftCondition::H4,
        DriftCondition::W1,
        DriftCondition::B1,
        DriftCondition::Y1,
    ];
}

impl fmt::Display for DriftCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DriftCondition::D1 => "D1",
            DriftCondition::H1 => "H1",
            DriftCondition::H4 => "H4",
            DriftCondition::W1 => "W1",
            DriftCondition::B1 => "B1",
            DriftCondition::Y1 => "Y1",
        };
        f.write_str(s)
    }
}

impl FromStr for DriftCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D1" => Ok(DriftCondition::D1),
            "H1" => Ok(DriftCondition::H1),
            "H4" => Ok(DriftCondition::H4),
            "W1" => Ok(DriftCondition::W1),
            "B1" => Ok(DriftCondition::B1),
            "Y1" => Ok(DriftCondition::Y1),
            other => Err(Error::Config(format!("unknown condition '{other}'"))),
        }
    }
}

/// Finite-difference tolerance on the `−½` threshold of Y1.
pub const Y1_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct DriftOptions {
    /// Violations at `t < t_min` are reported but not counted.
    pub t_min: u64,
    /// `a_t`, required by W1.
    pub gain: Option<GainSequence>,
}

impl Default for DriftOptions {
    fn default() -> Self {
        Self { t_min: 1, gain: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub condition: DriftCondition,
    pub t: u64,
    pub point: Vec<f64>,
    pub value: f64,
    pub threshold: f64,
    pub ok: bool,
    pub counted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub condition: DriftCondition,
    pub evaluated: usize,
    /// Violations at `t ≥ t_min`.
    pub violations: usize,
    /// Violations before `t_min`.
    pub early_violations: usize,
    pub rows: Vec<DriftRow>,
}

impl DriftReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn violating_rows(&self) -> impl Iterator<Item = &DriftRow> {
        self.rows.iter().filter(|r| !r.ok)
    }

    /// CSV with header `condition,t,grid_point,value,threshold,ok`.
    /// Grid coordinates are `;`-separated.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_drift_csv(std::slice::from_ref(self), writer)
    }
}

pub fn write_drift_csv<W: Write>(reports: &[DriftReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["condition", "t", "grid_point", "value", "threshold", "ok"])?;
    for report in reports {
        for row in &report.rows {
            let point = row
                .point
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                row.condition.to_string(),
                row.t.to_string(),
                point,
                row.value.to_string(),
                row.threshold.to_string(),
                row.ok.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Evaluate one condition literally on every `(t, grid point)` pair with
/// `t ∈ [t_range.0, t_range.1]`. Grid points outside the relevant
/// truncation region are skipped for D1, H1, H4 and W1.
pub fn check_drift(
    field: &RegressionField,
    schedule: Option<&TruncationSchedule>,
    root: &DVector<f64>,
    condition: DriftCondition,
    grid: &[DVector<f64>],
    t_range: (u64, u64),
    options: &DriftOptions,
) -> Result<DriftReport> {
    if grid.is_empty() {
        return Err(Error::Domain("probe grid is empty".into()));
    }
    let (t_lo, t_hi) = (t_range.0.max(1), t_range.1);
    if t_hi < t_lo {
        return Err(Error::Domain(format!("empty time range [{t_lo}, {t_hi}]")));
    }
    check_dim(field.dim(), root.len())?;
    for p in grid {
        check_dim(field.dim(), p.len())?;
    }
    if condition == DriftCondition::Y1 && field.dim() != 1 {
        return Err(Error::Domain("Y1 is defined for one-dimensional fields only".into()));
    }
    if condition == DriftCondition::W1 && options.gain.is_none() {
        return Err(Error::Domain("W1 requires the gain sequence a_t".into()));
    }

    let mut rows = Vec::new();
    for t in t_lo..=t_hi {
        let region = schedule.map(|s| match condition {
            DriftCondition::D1 | DriftCondition::W1 => s.region_at(t - 1, None),
            _ => s.region_at(t, None),
        });
        let counted = t >= options.t_min;
        if condition == DriftCondition::Y1 {
            let h = 1e-5 * (1.0 + root[0].abs());
            let up = field.eval(t, &DVector::from_element(1, root[0] + h))[0];
            let down = field.eval(t, &DVector::from_element(1, root[0] - h))[0];
            let slope = (up - down) / (2.0 * h);
            let threshold = -0.5 + Y1_TOLERANCE;
            rows.push(DriftRow {
                condition,
                t,
                point: root.as_slice().to_vec(),
                value: slope,
                threshold,
                ok: slope <= threshold,
                counted,
            });
            continue;
        }
        for z in grid {
            let restricted = !matches!(condition, DriftCondition::B1);
            if restricted {
                if let Some(region) = &region {
                    if !region.contains(z) {
                        continue;
                    }
                }
            }
            let delta = z - root;
            let r = field.eval(t, z);
            check_dim(field.dim(), r.len())?;
            let value = delta.dot(&r);
            let (threshold, ok) = match condition {
                DriftCondition::D1 | DriftCondition::H1 => (0.0, value <= 0.0),
                DriftCondition::H4 => {
                    if delta.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    (0.0, value < 0.0)
                }
                DriftCondition::W1 => {
                    let gain = options.gain.as_ref().expect("checked above");
                    let da = gain.at(t) - gain.at(t - 1);
                    let thr = -0.5 * da * delta.norm_squared();
                    (thr, value <= thr)
                }
                DriftCondition::B1 => {
                    let thr = -0.5 * delta.norm_squared();
                    (thr, value <= thr)
                }
                DriftCondition::Y1 => unreachable!(),
            };
            rows.push(DriftRow {
                condition,
                t,
                point: z.as_slice().to_vec(),
                value,
                threshold,
                ok,
                counted,
            });
        }
    }
    let violations = rows.iter().filter(|r| !r.ok && r.counted).count();
    let early_violations = rows.iter().filter(|r| !r.ok && !r.counted).count();
    Ok(DriftReport {
        condition,
        evaluated: rows.len(),
        violations,
        early_violations,
        rows,
    })
}

/// Uniform probe grid on `[lo, hi]^dim` with `n` points per axis.
pub fn uniform_grid(dim: usize, lo: f64, hi: f64, n: usize) -> Vec<DVector<f64>> {
    let n = n.max(1);
    let axis: Vec<f64> = if n == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let total = n.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            DVector::from_fn(dim, |_, _| {
                let v = axis[k % n];
                k /= n;
                v
            })
        })
        .collect()
}

/// Squared-error path of one replication, aligned on recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<u64>,
    pub sq_err: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(times: Vec<u64>, sq_err: Vec<f64>) -> Result<Self> {
        check_dim(times.len(), sq_err.len())?;
        Ok(Self { times, sq_err })
    }

    pub fn from_trajectory(trajectory: &Trajectory, root: &DVector<f64>) -> Result<Self> {
        check_dim(trajectory.dim(), root.len())?;
        let sq_err = if trajectory.root() == Some(root) {
            trajectory.norm2().to_vec()
        } else {
            (0..trajectory.len())
                .map(|i| (trajectory.state(i) - root).norm_squared())
                .collect()
        };
        Ok(Self {
            times: trajectory.times().to_vec(),
            sq_err,
        })
    }
}

/// Window `[start, end]` of step indices (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    fn contains(&self, t: u64) -> bool {
        let t = t as f64;
        self.start <= t && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
}

impl Quantiles {
    fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered"));
        Some(Self {
            q10: quantile_sorted(&v, 0.1),
            median: quantile_sorted(&v, 0.5),
            q90: quantile_sorted(&v, 0.9),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    Quantiles::of(values).map(|q| q.median)
}

/// Nested-window statistics of `sup t^δ ‖Δ_t‖²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Boundedness {
    pub delta: f64,
    pub early_sup: Vec<f64>,
    pub late_sup: Vec<f64>,
    /// `late_sup / early_sup` per replication.
    pub ratio: Vec<f64>,
    pub ratio_quantiles: Quantiles,
    pub late_sup_quantiles: Quantiles,
}

impl Boundedness {
    pub fn median_ratio(&self) -> f64 {
        self.ratio_quantiles.median
    }
}

/// Empirical convergence-rate summary over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub replications: usize,
    /// Replications dropped because they did not complete.
    pub excluded_incomplete: usize,
    pub tail_fraction: f64,
    pub tail_window: Window,
    pub early_window: Window,
    pub fit_window: Window,
    /// Least-squares slope of `ln MSE_t` on `ln t` over the fit window.
    pub slope: Option<f64>,
    /// `−slope / 2`, the decay exponent of the root-mean-square error.
    pub rate_exponent: Option<f64>,
    pub fit_points: usize,
    /// Tail points whose MSE was exactly zero and were left out of the fit.
    pub zero_points_excluded: usize,
    pub per_rep_slope: Vec<f64>,
    pub per_rep_slope_quantiles: Option<Quantiles>,
    pub terminal_sq_err: Vec<f64>,
    pub terminal_sq_err_quantiles: Quantiles,
    pub boundedness: Vec<Boundedness>,
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

fn log_fit(times: &[u64], values: &[f64], window: Window) -> (Option<f64>, usize, usize) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zeros = 0;
    for (&t, &v) in times.iter().zip(values) {
        if !window.contains(t) {
            continue;
        }
        if v > 0.0 {
            xs.push((t as f64).ln());
            ys.push(v.ln());
        } else {
            zeros += 1;
        }
    }
    (least_squares_slope(&xs, &ys), xs.len(), zeros)
}

/// Rate fit over trajectories; only completed runs contribute.
pub fn rate_fit(
    trajectories: &[Trajectory],
    root: &DVector<f64>,
    deltas: &[f64],
    windows: impl Into<RateWindows>,
) -> Result<RateReport> {
    let series = trajectories
        .iter()
        .filter(|t| t.status().is_completed())
        .map(|t| ErrorSeries::from_trajectory(t, root))
        .collect::<Result<Vec<_>>>()?;
    let mut report = rate_fit_series(&series, deltas, windows)?;
    report.excluded_incomplete = trajectories.len() - series.len();
    Ok(report)
}

/// Window fractions for [`rate_fit_series`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateWindows {
    /// `f` of the nested windows `[f²·T, f·T]` and `[f·T, T]`.
    pub tail_fraction: f64,
    /// The log–log slope is fitted on `[fit_fraction·T, T]`.
    pub fit_fraction: f64,
}

impl RateWindows {
    pub fn new(tail_fraction: f64, fit_fraction: f64) -> Self {
        Self {
            tail_fraction,
            fit_fraction,
        }
    }
}

/// A single fraction serves both the nested windows and the slope fit.
impl From<f64> for RateWindows {
    fn from(f: f64) -> Self {
        Self::new(f, f)
    }
}

/// Rate fit over aligned squared-error series.
///
/// The tail window is `[f·T, T]` and the early window `[f²·T, f·T]`, so
/// `f = 0.5` compares `[T/4, T/2]` with `[T/2, T]`.
pub fn rate_fit_series(
    series: &[ErrorSeries],
    deltas: &[f64],
    windows: impl Into<RateWindows>,
) -> Result<RateReport> {
    let RateWindows {
        tail_fraction,
        fit_fraction,
    } = windows.into();
    for (name, f) in [("tail", tail_fraction), ("fit", fit_fraction)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Domain(format!("{name} fraction must lie in (0, 1), got {f}")));
        }
    }
    let first = series
        .first()
        .ok_or_else(|| Error::Domain("no completed replications to fit".into()))?;
    if series.iter().any(|s| s.times != first.times) {
        return Err(Error::Domain("error series are not aligned on common times".into()));
    }
    let times = &first.times;
    let horizon = *times
        .last()
        .ok_or_else(|| Error::Domain("error series are empty".into()))? as f64;
    let tail = Window {
        start: tail_fraction * horizon,
        end: horizon,
    };
    let early = Window {
        start: tail_fraction * tail_fraction * horizon,
        end: tail_fraction * horizon,
    };
    let fit = Window {
        start: fit_fraction * horizon,
        end: horizon,
    };
    for (name, w) in [("tail", tail), ("early", early), ("fit", fit)] {
        if !times.iter().any(|&t| w.contains(t)) {
            return Err(Error::Domain(format!("{name} window contains no recorded step")));
        }
    }

    let n = series.len() as f64;
    let mse: Vec<f64> = (0..times.len())
        .map(|i| series.iter().map(|s| s.sq_err[i]).sum::<f64>() / n)
        .collect();
    let (slope, fit_points, zero_points_excluded) = log_fit(times, &mse, fit);

    let per_rep_slope: Vec<f64> = series
        .iter()
        .filter_map(|s| log_fit(times, &s.sq_err, fit).0)
        .collect();
    let terminal_sq_err: Vec<f64> = series
        .iter()
        .map(|s| *s.sq_err.last().expect("non-empty"))
        .collect();

    let boundedness = deltas
        .iter()
        .map(|&delta| {
            let sup_over = |s: &ErrorSeries, w: Window| {
                times
                    .iter()
                    .zip(&s.sq_err)
                    .filter(|(t, _)| w.contains(**t))
                    .map(|(&t, &e)| (t as f64).powf(delta) * e)
                    .fold(0.0, f64::max)
            };
            let early_sup: Vec<f64> = series.iter().map(|s| sup_over(s, early)).collect();
            let late_sup: Vec<f64> = series.iter().map(|s| sup_over(s, tail)).collect();
            let ratio: Vec<f64> = early_sup
                .iter()
                .zip(&late_sup)
                .map(|(&e, &l)| match (e > 0.0, l > 0.0) {
                    (true, _) => l / e,
                    (false, true) => f64::INFINITY,
                    (false, false) => 1.0,
                })
                .collect();
            Boundedness {
                delta,
                ratio_quantiles: Quantiles::of(&ratio).expect("non-empty"),
                late_sup_quantiles: Quantiles::of(&late_sup).expect("non-empty"),
                early_sup,
                late_sup,
                ratio,
            }
        })
        .collect();

    Ok(RateReport {
        replications: series.len(),
        excluded_incomplete: 0,
        tail_fraction,
        tail_window: tail,
        fit_window: fit,
        early_window: early,
        rate_exponent: slope.map(|s| -0.5 * s),
        slope,
        fit_points,
        zero_points_excluded,
        per_rep_slope_quantiles: Quantiles::of(&per_rep_slope),
        per_rep_slope,
        terminal_sq_err_quantiles: Quantiles::of(&terminal_sq_err).expect("non-empty"),
        terminal_sq_err,
        boundedness,
    })
}

/// `Σ_{t=1}^{N} [(a_{t+1} − a_t − 1) / a_t]⁺`
pub fn adt_partial_sum(a: &GainSequence, n: u64) -> f64 {
    (1..=n)
        .map(|t| {
            let (now, next) = (a.at(t), a.at(t + 1));
            ((next - now - 1.0) / now).max(0.0)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, NoiseField, StepSizePolicy};
    use crate::truncation::TruncationSchedule;
    use nalgebra::dvector;

    fn series_from(f: impl Fn(f64) -> f64, horizon: u64) -> ErrorSeries {
        let times: Vec<u64> = (1..=horizon).collect();
        let sq = times.iter().map(|&t| f(t as f64)).collect();
        ErrorSeries::new(times, sq).unwrap()
    }

    #[test]
    fn exact_power_law_slope() {
        let s = series_from(|t| t.powf(-2.0 / 3.0), 1000);
        let r = rate_fit_series(&[s], &[], 0.5).unwrap();
        assert!((r.slope.unwrap() + 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn constant_error_has_zero_slope() {
        let s = series_from(|_| 0.3, 1000);
        let r = rate_fit_series(&[s], &[0.0], 0.5).unwrap();
        assert!(r.slope.unwrap().abs() < 1e-12);
        assert!((r.boundedness[0].median_ratio() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_errors_are_excluded_and_counted() {
        let s = series_from(|t| if (t as u64).is_multiple_of(7) { 0.0 } else { 1.0 / t }, 700);
        let r = rate_fit_series(&[s], &[], 0.5).unwrap();
        assert!(r.zero_points_excluded > 0);
        assert!((r.slope.unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn windows_nest_at_half() {
        let s = series_from(|t| 1.0 / t, 400);
        let r = rate_fit_series(&[s], &[0.5], 0.5).unwrap();
        assert_eq!(r.early_window, Window { start: 100.0, end: 200.0 });
        assert_eq!(r.tail_window, Window { start: 200.0, end: 400.0 });
        // sup t^{1/2}/t over [100,200] is 0.1, over [200,400] is 200^{-1/2}
        let b = &r.boundedness[0];
        assert!((b.early_sup[0] - 0.1).abs() < 1e-12);
        assert!((b.late_sup[0] - 200f64.powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_is_symmetric_in_replications() {
        let a = series_from(|t| 2.0 / t, 300);
        let b = series_from(|t| t.powf(-0.5), 300);
        let c = series_from(|t| 0.5 / t.sqrt() + 1.0 / t, 300);
        let r1 = rate_fit_series(&[a.clone(), b.clone(), c.clone()], &[0.3], 0.5).unwrap();
        let r2 = rate_fit_series(&[c, a, b], &[0.3], 0.5).unwrap();
        assert!((r1.slope.unwrap() - r2.slope.unwrap()).abs() < 1e-12);
        assert_eq!(r1.boundedness[0].ratio_quantiles, r2.boundedness[0].ratio_quantiles);
        assert_eq!(r1.per_rep_slope_quantiles, r2.per_rep_slope_quantiles);
    }

    #[test]
    fn invalid_tail_fraction() {
        let s = series_from(|t| 1.0 / t, 10);
        assert!(rate_fit_series(std::slice::from_ref(&s), &[], 0.0).is_err());
        assert!(rate_fit_series(&[s], &[], 1.0).is_err());
        assert!(rate_fit_series(&[], &[], 0.5).is_err());
    }

    #[test]
    fn adt_sum_examples() {
        let linear = GainSequence::power(1.0, 1.0);
        for n in [1, 10, 1000] {
            assert_eq!(adt_partial_sum(&linear, n), 0.0);
        }
        let square = GainSequence::power(1.0, 2.0);
        assert!((adt_partial_sum(&square, 10) - 5.857_936_507_936_508).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_identity_equals_norm2() {
        let p = SaProblem::new(
            dvector![2.0, -1.0],
            StepSizePolicy::Harmonic,
            RegressionField::linear_scalar(0.7, dvector![0.5, 0.5]),
            NoiseField::gaussian(0.3).unwrap(),
            TruncationSchedule::whole_space(),
        )
        .unwrap();
        let traj = run(&p, 50, 9);
        let root = dvector![0.5, 0.5];
        let v = lyapunov_track(&traj, &QuadraticLyapunov::identity(2), &root).unwrap();
        for (a, b) in v.iter().zip(traj.norm2()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn lyapunov_cancels_known_decay() {
        // synthetic path with ‖Δ_t‖² = 1/t and C_t = t I
        let p = SaProblem::new(
            dvector![1.0],
            StepSizePolicy::Harmonic,
            RegressionField::linear_scalar(0.5, dvector![0.0]),
            NoiseField::zero(),
            TruncationSchedule::whole_space(),
        )
        .unwrap();
        let mut traj = run(&p, 0, 0);
        for t in 1..=20u64 {
            traj.record(t, &dvector![(1.0 / t as f64).sqrt()], false);
        }
        let c = QuadraticLyapunov::ScaledIdentity {
            dim: 1,
            gain: GainSequence::power(1.0, 1.0),
            delta: 1.0,
        };
        let v = lyapunov_track(&traj, &c, &dvector![0.0]).unwrap();
        assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-12));
        let at_root = lyapunov_track(&traj, &c, &dvector![0.0]).unwrap();
        assert_eq!(at_root.len(), 20);
    }

    #[test]
    fn lyapunov_dimension_mismatch() {
        let p = SaProblem::new(
            dvector![1.0],
            StepSizePolicy::Harmonic,
            RegressionField::linear_scalar(0.5, dvector![0.0]),
            NoiseField::zero(),
            TruncationSchedule::whole_space(),
        )
        .unwrap();
        let traj = run(&p, 3, 0);
        assert!(lyapunov_track(&traj, &QuadraticLyapunov::identity(1), &dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn decrement_with_only_noise_term() {
        let p = SaProblem::new(
            dvector![0.0, 0.0],
            StepSizePolicy::Harmonic,
            RegressionField::linear_scalar(1.0, dvector![0.0, 0.0]),
            NoiseField::gaussian(2.0).unwrap(),
            TruncationSchedule::whole_space(),
        )
        .unwrap();
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let k = decrement_k(&p, &QuadraticLyapunov::Constant(c.clone()), 2, &dvector![0.0, 0.0]).unwrap();
        // γ = I/2, Σ = 4I: tr(γ C γ Σ) = tr(C)
        assert!((k - 3.0).abs() < 1e-12);
    }

    #[test]
    fn decrement_scalar_algebra() {
        let p = SaProblem::new(
            dvector![0.0],
            StepSizePolicy::Harmonic,
            RegressionField::linear_scalar(1.0, dvector![0.0]),
            NoiseField::zero(),
            TruncationSchedule::whole_space(),
        )
        .unwrap();
        let u = 0.8;
        let k = decrement_k(&p, &QuadraticLyapunov::identity(1), 1, &dvector![u]).unwrap();
        assert!((k + u * u).abs() < 1e-12);
    }

    #[test]
    fn decrement_reports_unsupported_noise() {
        let p = SaProblem::new(
            dvector![0.0],
            StepSizePolicy::Harmonic,
            RegressionField::linear_scalar(1.0, dvector![0.0]),
            NoiseField::new(crate::engine::NoiseFamily::IidStudent { nu: 1.5, scale: 1.0 }).unwrap(),
            TruncationSchedule::whole_space(),
        )
        .unwrap();
        assert!(matches!(
            decrement_k(&p, &QuadraticLyapunov::identity(1), 1, &dvector![0.1]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn drift_examples() {
        let root = dvector![0.0];
        let grid = uniform_grid(1, -2.0, 2.0, 41);
        let linear = RegressionField::linear_scalar(1.0, root.clone());
        let d1 = check_drift(&linear, None, &root, DriftCondition::D1, &grid, (1, 5), &DriftOptions::default())
            .unwrap();
        assert!(d1.passed());
        assert_eq!(d1.evaluated, 41 * 5);

        let cubic = RegressionField::polynomial(vec![0.0, 0.0, 1.0], 0.0).unwrap();
        let b1 = check_drift(
            &cubic,
            None,
            &root,
            DriftCondition::B1,
            &[dvector![0.5]],
            (1, 1),
            &DriftOptions::default(),
        )
        .unwrap();
        assert_eq!(b1.violations, 1);
        let row = &b1.rows[0];
        assert!((row.value + 0.0625).abs() < 1e-15);
        assert!((row.threshold + 0.125).abs() < 1e-15);

        let poly = RegressionField::polynomial(vec![0.5, 0.0, 1.0], 0.0).unwrap();
        let small = uniform_grid(1, -0.3, 0.3, 13);
        let b1 = check_drift(&poly, None, &root, DriftCondition::B1, &small, (1, 1), &DriftOptions::default())
            .unwrap();
        assert!(b1.passed());
    }

    #[test]
    fn drift_respects_truncation_and_t_min() {
        let root = dvector![0.0];
        // R(z) = +z for t < 3 (wrong sign), -z afterwards
        let field = RegressionField::custom(1, Some(root.clone()), |t, z| {
            if t < 3 {
                z.clone()
            } else {
                -z.clone()
            }
        })
        .unwrap();
        let opts = DriftOptions { t_min: 3, gain: None };
        let grid = uniform_grid(1, -1.0, 1.0, 5);
        let r = check_drift(&field, None, &root, DriftCondition::D1, &grid, (1, 5), &opts).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.early_violations, 8);

        let sched = TruncationSchedule::constant(crate::truncation::TruncationRegion::interval(-0.5, 0.5).unwrap());
        let r = check_drift(&field, Some(&sched), &root, DriftCondition::H4, &grid, (3, 3), &opts).unwrap();
        // only ±0.5 survive (0 excluded, ±1 outside U)
        assert_eq!(r.evaluated, 2);
    }

    #[test]
    fn w1_and_y1() {
        let root = dvector![1.0];
        let field = RegressionField::linear_scalar(1.0, root.clone());
        let grid = uniform_grid(1, 0.0, 2.0, 9);
        let opts = DriftOptions {
            t_min: 1,
            gain: Some(GainSequence::power(1.0, 1.0)),
        };
        let w1 = check_drift(&field, None, &root, DriftCondition::W1, &grid, (1, 10), &opts).unwrap();
        assert!(w1.passed());
        let y1 = check_drift(&field, None, &root, DriftCondition::Y1, &grid, (1, 3), &opts).unwrap();
        assert!(y1.passed());
        assert!((y1.rows[0].value + 1.0).abs() < 1e-6);

        let flat = RegressionField::linear_scalar(0.4, root.clone());
        let y1 = check_drift(&flat, None, &root, DriftCondition::Y1, &grid, (1, 1), &opts).unwrap();
        assert!(!y1.passed());
        assert!(check_drift(&field, None, &root, DriftCondition::W1, &grid, (1, 2), &DriftOptions::default()).is_err());
        assert!(check_drift(&field, None, &root, DriftCondition::D1, &[], (1, 2), &opts).is_err());
    }

    #[test]
    fn condition_parsing() {
        assert_eq!("b1".parse::<DriftCondition>().unwrap(), DriftCondition::B1);
        assert!("Q7".parse::<DriftCondition>().is_err());
        for c in DriftCondition::ALL {
            assert_eq!(c.to_string().parse::<DriftCondition>().unwrap(), c);
        }
    }

    #[test]
    fn drift_csv_header() {
        let root = dvector![0.0];
        let field = RegressionField::linear_scalar(1.0, root.clone());
        let r = check_drift(&field, None, &root, DriftCondition::D1, &[dvector![1.0]], (1, 1), &DriftOptions::default())
            .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("condition,t,grid_point,value,threshold,ok\nD1,1,1,-1,0,true"));
    }
}
