//! The truncated stochastic approximation recursion
//!
//! `Z_t = Φ_{U_t}(Z_{t-1} + γ_t(Z_{t-1}) [R_t(Z_{t-1}) + ε_t(Z_{t-1})])`, `t = 1, 2, …`
//!
//! with seeded reproducible noise and replication sweeps. With
//! `U_t = ℝ^m` this is the classical Robbins–Monro update.

mod field;
mod noise;
mod step;
mod trajectory;

pub use field::{FieldFn, FieldKind, RegressionField, ROOT_TOLERANCE};
pub use noise::{derive_stream, NoiseFamily, NoiseField, NoiseStream, StreamId};
pub use step::{Gain, GainSequence, MatrixStepFn, StepSizePolicy};
pub use trajectory::{TerminalStatus, Trajectory, TrajectorySummary};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::truncation::TruncationSchedule;

pub const DEFAULT_OVERFLOW_BOUND: f64 = 1e12;

/// A fully specified truncated SA problem.
#[derive(Debug, Clone)]
pub struct SaProblem {
    start: DVector<f64>,
    step: StepSizePolicy,
    field: RegressionField,
    noise: NoiseField,
    schedule: TruncationSchedule,
    overflow_bound: f64,
}

impl SaProblem {
    pub fn new(
        start: DVector<f64>,
        step: StepSizePolicy,
        field: RegressionField,
        noise: NoiseField,
        schedule: TruncationSchedule,
    ) -> Result<Self> {
        check_finite(start.as_slice(), "start value")?;
        check_dim(field.dim(), start.len())?;
        if let Some(region_dim) = schedule.region_at(1, None).dim() {
            check_dim(field.dim(), region_dim)?;
        }
        if noise.needs_root() && field.root().is_none() {
            return Err(Error::Domain("state-scaled noise requires a declared root".into()));
        }
        Ok(Self {
            start,
            step,
            field,
            noise,
            schedule,
            overflow_bound: DEFAULT_OVERFLOW_BOUND,
        })
    }

    pub fn with_overflow_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::Domain(format!("overflow bound must be positive, got {bound}")));
        }
        self.overflow_bound = bound;
        Ok(self)
    }

    pub fn with_schedule(mut self, schedule: TruncationSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_start(mut self, start: DVector<f64>) -> Self {
        self.start = start;
        self
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.start
    }

    pub fn step(&self) -> &StepSizePolicy {
        &self.step
    }

    pub fn field(&self) -> &RegressionField {
        &self.field
    }

    pub fn noise(&self) -> &NoiseField {
        &self.noise
    }

    pub fn schedule(&self) -> &TruncationSchedule {
        &self.schedule
    }

    pub fn root(&self) -> Option<&DVector<f64>> {
        self.field.root()
    }

    pub fn overflow_bound(&self) -> f64 {
        self.overflow_bound
    }
}

/// Result of one successful step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub z: DVector<f64>,
    /// Whether the projection moved the unconstrained update.
    pub projected: bool,
}

/// Why a step could not produce a state.
#[derive(Debug, Clone, PartialEq)]
pub enum StepFailure {
    Diverged { t: u64 },
    Rejected { t: u64, error: Error },
}

/// One step of the recursion. Consumes exactly one noise draw of `ε_t`.
pub fn sa_step(
    problem: &SaProblem,
    t: u64,
    z_prev: &DVector<f64>,
    stream: &mut NoiseStream,
) -> Result<StepOutput, StepFailure> {
    let reject = |error: Error| StepFailure::Rejected { t, error };
    if t == 0 {
        return Err(reject(Error::Domain("step index starts at 1".into())));
    }
    check_dim(problem.dim(), z_prev.len()).map_err(reject)?;
    check_finite(z_prev.as_slice(), "previous state").map_err(reject)?;

    let root = problem.field.root();
    let drift = problem.field.eval(t, z_prev);
    check_dim(problem.dim(), drift.len()).map_err(reject)?;
    let noise = problem.noise.sample(t, z_prev, root, stream);
    let gain = problem.step.gain(t, z_prev);
    if let Gain::Matrix(g) = &gain {
        if g.nrows() != problem.dim() || g.ncols() != problem.dim() {
            return Err(reject(Error::DimensionMismatch {
                expected: problem.dim(),
                got: g.nrows(),
            }));
        }
    }
    let candidate = z_prev + gain.apply(&(drift + noise));
    if candidate.iter().any(|v| !v.is_finite()) {
        return Err(StepFailure::Diverged { t });
    }

    let region = problem.schedule.region_at(t, None);
    let (z, projected) = if region.contains(&candidate) {
        (candidate, false)
    } else {
        let p = region.project_unchecked(&candidate);
        (p, true)
    };
    if z.iter().any(|v| !v.is_finite() || v.abs() > problem.overflow_bound) {
        return Err(StepFailure::Diverged { t });
    }
    Ok(StepOutput { z, projected })
}

/// Horizon and recording options for [`run_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub horizon: u64,
    /// Record every `stride`-th step (and always the last step).
    pub stride: u64,
}

impl RunOptions {
    pub fn new(horizon: u64) -> Self {
        Self { horizon, stride: 1 }
    }

    pub fn with_stride(mut self, stride: u64) -> Self {
        self.stride = stride.max(1);
        self
    }
}

/// Run `horizon` steps, recording every step.
pub fn run(problem: &SaProblem, horizon: u64, stream: impl Into<StreamId>) -> Trajectory {
    run_with(problem, RunOptions::new(horizon), stream)
}

pub fn run_with(problem: &SaProblem, opts: RunOptions, stream: impl Into<StreamId>) -> Trajectory {
    let mut rng = NoiseStream::new(stream);
    let stride = opts.stride.max(1);
    let capacity = (opts.horizon / stride) as usize + 1;
    let mut traj = Trajectory::new(problem.start.clone(), problem.root().cloned(), capacity);
    let mut z = problem.start.clone();
    for t in 1..=opts.horizon {
        match sa_step(problem, t, &z, &mut rng) {
            Ok(out) => {
                z = out.z;
                traj.steps = t;
                if out.projected {
                    traj.projections += 1;
                }
                if t % stride == 0 || t == opts.horizon {
                    traj.record(t, &z, out.projected);
                }
            }
            Err(StepFailure::Diverged { t }) => {
                traj.status = TerminalStatus::Diverged { t };
                break;
            }
            Err(StepFailure::Rejected { t, error }) => {
                traj.status = TerminalStatus::Rejected {
                    t,
                    reason: error.to_string(),
                };
                break;
            }
        }
    }
    traj.terminal = z;
    traj.noise_draws = rng.draws();
    traj
}

/// `n_reps` independent runs; replication `r` uses `derive_stream(base_seed, r)`.
/// Output order is by replication index regardless of scheduling.
pub fn replicate(problem: &SaProblem, horizon: u64, n_reps: u64, base_seed: u64) -> Vec<Trajectory> {
    replicate_with(problem, RunOptions::new(horizon), n_reps, base_seed)
}

pub fn replicate_with(
    problem: &SaProblem,
    opts: RunOptions,
    n_reps: u64,
    base_seed: u64,
) -> Vec<Trajectory> {
    (0..n_reps)
        .into_par_iter()
        .map(|r| run_with(problem, opts, derive_stream(base_seed, r)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truncation::{BoundLaw, TruncationRegion};
    use nalgebra::dvector;

    fn scalar_problem(field: RegressionField, step: StepSizePolicy, start: f64) -> SaProblem {
        SaProblem::new(
            dvector![start],
            step,
            field,
            NoiseField::zero(),
            TruncationSchedule::whole_space(),
        )
        .unwrap()
    }

    #[test]
    fn unit_step_lands_on_zero() {
        let p = scalar_problem(
            RegressionField::linear_scalar(1.0, dvector![0.0]),
            StepSizePolicy::Harmonic,
            1.0,
        );
        let out = sa_step(&p, 1, &dvector![1.0], &mut NoiseStream::new(0)).unwrap();
        assert_eq!(out.z, dvector![0.0]);
        assert!(!out.projected);
    }

    #[test]
    fn shifted_root_reached_in_one_step() {
        let p = scalar_problem(
            RegressionField::linear_scalar(1.0, dvector![1.0]),
            StepSizePolicy::Reciprocal(GainSequence::power(1.0, 1.0)),
            0.0,
        );
        let out = sa_step(&p, 1, &dvector![0.0], &mut NoiseStream::new(0)).unwrap();
        assert_eq!(out.z, dvector![1.0]);
    }

    #[test]
    fn cubic_update_is_clamped_to_log_box() {
        let field = RegressionField::polynomial(vec![1.0, 0.0, 1.0], 0.0).unwrap();
        let sched = TruncationSchedule::expanding_box(
            dvector![0.0],
            BoundLaw::Log { scale: 5.0, shift: 2.0 },
        )
        .unwrap();
        let p = scalar_problem(field, StepSizePolicy::Harmonic, 10.0).with_schedule(sched);
        let out = sa_step(&p, 1, &dvector![10.0], &mut NoiseStream::new(0)).unwrap();
        let u = 5.0 * 3f64.ln();
        assert!((out.z[0] + u).abs() < 1e-12);
        assert!((out.z[0] + 5.493).abs() < 1e-3);
        assert!(out.projected);
    }

    #[test]
    fn harmonic_linear_run_vanishes_after_first_step() {
        let p = scalar_problem(
            RegressionField::linear_scalar(1.0, dvector![0.0]),
            StepSizePolicy::Harmonic,
            1.0,
        );
        let traj = run(&p, 20, 3);
        assert!(traj.status().is_completed());
        assert!(traj.norm2().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_slope_matches_product_formula() {
        let p = scalar_problem(
            RegressionField::linear_scalar(0.5, dvector![0.0]),
            StepSizePolicy::Harmonic,
            1.0,
        );
        let traj = run(&p, 3, 0);
        // independent oracle: Π (1 - 1/(2s))
        let oracle: f64 = (1..=3).map(|s| 1.0 - 1.0 / (2.0 * s as f64)).product();
        assert!((oracle - 0.3125).abs() < 1e-15);
        assert!((traj.terminal_state()[0] - oracle).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_recorded_not_raised() {
        let field = RegressionField::polynomial(vec![1.0, 0.0, 1.0], 0.0).unwrap();
        let p = scalar_problem(field, StepSizePolicy::Harmonic, 10.0);
        let traj = run(&p, 100, 1);
        assert!(matches!(traj.status(), TerminalStatus::Diverged { t } if *t <= 4));
        assert!(traj.len() < 100);
    }

    #[test]
    fn zero_step_index_is_rejected() {
        let p = scalar_problem(
            RegressionField::linear_scalar(1.0, dvector![0.0]),
            StepSizePolicy::Harmonic,
            1.0,
        );
        assert!(matches!(
            sa_step(&p, 0, &dvector![1.0], &mut NoiseStream::new(0)),
            Err(StepFailure::Rejected { t: 0, .. })
        ));
    }

    #[test]
    fn custom_field_dimension_error_becomes_rejected_status() {
        let field = RegressionField::custom(1, None, |t, z| {
            if t < 3 {
                -z.clone()
            } else {
                DVector::zeros(2)
            }
        })
        .unwrap();
        let p = scalar_problem(field, StepSizePolicy::Harmonic, 1.0);
        let traj = run(&p, 10, 0);
        assert!(matches!(traj.status(), TerminalStatus::Rejected { t: 3, .. }));
        assert_eq!(traj.steps(), 2);
    }

    #[test]
    fn problem_rejects_mismatched_schedule() {
        let sched = TruncationSchedule::constant(
            TruncationRegion::new_box(dvector![-1.0, -1.0], dvector![1.0, 1.0]).unwrap(),
        );
        let r = SaProblem::new(
            dvector![0.0],
            StepSizePolicy::Harmonic,
            RegressionField::linear_scalar(1.0, dvector![0.0]),
            NoiseField::zero(),
            sched,
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn stride_records_multiples_and_last_step() {
        let p = SaProblem::new(
            dvector![1.0],
            StepSizePolicy::Harmonic,
            RegressionField::linear_scalar(0.7, dvector![0.0]),
            NoiseField::gaussian(1.0).unwrap(),
            TruncationSchedule::whole_space(),
        )
        .unwrap();
        let traj = run_with(&p, RunOptions::new(25).with_stride(10), 5);
        assert_eq!(traj.times(), &[10, 20, 25]);
        let full = run(&p, 25, 5);
        assert_eq!(traj.state(1), full.state(19));
        assert_eq!(traj.terminal_state(), full.terminal_state());
    }

    #[test]
    fn csv_has_expected_header() {
        let p = scalar_problem(
            RegressionField::linear_scalar(0.5, dvector![0.0]),
            StepSizePolicy::Harmonic,
            1.0,
        );
        let traj = run(&p, 2, 0);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,z_1,norm2,projected"));
        assert_eq!(lines.next(), Some("1,0.5,0.25,false"));
    }
}
