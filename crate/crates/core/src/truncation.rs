//! Closed convex truncation regions, their Euclidean projections, and
//! time-indexed truncation schedules.
//!
//! Three region shapes are supported: the whole space, axis-aligned boxes
//! and closed Euclidean balls ("spheres"). Each has a closed-form projection.
//! A box projection is unique by strict convexity of the distance, and a
//! sphere projection never needs to break ties because the center is an
//! interior point.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{eigen_extremes, require_spd};

/// Relative slack used for sphere membership so that projected boundary
/// points are recognised as members.
pub const SPHERE_MEMBERSHIP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum TruncationRegion {
    WholeSpace,
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    Sphere {
        center: DVector<f64>,
        radius: f64,
    },
}

impl TruncationRegion {
    pub fn new_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        check_finite(lower.as_slice(), "box lower bound")?;
        check_finite(upper.as_slice(), "box upper bound")?;
        if lower.iter().zip(upper.iter()).any(|(lo, hi)| lo > hi) {
            return Err(Error::Domain("box lower bound exceeds upper bound".into()));
        }
        Ok(TruncationRegion::Box { lower, upper })
    }

    /// Symmetric box `[center - half_width, center + half_width]`.
    pub fn symmetric_box(center: &DVector<f64>, half_width: f64) -> Result<Self> {
        if !(half_width >= 0.0) || !half_width.is_finite() {
            return Err(Error::Domain(format!("invalid box half width {half_width}")));
        }
        Self::new_box(center.add_scalar(-half_width), center.add_scalar(half_width))
    }

    /// One-dimensional interval `[a, b]`.
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new_box(DVector::from_element(1, a), DVector::from_element(1, b))
    }

    pub fn new_sphere(center: DVector<f64>, radius: f64) -> Result<Self> {
        check_finite(center.as_slice(), "sphere center")?;
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Domain(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(TruncationRegion::Sphere { center, radius })
    }

    /// Dimension of the region, `None` for the whole space.
    pub fn dim(&self) -> Option<usize> {
        match self {
            TruncationRegion::WholeSpace => None,
            TruncationRegion::Box { lower, .. } => Some(lower.len()),
            TruncationRegion::Sphere { center, .. } => Some(center.len()),
        }
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        match self {
            TruncationRegion::WholeSpace => true,
            TruncationRegion::Box { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(v, (lo, hi))| lo <= v && v <= hi),
            TruncationRegion::Sphere { center, radius } => {
                (z - center).norm() <= radius * (1.0 + SPHERE_MEMBERSHIP_SLACK)
            }
        }
    }

    /// Euclidean projection of `z` onto the region.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_finite(z.as_slice(), "projection input")?;
        if let Some(m) = self.dim() {
            check_dim(m, z.len())?;
        }
        Ok(self.project_unchecked(z))
    }

    pub(crate) fn project_unchecked(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            TruncationRegion::WholeSpace => z.clone(),
            TruncationRegion::Box { lower, upper } => DVector::from_iterator(
                z.len(),
                z.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
            ),
            TruncationRegion::Sphere { center, radius } => {
                let offset = z - center;
                let dist = offset.norm();
                if dist <= radius * (1.0 + SPHERE_MEMBERSHIP_SLACK) {
                    z.clone()
                } else {
                    center + offset * (radius / dist)
                }
            }
        }
    }
}

/// Free-function form of [`TruncationRegion::project`].
pub fn project(region: &TruncationRegion, z: &DVector<f64>) -> Result<DVector<f64>> {
    region.project(z)
}

/// Whether `λ_max(C)·‖center − root‖² ≤ λ_min(C)·radius²`.
///
/// When this holds, projecting onto the sphere `S(center, radius)` cannot
/// increase the `C`-norm distance to `root`.
pub fn cnorm_condition(
    c: &DMatrix<f64>,
    center: &DVector<f64>,
    radius: f64,
    root: &DVector<f64>,
) -> Result<bool> {
    require_spd(c)?;
    check_dim(c.nrows(), center.len())?;
    check_dim(c.nrows(), root.len())?;
    if !(radius > 0.0) {
        return Err(Error::Domain(format!("sphere radius must be positive, got {radius}")));
    }
    let (lmin, lmax) = eigen_extremes(c);
    let v2 = (center - root).norm_squared();
    Ok(lmax * v2 <= lmin * radius * radius)
}

/// Growth law of the half width `u_t` of an expanding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundLaw {
    /// `u_t = scale · ln(t + shift)`
    Log { scale: f64, shift: f64 },
    /// `u_t = scale · t^exponent`
    Power { scale: f64, exponent: f64 },
}

impl BoundLaw {
    pub fn half_width(&self, t: u64) -> f64 {
        let t = t as f64;
        let u = match *self {
            BoundLaw::Log { scale, shift } => scale * (t + shift).ln(),
            BoundLaw::Power { scale, exponent } => scale * t.powf(exponent),
        };
        u.max(0.0)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BoundLaw::Log { scale, shift } => {
                if !(scale > 0.0) || !(shift >= 0.0) || !scale.is_finite() || !shift.is_finite() {
                    return Err(Error::Domain(format!(
                        "log bound needs scale > 0 and shift >= 0, got scale={scale}, shift={shift}"
                    )));
                }
            }
            BoundLaw::Power { scale, exponent } => {
                if !(scale > 0.0) || !(exponent >= 0.0) || !scale.is_finite() || !exponent.is_finite() {
                    return Err(Error::Domain(format!(
                        "power bound needs scale > 0 and exponent >= 0, got scale={scale}, exponent={exponent}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Callable producing the region for step `t` given optional auxiliary data.
pub type RegionFn = dyn Fn(u64, Option<&DVector<f64>>) -> TruncationRegion + Send + Sync;

#[derive(Clone)]
pub enum ScheduleKind {
    Constant(TruncationRegion),
    /// `[center - u_t, center + u_t]` in every coordinate.
    ExpandingBox { center: DVector<f64>, law: BoundLaw },
    /// Ball of radius `initial_radius · t^(-decay)` around the auxiliary
    /// input, or around `center` when no auxiliary input is supplied.
    ShrinkingSphere {
        center: DVector<f64>,
        initial_radius: f64,
        decay: f64,
    },
    Custom(Arc<RegionFn>),
}

/// A deterministic map from step index (plus optional auxiliary data) to a
/// truncation region `U_t`.
#[derive(Clone)]
pub struct TruncationSchedule {
    kind: ScheduleKind,
}

impl fmt::Debug for TruncationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ScheduleKind::Constant(r) => f.debug_tuple("Constant").field(r).finish(),
            ScheduleKind::ExpandingBox { center, law } => f
                .debug_struct("ExpandingBox")
                .field("center", &center.as_slice())
                .field("law", law)
                .finish(),
            ScheduleKind::ShrinkingSphere {
                center,
                initial_radius,
                decay,
            } => f
                .debug_struct("ShrinkingSphere")
                .field("center", &center.as_slice())
                .field("initial_radius", initial_radius)
                .field("decay", decay)
                .finish(),
            ScheduleKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl TruncationSchedule {
    pub fn whole_space() -> Self {
        Self::constant(TruncationRegion::WholeSpace)
    }

    pub fn constant(region: TruncationRegion) -> Self {
        Self {
            kind: ScheduleKind::Constant(region),
        }
    }

    pub fn expanding_box(center: DVector<f64>, law: BoundLaw) -> Result<Self> {
        law.validate()?;
        check_finite(center.as_slice(), "box center")?;
        Ok(Self {
            kind: ScheduleKind::ExpandingBox { center, law },
        })
    }

    pub fn shrinking_sphere(center: DVector<f64>, initial_radius: f64, decay: f64) -> Result<Self> {
        check_finite(center.as_slice(), "sphere center")?;
        if !(initial_radius > 0.0) || !initial_radius.is_finite() {
            return Err(Error::Domain(format!(
                "initial radius must be positive, got {initial_radius}"
            )));
        }
        if !(decay >= 0.0) || !decay.is_finite() {
            return Err(Error::Domain(format!("decay exponent must be >= 0, got {decay}")));
        }
        Ok(Self {
            kind: ScheduleKind::ShrinkingSphere {
                center,
                initial_radius,
                decay,
            },
        })
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(u64, Option<&DVector<f64>>) -> TruncationRegion + Send + Sync + 'static,
    {
        Self {
            kind: ScheduleKind::Custom(Arc::new(f)),
        }
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn family(&self) -> &'static str {
        match self.kind {
            ScheduleKind::Constant(_) => "constant",
            ScheduleKind::ExpandingBox { .. } => "expanding-box",
            ScheduleKind::ShrinkingSphere { .. } => "shrinking-sphere",
            ScheduleKind::Custom(_) => "custom",
        }
    }

    pub fn is_whole_space(&self) -> bool {
        matches!(self.kind, ScheduleKind::Constant(TruncationRegion::WholeSpace))
    }

    /// Region `U_t`. Step indices start at 1; `t = 0` is evaluated as `t = 1`.
    pub fn region_at(&self, t: u64, aux: Option<&DVector<f64>>) -> TruncationRegion {
        let t = t.max(1);
        match &self.kind {
            ScheduleKind::Constant(r) => r.clone(),
            ScheduleKind::ExpandingBox { center, law } => {
                let u = law.half_width(t);
                TruncationRegion::Box {
                    lower: center.add_scalar(-u),
                    upper: center.add_scalar(u),
                }
            }
            ScheduleKind::ShrinkingSphere {
                center,
                initial_radius,
                decay,
            } => TruncationRegion::Sphere {
                center: aux.cloned().unwrap_or_else(|| center.clone()),
                radius: initial_radius * (t as f64).powf(-decay),
            },
            ScheduleKind::Custom(f) => f(t, aux),
        }
    }
}

/// Smallest `t0 ≤ horizon` such that `root ∈ U_t` for every `t0 ≤ t ≤ horizon`.
pub fn admissibility_horizon(
    schedule: &TruncationSchedule,
    root: &DVector<f64>,
    horizon: u64,
) -> Option<u64> {
    let mut first = None;
    for t in (1..=horizon).rev() {
        if schedule.region_at(t, None).contains(root) {
            first = Some(t);
        } else {
            break;
        }
    }
    first
}
