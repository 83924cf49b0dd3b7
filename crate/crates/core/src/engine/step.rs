use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A positive scalar sequence `a_t`, `t ≥ 0`.
#[derive(Clone)]
pub enum GainSequence {
    /// `a_t = coef · t^exponent`
    Power { coef: f64, exponent: f64 },
    Custom(Arc<dyn Fn(u64) -> f64 + Send + Sync>),
}

impl fmt::Debug for GainSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainSequence::Power { coef, exponent } => f
                .debug_struct("Power")
                .field("coef", coef)
                .field("exponent", exponent)
                .finish(),
            GainSequence::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl GainSequence {
    pub fn power(coef: f64, exponent: f64) -> Self {
        GainSequence::Power { coef, exponent }
    }

    pub fn custom<F: Fn(u64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        GainSequence::Custom(Arc::new(f))
    }

    pub fn at(&self, t: u64) -> f64 {
        match self {
            GainSequence::Power { coef, exponent } => {
                if t == 0 {
                    if *exponent == 0.0 {
                        *coef
                    } else {
                        0.0
                    }
                } else {
                    coef * (t as f64).powf(*exponent)
                }
            }
            GainSequence::Custom(f) => f(t),
        }
    }
}

/// Step size `γ_t(z)` evaluated at one point.
#[derive(Debug, Clone, PartialEq)]
pub enum Gain {
    /// `γ_t = s · I`
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl Gain {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Gain::Scalar(s) => v * *s,
            Gain::Matrix(g) => g * v,
        }
    }

    pub fn to_matrix(&self, dim: usize) -> DMatrix<f64> {
        match self {
            Gain::Scalar(s) => DMatrix::identity(dim, dim) * *s,
            Gain::Matrix(g) => g.clone(),
        }
    }
}

pub type MatrixStepFn = dyn Fn(u64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Step-size policy `γ_t(z)`.
#[derive(Clone)]
pub enum StepSizePolicy {
    /// `γ_t = t^{-1} I`
    Harmonic,
    /// `γ_t = t^{-ε} I`, `ε ∈ (1/2, 1]`
    PowerDecay { exponent: f64 },
    /// `γ_t = a_t^{-1} I` for an arbitrary positive sequence.
    Reciprocal(GainSequence),
    /// `γ_t` taken from a precomputed sequence of matrices, typically the
    /// inverse information matrices produced by a recursive estimator.
    /// Index `t - 1`; the last matrix is reused past the end.
    MatrixRecursive(Arc<[DMatrix<f64>]>),
    Custom(Arc<MatrixStepFn>),
}

impl fmt::Debug for StepSizePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSizePolicy::Harmonic => f.write_str("Harmonic"),
            StepSizePolicy::PowerDecay { exponent } => {
                f.debug_struct("PowerDecay").field("exponent", exponent).finish()
            }
            StepSizePolicy::Reciprocal(seq) => f.debug_tuple("Reciprocal").field(seq).finish(),
            StepSizePolicy::MatrixRecursive(m) => write!(f, "MatrixRecursive(len={})", m.len()),
            StepSizePolicy::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl StepSizePolicy {
    pub fn power_decay(exponent: f64) -> Result<Self> {
        if !(exponent > 0.5 && exponent <= 1.0) {
            return Err(Error::Domain(format!(
                "power-decay exponent must lie in (1/2, 1], got {exponent}"
            )));
        }
        Ok(StepSizePolicy::PowerDecay { exponent })
    }

    pub fn matrix_recursive(gains: Vec<DMatrix<f64>>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::Domain("matrix step sequence is empty".into()));
        }
        Ok(StepSizePolicy::MatrixRecursive(gains.into()))
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(u64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        StepSizePolicy::Custom(Arc::new(f))
    }

    /// `γ_t(z)`; `t ≥ 1`.
    pub fn gain(&self, t: u64, z: &DVector<f64>) -> Gain {
        let t = t.max(1);
        match self {
            StepSizePolicy::Harmonic => Gain::Scalar(1.0 / t as f64),
            StepSizePolicy::PowerDecay { exponent } => Gain::Scalar((t as f64).powf(-exponent)),
            StepSizePolicy::Reciprocal(seq) => Gain::Scalar(1.0 / seq.at(t)),
            StepSizePolicy::MatrixRecursive(seq) => {
                let idx = ((t - 1) as usize).min(seq.len() - 1);
                Gain::Matrix(seq[idx].clone())
            }
            StepSizePolicy::Custom(f) => Gain::Matrix(f(t, z)),
        }
    }

    /// The scalar sequence `a_t` with `γ_t = a_t^{-1} I`, when the policy is scalar.
    pub fn scalar_sequence(&self) -> Option<GainSequence> {
        match self {
            StepSizePolicy::Harmonic => Some(GainSequence::power(1.0, 1.0)),
            StepSizePolicy::PowerDecay { exponent } => Some(GainSequence::power(1.0, *exponent)),
            StepSizePolicy::Reciprocal(seq) => Some(seq.clone()),
            _ => None,
        }
    }
}
