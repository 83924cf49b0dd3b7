use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Tolerance for the numerical check `R_t(z⁰) = 0`.
pub const ROOT_TOLERANCE: f64 = 1e-12;

const PROBE_TIMES: [u64; 8] = [1, 2, 3, 5, 10, 100, 1_000, 1_000_000];

pub type FieldFn = dyn Fn(u64, &DVector<f64>) -> DVector<f64> + Send + Sync;

#[derive(Clone)]
pub enum FieldKind {
    /// `R(z) = -B (z - z⁰)`
    Linear { gain: DMatrix<f64> },
    /// One-dimensional `R(z) = -Σ_i C_i (z - z⁰)^i`, coefficients `C_1..C_l`.
    Polynomial { coeffs: Vec<f64> },
    Custom(Arc<FieldFn>),
}

/// The regression field `R_t(z)` whose root is sought.
#[derive(Clone)]
pub struct RegressionField {
    kind: FieldKind,
    dim: usize,
    root: Option<DVector<f64>>,
}

impl fmt::Debug for RegressionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegressionField")
            .field("family", &self.family())
            .field("dim", &self.dim)
            .field("root", &self.root.as_ref().map(|r| r.as_slice().to_vec()))
            .finish()
    }
}

impl RegressionField {
    pub fn linear(gain: DMatrix<f64>, root: DVector<f64>) -> Result<Self> {
        check_dim(root.len(), gain.nrows())?;
        check_dim(root.len(), gain.ncols())?;
        Ok(Self {
            dim: root.len(),
            kind: FieldKind::Linear { gain },
            root: Some(root),
        })
    }

    /// `R(z) = -slope · (z - z⁰)`
    pub fn linear_scalar(slope: f64, root: DVector<f64>) -> Self {
        let m = root.len();
        Self {
            dim: m,
            kind: FieldKind::Linear {
                gain: DMatrix::identity(m, m) * slope,
            },
            root: Some(root),
        }
    }

    pub fn polynomial(coeffs: Vec<f64>, root: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Domain("polynomial field needs at least one coefficient".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) || !root.is_finite() {
            return Err(Error::Domain("polynomial field has non-finite parameters".into()));
        }
        Ok(Self {
            dim: 1,
            kind: FieldKind::Polynomial { coeffs },
            root: Some(DVector::from_element(1, root)),
        })
    }

    /// Arbitrary field. When `root` is given, `R_t(root) = 0` is checked on a
    /// fixed set of probe times.
    pub fn custom<F>(dim: usize, root: Option<DVector<f64>>, f: F) -> Result<Self>
    where
        F: Fn(u64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        if let Some(r) = &root {
            check_dim(dim, r.len())?;
            for t in PROBE_TIMES {
                let v = f(t, r);
                check_dim(dim, v.len())?;
                if v.amax() > ROOT_TOLERANCE || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Domain(format!(
                        "declared root is not a zero of the field at t={t} (|R| = {})",
                        v.amax()
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            kind: FieldKind::Custom(Arc::new(f)),
            root,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> Option<&DVector<f64>> {
        self.root.as_ref()
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn family(&self) -> &'static str {
        match self.kind {
            FieldKind::Linear { .. } => "linear",
            FieldKind::Polynomial { .. } => "polynomial",
            FieldKind::Custom(_) => "custom",
        }
    }

    pub fn eval(&self, t: u64, z: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            FieldKind::Linear { gain } => {
                let root = self.root.as_ref().expect("linear field has a root");
                -(gain * (z - root))
            }
            FieldKind::Polynomial { coeffs } => {
                let root = self.root.as_ref().expect("polynomial field has a root")[0];
                let d = z[0] - root;
                // Horner on Σ C_i d^i = d (C_1 + d (C_2 + ...))
                let inner = coeffs.iter().rev().fold(0.0, |acc, c| acc * d + c);
                DVector::from_element(1, -(inner * d))
            }
            FieldKind::Custom(f) => f(t, z),
        }
    }
}
