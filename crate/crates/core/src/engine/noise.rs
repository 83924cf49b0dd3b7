use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies one reproducible random stream: a ChaCha8 key derived from
/// `seed` and one of its 2^64 independent stream positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub stream: u64,
}

impl From<u64> for StreamId {
    fn from(seed: u64) -> Self {
        StreamId { seed, stream: 0 }
    }
}

/// Stream used by replication `rep` of a sweep seeded with `base_seed`.
pub fn derive_stream(base_seed: u64, rep: u64) -> StreamId {
    StreamId {
        seed: base_seed,
        stream: rep,
    }
}

/// Random source for noise draws. Counts the variates it hands out.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    draws: u64,
}

impl NoiseStream {
    pub fn new(id: impl Into<StreamId>) -> Self {
        let id = id.into();
        let mut rng = ChaCha8Rng::seed_from_u64(id.seed);
        rng.set_stream(id.stream);
        Self { rng, draws: 0 }
    }

    /// Number of variates drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        self.rng.sample(StandardNormal)
    }

    pub fn student(&mut self, nu: f64) -> f64 {
        self.draws += 1;
        StudentT::new(nu)
            .expect("degrees of freedom validated at construction")
            .sample(&mut self.rng)
    }

    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random::<f64>()
    }
}

/// Centered noise families for `ε_t(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NoiseFamily {
    /// `ε ≡ 0`
    Zero,
    /// i.i.d. `N(0, σ² I)`
    IidGaussian { sigma: f64 },
    /// i.i.d. `scale · t_ν` per coordinate.
    IidStudent { nu: f64, scale: f64 },
    /// `N(0, σ² (1 + ‖z − z⁰‖)² I)`
    StateScaled { sigma: f64 },
    /// `N(0, σ² t^{exponent} I)`
    VarianceGrowth { sigma: f64, exponent: f64 },
}

/// The noise field `ε_t(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    family: NoiseFamily,
}

impl NoiseField {
    pub fn new(family: NoiseFamily) -> Result<Self> {
        let bad = |msg: String| Err(Error::Domain(msg));
        match family {
            NoiseFamily::Zero => {}
            NoiseFamily::IidGaussian { sigma } | NoiseFamily::StateScaled { sigma } => {
                if !(sigma >= 0.0) || !sigma.is_finite() {
                    return bad(format!("noise sigma must be >= 0, got {sigma}"));
                }
            }
            NoiseFamily::IidStudent { nu, scale } => {
                if !(nu > 0.0) || !(scale >= 0.0) || !nu.is_finite() || !scale.is_finite() {
                    return bad(format!("student noise needs nu > 0 and scale >= 0, got nu={nu}, scale={scale}"));
                }
            }
            NoiseFamily::VarianceGrowth { sigma, exponent } => {
                if !(sigma >= 0.0) || !sigma.is_finite() || !exponent.is_finite() {
                    return bad(format!("invalid variance-growth noise sigma={sigma}, exponent={exponent}"));
                }
            }
        }
        Ok(Self { family })
    }

    pub fn zero() -> Self {
        Self {
            family: NoiseFamily::Zero,
        }
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(NoiseFamily::IidGaussian { sigma })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn needs_root(&self) -> bool {
        matches!(self.family, NoiseFamily::StateScaled { .. })
    }

    /// Variates consumed per step in dimension `dim`.
    pub fn draws_per_step(&self, dim: usize) -> u64 {
        match self.family {
            NoiseFamily::Zero => 0,
            _ => dim as u64,
        }
    }

    /// Per-coordinate standard deviation multiplier applied to the base variate.
    fn scale(&self, t: u64, z: &DVector<f64>, root: Option<&DVector<f64>>) -> f64 {
        match self.family {
            NoiseFamily::Zero => 0.0,
            NoiseFamily::IidGaussian { sigma } => sigma,
            NoiseFamily::IidStudent { scale, .. } => scale,
            NoiseFamily::StateScaled { sigma } => {
                let root = root.expect("state-scaled noise requires a root");
                sigma * (1.0 + (z - root).norm())
            }
            NoiseFamily::VarianceGrowth { sigma, exponent } => {
                sigma * (t.max(1) as f64).powf(0.5 * exponent)
            }
        }
    }

    /// One draw of `ε_t(z)`.
    pub fn sample(
        &self,
        t: u64,
        z: &DVector<f64>,
        root: Option<&DVector<f64>>,
        stream: &mut NoiseStream,
    ) -> DVector<f64> {
        let dim = z.len();
        match self.family {
            NoiseFamily::Zero => DVector::zeros(dim),
            NoiseFamily::IidStudent { nu, scale } => {
                DVector::from_fn(dim, |_, _| scale * stream.student(nu))
            }
            _ => {
                let s = self.scale(t, z, root);
                DVector::from_fn(dim, |_, _| s * stream.standard_normal())
            }
        }
    }

    /// Conditional covariance `Σ_t(z) = E[ε εᵀ]`.
    pub fn covariance(
        &self,
        t: u64,
        z: &DVector<f64>,
        root: Option<&DVector<f64>>,
    ) -> Result<DMatrix<f64>> {
        let dim = z.len();
        let var = match self.family {
            NoiseFamily::IidStudent { nu, scale } => {
                if nu <= 2.0 {
                    return Err(Error::Unsupported(format!(
                        "student noise with nu={nu} has no finite covariance"
                    )));
                }
                scale * scale * nu / (nu - 2.0)
            }
            NoiseFamily::StateScaled { .. } if root.is_none() => {
                return Err(Error::Unsupported("state-scaled noise covariance needs a root".into()))
            }
            _ => self.scale(t, z, root).powi(2),
        };
        Ok(DMatrix::identity(dim, dim) * var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = NoiseStream::new(StreamId { seed: 7, stream: 0 });
        let mut b = NoiseStream::new(StreamId { seed: 7, stream: 0 });
        let mut c = NoiseStream::new(StreamId { seed: 7, stream: 1 });
        let xa: Vec<f64> = (0..10).map(|_| a.standard_normal()).collect();
        let xb: Vec<f64> = (0..10).map(|_| b.standard_normal()).collect();
        let xc: Vec<f64> = (0..10).map(|_| c.standard_normal()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_eq!(a.draws(), 10);
    }

    #[test]
    fn covariance_closed_forms() {
        let z = dvector![2.0, 0.0];
        let root = dvector![0.0, 0.0];
        let st = NoiseField::new(NoiseFamily::IidStudent { nu: 4.0, scale: 2.0 }).unwrap();
        assert_eq!(st.covariance(1, &z, None).unwrap()[(0, 0)], 8.0);
        let heavy = NoiseField::new(NoiseFamily::IidStudent { nu: 2.0, scale: 1.0 }).unwrap();
        assert!(matches!(heavy.covariance(1, &z, None), Err(Error::Unsupported(_))));
        let ss = NoiseField::new(NoiseFamily::StateScaled { sigma: 0.5 }).unwrap();
        assert_eq!(ss.covariance(1, &z, Some(&root)).unwrap()[(1, 1)], 2.25);
        let vg = NoiseField::new(NoiseFamily::VarianceGrowth { sigma: 1.0, exponent: 0.5 }).unwrap();
        assert!((vg.covariance(16, &z, None).unwrap()[(0, 0)] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_draws_nothing() {
        let mut s = NoiseStream::new(1);
        let e = NoiseField::zero().sample(3, &dvector![1.0], None, &mut s);
        assert_eq!(e, dvector![0.0]);
        assert_eq!(s.draws(), 0);
    }
}
