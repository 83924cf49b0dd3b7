//! AR(m) simulation and online estimation.
//!
//! For `X_t = θᵀ x_t + ξ_t` with regressor window `x_t = (X_{t−1}, …, X_{t−m})`:
//!
//! - recursive least squares, with `Î_t^{-1}` maintained by a rank-one
//!   Sherman–Morrison update;
//! - the recursive likelihood procedure for a known innovation density,
//!   which uses the score `−g'/g` and the location Fisher information `l_g`;
//! - robust `ψ`-procedures followed by a projection onto a truncation region;
//! - the generic linear procedure `Z_t = Z_{t−1} + γ_t (h_t − β_t Z_{t−1})`.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{NoiseStream, StreamId, TerminalStatus, DEFAULT_OVERFLOW_BOUND};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{require_spd, spd_inverse, symmetrize};
use crate::truncation::TruncationSchedule;

/// Innovation law of `ξ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Innovation {
    Gaussian { sigma: f64 },
    /// `scale · t_ν`
    Student { nu: f64, scale: f64 },
    /// `N(0, σ² t^{exponent})`, `exponent ∈ [0, 1)`
    GaussianGrowing { sigma: f64, exponent: f64 },
}

impl Innovation {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Innovation::Gaussian { sigma } => sigma > 0.0 && sigma.is_finite(),
            Innovation::Student { nu, scale } => nu > 2.0 && nu.is_finite() && scale > 0.0 && scale.is_finite(),
            Innovation::GaussianGrowing { sigma, exponent } => {
                sigma > 0.0 && sigma.is_finite() && (0.0..1.0).contains(&exponent)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid innovation parameters {self:?}")))
        }
    }

    pub fn variance(&self, t: u64) -> f64 {
        match *self {
            Innovation::Gaussian { sigma } => sigma * sigma,
            Innovation::Student { nu, scale } => scale * scale * nu / (nu - 2.0),
            Innovation::GaussianGrowing { sigma, exponent } => {
                sigma * sigma * (t.max(1) as f64).powf(exponent)
            }
        }
    }

    pub fn sample(&self, t: u64, stream: &mut NoiseStream) -> f64 {
        match *self {
            Innovation::Gaussian { sigma } => sigma * stream.standard_normal(),
            Innovation::Student { nu, scale } => scale * stream.student(nu),
            Innovation::GaussianGrowing { .. } => self.variance(t).sqrt() * stream.standard_normal(),
        }
    }

    /// Score `−g_t'(u) / g_t(u)` of the innovation density.
    pub fn score(&self, t: u64, u: f64) -> f64 {
        match *self {
            Innovation::Gaussian { .. } | Innovation::GaussianGrowing { .. } => u / self.variance(t),
            Innovation::Student { nu, scale } => (nu + 1.0) * u / (nu * scale * scale + u * u),
        }
    }

    /// Unnormalised density, used for quadrature.
    fn kernel(&self, t: u64, u: f64) -> f64 {
        match *self {
            Innovation::Gaussian { .. } | Innovation::GaussianGrowing { .. } => {
                (-0.5 * u * u / self.variance(t)).exp()
            }
            Innovation::Student { nu, scale } => {
                (1.0 + u * u / (nu * scale * scale)).powf(-0.5 * (nu + 1.0))
            }
        }
    }

    fn spread(&self, t: u64) -> f64 {
        match *self {
            Innovation::Student { scale, .. } => scale,
            _ => self.variance(t).sqrt(),
        }
    }

    /// Location Fisher information `l_g = ∫ (g'/g)² g`, by quadrature.
    pub fn fisher_information(&self, t: u64) -> f64 {
        location_fisher_information(
            |u| self.kernel(t, u),
            |u| self.score(t, u),
            self.spread(t),
        )
    }
}

/// `∫ score² g / ∫ g` for an unnormalised density `g` on ℝ, by adaptive
/// Simpson quadrature after the substitution `u = scale · tan φ`.
pub fn location_fisher_information(
    density: impl Fn(f64) -> f64,
    score: impl Fn(f64) -> f64,
    scale: f64,
) -> f64 {
    let edge = FRAC_PI_2 * (1.0 - 1e-12);
    let weighted = |phi: f64, with_score: bool| {
        if phi.abs() >= edge {
            return 0.0;
        }
        let u = scale * phi.tan();
        let jac = scale / phi.cos().powi(2);
        let g = density(u) * jac;
        if with_score {
            let s = score(u);
            s * s * g
        } else {
            g
        }
    };
    let mass = adaptive_simpson(&|p| weighted(p, false), -FRAC_PI_2, FRAC_PI_2, 1e-10);
    let info = adaptive_simpson(&|p| weighted(p, true), -FRAC_PI_2, FRAC_PI_2, 1e-10);
    info / mass
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    // split once so symmetric integrands cannot fool the first estimate
    let mid = 0.5 * (a + b);
    let mut total = 0.0;
    for (lo, hi) in [(a, mid), (mid, b)] {
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += recurse(f, lo, hi, fa, fm, fb, whole, 0.5 * tol, 48);
    }
    total
}

/// AR(m) model `X_t = θ₁X_{t−1} + … + θ_mX_{t−m} + ξ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    coeffs: DVector<f64>,
    innovation: Innovation,
    /// `(X_0, X_{−1}, …, X_{1−m})`
    presample: Vec<f64>,
}

impl ArModel {
    pub fn new(coeffs: DVector<f64>, innovation: Innovation) -> Result<Self> {
        let m = coeffs.len();
        Self::with_presample(coeffs, innovation, vec![0.0; m])
    }

    pub fn with_presample(coeffs: DVector<f64>, innovation: Innovation, presample: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Domain("AR order must be at least 1".into()));
        }
        check_finite(coeffs.as_slice(), "AR coefficients")?;
        check_dim(coeffs.len(), presample.len())?;
        check_finite(&presample, "AR presample")?;
        innovation.validate()?;
        Ok(Self {
            coeffs,
            innovation,
            presample,
        })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn innovation(&self) -> Innovation {
        self.innovation
    }

    pub fn presample(&self) -> &[f64] {
        &self.presample
    }

    /// Companion matrix of the recursion.
    pub fn companion(&self) -> DMatrix<f64> {
        let m = self.order();
        let mut a = DMatrix::zeros(m, m);
        for j in 0..m {
            a[(0, j)] = self.coeffs[j];
        }
        for i in 1..m {
            a[(i, i - 1)] = 1.0;
        }
        a
    }

    /// Whether all characteristic roots lie outside the unit circle.
    pub fn is_stationary(&self) -> bool {
        self.companion()
            .complex_eigenvalues()
            .iter()
            .all(|l| l.norm() < 1.0)
    }

    /// Stationary covariance `Γ = E[x_t x_tᵀ]` of the regressor window, for
    /// stationary models with constant innovation variance.
    pub fn stationary_regressor_covariance(&self) -> Option<DMatrix<f64>> {
        if matches!(self.innovation, Innovation::GaussianGrowing { exponent, .. } if exponent > 0.0)
            || !self.is_stationary()
        {
            return None;
        }
        // Γ = A Γ Aᵀ + σ² e₁e₁ᵀ, solved in vectorised form
        let m = self.order();
        let a = self.companion();
        let kron = a.kronecker(&a);
        let lhs = DMatrix::identity(m * m, m * m) - kron;
        let mut rhs = DVector::zeros(m * m);
        rhs[0] = self.innovation.variance(1);
        let vec_gamma = lhs.lu().solve(&rhs)?;
        let mut gamma = DMatrix::from_column_slice(m, m, vec_gamma.as_slice());
        symmetrize(&mut gamma);
        Some(gamma)
    }
}

/// A simulated AR path.
#[derive(Debug, Clone, PartialEq)]
pub struct ArSeries {
    /// `(X_0, X_{−1}, …, X_{1−m})`
    pub presample: Vec<f64>,
    /// `X_1, …, X_T` (shorter when the path overflowed).
    pub values: Vec<f64>,
    pub status: TerminalStatus,
}

impl ArSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `X_t` for `t ≥ 1 − m`.
    pub fn value(&self, t: i64) -> f64 {
        if t >= 1 {
            self.values[(t - 1) as usize]
        } else {
            self.presample[(-t) as usize]
        }
    }

    /// Regressor window `(X_{t−1}, …, X_{t−m})` for `1 ≤ t ≤ len`.
    pub fn window(&self, t: usize) -> DVector<f64> {
        let m = self.presample.len();
        DVector::from_fn(m, |i, _| self.value(t as i64 - 1 - i as i64))
    }
}

/// Run the AR recursion on a given innovation sequence.
pub fn ar_recursion(coeffs: &DVector<f64>, presample: &[f64], innovations: &[f64]) -> ArSeries {
    let m = coeffs.len();
    let mut series = ArSeries {
        presample: presample.to_vec(),
        values: Vec::with_capacity(innovations.len()),
        status: TerminalStatus::Completed,
    };
    for (i, xi) in innovations.iter().enumerate() {
        let t = i + 1;
        let mut x = *xi;
        for j in 0..m {
            x += coeffs[j] * series.value(t as i64 - 1 - j as i64);
        }
        if !x.is_finite() || x.abs() > DEFAULT_OVERFLOW_BOUND {
            series.status = TerminalStatus::Diverged { t: t as u64 };
            break;
        }
        series.values.push(x);
    }
    series
}

/// Simulate `X_1..X_T`; deterministic given the stream.
pub fn simulate_ar(model: &ArModel, horizon: usize, stream: impl Into<StreamId>) -> ArSeries {
    let mut rng = NoiseStream::new(stream);
    let innovations: Vec<f64> = (1..=horizon as u64)
        .map(|t| model.innovation.sample(t, &mut rng))
        .collect();
    ar_recursion(&model.coeffs, &model.presample, &innovations)
}

/// Running pair `(θ̂_t, Î_t^{-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub theta: DVector<f64>,
    pub info_inv: DMatrix<f64>,
    pub t: u64,
}

impl EstimatorState {
    pub fn new(theta: DVector<f64>, info_inv: DMatrix<f64>) -> Result<Self> {
        check_dim(theta.len(), info_inv.nrows())?;
        check_finite(theta.as_slice(), "initial estimate")?;
        require_spd(&info_inv)?;
        Ok(Self { theta, info_inv, t: 0 })
    }

    /// `θ̂₀ = 0`, `Î₀^{-1} = I`.
    pub fn standard(m: usize) -> Self {
        Self {
            theta: DVector::zeros(m),
            info_inv: DMatrix::identity(m, m),
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// `(θ̂_t − θ)ᵀ Î_t (θ̂_t − θ)`.
    pub fn fisher_quadform(&self, theta: &DVector<f64>) -> Result<f64> {
        let d = &self.theta - theta;
        let chol = self.info_inv.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(d.dot(&chol.solve(&d)))
    }

    /// `Î_t` itself.
    pub fn information(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.info_inv)
    }
}

/// `P − w P x xᵀ P / (1 + w xᵀ P x)`, symmetrised.
pub fn sherman_morrison_update(info_inv: &DMatrix<f64>, x: &DVector<f64>, weight: f64) -> DMatrix<f64> {
    let px = info_inv * x;
    let denom = 1.0 + weight * x.dot(&px);
    let mut out = info_inv - (&px * px.transpose()) * (weight / denom);
    symmetrize(&mut out);
    out
}

fn check_window(state: &EstimatorState, window: &DVector<f64>, x_new: f64) -> Result<()> {
    check_dim(state.dim(), window.len())?;
    check_finite(window.as_slice(), "regressor window")?;
    check_finite(&[x_new], "observation")
}

/// One recursive least squares step.
pub fn rls_step(state: &EstimatorState, window: &DVector<f64>, x_new: f64) -> Result<EstimatorState> {
    check_window(state, window, x_new)?;
    let info_inv = sherman_morrison_update(&state.info_inv, window, 1.0);
    let residual = x_new - window.dot(&state.theta);
    let theta = &state.theta + &info_inv * window * residual;
    Ok(EstimatorState {
        theta,
        info_inv,
        t: state.t + 1,
    })
}

/// One recursive likelihood step; `score` is `−g'/g` and `fisher` is `l_g`.
pub fn rml_step(
    state: &EstimatorState,
    window: &DVector<f64>,
    x_new: f64,
    score: impl Fn(f64) -> f64,
    fisher: f64,
) -> Result<EstimatorState> {
    if !(fisher > 0.0) || !fisher.is_finite() {
        return Err(Error::Domain(format!("Fisher information must be positive, got {fisher}")));
    }
    check_window(state, window, x_new)?;
    let info_inv = sherman_morrison_update(&state.info_inv, window, fisher);
    let residual = x_new - window.dot(&state.theta);
    let theta = &state.theta + &info_inv * window * score(residual);
    Ok(EstimatorState {
        theta,
        info_inv,
        t: state.t + 1,
    })
}

/// One robust step `θ̂_t = Φ_{U_t}(θ̂_{t−1} + γ_t x ψ(X_t − θ̂_{t−1}ᵀ x))`.
///
/// `Î^{-1}` is carried over unchanged; callers that use it as the step
/// matrix update it separately with [`sherman_morrison_update`].
#[allow(clippy::too_many_arguments)]
pub fn robust_step(
    state: &EstimatorState,
    window: &DVector<f64>,
    x_new: f64,
    psi: impl Fn(f64) -> f64,
    step_matrix: &DMatrix<f64>,
    schedule: &TruncationSchedule,
    t: u64,
    aux: Option<&DVector<f64>>,
) -> Result<EstimatorState> {
    check_window(state, window, x_new)?;
    check_dim(state.dim(), step_matrix.nrows())?;
    check_dim(state.dim(), step_matrix.ncols())?;
    let residual = x_new - window.dot(&state.theta);
    let candidate = &state.theta + step_matrix * window * psi(residual);
    check_finite(candidate.as_slice(), "robust update")?;
    let theta = schedule.region_at(t, aux).project(&candidate)?;
    Ok(EstimatorState {
        theta,
        info_inv: state.info_inv.clone(),
        t: state.t + 1,
    })
}

/// Huber ψ with clip `c`.
pub fn huber(residual: f64, clip: f64) -> f64 {
    residual.clamp(-clip, clip)
}

/// Normal-consistency factor of the median absolute deviation.
pub const MAD_CONSISTENCY: f64 = 1.4826;
/// Default Huber tuning constant.
pub const HUBER_TUNING: f64 = 1.345;

/// Scale estimate `1.4826 · median |r|` over the most recent residuals.
#[derive(Debug, Clone)]
pub struct RunningMad {
    window: VecDeque<f64>,
    capacity: usize,
    fallback: f64,
    min_samples: usize,
}

impl RunningMad {
    pub fn new(capacity: usize, fallback: f64) -> Self {
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            fallback,
            min_samples: 10,
        }
    }

    pub fn push(&mut self, residual: f64) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(residual.abs());
    }

    pub fn scale(&self) -> f64 {
        if self.window.len() < self.min_samples {
            return self.fallback;
        }
        let mut v: Vec<f64> = self.window.iter().copied().collect();
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        let s = MAD_CONSISTENCY * *m;
        if s > 0.0 {
            s
        } else {
            self.fallback
        }
    }

    /// Huber clip `1.345 · σ̂`.
    pub fn huber_clip(&self) -> f64 {
        HUBER_TUNING * self.scale()
    }
}

/// Matrices of one step of `Z_t = Z_{t−1} + γ_t (h_t − β_t Z_{t−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProcedureSpec {
    pub gamma: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

pub fn linear_step(spec: &LinearProcedureSpec, z_prev: &DVector<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
    let m = z_prev.len();
    check_dim(m, h.len())?;
    for mat in [&spec.gamma, &spec.beta] {
        check_dim(m, mat.nrows())?;
        check_dim(m, mat.ncols())?;
    }
    Ok(z_prev + &spec.gamma * (h - &spec.beta * z_prev))
}

/// `Δγ^{-1} − 2β + β γ_curr β` with `Δγ^{-1} = γ_curr^{-1} − γ_prev^{-1}`.
pub fn g1_matrix(gamma_prev: &DMatrix<f64>, gamma_curr: &DMatrix<f64>, beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(gamma_prev.nrows(), gamma_curr.nrows())?;
    check_dim(gamma_prev.nrows(), beta.nrows())?;
    let inv_prev = spd_inverse(gamma_prev)?;
    let inv_curr = spd_inverse(gamma_curr)?;
    let mut g = (inv_curr - inv_prev) - beta * 2.0 + beta * gamma_curr * beta;
    symmetrize(&mut g);
    Ok(g)
}
