use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::RateWindows;
use crate::engine::NoiseFamily;
use crate::error::{Error, Result};
use crate::estimators::Innovation;

/// The reproducible experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Polynomial,
    RateLink,
    HarmonicRate,
    ArRls,
    ArRml,
    ArRobust,
    Linear,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Polynomial,
        ScenarioKind::RateLink,
        ScenarioKind::HarmonicRate,
        ScenarioKind::ArRls,
        ScenarioKind::ArRml,
        ScenarioKind::ArRobust,
        ScenarioKind::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Polynomial => "polynomial",
            ScenarioKind::RateLink => "rate-link",
            ScenarioKind::HarmonicRate => "harmonic-rate",
            ScenarioKind::ArRls => "ar-rls",
            ScenarioKind::ArRml => "ar-rml",
            ScenarioKind::ArRobust => "ar-robust",
            ScenarioKind::Linear => "linear",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioKind::Polynomial => {
                "root of a polynomial field under slowly expanding truncations, paired with untruncated runs"
            }
            ScenarioKind::RateLink => "convergence rate versus step-size exponent a_t = t^eps",
            ScenarioKind::HarmonicRate => "rate of the harmonic procedure a_t = t with slope -1 at the root",
            ScenarioKind::ArRls => "recursive least squares for AR(m)",
            ScenarioKind::ArRml => "recursive likelihood estimation for AR(m) with a known innovation density",
            ScenarioKind::ArRobust => "Huber-type robust AR(m) estimation with optional shrinking truncation",
            ScenarioKind::Linear => "linear procedure with the gamma^{-1} increment equal to beta",
        }
    }

    fn default_deltas(self) -> Vec<f64> {
        match self {
            ScenarioKind::Polynomial | ScenarioKind::Linear => vec![],
            ScenarioKind::RateLink => vec![0.6],
            ScenarioKind::HarmonicRate => vec![0.9],
            ScenarioKind::ArRls | ScenarioKind::ArRml | ScenarioKind::ArRobust => vec![0.1],
        }
    }

    pub fn is_ar(self) -> bool {
        matches!(self, ScenarioKind::ArRls | ScenarioKind::ArRml | ScenarioKind::ArRobust)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

/// Truncation family for the polynomial scenario; regions are centered at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PolyTruncation {
    /// `u_t = scale · ln(t + shift)`
    Log { scale: f64, shift: f64 },
    /// `u_t = scale · t^{r / (2l)}` with `l` the polynomial degree.
    Power { scale: f64, r: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolynomialParams {
    /// `C_1..C_l` of `R(z) = −Σ C_i (z − z⁰)^i`.
    pub coefficients: Vec<f64>,
    pub root: f64,
    pub start: f64,
    /// `a_t = t^eps`, `eps ∈ (0, 1]`.
    pub step_exponent: f64,
    pub noise_sigma: f64,
    pub truncation: PolyTruncation,
    pub compare_untruncated: bool,
    pub convergence_tolerance: f64,
    pub min_converged_fraction: f64,
    pub min_overflow_fraction: f64,
}

impl Default for PolynomialParams {
    fn default() -> Self {
        Self {
            coefficients: vec![1.0, 0.0, 1.0],
            root: 0.0,
            start: 10.0,
            step_exponent: 1.0,
            noise_sigma: 1.0,
            truncation: PolyTruncation::Log { scale: 5.0, shift: 2.0 },
            compare_untruncated: true,
            convergence_tolerance: 0.1,
            min_converged_fraction: 0.95,
            min_overflow_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateParams {
    /// Step exponents `eps` of `a_t = t^eps` to compare.
    pub step_exponents: Vec<f64>,
    /// `R(z) = −slope · (z − z⁰)`.
    pub slope: f64,
    pub root: f64,
    pub start: f64,
    pub noise: NoiseFamily,
    pub max_ratio: f64,
    /// Upper bound on the tail slope; defaults to `−(2 − 1/eps) + 0.1`.
    pub max_tail_slope: Option<f64>,
    /// Two-sided slope target, checked with `slope_tolerance` when set.
    pub expected_slope: Option<f64>,
    pub slope_tolerance: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        Self {
            step_exponents: vec![0.75],
            slope: 1.0,
            root: 1.0,
            start: 0.0,
            noise: NoiseFamily::IidGaussian { sigma: 1.0 },
            max_ratio: 1.5,
            max_tail_slope: None,
            expected_slope: None,
            slope_tolerance: 0.15,
        }
    }
}

/// Truncation family for the robust AR estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ArTruncation {
    None,
    /// Ball of radius `initial_radius · t^{−decay}` around a parallel RLS estimate.
    ShrinkingSphere { initial_radius: f64, decay: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArParams {
    pub coefficients: Vec<f64>,
    pub innovation: Innovation,
    /// `(X_0, …, X_{1−m})`; zeros when absent.
    pub presample: Option<Vec<f64>>,
    /// `Î_0^{-1} = scale · I`.
    pub initial_info_inv_scale: f64,
    /// Exponent `δ` of `κ_t^{−δ}` in the recorded Fisher quadratic form.
    pub fisher_delta: f64,
    pub max_ratio: f64,
    /// Slope target of `ln MSE`; defaults to −1 for stationary models with
    /// constant innovation variance.
    pub expected_slope: Option<f64>,
    pub slope_tolerance: f64,
    /// Tolerance on `‖Î_T/T − Γ‖_F` for stationary models.
    pub info_rate_tolerance: f64,
    pub truncation: ArTruncation,
    /// Fixed Huber clip; a running MAD scale is used when absent.
    pub huber_clip: Option<f64>,
}

impl Default for ArParams {
    fn default() -> Self {
        Self {
            coefficients: vec![0.5],
            innovation: Innovation::Gaussian { sigma: 1.0 },
            presample: None,
            initial_info_inv_scale: 1.0,
            fisher_delta: 1.0,
            max_ratio: 1.5,
            expected_slope: None,
            slope_tolerance: 0.15,
            info_rate_tolerance: 0.05,
            truncation: ArTruncation::None,
            huber_clip: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regressors {
    /// i.i.d. `N(0, I)` regressors.
    Gaussian,
    /// AR windows from the `ar` section; reproduces recursive least squares.
    Ar,
    /// All-zero regressors (`β_t = 0`).
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearParams {
    pub regressors: Regressors,
    /// Root `z⁰`; ignored for AR regressors, where it is the AR coefficient vector.
    pub root: Vec<f64>,
    pub start: Option<Vec<f64>>,
    pub noise_sigma: f64,
    /// `a_t = t^{a_exponent}` in `a_t^{-1}(Z_t − z⁰)ᵀγ_t^{-1}(Z_t − z⁰)`.
    pub a_exponent: f64,
    pub g1_tolerance: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self {
            regressors: Regressors::Gaussian,
            root: vec![1.0, -0.5],
            start: None,
            noise_sigma: 1.0,
            a_exponent: 1.0,
            g1_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckParams {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    pub t_start: u64,
    pub t_end: u64,
    pub t_min: u64,
}

impl Default for CheckParams {
    fn default() -> Self {
        Self {
            grid_lo: -2.0,
            grid_hi: 2.0,
            grid_points: 41,
            t_start: 1,
            t_end: 100,
            t_min: 1,
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_replications")]
    pub replications: u64,
    #[serde(default)]
    pub seed: u64,
    /// Record every `record_stride`-th step.
    #[serde(default = "default_stride")]
    pub record_stride: u64,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    /// The MSE slope is fitted on `[fit_fraction·T, T]`.
    #[serde(default = "default_fit_fraction")]
    pub fit_fraction: f64,
    /// Exponents for the nested-window boundedness statistics. For AR
    /// scenarios these are the `δ` of `t^{1−δ} ‖θ̂_t − θ‖²`.
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    #[serde(default)]
    pub polynomial: PolynomialParams,
    #[serde(default)]
    pub rate: RateParams,
    #[serde(default)]
    pub ar: ArParams,
    #[serde(default)]
    pub linear: LinearParams,
    #[serde(default)]
    pub check: CheckParams,
}

fn default_dimension() -> usize {
    1
}
fn default_horizon() -> u64 {
    10_000
}
fn default_replications() -> u64 {
    100
}
fn default_stride() -> u64 {
    1
}
fn default_tail_fraction() -> f64 {
    0.5
}
fn default_fit_fraction() -> f64 {
    0.1
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        let mut cfg = Self {
            scenario,
            dimension: default_dimension(),
            horizon: default_horizon(),
            replications: default_replications(),
            seed: 0,
            record_stride: default_stride(),
            tail_fraction: default_tail_fraction(),
            fit_fraction: default_fit_fraction(),
            deltas: None,
            polynomial: PolynomialParams::default(),
            rate: RateParams::default(),
            ar: ArParams::default(),
            linear: LinearParams::default(),
            check: CheckParams::default(),
        };
        if scenario == ScenarioKind::HarmonicRate {
            cfg.rate.step_exponents = vec![1.0];
            cfg.rate.expected_slope = Some(-1.0);
        }
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn rate_windows(&self) -> RateWindows {
        RateWindows::new(self.tail_fraction, self.fit_fraction)
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.deltas
            .clone()
            .unwrap_or_else(|| self.scenario.default_deltas())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.horizon < 10 {
            return fail(format!("horizon must be at least 10, got {}", self.horizon));
        }
        if self.replications < 1 {
            return fail("replications must be at least 1".into());
        }
        if self.dimension < 1 {
            return fail("dimension must be at least 1".into());
        }
        if self.record_stride < 1 || self.record_stride > self.horizon / 4 {
            return fail(format!(
                "record_stride must lie in [1, horizon/4], got {}",
                self.record_stride
            ));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return fail(format!("tail_fraction must lie in (0, 1), got {}", self.tail_fraction));
        }
        if !(self.fit_fraction > 0.0 && self.fit_fraction < 1.0) {
            return fail(format!("fit_fraction must lie in (0, 1), got {}", self.fit_fraction));
        }
        if self.deltas().iter().any(|d| !d.is_finite()) {
            return fail("deltas must be finite".into());
        }
        match self.scenario {
            ScenarioKind::Polynomial => self.validate_polynomial(),
            ScenarioKind::RateLink | ScenarioKind::HarmonicRate => self.validate_rate(),
            ScenarioKind::ArRls | ScenarioKind::ArRml | ScenarioKind::ArRobust => self.validate_ar(),
            ScenarioKind::Linear => self.validate_linear(),
        }
    }

    fn validate_polynomial(&self) -> Result<()> {
        let p = &self.polynomial;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dimension != 1 {
            return fail("polynomial scenario is one-dimensional".into());
        }
        if p.coefficients.is_empty() || p.coefficients.iter().any(|c| !c.is_finite()) {
            return fail("polynomial coefficients must be non-empty and finite".into());
        }
        if !(p.step_exponent > 0.0 && p.step_exponent <= 1.0) {
            return fail(format!("step_exponent must lie in (0, 1], got {}", p.step_exponent));
        }
        if !self.deltas().is_empty() && p.coefficients[0] < 0.5 {
            return fail(format!(
                "rate statistics need C_1 >= 1/2, got C_1 = {}",
                p.coefficients[0]
            ));
        }
        if !(p.noise_sigma >= 0.0) {
            return fail("noise_sigma must be >= 0".into());
        }
        match p.truncation {
            PolyTruncation::Log { scale, shift } if !(scale > 0.0 && shift >= 0.0) => {
                fail(format!("log truncation needs scale > 0, shift >= 0 (got {scale}, {shift})"))
            }
            PolyTruncation::Power { scale, r } if !(scale > 0.0 && r > 0.0 && r < 1.0) => {
                fail(format!("power truncation needs scale > 0 and r in (0, 1) (got {scale}, {r})"))
            }
            _ => Ok(()),
        }
    }

    fn validate_rate(&self) -> Result<()> {
        let r = &self.rate;
        if r.step_exponents.is_empty() {
            return Err(Error::Config("step_exponents must not be empty".into()));
        }
        for &eps in &r.step_exponents {
            if !(eps > 0.5 && eps <= 1.0) {
                return Err(Error::Config(format!("step exponent must lie in (1/2, 1], got {eps}")));
            }
        }
        if self.scenario == ScenarioKind::HarmonicRate && r.step_exponents != [1.0] {
            return Err(Error::Config("harmonic-rate uses step_exponents = [1.0]".into()));
        }
        if !(r.slope > 0.0) {
            return Err(Error::Config(format!("field slope must be positive, got {}", r.slope)));
        }
        crate::engine::NoiseField::new(r.noise).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn validate_ar(&self) -> Result<()> {
        let a = &self.ar;
        a.innovation.validate().map_err(|e| Error::Config(e.to_string()))?;
        if a.coefficients.is_empty() {
            return Err(Error::Config("AR coefficients must not be empty".into()));
        }
        if let Some(p) = &a.presample {
            if p.len() != a.coefficients.len() {
                return Err(Error::Config("presample length must equal the AR order".into()));
            }
        }
        if !(a.initial_info_inv_scale > 0.0) {
            return Err(Error::Config("initial_info_inv_scale must be positive".into()));
        }
        if let ArTruncation::ShrinkingSphere { initial_radius, decay } = a.truncation {
            if !(initial_radius > 0.0 && decay >= 0.0) {
                return Err(Error::Config("shrinking sphere needs radius > 0 and decay >= 0".into()));
            }
        }
        if let Some(c) = a.huber_clip {
            if !(c > 0.0) {
                return Err(Error::Config("huber_clip must be positive".into()));
            }
        }
        Ok(())
    }

    fn validate_linear(&self) -> Result<()> {
        let l = &self.linear;
        if l.regressors == Regressors::Ar {
            return self.validate_ar();
        }
        if l.root.is_empty() {
            return Err(Error::Config("linear root must not be empty".into()));
        }
        if let Some(s) = &l.start {
            if s.len() != l.root.len() {
                return Err(Error::Config("linear start and root differ in length".into()));
            }
        }
        Ok(())
    }
}
