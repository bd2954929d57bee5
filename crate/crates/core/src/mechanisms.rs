//! Laplace-based mechanisms with nonnegative output.
//!
//! Four families share one noise model:
//!
//! * **plain**: `q + L_b` with `b = Δ/ε`;
//! * **post-processed**: a nonnegative function applied to a plain draw
//!   (the ramp `max(x, 0)` is boundary inflated truncation);
//! * **restricted**: the plain law conditioned on `[0, ∞)`, which costs a
//!   factor of two in the privacy level;
//! * **multiplicative**: `q · exp(L_{K/ε})` for queries with relative bound `K`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistributionError, LaplaceDist};
use crate::quadrature::{integrate, QuadOptions};
use crate::rng::RngState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("epsilon must be finite and > 0, got {0}")]
    InvalidEpsilon(f64),
    #[error("sensitivity must be finite and >= 0, got {0}")]
    InvalidSensitivity(f64),
    #[error("relative bound K must be finite and > 0, got {0}")]
    InvalidRelativeBound(f64),
    #[error("translation alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("query value must be finite and >= 0, got {0}")]
    NegativeQuery(f64),
    #[error("query must be strictly positive for the multiplicative mechanism, got {0}")]
    NonPositiveQuery(f64),
    #[error("post-processor not nonnegative: f({x}) = {value}")]
    NotNonnegative { x: f64, value: f64 },
    #[error("post-processor not integrable: {0}")]
    NotIntegrable(String),
    #[error("rejection budget exceeded after {0} attempts")]
    RejectionBudgetExceeded(u32),
    #[error("no closed-form density for {0}")]
    NoDensity(&'static str),
    #[error("mechanism has zero noise scale")]
    Degenerate,
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Privacy budget and query sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
    sensitivity: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, sensitivity: f64) -> Result<Self, MechanismError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(MechanismError::InvalidEpsilon(epsilon));
        }
        if !(sensitivity.is_finite() && sensitivity >= 0.0) {
            return Err(MechanismError::InvalidSensitivity(sensitivity));
        }
        Ok(Self {
            epsilon,
            sensitivity,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// `Δ / ε`, the smallest Laplace scale giving ε-DP.
    pub fn laplace_scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

type PostFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied post-processor that passed the admissibility check.
#[derive(Clone)]
pub struct CustomPostProcessor {
    name: String,
    f: PostFn,
    breakpoints: Vec<f64>,
}

impl fmt::Debug for CustomPostProcessor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPostProcessor")
            .field("name", &self.name)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum PostProcessor {
    /// `max(x, 0)`.
    Ramp,
    /// `max(x - alpha, 0)`.
    TranslatedRamp { alpha: f64 },
    Custom(CustomPostProcessor),
}

const MEMBERSHIP_GRID: usize = 10_000;
const MEMBERSHIP_RTOL: f64 = 1e-8;

impl PostProcessor {
    pub fn translated_ramp(alpha: f64) -> Result<Self, MechanismError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(MechanismError::InvalidAlpha(alpha));
        }
        Ok(PostProcessor::TranslatedRamp { alpha })
    }

    /// Wrap an arbitrary function after checking that it is nonnegative and
    /// square-integrable against `exp(-|x| / scale)`.
    ///
    /// `breakpoints` lists points where `f` is not smooth; quadrature splits
    /// there.
    pub fn custom<F>(
        name: impl Into<String>,
        f: F,
        breakpoints: Vec<f64>,
        scale: f64,
    ) -> Result<Self, MechanismError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(DistributionError::InvalidScale(scale).into());
        }
        let radius = 50.0 * scale;
        for i in 0..MEMBERSHIP_GRID {
            let x = -radius + 2.0 * radius * i as f64 / (MEMBERSHIP_GRID - 1) as f64;
            let y = f(x);
            if y.is_nan() || y < 0.0 {
                return Err(MechanismError::NotNonnegative { x, value: y });
            }
        }
        check_weighted_square_integrable(&f, &breakpoints, scale)?;
        Ok(PostProcessor::Custom(CustomPostProcessor {
            name: name.into(),
            f: Arc::new(f),
            breakpoints,
        }))
    }

    pub fn name(&self) -> String {
        match self {
            PostProcessor::Ramp => "ramp".to_string(),
            PostProcessor::TranslatedRamp { alpha } => format!("translated-ramp({alpha})"),
            PostProcessor::Custom(c) => c.name.clone(),
        }
    }

    /// Translation of a ramp kind (0 for the plain ramp).
    pub fn ramp_alpha(&self) -> Option<f64> {
        match self {
            PostProcessor::Ramp => Some(0.0),
            PostProcessor::TranslatedRamp { alpha } => Some(*alpha),
            PostProcessor::Custom(_) => None,
        }
    }

    /// Points where the function has a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            PostProcessor::Custom(c) => c.breakpoints.clone(),
            _ => vec![self.ramp_alpha().unwrap_or(0.0)],
        }
    }

    pub fn apply(&self, x: f64) -> Result<f64, MechanismError> {
        match self {
            PostProcessor::Ramp => Ok(x.max(0.0)),
            PostProcessor::TranslatedRamp { alpha } => Ok((x - alpha).max(0.0)),
            PostProcessor::Custom(c) => {
                let y = (c.f)(x);
                if y >= 0.0 {
                    Ok(y)
                } else {
                    Err(MechanismError::NotNonnegative { x, value: y })
                }
            }
        }
    }
}

/// Successive doublings of the truncation radius must change the truncated
/// integral of `f² exp(-|x|/b)` by less than the membership tolerance.
fn check_weighted_square_integrable<F: Fn(f64) -> f64>(
    f: &F,
    breakpoints: &[f64],
    scale: f64,
) -> Result<(), MechanismError> {
    let mut points = breakpoints.to_vec();
    points.push(0.0);
    let opts = QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-11,
        max_intervals: 20_000,
    };
    let mut previous: Option<f64> = None;
    for radius in [40.0 * scale, 80.0 * scale, 160.0 * scale] {
        let value = integrate(
            |x| {
                let y = f(x);
                y * y * (-x.abs() / scale).exp()
            },
            -radius,
            radius,
            &points,
            opts,
        )
        .map_err(|e| MechanismError::NotIntegrable(e.to_string()))?
        .value;
        if let Some(p) = previous {
            let change = (value - p).abs();
            if change > MEMBERSHIP_RTOL * value.abs() {
                return Err(MechanismError::NotIntegrable(format!(
                    "weighted square integral still changing at radius {radius}: {p} -> {value}"
                )));
            }
        }
        previous = Some(value);
    }
    Ok(())
}

pub fn apply_postprocessor(pp: &PostProcessor, x: f64) -> Result<f64, MechanismError> {
    pp.apply(x)
}

/// How the restricted mechanism's base scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestrictionCalibration {
    /// `b = Δ/ε`; the released law is 2ε-DP.
    #[default]
    SameScale,
    /// `b = 2Δ/ε`; the released law is ε-DP, so it can be compared with a
    /// post-processed mechanism at the same privacy level.
    FairComparison,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestrictedSampler {
    /// Inverse cdf of the conditioned law; one uniform per draw.
    #[default]
    Inverse,
    /// Redraw until nonnegative.
    Rejection { max_attempts: u32 },
}

#[derive(Debug, Clone)]
pub enum Variant {
    Plain,
    PostProcessed(PostProcessor),
    Restricted {
        calibration: RestrictionCalibration,
        sampler: RestrictedSampler,
    },
    Multiplicative {
        relative_bound: f64,
    },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Plain => "laplace",
            Variant::PostProcessed(_) => "post-processed",
            Variant::Restricted { .. } => "restricted",
            Variant::Multiplicative { .. } => "multiplicative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismWarning {
    /// Δ = 0: no noise is added.
    ZeroSensitivity,
    /// K ≥ ε: the output has infinite mean.
    InfiniteMean,
    /// K ≥ ε/2: the output has infinite variance.
    InfiniteVariance,
}

impl fmt::Display for MechanismWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MechanismWarning::ZeroSensitivity => "zero sensitivity: mechanism adds no noise",
            MechanismWarning::InfiniteMean => "K >= epsilon: output mean is infinite",
            MechanismWarning::InfiniteVariance => "K >= epsilon/2: output variance is infinite",
        })
    }
}

/// A fully parameterised mechanism, applicable to any true value `q >= 0`.
#[derive(Debug, Clone)]
pub struct MechanismSpec {
    privacy: PrivacyParams,
    variant: Variant,
    scale: f64,
    warnings: Vec<MechanismWarning>,
}

pub fn make_laplace_mechanism(privacy: PrivacyParams) -> MechanismSpec {
    MechanismSpec::build(privacy, Variant::Plain, privacy.laplace_scale())
}

impl MechanismSpec {
    fn build(privacy: PrivacyParams, variant: Variant, scale: f64) -> Self {
        let mut warnings = Vec::new();
        if scale == 0.0 {
            warnings.push(MechanismWarning::ZeroSensitivity);
        }
        Self {
            privacy,
            variant,
            scale,
            warnings,
        }
    }

    pub fn laplace(privacy: PrivacyParams) -> Self {
        make_laplace_mechanism(privacy)
    }

    pub fn post_processed(privacy: PrivacyParams, pp: PostProcessor) -> Self {
        Self::build(privacy, Variant::PostProcessed(pp), privacy.laplace_scale())
    }

    /// Post-processing with `max(x, 0)`.
    pub fn bit(privacy: PrivacyParams) -> Self {
        Self::post_processed(privacy, PostProcessor::Ramp)
    }

    pub fn restricted(
        privacy: PrivacyParams,
        calibration: RestrictionCalibration,
        sampler: RestrictedSampler,
    ) -> Self {
        let scale = match calibration {
            RestrictionCalibration::SameScale => privacy.laplace_scale(),
            RestrictionCalibration::FairComparison => 2.0 * privacy.laplace_scale(),
        };
        Self::build(
            privacy,
            Variant::Restricted {
                calibration,
                sampler,
            },
            scale,
        )
    }

    /// `q · exp(L_b)` with `b = K/ε`. Warns, without failing, when the mean or
    /// variance of the output is infinite.
    pub fn multiplicative(privacy: PrivacyParams, relative_bound: f64) -> Result<Self, MechanismError> {
        if !(relative_bound.is_finite() && relative_bound > 0.0) {
            return Err(MechanismError::InvalidRelativeBound(relative_bound));
        }
        let eps = privacy.epsilon();
        let mut spec = Self::build(
            privacy,
            Variant::Multiplicative { relative_bound },
            relative_bound / eps,
        );
        if relative_bound >= eps {
            spec.warnings.push(MechanismWarning::InfiniteMean);
        }
        if relative_bound >= eps / 2.0 {
            spec.warnings.push(MechanismWarning::InfiniteVariance);
        }
        Ok(spec)
    }

    pub fn privacy(&self) -> PrivacyParams {
        self.privacy
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    /// Scale of the underlying Laplace noise.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn warnings(&self) -> &[MechanismWarning] {
        &self.warnings
    }

    pub fn guaranteed_privacy_level(&self) -> f64 {
        let eps = self.privacy.epsilon();
        match self.variant {
            Variant::Restricted {
                calibration: RestrictionCalibration::SameScale,
                ..
            } => 2.0 * eps,
            _ => eps,
        }
    }

    /// Base Laplace law for true value `q`. For the multiplicative mechanism
    /// this is the law of the log output.
    pub fn base_at(&self, q: f64) -> Result<LaplaceDist, MechanismError> {
        if self.scale == 0.0 {
            return Err(MechanismError::Degenerate);
        }
        match self.variant {
            Variant::Multiplicative { .. } => {
                check_positive(q)?;
                Ok(LaplaceDist::new(q.ln(), self.scale)?)
            }
            _ => Ok(LaplaceDist::new(check_nonnegative(q)?, self.scale)?),
        }
    }

    pub fn sample(&self, q: f64, rng: &mut RngState) -> Result<f64, MechanismError> {
        if self.scale == 0.0 {
            return self.noiseless(q);
        }
        let base = self.base_at(q)?;
        match &self.variant {
            Variant::Plain => Ok(base.sample(rng)),
            Variant::PostProcessed(pp) => pp.apply(base.sample(rng)),
            Variant::Restricted { sampler, .. } => match *sampler {
                RestrictedSampler::Inverse => Ok(sample_restricted_inverse(&base, rng)),
                RestrictedSampler::Rejection { max_attempts } => {
                    sample_restricted_rejection(&base, rng, max_attempts).map(|d| d.value)
                }
            },
            Variant::Multiplicative { .. } => Ok(base.sample(rng).exp()),
        }
    }

    fn noiseless(&self, q: f64) -> Result<f64, MechanismError> {
        match &self.variant {
            Variant::Multiplicative { .. } => check_positive(q),
            Variant::PostProcessed(pp) => pp.apply(check_nonnegative(q)?),
            _ => check_nonnegative(q),
        }
    }

    /// Log of the output density at `x` for true value `q`.
    ///
    /// Ramp post-processors put an atom at 0; for them the density is taken
    /// with respect to Lebesgue measure on `(0, ∞)` plus a unit point mass at
    /// 0, so the value at `x = 0` is the atom's probability. Ratios of these
    /// generalised densities bound event probabilities exactly as ordinary
    /// densities do. Returns `-inf` outside the support.
    pub fn log_density(&self, q: f64, x: f64) -> Result<f64, MechanismError> {
        let base = self.base_at(q)?;
        match &self.variant {
            Variant::Plain => Ok(base.log_pdf(x)?),
            Variant::Restricted { .. } => {
                if x < 0.0 {
                    Ok(f64::NEG_INFINITY)
                } else {
                    Ok(base.log_pdf(x)? - base.sf(0.0)?.ln())
                }
            }
            Variant::Multiplicative { .. } => {
                if x <= 0.0 {
                    Ok(f64::NEG_INFINITY)
                } else {
                    let y = x.ln();
                    Ok(base.log_pdf(y)? - y)
                }
            }
            Variant::PostProcessed(pp) => {
                let alpha = pp
                    .ramp_alpha()
                    .ok_or(MechanismError::NoDensity("custom post-processor"))?;
                if x < 0.0 {
                    Ok(f64::NEG_INFINITY)
                } else if x == 0.0 {
                    Ok(log_cdf(&base, alpha)?)
                } else {
                    Ok(base.log_pdf(x + alpha)?)
                }
            }
        }
    }

    pub fn density(&self, q: f64, x: f64) -> Result<f64, MechanismError> {
        self.log_density(q, x).map(f64::exp)
    }
}

pub fn guaranteed_privacy_level(spec: &MechanismSpec) -> f64 {
    spec.guaranteed_privacy_level()
}

pub fn sample_mechanism(spec: &MechanismSpec, q: f64, rng: &mut RngState) -> Result<f64, MechanismError> {
    spec.sample(q, rng)
}

fn check_nonnegative(q: f64) -> Result<f64, MechanismError> {
    if q.is_finite() && q >= 0.0 {
        Ok(q)
    } else {
        Err(MechanismError::NegativeQuery(q))
    }
}

fn check_positive(q: f64) -> Result<f64, MechanismError> {
    if q.is_finite() && q > 0.0 {
        Ok(q)
    } else {
        Err(MechanismError::NonPositiveQuery(q))
    }
}

fn log_cdf(base: &LaplaceDist, t: f64) -> Result<f64, DistributionError> {
    let z = (t - base.location()) / base.scale();
    if z < 0.0 {
        Ok(z - std::f64::consts::LN_2)
    } else {
        Ok(base.cdf(t)?.ln())
    }
}

/// Cdf of `base` conditioned on `[0, ∞)`.
pub fn restricted_cdf(base: &LaplaceDist, t: f64) -> Result<f64, MechanismError> {
    if t.is_nan() {
        return Err(DistributionError::NonFiniteInput(t).into());
    }
    if t < 0.0 {
        return Ok(0.0);
    }
    if t == f64::INFINITY {
        return Ok(1.0);
    }
    // 1 - F^R(t) = S(t) / S(0)
    Ok(1.0 - base.sf(t)? / base.sf(0.0)?)
}

/// Density of `base` conditioned on `[0, ∞)`.
pub fn restricted_pdf(base: &LaplaceDist, x: f64) -> Result<f64, MechanismError> {
    if x.is_nan() {
        return Err(DistributionError::NonFiniteInput(x).into());
    }
    if x < 0.0 {
        return Ok(0.0);
    }
    Ok(base.pdf(x)? / base.sf(0.0)?)
}

/// One rejection-sampled draw and the number of base draws it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionDraw {
    pub value: f64,
    pub attempts: u32,
}

pub fn sample_restricted_rejection(
    base: &LaplaceDist,
    rng: &mut RngState,
    max_attempts: u32,
) -> Result<RejectionDraw, MechanismError> {
    for attempts in 1..=max_attempts {
        let x = base.sample(rng);
        if x >= 0.0 {
            return Ok(RejectionDraw { value: x, attempts });
        }
    }
    Err(MechanismError::RejectionBudgetExceeded(max_attempts))
}

/// Inverse of [`restricted_cdf`] at `omega`.
pub fn restricted_quantile(base: &LaplaceDist, omega: f64) -> Result<f64, MechanismError> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(DistributionError::ProbabilityOutOfRange(omega).into());
    }
    Ok(restricted_quantile_unchecked(base, omega))
}

fn restricted_quantile_unchecked(base: &LaplaceDist, omega: f64) -> f64 {
    let z = -base.location() / base.scale();
    let (f0, s0) = if z < 0.0 {
        let f0 = 0.5 * z.exp();
        (f0, 1.0 - f0)
    } else {
        let s0 = 0.5 * (-z).exp();
        (1.0 - s0, s0)
    };
    let p = f0 + omega * s0;
    let s = (1.0 - omega) * s0;
    base.quantile_split(p, s).max(0.0)
}

/// Inverse-transform draw from the restricted law; consumes one uniform.
pub fn sample_restricted_inverse(base: &LaplaceDist, rng: &mut RngState) -> f64 {
    restricted_quantile_unchecked(base, rng.next_open01())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_critical_one_sample, ks_statistic, Moments};
    use approx::assert_relative_eq;

    fn privacy(eps: f64, delta: f64) -> PrivacyParams {
        PrivacyParams::new(eps, delta).unwrap()
    }

    fn lap(q: f64, b: f64) -> LaplaceDist {
        LaplaceDist::new(q, b).unwrap()
    }

    #[test]
    fn privacy_params_validation() {
        assert!(PrivacyParams::new(0.0, 1.0).is_err());
        assert!(PrivacyParams::new(f64::NAN, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, -1.0).is_err());
        assert!(PrivacyParams::new(1.0, f64::INFINITY).is_err());
        assert!(PrivacyParams::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn laplace_scale_examples() {
        assert_eq!(make_laplace_mechanism(privacy(1.0, 1.0)).scale(), 1.0);
        assert_relative_eq!(make_laplace_mechanism(privacy(0.5, 0.1)).scale(), 0.2);
        let r = MechanismSpec::restricted(privacy(1.0, 1.0), Default::default(), Default::default());
        assert_eq!(r.guaranteed_privacy_level(), 2.0);
        assert_eq!(r.scale(), 1.0);
        let fair = MechanismSpec::restricted(
            privacy(1.0, 1.0),
            RestrictionCalibration::FairComparison,
            Default::default(),
        );
        assert_eq!(fair.scale(), 2.0);
        assert_eq!(fair.guaranteed_privacy_level(), 1.0);
    }

    #[test]
    fn guaranteed_levels() {
        let p = privacy(0.7, 1.0);
        assert_eq!(guaranteed_privacy_level(&MechanismSpec::laplace(p)), 0.7);
        assert_relative_eq!(
            guaranteed_privacy_level(&MechanismSpec::restricted(p, Default::default(), Default::default())),
            1.4
        );
        assert_eq!(guaranteed_privacy_level(&MechanismSpec::bit(p)), 0.7);
        assert_eq!(
            guaranteed_privacy_level(&MechanismSpec::multiplicative(p, 0.3).unwrap()),
            0.7
        );
    }

    #[test]
    fn zero_sensitivity_is_flagged_and_noiseless() {
        let spec = MechanismSpec::laplace(privacy(1.0, 0.0));
        assert_eq!(spec.warnings(), &[MechanismWarning::ZeroSensitivity]);
        let mut rng = RngState::from_seed(0);
        assert_eq!(spec.sample(3.5, &mut rng).unwrap(), 3.5);
        assert_eq!(spec.density(3.5, 3.5), Err(MechanismError::Degenerate));
        let bit = MechanismSpec::post_processed(
            privacy(1.0, 0.0),
            PostProcessor::translated_ramp(1.0).unwrap(),
        );
        assert_eq!(bit.sample(3.5, &mut rng).unwrap(), 2.5);
    }

    #[test]
    fn multiplicative_warnings() {
        let p = privacy(1.0, 1.0);
        assert!(MechanismSpec::multiplicative(p, 0.4).unwrap().warnings().is_empty());
        assert_eq!(
            MechanismSpec::multiplicative(p, 0.5).unwrap().warnings(),
            &[MechanismWarning::InfiniteVariance]
        );
        assert_eq!(
            MechanismSpec::multiplicative(p, 1.0).unwrap().warnings(),
            &[MechanismWarning::InfiniteMean, MechanismWarning::InfiniteVariance]
        );
        assert!(MechanismSpec::multiplicative(p, 0.0).is_err());
    }

    #[test]
    fn postprocessor_examples() {
        assert_eq!(apply_postprocessor(&PostProcessor::Ramp, -3.0).unwrap(), 0.0);
        let t = PostProcessor::translated_ramp(1.0).unwrap();
        assert_eq!(t.apply(2.5).unwrap(), 1.5);
        assert_eq!(t.apply(0.5).unwrap(), 0.0);
        assert!(PostProcessor::translated_ramp(-1.0).is_err());
    }

    #[test]
    fn custom_postprocessor_membership() {
        let ok = PostProcessor::custom("abs", f64::abs, vec![0.0], 1.0).unwrap();
        assert_eq!(ok.apply(-2.0).unwrap(), 2.0);
        assert_eq!(ok.name(), "abs");

        let negative = PostProcessor::custom("identity", |x| x, vec![], 1.0);
        assert!(matches!(negative, Err(MechanismError::NotNonnegative { .. })));

        // f² e^{-|x|} = 1 on x > 0: not square-integrable
        let heavy = PostProcessor::custom("exp-half", |x: f64| (x / 2.0).exp(), vec![], 1.0);
        assert!(matches!(heavy, Err(MechanismError::NotIntegrable(_))));

        // f² e^{-|x|} = e^{-x/2} on x > 0: fine
        let light = PostProcessor::custom("exp-quarter", |x: f64| (x / 4.0).exp(), vec![], 1.0);
        assert!(light.is_ok());

        assert!(PostProcessor::custom("nan", |_| f64::NAN, vec![], 1.0).is_err());
    }

    #[test]
    fn custom_apply_rejects_negative_outputs_off_grid() {
        // negative only far outside the checked grid
        let pp = PostProcessor::custom("dip", |x: f64| if x < -1e6 { -1.0 } else { 0.0 }, vec![], 1.0).unwrap();
        assert!(matches!(
            pp.apply(-2e6),
            Err(MechanismError::NotNonnegative { .. })
        ));
    }

    #[test]
    fn multiplicative_rejects_zero_query() {
        let spec = MechanismSpec::multiplicative(privacy(1.0, 1.0), 0.5).unwrap();
        let mut rng = RngState::from_seed(1);
        assert_eq!(
            spec.sample(0.0, &mut rng),
            Err(MechanismError::NonPositiveQuery(0.0))
        );
        assert!(spec.sample(2.0, &mut rng).unwrap() > 0.0);
    }

    #[test]
    fn negative_query_rejected() {
        let spec = MechanismSpec::bit(privacy(1.0, 1.0));
        let mut rng = RngState::from_seed(1);
        assert_eq!(spec.sample(-1.0, &mut rng), Err(MechanismError::NegativeQuery(-1.0)));
    }

    #[test]
    fn restricted_cdf_examples() {
        let d = lap(0.0, 1.0);
        assert_eq!(restricted_cdf(&d, 0.0).unwrap(), 0.0);
        assert_eq!(restricted_cdf(&d, -3.0).unwrap(), 0.0);
        assert_relative_eq!(
            restricted_cdf(&d, 1.0).unwrap(),
            1.0 - (-1.0f64).exp(),
            max_relative = 1e-15
        );
        assert_eq!(restricted_cdf(&lap(5.0, 1.0), f64::INFINITY).unwrap(), 1.0);
        assert!((restricted_cdf(&lap(5.0, 1.0), 1e3).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn restricted_pdf_examples() {
        let d = lap(0.0, 1.0);
        assert_eq!(restricted_pdf(&d, 0.0).unwrap(), 1.0);
        assert_eq!(restricted_pdf(&d, -1.0).unwrap(), 0.0);
        for (q, b) in [(0.0, 1.0), (1.0, 0.5), (4.0, 2.0)] {
            let base = lap(q, b);
            let r = integrate(
                |x| restricted_pdf(&base, x).unwrap(),
                0.0,
                q + 40.0 * b,
                &[q],
                QuadOptions::default(),
            )
            .unwrap();
            assert!((r.value - 1.0).abs() < 1e-10, "q={q}, b={b}: {}", r.value);
        }
    }

    #[test]
    fn restricted_quantile_examples() {
        let d = lap(0.0, 1.0);
        assert_relative_eq!(
            restricted_quantile(&d, 0.5).unwrap(),
            std::f64::consts::LN_2,
            max_relative = 1e-15
        );
        for (q, b) in [(0.0, 1.0), (2.0, 0.5), (10.0, 1.0)] {
            let base = lap(q, b);
            for i in 1..100 {
                let w = i as f64 / 100.0;
                let x = restricted_quantile(&base, w).unwrap();
                assert!(x >= 0.0);
                assert!((restricted_cdf(&base, x).unwrap() - w).abs() < 1e-12);
            }
        }
        assert!(restricted_quantile(&d, 1.0).is_err());
    }

    #[test]
    fn rejection_sampler_matches_restricted_cdf() {
        let base = lap(1.0, 1.0);
        let mut rng = RngState::from_seed(11);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_restricted_rejection(&base, &mut rng, 64).unwrap().value)
            .collect();
        assert!(xs.iter().all(|&x| x >= 0.0));
        let d = ks_statistic(&xs, |t| restricted_cdf(&base, t).unwrap());
        assert!(d < ks_critical_one_sample(xs.len(), 0.001), "KS = {d}");
    }

    #[test]
    fn rejection_attempts_are_geometric() {
        let base = lap(0.0, 1.0);
        let mut rng = RngState::from_seed(12);
        let m: Moments = (0..100_000)
            .map(|_| sample_restricted_rejection(&base, &mut rng, 1000).unwrap().attempts as f64)
            .collect();
        assert!((m.mean - 2.0).abs() < 0.05, "mean attempts {}", m.mean);
    }

    #[test]
    fn rejection_budget() {
        // location far below zero: success probability 0.5 e^{-50}
        let base = lap(-50.0, 1.0);
        let mut rng = RngState::from_seed(1);
        assert_eq!(
            sample_restricted_rejection(&base, &mut rng, 10),
            Err(MechanismError::RejectionBudgetExceeded(10))
        );
    }

    #[test]
    fn inverse_sampler_consumes_one_uniform_and_is_nonnegative() {
        let base = lap(0.3, 2.0);
        let mut a = RngState::from_seed(4);
        let mut b = RngState::from_seed(4);
        for _ in 0..1000 {
            let x = sample_restricted_inverse(&base, &mut a);
            let w = b.next_open01();
            assert!(x >= 0.0);
            assert_eq!(x, restricted_quantile(&base, w).unwrap());
        }
    }

    #[test]
    fn mechanism_means() {
        let p = privacy(1.0, 1.0);
        let n = 1_000_000;
        let mut rng = RngState::from_seed(77);

        let bit = MechanismSpec::bit(p);
        let m: Moments = (0..n).map(|_| bit.sample(0.0, &mut rng).unwrap()).collect();
        assert!((m.mean - 0.5).abs() < 0.005, "bit mean {}", m.mean);

        let restricted = MechanismSpec::restricted(p, Default::default(), Default::default());
        let m: Moments = (0..n).map(|_| restricted.sample(0.0, &mut rng).unwrap()).collect();
        assert!((m.mean - 1.0).abs() < 0.01, "restricted mean {}", m.mean);

        let mult = MechanismSpec::multiplicative(privacy(1.0, 1.0), 0.5).unwrap();
        let m: Moments = (0..n).map(|_| mult.sample(1.0, &mut rng).unwrap()).collect();
        assert!((m.mean - 4.0 / 3.0).abs() < 0.02, "multiplicative mean {}", m.mean);
    }

    #[test]
    fn generalised_density_of_ramp_integrates_to_one() {
        let spec = MechanismSpec::post_processed(privacy(1.0, 1.0), PostProcessor::translated_ramp(0.4).unwrap());
        let q = 0.7;
        let atom = spec.density(q, 0.0).unwrap();
        assert_relative_eq!(atom, lap(q, 1.0).cdf(0.4).unwrap(), max_relative = 1e-14);
        let cont = integrate(
            |x| spec.density(q, x).unwrap(),
            0.0,
            60.0,
            &[q - 0.4],
            QuadOptions::default(),
        )
        .unwrap()
        .value;
        assert!((atom + cont - 1.0).abs() < 1e-10);
        assert_eq!(spec.density(q, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn multiplicative_density_integrates_to_one() {
        let spec = MechanismSpec::multiplicative(privacy(1.0, 1.0), 0.3).unwrap();
        let q = 2.0f64;
        // substitute x = e^y
        let total = integrate(
            |y: f64| spec.density(q, y.exp()).unwrap() * y.exp(),
            q.ln() - 15.0,
            q.ln() + 15.0,
            &[q.ln()],
            QuadOptions::default(),
        )
        .unwrap()
        .value;
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn custom_has_no_density() {
        let pp = PostProcessor::custom("abs", f64::abs, vec![0.0], 1.0).unwrap();
        let spec = MechanismSpec::post_processed(privacy(1.0, 1.0), pp);
        assert!(matches!(spec.density(1.0, 1.0), Err(MechanismError::NoDensity(_))));
    }
}
