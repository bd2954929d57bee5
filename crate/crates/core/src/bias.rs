//! Bias of the nonnegative mechanisms.
//!
//! Closed forms cover the ramp family, restriction and multiplicative
//! noise. Arbitrary post-processors go through [`expectation_postprocessed_quadrature`].
//! Worst-case bias over `q >= 0` is exact for the translated ramp and a grid
//! proxy ([`max_abs_bias_numeric`]) otherwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{log_laplace_mgf, DistributionError, LaplaceDist};
use crate::mechanisms::{restricted_pdf, MechanismError, MechanismSpec, PostProcessor, Variant};
use crate::quadrature::{integrate, QuadOptions, QuadratureError};
use crate::roots::{bisect, RootError};

pub const DEFAULT_ALPHA_TOL: f64 = 1e-12;

/// Half-width of the first truncation window, in units of the scale.
const TRUNCATION_RADIUS: f64 = 40.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiasError {
    #[error("{name} must be finite and >= 0, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be finite and > 0, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("post-processor not integrable: {0}")]
    NotIntegrable(String),
    #[error("no closed form for {0}")]
    NoClosedForm(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Root(#[from] RootError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

fn nonneg(name: &'static str, value: f64) -> Result<f64, BiasError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(BiasError::Negative { name, value })
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64, BiasError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(BiasError::NonPositive { name, value })
    }
}

/// Bias of `max(q + L_b, 0)`: `(b/2) exp(-q/b)`.
pub fn bias_bit(q: f64, b: f64) -> Result<f64, BiasError> {
    nonneg("q", q)?;
    positive("b", b)?;
    Ok(0.5 * b * (-q / b).exp())
}

/// `E[max(q + L_b - alpha, 0)]`.
pub fn expectation_translated_ramp(q: f64, alpha: f64, b: f64) -> Result<f64, BiasError> {
    nonneg("q", q)?;
    nonneg("alpha", alpha)?;
    positive("b", b)?;
    let half = 0.5 * b;
    Ok(if q >= alpha {
        (q - alpha) + half * ((alpha - q) / b).exp()
    } else {
        half * ((q - alpha) / b).exp()
    })
}

pub fn bias_translated_ramp(q: f64, alpha: f64, b: f64) -> Result<f64, BiasError> {
    Ok(expectation_translated_ramp(q, alpha, b)? - q)
}

/// `lim_{q→∞}` of the translated-ramp bias.
pub fn bias_translated_ramp_limit(alpha: f64) -> Result<f64, BiasError> {
    Ok(-nonneg("alpha", alpha)?)
}

/// Worst-case absolute bias over `q >= 0` of the translated ramp.
///
/// The bias decreases in `q` from `(b/2) exp(-alpha/b) - 0` at `q = 0`
/// towards `-alpha`, so the supremum is the larger of the two ends.
pub fn max_abs_bias_translated_ramp(alpha: f64, b: f64) -> Result<f64, BiasError> {
    nonneg("alpha", alpha)?;
    positive("b", b)?;
    Ok((0.5 * b * (-alpha / b).exp()).max(alpha))
}

/// Translation minimising [`max_abs_bias_translated_ramp`]: the root of
/// `(b/2) exp(-alpha/b) = alpha`, found by bisection on `[0, b/2]`.
pub fn optimal_alpha(b: f64, tol: f64) -> Result<f64, BiasError> {
    positive("b", b)?;
    positive("tol", tol)?;
    Ok(bisect(|a| 0.5 * b * (-a / b).exp() - a, 0.0, 0.5 * b, tol)?)
}

/// Bias of the law of `q + L_b` conditioned on `[0, ∞)`:
/// `(q + b) / (2 exp(q/b) - 1)`.
pub fn bias_restricted(q: f64, b: f64) -> Result<f64, BiasError> {
    nonneg("q", q)?;
    positive("b", b)?;
    let decay = (-q / b).exp();
    Ok((q + b) * decay / (2.0 - decay))
}

/// Restricted bias at scale `2Δ/ε` over ramp bias at scale `Δ/ε`, i.e. the
/// two ways of getting a nonnegative ε-DP release compared at equal ε.
pub fn bias_ratio_restricted_vs_bit(q: f64, epsilon: f64, sensitivity: f64) -> Result<f64, BiasError> {
    nonneg("q", q)?;
    positive("epsilon", epsilon)?;
    positive("sensitivity", sensitivity)?;
    let t = epsilon * q / sensitivity;
    Ok(2.0 * t.exp() / (2.0 * (0.5 * t).exp() - 1.0) * (t + 2.0))
}

/// Bias of `q · exp(L_b)`: `q (E[exp(L_b)] - 1)`, `+inf` when `b >= 1`.
pub fn bias_multiplicative(q: f64, b: f64) -> Result<f64, BiasError> {
    positive("q", q)?;
    Ok(q * (log_laplace_mgf(b, 1.0)? - 1.0))
}

fn quad_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-13,
        max_intervals: 20_000,
    }
}

/// Integrate `g · f_q` over `[q - R, q + R]` for `R` and `2R`; the two must
/// agree to `1e-10` absolute or `1e-8` relative. `tail(R)` is an exact
/// contribution from outside the window, when one is known.
fn integrate_against_laplace<G, T>(
    g: G,
    base: &LaplaceDist,
    breakpoints: &[f64],
    tail: T,
) -> Result<f64, BiasError>
where
    G: Fn(f64) -> f64,
    T: Fn(f64) -> f64,
{
    let (q, b) = (base.location(), base.scale());
    let mut points = breakpoints.to_vec();
    points.push(q);
    let window = |radius: f64| -> Result<f64, BiasError> {
        let body = integrate(
            |x| {
                let y = g(x);
                if y == 0.0 {
                    0.0
                } else {
                    y * (-(x - q).abs() / b).exp() / (2.0 * b)
                }
            },
            q - radius,
            q + radius,
            &points,
            quad_opts(),
        )
        .map_err(|e| BiasError::NotIntegrable(e.to_string()))?;
        Ok(body.value + tail(radius))
    };
    let radius = TRUNCATION_RADIUS * b;
    let inner = window(radius)?;
    let outer = window(2.0 * radius)?;
    let change = (outer - inner).abs();
    if !(change <= 1e-10 || change <= 1e-8 * outer.abs()) {
        return Err(BiasError::NotIntegrable(format!(
            "truncated integral moved from {inner} to {outer} when the window doubled"
        )));
    }
    Ok(outer)
}

/// `E[φ(q + L_b)]` by adaptive quadrature.
///
/// Ramp kinds get the exact upper tail beyond the truncation window added
/// back in; everything else relies on the window-doubling check.
pub fn expectation_postprocessed_quadrature(pp: &PostProcessor, q: f64, b: f64) -> Result<f64, BiasError> {
    nonneg("q", q)?;
    positive("b", b)?;
    let base = LaplaceDist::new(q, b)?;
    let breakpoints = pp.breakpoints();
    let apply = |x: f64| pp.apply(x).unwrap_or(f64::NAN);
    match pp.ramp_alpha() {
        Some(alpha) => integrate_against_laplace(apply, &base, &breakpoints, |radius| {
            // ∫_{q+R}^∞ (x - α) e^{-(x-q)/b} / 2b dx, valid while q + R > α
            if q + radius > alpha {
                0.5 * (-radius / b).exp() * (q + radius - alpha + b)
            } else {
                0.0
            }
        }),
        None => integrate_against_laplace(apply, &base, &breakpoints, |_| 0.0),
    }
}

pub fn bias_postprocessed_quadrature(pp: &PostProcessor, q: f64, b: f64) -> Result<f64, BiasError> {
    Ok(expectation_postprocessed_quadrature(pp, q, b)? - q)
}

/// Mean of the restricted law by quadrature against its density.
pub fn expectation_restricted_quadrature(q: f64, b: f64) -> Result<f64, BiasError> {
    nonneg("q", q)?;
    positive("b", b)?;
    let base = LaplaceDist::new(q, b)?;
    let upper = q + 2.0 * TRUNCATION_RADIUS * b;
    let main = integrate(
        |x| x * restricted_pdf(&base, x).unwrap_or(f64::NAN),
        0.0,
        upper,
        &[q],
        quad_opts(),
    )?;
    // exact tail ∫_{upper}^∞ x f_q(x) dx / S_q(0)
    let tail = 0.5 * (-(upper - q) / b).exp() * (upper + b) / base.sf(0.0)?;
    Ok(main.value + tail)
}

/// Exact bias of `spec` at `q`, or `+inf` where the mean does not exist.
pub fn closed_form_bias(spec: &MechanismSpec, q: f64) -> Result<f64, BiasError> {
    let b = spec.scale();
    if b == 0.0 {
        return match spec.variant() {
            Variant::PostProcessed(pp) => Ok(pp.apply(nonneg("q", q)?)? - q),
            _ => Ok(0.0),
        };
    }
    match spec.variant() {
        Variant::Plain => {
            nonneg("q", q)?;
            Ok(0.0)
        }
        Variant::PostProcessed(pp) => match pp.ramp_alpha() {
            Some(alpha) => bias_translated_ramp(q, alpha, b),
            None => Err(BiasError::NoClosedForm(pp.name())),
        },
        Variant::Restricted { .. } => bias_restricted(q, b),
        Variant::Multiplicative { .. } => bias_multiplicative(q, b),
    }
}

/// Bias of `spec` at `q` by numerical integration of its output law.
pub fn quadrature_bias(spec: &MechanismSpec, q: f64) -> Result<f64, BiasError> {
    let b = spec.scale();
    if b == 0.0 {
        return closed_form_bias(spec, q);
    }
    match spec.variant() {
        Variant::Plain => {
            let base = LaplaceDist::new(nonneg("q", q)?, b)?;
            let tails = |radius: f64| 0.5 * (-radius / b).exp() * 2.0 * q;
            Ok(integrate_against_laplace(|x| x, &base, &[], tails)? - q)
        }
        Variant::PostProcessed(pp) => bias_postprocessed_quadrature(pp, q, b),
        Variant::Restricted { .. } => Ok(expectation_restricted_quadrature(q, b)? - q),
        Variant::Multiplicative { .. } => {
            positive("q", q)?;
            let noise = LaplaceDist::centered(b)?;
            Ok(integrate_against_laplace(|y| q * y.exp(), &noise, &[], |_| 0.0)? - q)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMethod {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasEntry {
    pub q: f64,
    pub bias: f64,
    pub method: BiasMethod,
    pub stderr: Option<f64>,
}

/// Where a numerical supremum was attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupLocation {
    At(f64),
    /// The limit `q → ∞` supplied by the caller.
    Limit,
    /// The grid maximum at this `q` and the limit agree.
    TieWithLimit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericSup {
    pub value: f64,
    pub location: SupLocation,
    /// True when no limit at infinity was supplied, so the value only bounds
    /// the supremum from below.
    pub truncated: bool,
}

const TIE_RTOL: f64 = 1e-9;

fn combine_with_limit(grid_max: f64, grid_q: f64, limit: Option<f64>) -> NumericSup {
    match limit {
        None => NumericSup {
            value: grid_max,
            location: SupLocation::At(grid_q),
            truncated: true,
        },
        Some(l) => {
            let l = l.abs();
            let location = if (l - grid_max).abs() <= TIE_RTOL * l.max(grid_max).max(f64::MIN_POSITIVE) {
                SupLocation::TieWithLimit(grid_q)
            } else if l > grid_max {
                SupLocation::Limit
            } else {
                SupLocation::At(grid_q)
            };
            NumericSup {
                value: grid_max.max(l),
                location,
                truncated: false,
            }
        }
    }
}

/// Grid proxy for `sup_{q >= 0} |bias(q)|` over `[0, q_max]`, optionally
/// completed with the value of `bias` as `q → ∞`. The first grid point wins
/// ties.
pub fn max_abs_bias_numeric<F: Fn(f64) -> f64>(
    bias_fn: F,
    q_max: f64,
    grid_points: usize,
    limit: Option<f64>,
) -> Result<NumericSup, BiasError> {
    positive("q_max", q_max)?;
    if grid_points < 2 {
        return Err(BiasError::NonPositive {
            name: "grid_points - 1",
            value: grid_points as f64 - 1.0,
        });
    }
    let (mut best, mut best_q) = (f64::NEG_INFINITY, 0.0);
    for i in 0..grid_points {
        let q = q_max * i as f64 / (grid_points - 1) as f64;
        let v = bias_fn(q).abs();
        if v > best || v.is_nan() {
            best = v;
            best_q = q;
        }
    }
    Ok(combine_with_limit(best, best_q, limit))
}

/// Bias values over a set of `q`, with their worst case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub entries: Vec<BiasEntry>,
    pub max_abs_bias: f64,
    pub argmax: SupLocation,
}

impl BiasReport {
    pub fn new(mut entries: Vec<BiasEntry>, limit: Option<f64>) -> Self {
        entries.sort_by(|a, b| a.q.total_cmp(&b.q));
        let (mut best, mut best_q) = (0.0, entries.first().map_or(0.0, |e| e.q));
        for e in &entries {
            if e.bias.abs() > best {
                best = e.bias.abs();
                best_q = e.q;
            }
        }
        let sup = combine_with_limit(best, best_q, limit);
        Self {
            entries,
            max_abs_bias: sup.value,
            argmax: sup.location,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const E: f64 = std::f64::consts::E;
    // α e^α = 1/2, from the Lambert W function at 1/2
    const ALPHA_STAR_1: f64 = 0.351_733_711_249_195_83;

    #[test]
    fn bit_examples() {
        assert_eq!(bias_bit(0.0, 1.0).unwrap(), 0.5);
        assert_relative_eq!(bias_bit(1.0, 1.0).unwrap(), 0.5 / E, max_relative = 1e-15);
        assert_eq!(bias_bit(0.0, 1.0 / 2.0).unwrap(), 0.25);
        assert!(bias_bit(-1.0, 1.0).is_err());
        assert!(bias_bit(1.0, 0.0).is_err());
    }

    #[test]
    fn translated_ramp_examples() {
        assert_relative_eq!(expectation_translated_ramp(2.0, 1.0, 1.0).unwrap(), 1.0 + 0.5 / E, max_relative = 1e-15);
        assert_relative_eq!(expectation_translated_ramp(0.0, 1.0, 1.0).unwrap(), 0.5 / E, max_relative = 1e-15);
        assert_eq!(expectation_translated_ramp(3.0, 3.0, 2.0).unwrap(), 1.0);
        assert_eq!(bias_translated_ramp(0.0, 0.0, 1.0).unwrap(), 0.5);
        assert_relative_eq!(bias_translated_ramp(0.0, 1.0, 1.0).unwrap(), 0.5 / E, max_relative = 1e-15);
        assert_relative_eq!(bias_translated_ramp(60.0, 1.0, 1.0).unwrap(), -1.0, epsilon = 1e-12);
        assert_eq!(bias_translated_ramp_limit(1.0).unwrap(), -1.0);
        assert!(expectation_translated_ramp(1.0, -0.5, 1.0).is_err());
    }

    #[test]
    fn translated_ramp_continuous_at_kink() {
        for (alpha, b) in [(0.3, 1.0), (2.0, 0.5), (5.0, 3.0)] {
            let below = expectation_translated_ramp(alpha * (1.0 - 1e-12), alpha, b).unwrap();
            let above = expectation_translated_ramp(alpha, alpha, b).unwrap();
            assert!((below - above).abs() < 1e-10);
            assert_eq!(above, b / 2.0);
        }
    }

    #[test]
    fn max_abs_bias_examples() {
        assert_eq!(max_abs_bias_translated_ramp(0.0, 1.0).unwrap(), 0.5);
        assert_eq!(max_abs_bias_translated_ramp(2.0, 1.0).unwrap(), 2.0);
        let a = optimal_alpha(1.0, DEFAULT_ALPHA_TOL).unwrap();
        assert_relative_eq!(max_abs_bias_translated_ramp(a, 1.0).unwrap(), a, max_relative = 1e-11);
    }

    fn fixed_point_alpha(b: f64) -> f64 {
        // u = e^{-u}/2 is a contraction (|derivative| < 1/2 on [0, 1/2])
        let mut u = 0.0f64;
        for _ in 0..200 {
            u = 0.5 * (-u).exp();
        }
        b * u
    }

    #[test]
    fn optimal_alpha_examples() {
        let a1 = optimal_alpha(1.0, DEFAULT_ALPHA_TOL).unwrap();
        assert!((a1 - ALPHA_STAR_1).abs() < 1e-12);
        assert!((a1 - fixed_point_alpha(1.0)).abs() < 1e-12);
        assert!((0.5 * (-a1).exp() - a1).abs() <= 1e-11);
        let a2 = optimal_alpha(2.0, DEFAULT_ALPHA_TOL).unwrap();
        assert!((a2 - 0.703_467_422_498_391_7).abs() < 1e-12);
        for b in [0.01, 0.5, 3.0, 100.0] {
            let a = optimal_alpha(b, DEFAULT_ALPHA_TOL * b).unwrap();
            assert!(a < b / 2.0);
            assert!((a - fixed_point_alpha(b)).abs() <= 1e-11 * b);
        }
        assert!(optimal_alpha(0.0, 1e-12).is_err());
        assert!(optimal_alpha(1.0, 0.0).is_err());
    }

    #[test]
    fn restricted_examples() {
        assert_eq!(bias_restricted(0.0, 1.0).unwrap(), 1.0);
        // (1 + 1) / (2e - 1)
        assert_relative_eq!(bias_restricted(1.0, 1.0).unwrap(), 0.450_799_347_121_128_2, max_relative = 1e-14);
        assert_relative_eq!(bias_restricted(2.0, 1.0).unwrap(), 0.217_736_650_487_261_48, max_relative = 1e-14);
        // ε, Δ parameterisation
        let (eps, delta, q) = (1.0f64, 1.0f64, 1.0f64);
        let alt = (q * eps + delta) / (2.0 * eps * (q * eps / delta).exp() - eps);
        assert_relative_eq!(bias_restricted(q, delta / eps).unwrap(), alt, max_relative = 1e-14);
        // huge q must not overflow
        assert_eq!(bias_restricted(1e6, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(bias_ratio_restricted_vs_bit(0.0, 0.3, 7.0).unwrap(), 4.0);
        let r = bias_ratio_restricted_vs_bit(1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(r, 7.099_063_709_690_76, max_relative = 1e-14);
        let cross = bias_restricted(1.0, 2.0).unwrap() / bias_bit(1.0, 1.0).unwrap();
        assert_relative_eq!(r, cross, max_relative = 1e-13);
    }

    #[test]
    fn multiplicative_bias() {
        assert_relative_eq!(bias_multiplicative(1.0, 0.5).unwrap(), 1.0 / 3.0, max_relative = 1e-15);
        assert_eq!(bias_multiplicative(2.0, 1.0).unwrap(), f64::INFINITY);
        assert!(bias_multiplicative(0.0, 0.5).is_err());
    }

    #[test]
    fn quadrature_examples() {
        let r = expectation_postprocessed_quadrature(&PostProcessor::Ramp, 1.0, 1.0).unwrap();
        assert!((r - (1.0 + 0.5 / E)).abs() < 1e-10);
        let t = PostProcessor::translated_ramp(0.5).unwrap();
        let r = expectation_postprocessed_quadrature(&t, 2.0, 1.0).unwrap();
        assert!((r - 1.611_565_080_074_215).abs() < 1e-10);
        let zero = PostProcessor::custom("zero", |_| 0.0, vec![], 1.0).unwrap();
        for q in [0.0, 1.0, 10.0] {
            assert_eq!(expectation_postprocessed_quadrature(&zero, q, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn quadrature_detects_non_integrable() {
        // admissible at scale 0.2, not at scale 5: φ = e^{x/2}
        let pp = PostProcessor::custom("exp-half", |x: f64| (0.5 * x).exp(), vec![], 0.2).unwrap();
        assert!(expectation_postprocessed_quadrature(&pp, 0.0, 0.2).is_ok());
        assert!(matches!(
            expectation_postprocessed_quadrature(&pp, 0.0, 5.0),
            Err(BiasError::NotIntegrable(_))
        ));
    }

    #[test]
    fn restricted_quadrature_matches_closed_form() {
        for q in [0.0, 0.5, 1.0, 5.0, 30.0] {
            for b in [0.2, 1.0, 4.0] {
                let quad = expectation_restricted_quadrature(q, b).unwrap() - q;
                let exact = bias_restricted(q, b).unwrap();
                assert!((quad - exact).abs() < 1e-10, "q={q} b={b}: {quad} vs {exact}");
            }
        }
    }

    #[test]
    fn numeric_sup_examples() {
        let bit = max_abs_bias_numeric(|q| bias_bit(q, 1.0).unwrap(), 20.0, 201, None).unwrap();
        assert_eq!(bit.value, 0.5);
        assert_eq!(bit.location, SupLocation::At(0.0));
        assert!(bit.truncated);

        let a = optimal_alpha(1.0, DEFAULT_ALPHA_TOL).unwrap();
        let sup = max_abs_bias_numeric(
            |q| bias_translated_ramp(q, a, 1.0).unwrap(),
            20.0,
            201,
            Some(bias_translated_ramp_limit(a).unwrap()),
        )
        .unwrap();
        assert!((sup.value - a).abs() < 1e-11);
        assert_eq!(sup.location, SupLocation::TieWithLimit(0.0));
        assert!(!sup.truncated);

        let zero = max_abs_bias_numeric(|_| 0.0, 1.0, 2, None).unwrap();
        assert_eq!((zero.value, zero.location), (0.0, SupLocation::At(0.0)));

        let big_alpha = max_abs_bias_numeric(|q| bias_translated_ramp(q, 2.0, 1.0).unwrap(), 20.0, 101, Some(-2.0)).unwrap();
        assert_eq!(big_alpha.location, SupLocation::Limit);

        assert!(max_abs_bias_numeric(|_| 0.0, 1.0, 1, None).is_err());
        assert!(max_abs_bias_numeric(|_| 0.0, 0.0, 10, None).is_err());
    }

    #[test]
    fn report_sorts_and_maximises() {
        let entries = vec![
            BiasEntry { q: 2.0, bias: -0.1, method: BiasMethod::ClosedForm, stderr: None },
            BiasEntry { q: 0.0, bias: 0.5, method: BiasMethod::Quadrature, stderr: None },
            BiasEntry { q: 1.0, bias: 0.2, method: BiasMethod::MonteCarlo, stderr: Some(0.01) },
        ];
        let r = BiasReport::new(entries, None);
        assert_eq!(r.entries.iter().map(|e| e.q).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
        assert_eq!(r.max_abs_bias, 0.5);
        assert_eq!(r.argmax, SupLocation::At(0.0));
        let with_limit = BiasReport::new(r.entries.clone(), Some(-3.0));
        assert_eq!(with_limit.max_abs_bias, 3.0);
        assert_eq!(with_limit.argmax, SupLocation::Limit);
    }
}
