//! Numerical and statistical checks of privacy and bias claims.
//!
//! * density-ratio DP certificates on a grid;
//! * seeded, parallel Monte Carlo bias estimates;
//! * strict stochastic dominance of the restricted law over the base law,
//!   and the quantile coupling that turns it into a positive bias;
//! * growth of truncated log-Laplace moments when the mean is infinite.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{log_laplace_mgf, DistributionError, LaplaceDist};
use crate::mechanisms::{restricted_cdf, restricted_quantile, MechanismError, MechanismSpec, MechanismWarning, Variant};
use crate::quadrature::{integrate, QuadOptions, QuadratureError};
use crate::rng::RngState;
use crate::stats::Moments;

/// Slack allowed on the log-ratio before a certificate fails.
pub const CERTIFICATE_SLACK: f64 = 1e-9;

/// Draws per Monte Carlo batch; each batch has its own child stream.
const MC_BATCH: u64 = 1 << 16;

pub const MIN_MC_SAMPLES: u64 = 100;

/// Factor by which truncated integrals must grow to count as divergent.
pub const DIVERGENCE_GROWTH: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("density not positive at x = {x}: {value}")]
    NonPositiveDensity { x: f64, value: f64 },
    #[error("empty grid")]
    EmptyGrid,
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: u64, got: u64 },
    #[error("omega grid must have at least 100 points, got {0}")]
    OmegaGridTooSmall(usize),
    #[error("dominance coupling broken at omega = {omega}: restricted {restricted} < base {base}")]
    CouplingBroken { omega: f64, restricted: f64, base: f64 },
    #[error("radii must be positive and strictly increasing")]
    InvalidRadii,
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDescription {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridDescription {
    fn of(grid: &[f64]) -> Self {
        Self {
            min: grid.iter().copied().fold(f64::INFINITY, f64::min),
            max: grid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            points: grid.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpCertificate {
    pub epsilon_claimed: f64,
    pub max_log_ratio_observed: f64,
    /// Grid point where the largest log-ratio occurred.
    pub argmax_x: f64,
    pub grid: GridDescription,
    /// The adjacent pair `(q, q')` responsible, for mechanism certificates.
    pub worst_pair: Option<(f64, f64)>,
    pub pass: bool,
}

impl DpCertificate {
    fn new(epsilon_claimed: f64, max_log_ratio: f64, argmax_x: f64, grid: GridDescription) -> Self {
        Self {
            epsilon_claimed,
            max_log_ratio_observed: max_log_ratio,
            argmax_x,
            grid,
            worst_pair: None,
            pass: max_log_ratio <= epsilon_claimed + CERTIFICATE_SLACK,
        }
    }
}

fn max_abs_log_ratio<A, B>(log_a: A, log_b: B, grid: &[f64]) -> Result<(f64, f64), VerifyError>
where
    A: Fn(f64) -> Result<f64, VerifyError>,
    B: Fn(f64) -> Result<f64, VerifyError>,
{
    if grid.is_empty() {
        return Err(VerifyError::EmptyGrid);
    }
    let mut worst = (0.0, grid[0]);
    for &x in grid {
        let (la, lb) = (log_a(x)?, log_b(x)?);
        let r = (la - lb).abs();
        if r > worst.0 {
            worst = (r, x);
        }
    }
    Ok(worst)
}

/// Certify `max_x |ln(a(x) / b(x))| <= eps` over `grid`.
///
/// A density-ratio bound at every point implies the event-level bound for
/// every measurable set, so this is a sufficient check for ε-DP.
pub fn certify_dp_densities<A, B>(density_a: A, density_b: B, eps: f64, grid: &[f64]) -> Result<DpCertificate, VerifyError>
where
    A: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    let log_of = |f: &dyn Fn(f64) -> f64, x: f64| {
        let v = f(x);
        if v > 0.0 && v.is_finite() {
            Ok(v.ln())
        } else {
            Err(VerifyError::NonPositiveDensity { x, value: v })
        }
    };
    let (r, x) = max_abs_log_ratio(|x| log_of(&density_a, x), |x| log_of(&density_b, x), grid)?;
    Ok(DpCertificate::new(eps, r, x, GridDescription::of(grid)))
}

/// Same as [`certify_dp_densities`] but on log densities, which stay finite
/// far into the tails.
pub fn certify_dp_log_densities<A, B>(log_a: A, log_b: B, eps: f64, grid: &[f64]) -> Result<DpCertificate, VerifyError>
where
    A: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    let check = |f: &dyn Fn(f64) -> f64, x: f64| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(VerifyError::NonPositiveDensity { x, value: v.exp() })
        }
    };
    let (r, x) = max_abs_log_ratio(|x| check(&log_a, x), |x| check(&log_b, x), grid)?;
    Ok(DpCertificate::new(eps, r, x, GridDescription::of(grid)))
}

/// Grid of `points` output values covering the bulk of the output law for
/// every true value in `[q_lo, q_hi]`, restricted to the support.
pub fn output_grid(spec: &MechanismSpec, q_lo: f64, q_hi: f64, points: usize) -> Vec<f64> {
    let b = spec.scale();
    let span = 20.0 * b;
    let linear = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64)
            .collect()
    };
    match spec.variant() {
        Variant::Plain => linear(q_lo - span, q_hi + span, points),
        Variant::Restricted { .. } => linear(0.0, q_hi + span, points),
        Variant::PostProcessed(_) => {
            // the atom at 0 plus the continuous part on (0, ∞)
            let mut g = vec![0.0];
            let top = q_hi + span;
            g.extend((1..points).map(|i| top * i as f64 / (points - 1).max(1) as f64));
            g
        }
        Variant::Multiplicative { .. } => linear(q_lo.ln() - span, q_hi.ln() + span, points)
            .into_iter()
            .map(f64::exp)
            .collect(),
    }
}

/// Adjacent true values at the largest allowed distance: `q + Δ` for the
/// additive mechanisms, `q (1 + K)` for the multiplicative one.
pub fn extremal_partner(spec: &MechanismSpec, q: f64) -> f64 {
    match spec.variant() {
        Variant::Multiplicative { relative_bound } => q * (1.0 + relative_bound),
        _ => q + spec.privacy().sensitivity(),
    }
}

/// Certify `spec` at level `claimed` over every pair in `pairs`, in both
/// directions, on an output grid of `points` values.
pub fn certify_mechanism(spec: &MechanismSpec, pairs: &[(f64, f64)], points: usize, claimed: f64) -> Result<DpCertificate, VerifyError> {
    if pairs.is_empty() || points == 0 {
        return Err(VerifyError::EmptyGrid);
    }
    let lo = pairs.iter().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max);
    let grid = output_grid(spec, lo, hi, points);
    let mut worst: Option<DpCertificate> = None;
    for &(q, q2) in pairs {
        let mut cert = certify_dp_log_densities(
            |x| spec.log_density(q, x).unwrap_or(f64::NAN),
            |x| spec.log_density(q2, x).unwrap_or(f64::NAN),
            claimed,
            &grid,
        )?;
        cert.worst_pair = Some((q, q2));
        if worst.as_ref().is_none_or(|w| cert.max_log_ratio_observed > w.max_log_ratio_observed) {
            worst = Some(cert);
        }
    }
    Ok(worst.expect("pairs is non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
    pub warnings: Vec<MechanismWarning>,
}

impl McEstimate {
    /// `(estimate - expected) / stderr`.
    pub fn z_score(&self, expected: f64) -> f64 {
        (self.mean - expected) / self.stderr
    }
}

/// Monte Carlo mean of `spec`'s output at `q`, minus `q`.
///
/// Draws are split into fixed-size batches, each on its own child stream of
/// `seed`, and merged in batch order, so the result does not depend on the
/// thread count.
pub fn mc_bias(spec: &MechanismSpec, q: f64, n: u64, seed: u64) -> Result<McEstimate, VerifyError> {
    if n < MIN_MC_SAMPLES {
        return Err(VerifyError::TooFewSamples {
            min: MIN_MC_SAMPLES,
            got: n,
        });
    }
    // fail fast on bad q before spawning work
    let mut probe = RngState::from_seed(seed);
    spec.sample(q, &mut probe)?;

    let root = RngState::from_seed(seed);
    let batches = n.div_ceil(MC_BATCH);
    let parts = (0..batches)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.child(i);
            let len = MC_BATCH.min(n - i * MC_BATCH);
            let mut m = Moments::default();
            for _ in 0..len {
                m.push(spec.sample(q, &mut rng)? - q);
            }
            Ok(m)
        })
        .collect::<Result<Vec<Moments>, MechanismError>>()?;
    let m = parts.into_iter().fold(Moments::default(), Moments::merge);
    Ok(McEstimate {
        mean: m.mean,
        stderr: m.stderr(),
        n,
        seed,
        warnings: spec.warnings().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    /// `restricted_cdf(t) < laplace_cdf(t)` at every grid point.
    pub holds: bool,
    /// Smallest `laplace_cdf(t) - restricted_cdf(t)` on the grid.
    pub min_gap: f64,
    pub argmin: f64,
}

pub fn check_stochastic_dominance(base: &LaplaceDist, grid: &[f64]) -> Result<DominanceReport, VerifyError> {
    if grid.is_empty() {
        return Err(VerifyError::EmptyGrid);
    }
    let mut report = DominanceReport {
        holds: true,
        min_gap: f64::INFINITY,
        argmin: grid[0],
    };
    for &t in grid {
        let (f, fr) = (base.cdf(t)?, restricted_cdf(base, t)?);
        if fr >= f {
            report.holds = false;
        }
        let gap = f - fr;
        if gap < report.min_gap {
            report.min_gap = gap;
            report.argmin = t;
        }
    }
    Ok(report)
}

/// Expected gap between the restricted and base laws under the quantile
/// coupling `ω ↦ (F_R^{-1}(ω), F^{-1}(ω))`.
///
/// Both quantile functions are evaluated on `ω = i / n`, `0 < i < n`; the
/// pointwise gap must be nonnegative and its trapezoidal integral positive.
pub fn coupling_bias_lower_bound(base: &LaplaceDist, omega_grid: usize) -> Result<f64, VerifyError> {
    if omega_grid < 100 {
        return Err(VerifyError::OmegaGridTooSmall(omega_grid));
    }
    let h = 1.0 / omega_grid as f64;
    let mut total = 0.0;
    for i in 1..omega_grid {
        let omega = i as f64 * h;
        let restricted = restricted_quantile(base, omega)?;
        let plain = base.quantile(omega)?;
        let gap = restricted - plain;
        if gap < 0.0 {
            return Err(VerifyError::CouplingBroken {
                omega,
                restricted,
                base: plain,
            });
        }
        let weight = if i == 1 || i == omega_grid - 1 { 0.5 } else { 1.0 };
        total += weight * gap;
    }
    let estimate = total * h;
    if estimate > 0.0 {
        Ok(estimate)
    } else {
        Err(VerifyError::CouplingBroken {
            omega: f64::NAN,
            restricted: estimate,
            base: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub scale: f64,
    pub radii: Vec<f64>,
    /// `(1/2b) ∫_{-T}^{T} e^x e^{-|x|/b} dx` for each radius `T`.
    pub values: Vec<f64>,
    pub strictly_increasing: bool,
    /// Last value over first value.
    pub growth_factor: f64,
    /// Strictly increasing with growth of at least [`DIVERGENCE_GROWTH`].
    pub diverging: bool,
    /// `E[e^{L_b}]`, `+inf` when `b >= 1`.
    pub limit: f64,
    /// `|last value - limit|` when the limit is finite.
    pub distance_to_limit: Option<f64>,
}

/// Truncated first moments of `e^{L_b}` over growing windows.
pub fn check_divergence_log_laplace(b: f64, radii: &[f64]) -> Result<DivergenceReport, VerifyError> {
    let limit = log_laplace_mgf(b, 1.0)?;
    if radii.is_empty()
        || radii[0] <= 0.0
        || !radii.iter().all(|r| r.is_finite())
        || radii.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(VerifyError::InvalidRadii);
    }
    let opts = QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-13,
        max_intervals: 20_000,
    };
    let values = radii
        .iter()
        .map(|&t| {
            integrate(|x: f64| (x - x.abs() / b).exp() / (2.0 * b), -t, t, &[0.0], opts).map(|r| r.value)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let strictly_increasing = values.windows(2).all(|w| w[1] > w[0]);
    let growth_factor = values[values.len() - 1] / values[0];
    Ok(DivergenceReport {
        scale: b,
        radii: radii.to_vec(),
        strictly_increasing,
        growth_factor,
        diverging: strictly_increasing && growth_factor >= DIVERGENCE_GROWTH,
        limit,
        distance_to_limit: limit.is_finite().then(|| (values[values.len() - 1] - limit).abs()),
        values,
    })
}
