//! Laplace distribution functions and the moment generating function of
//! Laplace noise (the moments of the log-Laplace law).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("Laplace scale must be finite and > 0, got {0}")]
    InvalidScale(f64),
    #[error("Laplace location must be finite, got {0}")]
    InvalidLocation(f64),
    #[error("non-finite input: {0}")]
    NonFiniteInput(f64),
    #[error("probability out of range (0, 1): {0}")]
    ProbabilityOutOfRange(f64),
}

/// Laplace law with density `exp(-|x - location| / scale) / (2 scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceDist {
    location: f64,
    scale: f64,
}

impl LaplaceDist {
    pub fn new(location: f64, scale: f64) -> Result<Self, DistributionError> {
        if !location.is_finite() {
            return Err(DistributionError::InvalidLocation(location));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(DistributionError::InvalidScale(scale));
        }
        Ok(Self { location, scale })
    }

    /// Zero-mean noise `L_b`.
    pub fn centered(scale: f64) -> Result<Self, DistributionError> {
        Self::new(0.0, scale)
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_location(&self, location: f64) -> Result<Self, DistributionError> {
        Self::new(location, self.scale)
    }

    fn check(x: f64) -> Result<f64, DistributionError> {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(DistributionError::NonFiniteInput(x))
        }
    }

    pub fn pdf(&self, x: f64) -> Result<f64, DistributionError> {
        Self::check(x)?;
        Ok((-(x - self.location).abs() / self.scale).exp() / (2.0 * self.scale))
    }

    /// Natural log of the density; finite even where `pdf` underflows.
    pub fn log_pdf(&self, x: f64) -> Result<f64, DistributionError> {
        Self::check(x)?;
        Ok(-(x - self.location).abs() / self.scale - (2.0 * self.scale).ln())
    }

    pub fn cdf(&self, x: f64) -> Result<f64, DistributionError> {
        Self::check(x)?;
        let z = (x - self.location) / self.scale;
        Ok(if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        })
    }

    /// Survival function `1 - cdf(x)`, accurate in the upper tail.
    pub fn sf(&self, x: f64) -> Result<f64, DistributionError> {
        Self::check(x)?;
        let z = (x - self.location) / self.scale;
        Ok(if z < 0.0 {
            1.0 - 0.5 * z.exp()
        } else {
            0.5 * (-z).exp()
        })
    }

    pub fn quantile(&self, p: f64) -> Result<f64, DistributionError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(DistributionError::ProbabilityOutOfRange(p));
        }
        Ok(self.quantile_split(p, 1.0 - p))
    }

    /// Quantile given both `p` and its complement `s = 1 - p`.
    ///
    /// Whichever of the two is below one half is used, so callers that know
    /// the upper-tail mass exactly keep full precision near p = 1.
    pub(crate) fn quantile_split(&self, p: f64, s: f64) -> f64 {
        if p < 0.5 {
            self.location + self.scale * (2.0 * p).ln()
        } else {
            self.location - self.scale * (2.0 * s).ln()
        }
    }

    /// One inverse-transform draw; consumes exactly one uniform.
    pub fn sample(&self, rng: &mut RngState) -> f64 {
        let u = rng.next_open01();
        self.quantile_split(u, 1.0 - u)
    }
}

/// `E[exp(k L_b)]` for zero-mean Laplace noise of scale `b`.
///
/// Equals `1 / (1 - k² b²)` when `|k| b < 1` and `+inf` otherwise; the
/// infinite case is a value, not an error.
pub fn log_laplace_mgf(b: f64, k: f64) -> Result<f64, DistributionError> {
    if !(b.is_finite() && b > 0.0) {
        return Err(DistributionError::InvalidScale(b));
    }
    if !k.is_finite() {
        return Err(DistributionError::NonFiniteInput(k));
    }
    let kb = k.abs() * b;
    if kb >= 1.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / (1.0 - kb * kb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadOptions};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lap(q: f64, b: f64) -> LaplaceDist {
        LaplaceDist::new(q, b).unwrap()
    }

    #[test]
    fn construction_rejects_bad_scale() {
        assert_eq!(
            LaplaceDist::new(0.0, 0.0),
            Err(DistributionError::InvalidScale(0.0))
        );
        assert!(LaplaceDist::new(0.0, -1.0).is_err());
        assert!(LaplaceDist::new(0.0, f64::INFINITY).is_err());
        assert!(LaplaceDist::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn pdf_examples() {
        assert_eq!(lap(0.0, 1.0).pdf(0.0).unwrap(), 0.5);
        assert_eq!(lap(3.0, 2.0).pdf(3.0).unwrap(), 0.25);
        assert_relative_eq!(lap(0.0, 1.0).pdf(1.0).unwrap(), 0.183_939_720_585_721_2, max_relative = 1e-15);
        assert!(matches!(
            lap(0.0, 1.0).pdf(f64::NAN),
            Err(DistributionError::NonFiniteInput(_))
        ));
    }

    #[test]
    fn cdf_examples() {
        let d = lap(0.0, 1.0);
        assert_eq!(d.cdf(0.0).unwrap(), 0.5);
        assert_relative_eq!(d.cdf(1.0).unwrap(), 0.816_060_279_414_278_8, max_relative = 1e-15);
        assert_relative_eq!(lap(5.0, 1.0).cdf(0.0).unwrap(), 0.003_368_973_499_542_734, max_relative = 1e-14);
        assert!(d.cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn cdf_matches_quadrature_of_pdf() {
        let d = lap(0.0, 1.0);
        let r = integrate(|x| d.pdf(x).unwrap(), -40.0, 1.0, &[0.0], QuadOptions::default()).unwrap();
        assert_relative_eq!(r.value, d.cdf(1.0).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(lap(0.0, 1.0).quantile(0.5).unwrap(), 0.0);
        let x = lap(0.0, 1.0).quantile(0.25).unwrap();
        assert_relative_eq!(x, -std::f64::consts::LN_2, max_relative = 1e-15);
        assert_relative_eq!(lap(0.0, 1.0).cdf(x).unwrap(), 0.25, max_relative = 1e-15);
        let y = lap(2.0, 3.0).quantile(0.9).unwrap();
        assert_relative_eq!(y, 2.0 - 3.0 * 0.2f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(y, 6.828_313_737_302_301, max_relative = 1e-14);
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                lap(0.0, 1.0).quantile(p),
                Err(DistributionError::ProbabilityOutOfRange(_))
            ));
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        for (q, b) in [(0.0, 1.0), (3.0, 0.2), (-7.0, 5.0), (100.0, 0.01)] {
            let d = lap(q, b);
            let r = integrate(
                |x| d.pdf(x).unwrap(),
                q - 40.0 * b,
                q + 40.0 * b,
                &[q],
                QuadOptions::default(),
            )
            .unwrap();
            assert!((r.value - 1.0).abs() < 1e-10, "q={q} b={b}: {}", r.value);
        }
    }

    #[test]
    fn cdf_inverts_quantile_on_percentiles() {
        for (q, b) in [(0.0, 1.0), (2.0, 3.0), (-1.0, 0.1)] {
            let d = lap(q, b);
            for i in 1..100 {
                let p = i as f64 / 100.0;
                let back = d.cdf(d.quantile(p).unwrap()).unwrap();
                assert!((back - p).abs() <= 1e-12 * p, "p={p} back={back}");
            }
        }
    }

    #[test]
    fn sampling_moments() {
        let d = lap(0.0, 1.0);
        let mut rng = RngState::from_seed(42);
        let n = 1_000_000;
        let (mut sum, mut abs_sum) = (0.0, 0.0);
        for _ in 0..n {
            let x = d.sample(&mut rng);
            sum += x;
            abs_sum += x.abs();
        }
        assert!((sum / n as f64).abs() < 0.005);
        assert!((abs_sum / n as f64 - 1.0).abs() < 0.005);
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = lap(1.0, 2.0);
        let mut a = RngState::from_seed(9);
        let mut b = RngState::from_seed(9);
        let xs: Vec<u64> = (0..1000).map(|_| d.sample(&mut a).to_bits()).collect();
        let ys: Vec<u64> = (0..1000).map(|_| d.sample(&mut b).to_bits()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn sample_consumes_one_uniform() {
        let d = lap(0.0, 1.0);
        let mut a = RngState::from_seed(5);
        let mut b = RngState::from_seed(5);
        let _ = d.sample(&mut a);
        let _ = b.next_open01();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn sampling_passes_ks() {
        let d = lap(0.0, 1.0);
        let mut rng = RngState::from_seed(2024);
        let xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
        let stat = crate::stats::ks_statistic(&xs, |x| d.cdf(x).unwrap());
        assert!(stat < crate::stats::ks_critical_one_sample(xs.len(), 0.001));
    }

    // quadrature oracle for E[exp(kL)], truncated where the integrand < 1e-16 of its peak
    fn mgf_by_quadrature(b: f64, k: f64) -> f64 {
        let decay = 1.0 / b - k.abs();
        let radius = (1e16f64).ln() / decay;
        integrate(
            |x: f64| (k * x - x.abs() / b).exp() / (2.0 * b),
            -radius,
            radius,
            &[0.0],
            QuadOptions::default(),
        )
        .unwrap()
        .value
    }

    #[test]
    fn mgf_examples() {
        assert_relative_eq!(log_laplace_mgf(0.5, 1.0).unwrap(), 4.0 / 3.0, max_relative = 1e-15);
        assert!((mgf_by_quadrature(0.5, 1.0) - 4.0 / 3.0).abs() < 1e-10);
        assert_eq!(log_laplace_mgf(1.0, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(log_laplace_mgf(2.0, 1.0).unwrap(), f64::INFINITY);
        assert_relative_eq!(log_laplace_mgf(0.4, 2.0).unwrap(), 1.0 / 0.36, max_relative = 1e-14);
        assert_relative_eq!(mgf_by_quadrature(0.4, 2.0), 1.0 / 0.36, max_relative = 1e-9);
        assert!(log_laplace_mgf(0.0, 1.0).is_err());
    }

    #[test]
    fn mgf_matches_quadrature() {
        for b in [0.1, 0.3, 0.5, 0.9] {
            let exact = log_laplace_mgf(b, 1.0).unwrap();
            let quad = mgf_by_quadrature(b, 1.0);
            assert!(((quad - exact) / exact).abs() < 1e-8, "b={b}: {quad} vs {exact}");
        }
    }

    proptest! {
        #[test]
        fn translation_invariance(q in -50.0f64..50.0, b in 0.01f64..20.0, t in -1.0f64..1.0) {
            let shifted = lap(q, b);
            let centred = lap(0.0, b);
            for i in 0..100 {
                let x = q + b * (t * 10.0 + (i as f64 - 50.0) * 0.2);
                let lhs = shifted.pdf(x).unwrap();
                let rhs = centred.pdf(x - q).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
            }
        }

        #[test]
        fn cdf_monotone_and_in_range(q in -10.0f64..10.0, b in 0.1f64..5.0, x in -30.0f64..30.0, dx in 0.0f64..3.0) {
            let d = lap(q, b);
            let a = d.cdf(x).unwrap();
            let c = d.cdf(x + dx).unwrap();
            prop_assert!(a <= c);
            prop_assert!(a > 0.0 && c <= 1.0);
            prop_assert!((d.sf(x).unwrap() - (1.0 - a)).abs() < 1e-15);
        }
    }
}
