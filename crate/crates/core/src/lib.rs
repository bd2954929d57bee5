//! Differentially private release of nonnegative real-valued queries with
//! Laplace noise.
//!
//! The crate covers three ways of forcing a nonnegative output (clamping or
//! other post-processing, restriction of the noise law to `[0, ∞)`, and
//! multiplicative log-Laplace noise), closed-form and numerical bias
//! analysis of each, and a verification harness for their privacy and bias
//! properties.

pub mod bias;
pub mod distributions;
pub mod mechanisms;
pub mod quadrature;
pub mod queries;
pub mod rng;
pub mod roots;
pub mod stats;
pub mod verify;

pub use distributions::{log_laplace_mgf, DistributionError, LaplaceDist};
pub use mechanisms::{
    make_laplace_mechanism, MechanismError, MechanismSpec, MechanismWarning, PostProcessor,
    PrivacyParams, RestrictedSampler, RestrictionCalibration, Variant,
};
pub use queries::{AdjacencyRelation, Bounds, Dataset, QueryDescriptor, QueryError};
pub use rng::RngState;
