//! Experiment configuration: flags, an optional JSON file, and validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use nonneg_dp::bias::{optimal_alpha, DEFAULT_ALPHA_TOL};
use nonneg_dp::{MechanismSpec, PostProcessor, PrivacyParams, RestrictedSampler, RestrictionCalibration};

pub const SEED_ENV: &str = "NONNEG_DP_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    Laplace,
    Bit,
    Ramp,
    Restricted,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Flags shared by every subcommand. Anything left unset falls back to the
/// `--config` file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Privacy budget ε
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Query sensitivity Δ
    #[arg(long)]
    pub sensitivity: Option<f64>,
    /// Laplace scale b; overrides Δ/ε
    #[arg(long)]
    pub scale: Option<f64>,
    /// Ramp translation α (defaults to the bias-optimal value)
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Relative bound K for the multiplicative mechanism
    #[arg(long)]
    pub kbound: Option<f64>,
    #[arg(long, value_enum)]
    pub mechanism: Option<MechanismKind>,
    #[arg(long)]
    pub q_min: Option<f64>,
    #[arg(long)]
    pub q_max: Option<f64>,
    #[arg(long)]
    pub q_points: Option<usize>,
    /// Space the q grid geometrically
    #[arg(long)]
    pub q_log: bool,
    /// Monte Carlo draws per grid point (0 disables Monte Carlo columns)
    #[arg(long)]
    pub samples: Option<u64>,
    /// Seed; falls back to $NONNEG_DP_SEED
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// JSON file with any of the above keys
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub epsilon: Option<f64>,
    pub sensitivity: Option<f64>,
    pub scale: Option<f64>,
    pub alpha: Option<f64>,
    pub kbound: Option<f64>,
    pub mechanism: Option<MechanismKind>,
    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
    pub q_points: Option<usize>,
    pub q_log: Option<bool>,
    pub samples: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub log: bool,
}

impl QGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                let t = i as f64 / last;
                if i + 1 == self.points {
                    self.max
                } else if self.log {
                    self.min * (self.max / self.min).powf(t)
                } else {
                    self.min + (self.max - self.min) * t
                }
            })
            .collect()
    }
}

/// Fully validated experiment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub sensitivity: f64,
    /// Laplace scale for the additive mechanisms, `K/ε` for multiplicative.
    pub scale: f64,
    pub alpha: Option<f64>,
    pub kbound: Option<f64>,
    pub q_grid: QGrid,
    pub samples: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

fn finite_positive(name: &str, v: f64) -> Result<f64> {
    ensure!(v.is_finite() && v > 0.0, "--{name} must be finite and > 0, got {v}");
    Ok(v)
}

fn finite_nonneg(name: &str, v: f64) -> Result<f64> {
    ensure!(v.is_finite() && v >= 0.0, "--{name} must be finite and >= 0, got {v}");
    Ok(v)
}

impl ExperimentConfig {
    /// Merge flags over the config file over defaults, then validate.
    /// `default_format` differs between curve-style and record-style commands.
    pub fn resolve(args: &ExperimentArgs, default_format: OutputFormat) -> Result<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .with_context(|| format!("${SEED_ENV} is not an unsigned integer: {s:?}"))?,
            ),
            Err(_) => None,
        };

        let mechanism = args.mechanism.or(file.mechanism).unwrap_or(MechanismKind::Bit);
        let epsilon = finite_positive("epsilon", args.epsilon.or(file.epsilon).unwrap_or(1.0))?;
        let kbound = args.kbound.or(file.kbound).map(|k| finite_positive("kbound", k)).transpose()?;
        let alpha = args.alpha.or(file.alpha).map(|a| finite_nonneg("alpha", a)).transpose()?;
        let given_scale = args.scale.or(file.scale).map(|b| finite_positive("scale", b)).transpose()?;
        let given_sens = args.sensitivity.or(file.sensitivity).map(|d| finite_positive("sensitivity", d)).transpose()?;

        let (sensitivity, scale) = if mechanism == MechanismKind::Multiplicative {
            let Some(k) = kbound else {
                bail!("--kbound is required for the multiplicative mechanism");
            };
            if given_scale.is_some() {
                bail!("--scale is not used by the multiplicative mechanism (its scale is K/ε)");
            }
            (given_sens.unwrap_or(1.0), k / epsilon)
        } else {
            match (given_scale, given_sens) {
                (Some(b), None) => (b * epsilon, b),
                (None, d) => {
                    let d = d.unwrap_or(1.0);
                    (d, d / epsilon)
                }
                (Some(b), Some(d)) => {
                    ensure!(
                        ((d / epsilon - b) / b).abs() <= 1e-12,
                        "--scale {b} is inconsistent with --sensitivity {d} / --epsilon {epsilon}"
                    );
                    (d, b)
                }
            }
        };

        let default_q_min = if mechanism == MechanismKind::Multiplicative { 0.1 } else { 0.0 };
        let q_min = finite_nonneg("q-min", args.q_min.or(file.q_min).unwrap_or(default_q_min))?;
        let q_max = finite_nonneg("q-max", args.q_max.or(file.q_max).unwrap_or(q_min.max(0.0) + 10.0 * scale))?;
        let q_points = args.q_points.or(file.q_points).unwrap_or(21);
        let q_log = args.q_log || file.q_log.unwrap_or(false);
        ensure!(q_points >= 1, "--q-points must be >= 1");
        ensure!(q_max >= q_min, "--q-max ({q_max}) must be >= --q-min ({q_min})");
        if q_log {
            ensure!(q_min > 0.0, "--q-log needs --q-min > 0");
        }
        if mechanism == MechanismKind::Multiplicative {
            ensure!(q_min > 0.0, "the multiplicative mechanism needs --q-min > 0");
        }

        let samples = args.samples.or(file.samples).unwrap_or(100_000);
        ensure!(samples == 0 || samples >= 100, "--samples must be 0 or >= 100, got {samples}");

        Ok(Self {
            mechanism,
            epsilon,
            sensitivity,
            scale,
            alpha,
            kbound,
            q_grid: QGrid {
                min: q_min,
                max: q_max,
                points: q_points,
                log: q_log,
            },
            samples,
            seed: args.seed.or(file.seed).or(env_seed).unwrap_or(0),
            out: args.out.clone().or(file.out),
            format: args.format.or(file.format).unwrap_or(default_format),
        })
    }

    pub fn privacy(&self) -> Result<PrivacyParams> {
        Ok(PrivacyParams::new(self.epsilon, self.sensitivity)?)
    }

    /// Translation used by the `ramp` mechanism.
    pub fn ramp_alpha(&self) -> Result<f64> {
        match self.alpha {
            Some(a) => Ok(a),
            None => Ok(optimal_alpha(self.scale, DEFAULT_ALPHA_TOL)?),
        }
    }

    pub fn mechanism_spec(&self) -> Result<MechanismSpec> {
        let p = self.privacy()?;
        Ok(match self.mechanism {
            MechanismKind::Laplace => MechanismSpec::laplace(p),
            MechanismKind::Bit => MechanismSpec::bit(p),
            MechanismKind::Ramp => MechanismSpec::post_processed(p, PostProcessor::translated_ramp(self.ramp_alpha()?)?),
            MechanismKind::Restricted => {
                MechanismSpec::restricted(p, RestrictionCalibration::SameScale, RestrictedSampler::Inverse)
            }
            MechanismKind::Multiplicative => {
                MechanismSpec::multiplicative(p, self.kbound.expect("validated in resolve"))?
            }
        })
    }
}
