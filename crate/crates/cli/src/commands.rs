use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use nonneg_dp::bias::{
    bias_bit, bias_ratio_restricted_vs_bit, bias_restricted, closed_form_bias,
    max_abs_bias_translated_ramp, optimal_alpha, quadrature_bias, DEFAULT_ALPHA_TOL,
};
use nonneg_dp::verify::{certify_mechanism, extremal_partner, mc_bias, DpCertificate};
use nonneg_dp::{Bounds, Dataset, MechanismSpec, MechanismWarning, QueryDescriptor, RngState};

use crate::config::{ExperimentArgs, ExperimentConfig, MechanismKind, OutputFormat};
use crate::output::{to_csv, to_json, BiasCurveRow, CompareRow, CsvRow, McValidateRow, Num};

/// Output points per density certificate.
pub const CERTIFICATE_GRID_POINTS: usize = 2000;

/// `|z|` at or above this fails `mc-validate`.
pub const MC_Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerificationFailed,
}

/// Rendered output of one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub text: String,
    pub outcome: Outcome,
}

impl CommandOutput {
    fn ok(text: String) -> Self {
        Self {
            text,
            outcome: Outcome::Success,
        }
    }
}

/// Seed for grid row `i`, decorrelated from neighbouring rows.
fn row_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn warning_code(w: MechanismWarning) -> &'static str {
    match w {
        MechanismWarning::ZeroSensitivity => "zero-sensitivity",
        MechanismWarning::InfiniteMean => "infinite-mean",
        MechanismWarning::InfiniteVariance => "infinite-variance",
    }
}

fn warning_codes(spec: &MechanismSpec) -> Vec<&'static str> {
    spec.warnings().iter().copied().map(warning_code).collect()
}

#[derive(Serialize)]
struct MechanismHeader {
    mechanism: MechanismKind,
    epsilon: Num,
    sensitivity: Num,
    scale: Num,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<Num>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kbound: Option<Num>,
    guaranteed_privacy_level: Num,
    warnings: Vec<&'static str>,
}

fn header(cfg: &ExperimentConfig, spec: &MechanismSpec) -> Result<MechanismHeader> {
    Ok(MechanismHeader {
        mechanism: cfg.mechanism,
        epsilon: Num(cfg.epsilon),
        sensitivity: Num(cfg.sensitivity),
        scale: Num(spec.scale()),
        alpha: match cfg.mechanism {
            MechanismKind::Ramp => Some(Num(cfg.ramp_alpha()?)),
            MechanismKind::Bit => Some(Num(0.0)),
            _ => None,
        },
        kbound: cfg.kbound.filter(|_| cfg.mechanism == MechanismKind::Multiplicative).map(Num),
        guaranteed_privacy_level: Num(spec.guaranteed_privacy_level()),
        warnings: warning_codes(spec),
    })
}

#[derive(Serialize)]
struct JsonBiasRow {
    q: Num,
    bias_closed_form: Option<Num>,
    bias_quadrature: Option<Num>,
    bias_mc: Option<Num>,
    mc_stderr: Option<Num>,
}

pub fn bias_curve_rows(cfg: &ExperimentConfig) -> Result<Vec<BiasCurveRow>> {
    let spec = cfg.mechanism_spec()?;
    cfg.q_grid
        .values()
        .into_iter()
        .enumerate()
        .map(|(i, q)| {
            let closed = closed_form_bias(&spec, q).ok();
            let quad = quadrature_bias(&spec, q).ok();
            let (mc, se) = if cfg.samples > 0 {
                let est = mc_bias(&spec, q, cfg.samples, row_seed(cfg.seed, i))?;
                (Some(est.mean), Some(est.stderr))
            } else {
                (None, None)
            };
            Ok(BiasCurveRow {
                q,
                bias_closed_form: closed,
                bias_quadrature: quad,
                bias_mc: mc,
                mc_stderr: se,
            })
        })
        .collect()
}

pub fn cmd_bias_curve(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let rows = bias_curve_rows(cfg)?;
    let text = match cfg.format {
        OutputFormat::Csv => to_csv(&rows)?,
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Report {
                #[serde(flatten)]
                mechanism: MechanismHeader,
                samples: u64,
                seed: u64,
                rows: Vec<JsonBiasRow>,
            }
            let spec = cfg.mechanism_spec()?;
            to_json(&Report {
                mechanism: header(cfg, &spec)?,
                samples: cfg.samples,
                seed: cfg.seed,
                rows: rows
                    .iter()
                    .map(|r| JsonBiasRow {
                        q: Num(r.q),
                        bias_closed_form: r.bias_closed_form.map(Num),
                        bias_quadrature: r.bias_quadrature.map(Num),
                        bias_mc: r.bias_mc.map(Num),
                        mc_stderr: r.mc_stderr.map(Num),
                    })
                    .collect(),
            })?
        }
    };
    Ok(CommandOutput::ok(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalAlphaReport {
    pub b: f64,
    pub alpha_star: f64,
    #[serde(rename = "B_at_alpha_star")]
    pub bias_at_alpha_star: f64,
    #[serde(rename = "B_at_zero")]
    pub bias_at_zero: f64,
    pub improvement_ratio: f64,
}

impl CsvRow for OptimalAlphaReport {
    const HEADER: &'static [&'static str] = &["b", "alpha_star", "B_at_alpha_star", "B_at_zero", "improvement_ratio"];
    fn fields(&self) -> Vec<String> {
        [self.b, self.alpha_star, self.bias_at_alpha_star, self.bias_at_zero, self.improvement_ratio]
            .into_iter()
            .map(crate::output::fmt_num)
            .collect()
    }
}

pub fn optimal_alpha_report(b: f64) -> Result<OptimalAlphaReport> {
    let alpha_star = optimal_alpha(b, DEFAULT_ALPHA_TOL)?;
    let at_star = max_abs_bias_translated_ramp(alpha_star, b)?;
    let at_zero = max_abs_bias_translated_ramp(0.0, b)?;
    Ok(OptimalAlphaReport {
        b,
        alpha_star,
        bias_at_alpha_star: at_star,
        bias_at_zero: at_zero,
        improvement_ratio: at_zero / at_star,
    })
}

pub fn cmd_optimal_alpha(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    ensure!(
        cfg.mechanism != MechanismKind::Multiplicative,
        "optimal-alpha applies to additive Laplace noise, not the multiplicative mechanism"
    );
    let r = optimal_alpha_report(cfg.scale)?;
    let text = match cfg.format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct J {
                b: Num,
                alpha_star: Num,
                #[serde(rename = "B_at_alpha_star")]
                at_star: Num,
                #[serde(rename = "B_at_zero")]
                at_zero: Num,
                improvement_ratio: Num,
            }
            to_json(&J {
                b: Num(r.b),
                alpha_star: Num(r.alpha_star),
                at_star: Num(r.bias_at_alpha_star),
                at_zero: Num(r.bias_at_zero),
                improvement_ratio: Num(r.improvement_ratio),
            })?
        }
        OutputFormat::Csv => to_csv(&[r])?,
    };
    Ok(CommandOutput::ok(text))
}

/// Ramp at `b = Δ/ε` against restriction at `b = 2Δ/ε`, both ε-DP.
pub fn compare_rows(cfg: &ExperimentConfig) -> Result<Vec<CompareRow>> {
    ensure!(
        cfg.mechanism != MechanismKind::Multiplicative,
        "compare uses additive Laplace noise; drop --mechanism multiplicative"
    );
    ensure!(cfg.sensitivity > 0.0, "compare needs a positive sensitivity");
    let b = cfg.sensitivity / cfg.epsilon;
    cfg.q_grid
        .values()
        .into_iter()
        .map(|q| {
            Ok(CompareRow {
                q,
                bias_bit: bias_bit(q, b)?,
                bias_restricted_same_eps: bias_restricted(q, 2.0 * b)?,
                ratio: bias_ratio_restricted_vs_bit(q, cfg.epsilon, cfg.sensitivity)?,
            })
        })
        .collect()
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let rows = compare_rows(cfg)?;
    let text = match cfg.format {
        OutputFormat::Csv => to_csv(&rows)?,
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Row {
                q: Num,
                bias_bit: Num,
                bias_restricted_same_eps: Num,
                ratio: Num,
            }
            #[derive(Serialize)]
            struct Report {
                epsilon: Num,
                sensitivity: Num,
                scale_bit: Num,
                scale_restricted: Num,
                rows: Vec<Row>,
            }
            let b = cfg.sensitivity / cfg.epsilon;
            to_json(&Report {
                epsilon: Num(cfg.epsilon),
                sensitivity: Num(cfg.sensitivity),
                scale_bit: Num(b),
                scale_restricted: Num(2.0 * b),
                rows: rows
                    .iter()
                    .map(|r| Row {
                        q: Num(r.q),
                        bias_bit: Num(r.bias_bit),
                        bias_restricted_same_eps: Num(r.bias_restricted_same_eps),
                        ratio: Num(r.ratio),
                    })
                    .collect(),
            })?
        }
    };
    Ok(CommandOutput::ok(text))
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Privacy level to certify (defaults to the mechanism's guaranteed level)
    #[arg(long)]
    pub claimed_epsilon: Option<f64>,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

pub fn verify_dp_certificate(cfg: &ExperimentConfig, claimed: Option<f64>) -> Result<(MechanismSpec, DpCertificate)> {
    let spec = cfg.mechanism_spec()?;
    ensure!(spec.scale() > 0.0, "mechanism adds no noise; nothing to certify");
    let claimed = match claimed {
        Some(c) => {
            ensure!(c.is_finite() && c > 0.0, "--claimed-epsilon must be finite and > 0, got {c}");
            c
        }
        None => spec.guaranteed_privacy_level(),
    };
    let pairs: Vec<(f64, f64)> = cfg
        .q_grid
        .values()
        .into_iter()
        .map(|q| (q, extremal_partner(&spec, q)))
        .collect();
    let cert = certify_mechanism(&spec, &pairs, CERTIFICATE_GRID_POINTS, claimed)?;
    Ok((spec, cert))
}

pub fn cmd_verify_dp(cfg: &ExperimentConfig, claimed: Option<f64>) -> Result<CommandOutput> {
    let (spec, cert) = verify_dp_certificate(cfg, claimed)?;
    #[derive(Serialize)]
    struct Grid {
        min: Num,
        max: Num,
        points: usize,
    }
    #[derive(Serialize)]
    struct Report {
        #[serde(flatten)]
        mechanism: MechanismHeader,
        pairs: usize,
        epsilon_claimed: Num,
        max_log_ratio_observed: Num,
        argmax_x: Num,
        worst_pair: Option<[Num; 2]>,
        grid: Grid,
        pass: bool,
    }
    let report = Report {
        mechanism: header(cfg, &spec)?,
        pairs: cfg.q_grid.points,
        epsilon_claimed: Num(cert.epsilon_claimed),
        max_log_ratio_observed: Num(cert.max_log_ratio_observed),
        argmax_x: Num(cert.argmax_x),
        worst_pair: cert.worst_pair.map(|(a, b)| [Num(a), Num(b)]),
        grid: Grid {
            min: Num(cert.grid.min),
            max: Num(cert.grid.max),
            points: cert.grid.points,
        },
        pass: cert.pass,
    };
    let text = match cfg.format {
        OutputFormat::Json => to_json(&report)?,
        OutputFormat::Csv => {
            struct Row<'a>(&'a DpCertificate);
            impl CsvRow for Row<'_> {
                const HEADER: &'static [&'static str] = &["epsilon_claimed", "max_log_ratio_observed", "argmax_x", "pass"];
                fn fields(&self) -> Vec<String> {
                    vec![
                        crate::output::fmt_num(self.0.epsilon_claimed),
                        crate::output::fmt_num(self.0.max_log_ratio_observed),
                        crate::output::fmt_num(self.0.argmax_x),
                        self.0.pass.to_string(),
                    ]
                }
            }
            to_csv(&[Row(&cert)])?
        }
    };
    Ok(CommandOutput {
        text,
        outcome: if cert.pass {
            Outcome::Success
        } else {
            Outcome::VerificationFailed
        },
    })
}

pub struct McValidation {
    pub rows: Vec<McValidateRow>,
    /// Largest `|z|` over rows with a finite closed-form bias.
    pub max_abs_z: f64,
    pub warnings: Vec<&'static str>,
}

pub fn mc_validation(cfg: &ExperimentConfig) -> Result<McValidation> {
    ensure!(cfg.samples >= 100, "mc-validate needs --samples >= 100");
    let spec = cfg.mechanism_spec()?;
    let warnings = warning_codes(&spec);
    let warning = warnings.join(";");
    let mut max_abs_z: f64 = 0.0;
    let rows = cfg
        .q_grid
        .values()
        .into_iter()
        .enumerate()
        .map(|(i, q)| {
            let closed = closed_form_bias(&spec, q)?;
            let est = mc_bias(&spec, q, cfg.samples, row_seed(cfg.seed, i))?;
            let z = if closed.is_finite() {
                let z = est.z_score(closed);
                // zero-noise rows have stderr 0 and agree exactly
                let z = if z.is_nan() && est.mean == closed { 0.0 } else { z };
                max_abs_z = max_abs_z.max(z.abs());
                z
            } else {
                f64::NAN
            };
            Ok(McValidateRow {
                q,
                bias_closed_form: closed,
                bias_mc: est.mean,
                mc_stderr: est.stderr,
                z_score: z,
                warning: warning.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McValidation {
        rows,
        max_abs_z,
        warnings,
    })
}

pub fn cmd_mc_validate(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let v = mc_validation(cfg)?;
    let text = match cfg.format {
        OutputFormat::Csv => {
            let mut text = to_csv(&v.rows)?;
            text.push_str(&format!("# max_abs_z={}\n", crate::output::fmt_num(v.max_abs_z)));
            for w in &v.warnings {
                text.push_str(&format!("# warning={w}\n"));
            }
            text
        }
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Row {
                q: Num,
                bias_closed_form: Num,
                bias_mc: Num,
                mc_stderr: Num,
                z_score: Num,
            }
            #[derive(Serialize)]
            struct Report {
                #[serde(flatten)]
                mechanism: MechanismHeader,
                samples: u64,
                seed: u64,
                max_abs_z: Num,
                rows: Vec<Row>,
            }
            let spec = cfg.mechanism_spec()?;
            to_json(&Report {
                mechanism: header(cfg, &spec)?,
                samples: cfg.samples,
                seed: cfg.seed,
                max_abs_z: Num(v.max_abs_z),
                rows: v
                    .rows
                    .iter()
                    .map(|r| Row {
                        q: Num(r.q),
                        bias_closed_form: Num(r.bias_closed_form),
                        bias_mc: Num(r.bias_mc),
                        mc_stderr: Num(r.mc_stderr),
                        z_score: Num(r.z_score),
                    })
                    .collect(),
            })?
        }
    };
    Ok(CommandOutput {
        text,
        outcome: if v.max_abs_z < MC_Z_THRESHOLD {
            Outcome::Success
        } else {
            Outcome::VerificationFailed
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryKind {
    Count,
    Sum,
    Mean,
}

#[derive(Debug, Clone, Args)]
pub struct QueryArgs {
    /// Newline-delimited decimal records
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub query: QueryKind,
    #[arg(long)]
    pub lower: f64,
    #[arg(long)]
    pub upper: f64,
    /// Exclude the lower bound itself, i.e. records lie in (lower, upper]
    #[arg(long)]
    pub lower_open: bool,
    /// Threshold for the count query
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Declared minimum of the count query
    #[arg(long)]
    pub count_floor: Option<u64>,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

/// Evaluate a query on a dataset file and release it through the chosen
/// mechanism, calibrated to the query's own sensitivity. Also returns the
/// resolved output path.
pub fn cmd_query(args: &QueryArgs) -> Result<(CommandOutput, Option<PathBuf>)> {
    if args.experiment.sensitivity.is_some() || args.experiment.scale.is_some() {
        bail!("query derives the sensitivity from the bounds; drop --sensitivity/--scale");
    }
    let bounds = Bounds::new(args.lower, args.upper, args.lower_open)?;
    let text = std::fs::read_to_string(&args.data)
        .with_context(|| format!("cannot read dataset {}", args.data.display()))?;
    let data = Dataset::parse(&text, bounds)?;
    let descriptor = match args.query {
        QueryKind::Count => QueryDescriptor::CountAbove {
            threshold: args.threshold.context("--threshold is required for the count query")?,
            floor: args.count_floor,
        },
        QueryKind::Sum => QueryDescriptor::BoundedSum,
        QueryKind::Mean => QueryDescriptor::BoundedMean,
    };
    let n = data.len();
    let value = descriptor.evaluate(&data)?;
    let sensitivity = descriptor.sensitivity(bounds, n)?;
    let relative_bound = descriptor.relative_bound(bounds, n)?;

    let mut exp = args.experiment.clone();
    if exp.mechanism == Some(MechanismKind::Multiplicative) && exp.kbound.is_none() {
        ensure!(
            relative_bound.is_finite(),
            "the query has no finite relative bound K, so the multiplicative mechanism cannot be calibrated"
        );
        exp.kbound = Some(relative_bound);
    }
    // the q grid is unused here; keep validation from rejecting it
    exp.q_min = None;
    exp.q_max = None;
    exp.q_log = false;
    let mut cfg = ExperimentConfig::resolve(&exp, OutputFormat::Json)?;
    cfg.sensitivity = sensitivity;
    if cfg.mechanism != MechanismKind::Multiplicative {
        cfg.scale = sensitivity / cfg.epsilon;
    }
    let spec = cfg.mechanism_spec()?;
    let mut rng = RngState::from_seed(cfg.seed);
    let release = spec.sample(value, &mut rng)?;

    #[derive(Serialize)]
    struct Report {
        query: QueryKind,
        n: usize,
        value: Num,
        sensitivity: Num,
        relative_bound: Num,
        #[serde(flatten)]
        mechanism: MechanismHeader,
        seed: u64,
        release: Num,
    }
    let report = Report {
        query: args.query,
        n,
        value: Num(value),
        sensitivity: Num(sensitivity),
        relative_bound: Num(relative_bound),
        mechanism: header(&cfg, &spec)?,
        seed: cfg.seed,
        release: Num(release),
    };
    Ok((CommandOutput::ok(to_json(&report)?), cfg.out))
}
