//! The `nonprob` command line.
//!
//! Every command resolves its settings from an optional JSON config file
//! overlaid with flags, computes all artifacts in memory, then writes them
//! under `--out` together with `manifest.json`. Without `--out` the main
//! artifact goes to stdout.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nonprob_core::diagnostics::{
    match_quality, npa_cellwise, npa_covariance, npa_permutation_band, propensity_checks, propensity_checks_cells,
    z_check_null_band, z_checks, CheckReport, PermutationNull,
};
use nonprob_core::estimators::*;
use nonprob_core::popgen::{draw_b_sample, generate_population, Frame, NonProbSample, ProbSample};
use nonprob_core::rng::derive_seed;
use nonprob_core::uncertainty::{calibration_variance, design_variance_hajek, h0_test, poststrat_variance};
use nonprob_core::{Error, ErrorCategory};
use serde::{Deserialize, Serialize};

use crate::harness::{self, presets, FrameSpec, HarnessError, ScenarioConfig};
use crate::io::{self, DataError, Ingested, Margins, SFrame};
use crate::record;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_ESTIMATION: i32 = 4;
pub const EXIT_INTERNAL: i32 = 5;

pub const METHODS: &[&str] = &[
    "expansion",
    "post_stratified",
    "calibration",
    "ipw",
    "reference_ipw",
    "sm",
    "two_phase_sm",
    "hajek",
    "split_population",
    "composite",
];

pub const CHECKS: &[&str] = &["propensity", "h0", "npa", "z", "match"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

fn core_category(e: &Error) -> &'static str {
    match e.category() {
        ErrorCategory::Config => "config",
        ErrorCategory::Data => "data",
        ErrorCategory::Estimation => "estimation",
    }
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Core(e) => core_category(e),
            CliError::Harness(HarnessError::Config(_)) => "config",
            CliError::Harness(HarnessError::Core(e)) => core_category(e),
            CliError::Harness(HarnessError::AllFailed { .. }) => "estimation",
            CliError::Harness(HarnessError::Internal(_)) | CliError::Io { .. } => "internal",
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(e) => e.kind(),
            CliError::Core(e) | CliError::Harness(HarnessError::Core(e)) => e.kind(),
            CliError::Harness(HarnessError::Config(_)) => "config",
            CliError::Harness(HarnessError::AllFailed { .. }) => "all_replicates_failed",
            CliError::Harness(HarnessError::Internal(_)) => "internal",
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => EXIT_CONFIG,
            "data" => EXIT_DATA,
            "estimation" => EXIT_ESTIMATION,
            _ => EXIT_INTERNAL,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "category": self.category(), "kind": self.kind(), "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Point and variance estimates from B and optional S and margins files.
    Estimate,
    /// Validity checks and non-informativeness diagnostics.
    Diagnose,
    /// Monte Carlo study of a preset or configured scenario.
    Simulate,
    /// List the named scenarios, or print one as JSON.
    Presets,
    /// Write a synthetic population with its B and S samples as CSV.
    Generate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Diagnose => "diagnose",
            Command::Simulate => "simulate",
            Command::Presets => "presets",
            Command::Generate => "generate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    /// `p_hat = n_B / N` for every unit.
    Constant,
    /// Saturated `p_hat_x = n_xB / N_x`.
    Cell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MatchOnArg {
    Z,
    X,
    XAndZ,
}

impl From<MatchOnArg> for MatchOn {
    fn from(m: MatchOnArg) -> Self {
        match m {
            MatchOnArg::Z => MatchOn::Z,
            MatchOnArg::X => MatchOn::X,
            MatchOnArg::XAndZ => MatchOn::XAndZ,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FrameArg {
    Full,
    Complement,
}

#[derive(Debug, Parser)]
#[command(name = "nonprob", version, about = "Estimation and diagnostics for non-probability samples")]
struct Cli {
    command: Command,
    /// JSON file with any of the settings below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated estimators.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Significance level of tests and permutation bands.
    #[arg(long)]
    level: Option<f64>,
    /// Support radius for two-phase SM.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Relative tolerance of the z checks.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Non-probability sample, `unit_id,y,x[,z]`.
    #[arg(long)]
    b: Option<PathBuf>,
    /// Probability sample, `unit_id,pi[,y][,x][,z]`.
    #[arg(long)]
    s: Option<PathBuf>,
    /// `x,N_x` or `t_component,total`.
    #[arg(long)]
    margins: Option<PathBuf>,
    /// Full population file, `unit_id,y,x,z,p_true,mu`.
    #[arg(long)]
    population: Option<PathBuf>,
    #[arg(long)]
    population_size: Option<usize>,
    /// Frame S was drawn from.
    #[arg(long, value_enum)]
    frame: Option<FrameArg>,
    /// Comma-separated diagnostics.
    #[arg(long, value_delimiter = ',')]
    checks: Option<Vec<String>>,
    #[arg(long, value_enum)]
    propensity: Option<PropensityMode>,
    #[arg(long, value_enum)]
    match_on: Option<MatchOnArg>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
}

/// Settings shared by all commands. Every field is optional in the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margins: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<SFrame>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propensity: Option<PropensityMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_on: Option<MatchOn>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    fn overlay(&mut self, cli: &Cli) {
        macro_rules! set {
            ($($field:ident <- $value:expr),* $(,)?) => {
                $(if let Some(v) = $value { self.$field = Some(v); })*
            };
        }
        set!(
            b <- cli.b.clone(),
            s <- cli.s.clone(),
            margins <- cli.margins.clone(),
            population <- cli.population.clone(),
            population_size <- cli.population_size,
            frame <- cli.frame.map(|f| match f {
                FrameArg::Full => SFrame::Full,
                FrameArg::Complement => SFrame::Complement,
            }),
            methods <- cli.method.clone(),
            checks <- cli.checks.clone(),
            level <- cli.level,
            epsilon <- cli.epsilon,
            tolerance <- cli.tolerance,
            seed <- cli.seed,
            propensity <- cli.propensity,
            match_on <- cli.match_on.map(MatchOn::from),
            permutations <- cli.permutations,
            threads <- cli.threads,
            replicates <- cli.replicates,
            preset <- cli.preset.clone(),
        );
    }

    fn level(&self) -> Result<f64, CliError> {
        let level = self.level.unwrap_or(0.05);
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::Config(format!("--level must lie in (0, 1), got {level}")));
        }
        Ok(level)
    }

    fn null(&self) -> Result<PermutationNull, CliError> {
        let permutations = self.permutations.unwrap_or(999);
        if permutations == 0 {
            return Err(CliError::Config("--permutations must be positive".into()));
        }
        Ok(PermutationNull { permutations, level: self.level()?, seed: self.seed.unwrap_or(0) })
    }

    /// The configured scenario, else the named preset, with seed and
    /// replicate overrides applied.
    pub fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let mut sc = match (&self.scenario, &self.preset) {
            (Some(s), _) => s.clone(),
            (None, Some(name)) => presets::preset(name)?,
            (None, None) => return Err(CliError::Config("no scenario: give --preset NAME or a config with \"scenario\"".into())),
        };
        if let Some(seed) = self.seed {
            sc.root_seed = seed;
        }
        if let Some(r) = self.replicates {
            sc.replicates = r;
        }
        sc.validate()?;
        Ok(sc)
    }
}

/// In-memory outputs of one command; the first artifact goes to stdout when
/// there is no output directory.
pub struct Artifacts {
    pub files: Vec<(String, String)>,
}

fn require<'a, T>(v: &'a Option<T>, what: &str, command: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("{command} needs {what}")))
}

fn check_names(list: &[String], known: &[&str], what: &str) -> Result<(), CliError> {
    let mut seen = BTreeSet::new();
    for m in list {
        if !known.contains(&m.as_str()) {
            return Err(CliError::Config(format!("unknown {what} {m}; known: {}", known.join(", "))));
        }
        if !seen.insert(m) {
            return Err(CliError::Config(format!("{what} {m} listed twice")));
        }
    }
    Ok(())
}

fn ingest(cfg: &RunConfig, command: &str) -> Result<Ingested, CliError> {
    let b = require(&cfg.b, "--b", command)?;
    Ok(io::ingest(b, cfg.s.as_deref(), cfg.margins.as_deref(), cfg.frame.unwrap_or_default())?)
}

/// N from `--population-size`, the cell margins or the `1` total, which must agree.
fn population_size(cfg: &RunConfig, data: &Ingested) -> Result<Option<usize>, CliError> {
    let from_margins = match &data.margins {
        Some(Margins::Cells(c)) => Some(c.iter().map(|c| c.1).sum::<usize>()),
        Some(Margins::Totals(t)) => t.iter().find(|t| t.0 == "1").map(|t| t.1.round() as usize),
        None => None,
    };
    match (cfg.population_size, from_margins) {
        (Some(a), Some(b)) if a != b => Err(Error::InconsistentInputs(format!(
            "--population-size {a} disagrees with the margins total {b}"
        ))
        .into()),
        (a, b) => Ok(a.or(b)),
    }
}

fn need_n(n: Option<usize>, method: &str) -> Result<usize, CliError> {
    n.ok_or_else(|| CliError::Config(format!("{method} needs the population size: --population-size or a margins file")))
}

fn need_s<'a>(data: &'a Ingested, method: &str) -> Result<&'a ProbSample, CliError> {
    data.s.as_ref().ok_or_else(|| CliError::Config(format!("{method} needs an S file (--s)")))
}

fn need_sizes(data: &Ingested, method: &str) -> Result<Vec<usize>, CliError> {
    data.cell_sizes()
        .ok_or_else(|| CliError::Config(format!("{method} needs cell margins (x,N_x) via --margins")))
}

fn need_s_x<'a>(data: &'a Ingested, method: &str) -> Result<&'a ProbSample, CliError> {
    let s = need_s(data, method)?;
    if !data.s_has_x {
        return Err(Error::Missing(format!("{method} needs an x column in the S file")).into());
    }
    Ok(s)
}

/// Calibration design from `t_component,total` margins: `1` is the
/// intercept, `x` the numeric cell label and `x=<label>` a cell indicator.
fn t_map_from_components(data: &Ingested, totals: &[(String, f64)]) -> Result<(TMap, Vec<f64>), CliError> {
    let k = data.labels.len();
    let mut rows = vec![Vec::with_capacity(totals.len()); k];
    for (name, _) in totals {
        for (c, row) in rows.iter_mut().enumerate() {
            let label = data.labels.label(c);
            let v = match name.as_str() {
                "1" => 1.0,
                "x" => label.parse::<f64>().map_err(|_| {
                    Error::InconsistentInputs(format!("component x needs numeric cell labels, found {label}"))
                })?,
                other => match other.strip_prefix("x=") {
                    Some(l) if data.labels.get(l).is_some() => f64::from(u8::from(l == label)),
                    Some(l) => return Err(Error::InconsistentInputs(format!("component {other}: no cell labelled {l}")).into()),
                    None => {
                        return Err(Error::InconsistentInputs(format!(
                            "unknown calibration component {other}; use 1, x or x=<label>"
                        ))
                        .into())
                    }
                },
            };
            row.push(v);
        }
    }
    Ok((TMap::new(rows)?, totals.iter().map(|t| t.1).collect()))
}

fn calibration(data: &Ingested, n: Option<usize>) -> Result<Estimate, CliError> {
    let b = &data.b;
    let k = data.labels.len();
    let (t_map, totals, n) = match &data.margins {
        Some(Margins::Totals(t)) => {
            let (t_map, values) = t_map_from_components(data, t)?;
            (t_map, CalibrationTotals::Known(values), need_n(n, "calibration")?)
        }
        Some(Margins::Cells(_)) => {
            let t_map = TMap::dummies(k);
            let totals = t_map.population_totals(&need_sizes(data, "calibration")?)?;
            (t_map, CalibrationTotals::Known(totals), need_n(n, "calibration")?)
        }
        None => {
            let s = need_s_x(data, "calibration without margins")?;
            let t_map = TMap::dummies(k);
            let totals = CalibrationTotals::from_prob_sample(&t_map, s)?;
            let n = n.unwrap_or_else(|| s.d.iter().sum::<f64>().round() as usize);
            (t_map, totals, n)
        }
    };
    let fit = calibrate(b, &CalibrationSpec { t_map, totals, initial: InitialWeights::Uniform { population_size: n } })?;
    let mut est = calibration_estimate(&fit, b)?;
    if let Some(sizes) = data.cell_sizes() {
        est.variance = Some(calibration_variance(&fit, b, &sizes)?.value);
    }
    Ok(est)
}

fn estimate_one(cfg: &RunConfig, data: &Ingested, n: Option<usize>, method: &str) -> Result<Estimate, CliError> {
    let b = &data.b;
    let on = cfg.match_on.unwrap_or(MatchOn::Z);
    Ok(match method {
        "expansion" => expansion(b, need_n(n, method)?)?,
        "post_stratified" => {
            let sizes = need_sizes(data, method)?;
            let v = poststrat_variance(b, &sizes, true)?.value;
            post_stratified(b, &sizes)?.with_variance(v)
        }
        "calibration" => calibration(data, n)?,
        "ipw" => {
            let fit = match data.cell_sizes() {
                Some(sizes) => fit_propensity(b, CovariateSource::Census(&sizes), &PropensityModel::Saturated)?,
                None => {
                    let s = need_s_x(data, "ipw without cell margins")?;
                    fit_propensity(b, CovariateSource::PseudoPopulation(s), &PropensityModel::Saturated)?
                }
            };
            ipw(b, &fit)?
        }
        "reference_ipw" => reference_ipw(b, need_s_x(data, method)?, need_n(n, method)?, &PropensityModel::Saturated)?,
        "sm" => {
            let s = need_s(data, method)?;
            let metric = default_metric(on, None, s, b)?;
            sm_estimate(s, &nn_match(s, b, on, &metric)?)?
        }
        "two_phase_sm" => {
            let s = need_s(data, method)?;
            let metric = default_metric(on, None, s, b)?;
            let eps = match cfg.epsilon {
                Some(e) => e,
                None => default_epsilon(b, on, &metric)?,
            };
            let vars = match on {
                MatchOn::X => PhaseTwoVariables::CellDummies(data.labels.len()),
                _ => PhaseTwoVariables::InterceptAndZ,
            };
            two_phase_sm(s, b, on, &metric, eps, &vars)?.estimate
        }
        "hajek" => {
            let s = need_s(data, method)?;
            let v = design_variance_hajek(s)?.value;
            hajek_mean(s)?.with_variance(v)
        }
        "split_population" => split_population(b, need_s(data, method)?, need_n(n, method)?)?,
        "composite" => composite(b, need_s(data, method)?, Gamma::Estimated, need_n(n, method)?)?,
        other => return Err(CliError::Config(format!("unknown method {other}"))),
    })
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let methods = cfg.methods.clone().unwrap_or_else(|| vec!["expansion".into()]);
    check_names(&methods, METHODS, "method")?;
    let data = ingest(cfg, "estimate")?;
    let n = population_size(cfg, &data)?;
    let estimates = methods.iter().map(|m| estimate_one(cfg, &data, n, m)).collect::<Result<Vec<_>, _>>()?;
    Ok(Artifacts { files: vec![("estimates.csv".into(), record::estimates_csv(&estimates))] })
}

type Stats = Vec<(String, String, f64)>;

fn stat(out: &mut Stats, diag: &str, name: &str, v: f64) {
    out.push((diag.to_string(), name.to_string(), v));
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn saturated_cells(b: &NonProbSample, sizes: &[usize]) -> Result<Vec<f64>, CliError> {
    let counts = b.cell_counts(sizes.len())?;
    Ok(counts.iter().zip(sizes).map(|(&nb, &nx)| if nx > 0 { nb as f64 / nx as f64 } else { 0.0 }).collect())
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let checks = cfg.checks.clone().unwrap_or_else(|| vec!["propensity".into()]);
    check_names(&checks, CHECKS, "check")?;
    let data = ingest(cfg, "diagnose")?;
    let b = &data.b;
    let pop = cfg.population.as_deref().map(io::read_population).transpose()?;
    let n = match (population_size(cfg, &data)?, &pop) {
        (Some(n), Some(p)) if n != p.size() => {
            return Err(Error::InconsistentInputs(format!("population size {n} but the population file has {} units", p.size())).into())
        }
        (n, p) => n.or(p.as_ref().map(|p| p.size())),
    };
    let mut reports: Vec<(String, CheckReport)> = Vec::new();
    let mut stats = Stats::new();
    for check in &checks {
        match check.as_str() {
            "propensity" => {
                let report = match cfg.propensity.unwrap_or(PropensityMode::Constant) {
                    PropensityMode::Constant => {
                        let n = need_n(n, "the propensity check")?;
                        propensity_checks(&vec![b.len() as f64 / n as f64; n], b, n)?
                    }
                    PropensityMode::Cell => {
                        let sizes = need_sizes(&data, "the cell propensity check")?;
                        propensity_checks_cells(&saturated_cells(b, &sizes)?, &sizes, b)?
                    }
                };
                reports.push(("propensity".into(), report));
            }
            "h0" => {
                let r = h0_test(b, need_s(&data, "the h0 test")?, cfg.level()?)?;
                stat(&mut stats, "h0", "statistic", r.statistic);
                stat(&mut stats, "h0", "critical_value", r.critical_value);
                stat(&mut stats, "h0", "reject", flag(r.reject));
                stat(&mut stats, "h0", "ybar_b", r.ybar_b);
                stat(&mut stats, "h0", "complement_mean", r.complement_mean);
                stat(&mut stats, "h0", "complement_variance", r.complement_variance);
            }
            "npa" => {
                let pop = require(&pop, "--population", "the npa diagnostic")?;
                let delta = pop.indicator(b);
                let null = cfg.null()?;
                let r = npa_covariance(&delta, &pop.y)?;
                let band = npa_permutation_band(&delta, &pop.y, &null)?;
                stat(&mut stats, "npa", "cov", r.cov);
                stat(&mut stats, "npa", "band", band);
                stat(&mut stats, "npa", "flagged", flag(r.cov.abs() > band));
                stat(&mut stats, "npa", "mean_delta", r.mean_delta);
                stat(&mut stats, "npa", "sd_delta", r.sd_delta);
                stat(&mut stats, "npa", "sd_y", r.sd_target);
                let means = pop.stratum_means();
                let e: Vec<f64> = pop.y.iter().zip(&pop.x).map(|(y, &c)| y - means[c]).collect();
                for cell in npa_cellwise(&pop.x, pop.num_strata(), &delta, &e, Some(&null))? {
                    let c = cell.cell;
                    stat(&mut stats, "npa", &format!("cell_{c}_cov"), cell.report.cov);
                    stat(&mut stats, "npa", &format!("cell_{c}_band"), cell.band.unwrap_or(f64::NAN));
                    stat(&mut stats, "npa", &format!("cell_{c}_flagged"), flag(cell.flagged));
                    stat(&mut stats, "npa", &format!("cell_{c}_coverage_violation"), flag(cell.coverage_violation));
                }
            }
            "z" => {
                let pop = require(&pop, "--population", "the z checks")?;
                let pz = pop.z.as_deref().ok_or_else(|| Error::Missing("z in the population file".into()))?;
                let sizes = pop.stratum_sizes();
                let z_bar = pop.stratum_average(pz);
                let report = z_checks(b, &z_bar, &sizes, &saturated_cells(b, &sizes)?, cfg.tolerance)?;
                let band = z_check_null_band(pz, &pop.x, &pop.indicator(b), &cfg.null()?)?;
                if let Some(c) = report.get("z_population_total") {
                    stat(&mut stats, "z", "population_total_residual", c.residual);
                    stat(&mut stats, "z", "null_band", band);
                    stat(&mut stats, "z", "beyond_band", flag(c.residual.abs() > band));
                }
                reports.push(("z".into(), report));
            }
            "match" => {
                let s = need_s(&data, "the match diagnostic")?;
                let on = cfg.match_on.unwrap_or(MatchOn::Z);
                let metric = default_metric(on, None, s, b)?;
                let q = match_quality(&nn_match(s, b, on, &metric)?)?;
                stat(&mut stats, "match", "max_distance", q.max);
                stat(&mut stats, "match", "mean_distance", q.mean);
                stat(&mut stats, "match", "p95_distance", q.p95);
                stat(&mut stats, "match", "fraction_exact", q.fraction_exact);
                stat(&mut stats, "match", "size", q.size as f64);
            }
            other => return Err(CliError::Config(format!("unknown check {other}"))),
        }
    }
    Ok(Artifacts {
        files: vec![
            ("report.txt".into(), record::report_text(&reports, &stats)),
            ("checks.csv".into(), record::checks_csv(&reports)),
            ("statistics.csv".into(), record::statistics_csv(&stats)),
        ],
    })
}

fn threads(cfg: &RunConfig) -> usize {
    cfg.threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<(Artifacts, ScenarioConfig), CliError> {
    let sc = cfg.scenario()?;
    let summary = harness::run_scenario(&sc, threads(cfg))?;
    let scenario_json = serde_json::to_string_pretty(&sc).map_err(|e| CliError::Config(e.to_string()))? + "\n";
    Ok((
        Artifacts {
            files: vec![
                ("summary.csv".into(), summary.summary_csv()),
                ("long.csv".into(), summary.long_csv()),
                ("metrics.csv".into(), summary.metrics_csv()),
                ("errors.csv".into(), summary.errors_csv()),
                ("scenario.json".into(), scenario_json),
            ],
        },
        sc,
    ))
}

pub fn cmd_presets(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    match &cfg.preset {
        Some(name) => {
            let sc = presets::preset(name)?;
            let json = serde_json::to_string_pretty(&sc).map_err(|e| CliError::Config(e.to_string()))? + "\n";
            Ok(Artifacts { files: vec![(format!("{name}.json"), json)] })
        }
        None => {
            let mut out = String::from("name,replicates,grid,description\n");
            for name in presets::PRESETS {
                let sc = presets::preset(name)?;
                let grid: Vec<String> = sc.grid().iter().map(usize::to_string).collect();
                out.push_str(&format!("{name},{},{},\"{}\"\n", sc.replicates, grid.join(" "), sc.description));
            }
            Ok(Artifacts { files: vec![("presets.csv".into(), out)] })
        }
    }
}

/// One population of the scenario with one B and, if configured, one S draw.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let sc = cfg.scenario()?;
    let n = cfg.population_size.unwrap_or(sc.grid()[0]);
    let seed = sc.root_seed;
    let pop = generate_population(&sc.dgp_at(n), derive_seed(seed, 0))?;
    let b = draw_b_sample(&pop, derive_seed(seed, 1))?;
    let mut files = vec![
        ("population.csv".into(), io::population_csv(&pop)),
        ("b.csv".into(), io::b_csv(&b)),
        ("margins.csv".into(), io::margins_csv(&pop)),
    ];
    if let Some(s_cfg) = &sc.s_sample {
        let frame = match s_cfg.frame {
            FrameSpec::Full => Frame::Full,
            FrameSpec::ComplementOfB => Frame::ComplementOf(&b),
        };
        let s = harness::draw_s(&pop, &s_cfg.design, frame, derive_seed(seed, 2))?;
        files.push(("s.csv".into(), io::s_csv(&s)));
    }
    Ok(Artifacts { files })
}

/// Writes every artifact plus `manifest.json`; on failure removes whatever
/// was written.
pub fn write_artifacts(out: &Path, command: &str, artifacts: &Artifacts, resolved: &RunConfig) -> Result<(), CliError> {
    let io_err = |context: String| move |source| CliError::Io { context, source };
    let created = !out.exists();
    fs::create_dir_all(out).map_err(io_err(format!("cannot create {}", out.display())))?;
    let listed: Vec<serde_json::Value> = artifacts
        .files
        .iter()
        .map(|(name, body)| serde_json::json!({ "path": name, "bytes": body.len() }))
        .collect();
    let manifest = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "artifacts": listed,
        "config": resolved,
    });
    let manifest = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))? + "\n";
    let mut written: Vec<PathBuf> = Vec::new();
    let all = artifacts.files.iter().map(|(n, b)| (n.as_str(), b.as_str())).chain([("manifest.json", manifest.as_str())]);
    for (name, body) in all {
        let path = out.join(name);
        if let Err(e) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            if created {
                let _ = fs::remove_dir(out);
            }
            return Err(CliError::Io { context: format!("cannot write {}", path.display()), source: e });
        }
        written.push(path);
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(String, Option<String>), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.overlay(cli);
    let command = cli.command.name();
    let artifacts = match cli.command {
        Command::Estimate => cmd_estimate(&cfg)?,
        Command::Diagnose => cmd_diagnose(&cfg)?,
        Command::Simulate => {
            let (a, sc) = cmd_simulate(&cfg)?;
            cfg.scenario = Some(sc);
            cfg.preset = None;
            cfg.seed = None;
            cfg.replicates = None;
            a
        }
        Command::Presets => cmd_presets(&cfg)?,
        Command::Generate => {
            if cli.out.is_none() {
                return Err(CliError::Config("generate writes several files and needs --out".into()));
            }
            cmd_generate(&cfg)?
        }
    };
    match &cli.out {
        Some(out) => {
            write_artifacts(out, command, &artifacts, &cfg)?;
            Ok((String::new(), Some(out.display().to_string())))
        }
        None => Ok((artifacts.files.first().map(|f| f.1.clone()).unwrap_or_default(), None)),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on stderr as one JSON object.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return EXIT_CONFIG;
        }
    };
    match execute(&cli) {
        Ok((stdout, _)) => {
            print!("{stdout}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
