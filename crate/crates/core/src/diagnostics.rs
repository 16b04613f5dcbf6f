//! Empirical checks of the conditions under which the estimators are valid.
//!
//! None of these can confirm validity. The propensity identities in
//! particular hold for the constant fit `p_hat = n_B / N` whatever the
//! selection mechanism, which is why every passing report carries a caveat.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{check_len, Error, Result};
use crate::estimators::MatchAssignment;
use crate::popgen::NonProbSample;
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::quantile;

/// Relative tolerance for the algebraic check identities.
pub const CHECK_TOLERANCE: f64 = 1e-8;

pub const PROPENSITY_CAVEAT: &str = "these identities hold exactly for the constant fit p_hat = n_B/N; \
passing them is not evidence that the propensity model is valid, which cannot be refuted empirically";

pub const Z_CAVEAT: &str = "agreement in z supports non-informative selection for y only insofar as z is correlated with y; \
disagreement in z says nothing about y unless the same holds";

/// Covariance of the inclusion indicator with a target variable on the
/// empirical measure of `U` (point mass `1/N`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpaReport {
    pub cov: f64,
    pub mean_delta: f64,
    pub sd_delta: f64,
    pub sd_target: f64,
    pub size: usize,
}

/// Single-pass co-moment update.
pub fn npa_covariance(delta: &[bool], v: &[f64]) -> Result<NpaReport> {
    check_len(delta.len(), v.len())?;
    if v.is_empty() {
        return Err(Error::Degenerate("empty population".into()));
    }
    let (mut md, mut mv, mut cd, mut m2d, mut m2v) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&d, &y)) in delta.iter().zip(v).enumerate() {
        let d = if d { 1.0 } else { 0.0 };
        let n = (k + 1) as f64;
        let dd = d - md;
        let dv = y - mv;
        md += dd / n;
        mv += dv / n;
        cd += dd * (y - mv);
        m2d += dd * (d - md);
        m2v += dv * (y - mv);
    }
    let n = v.len() as f64;
    Ok(NpaReport {
        cov: cd / n,
        mean_delta: md,
        sd_delta: libm::sqrt((m2d / n).max(0.0)),
        sd_target: libm::sqrt((m2v / n).max(0.0)),
        size: v.len(),
    })
}

/// Permutation null for a covariance: the `1 - level` quantile of `|cov|`
/// after randomly permuting `delta` within each cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationNull {
    pub permutations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for PermutationNull {
    fn default() -> Self {
        PermutationNull { permutations: 999, level: 0.05, seed: 0 }
    }
}

fn permutation_band_in(delta: &[bool], v: &[f64], null: &PermutationNull, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let mut d = delta.to_vec();
    let mut stats = Vec::with_capacity(null.permutations);
    for _ in 0..null.permutations {
        d.shuffle(&mut rng);
        stats.push(libm::fabs(npa_covariance(&d, v)?.cov));
    }
    Ok(quantile(&stats, 1.0 - null.level))
}

/// Null band for `|cov(delta, v)|` over the whole population.
pub fn npa_permutation_band(delta: &[bool], v: &[f64], null: &PermutationNull) -> Result<f64> {
    check_len(delta.len(), v.len())?;
    if null.permutations == 0 || !(null.level > 0.0 && null.level < 1.0) {
        return Err(Error::Config("permutation null needs permutations > 0 and level in (0, 1)".into()));
    }
    permutation_band_in(delta, v, null, null.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellNpa {
    pub cell: usize,
    pub report: NpaReport,
    /// No B-members in the cell.
    pub coverage_violation: bool,
    pub band: Option<f64>,
    /// `|cov|` beyond the permutation band.
    pub flagged: bool,
}

/// Per-cell covariance of `delta` with `e`, optionally against a
/// within-cell permutation null.
pub fn npa_cellwise(
    cells: &[usize],
    num_cells: usize,
    delta: &[bool],
    e: &[f64],
    null: Option<&PermutationNull>,
) -> Result<Vec<CellNpa>> {
    check_len(cells.len(), delta.len())?;
    check_len(cells.len(), e.len())?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_cells];
    for (i, &c) in cells.iter().enumerate() {
        members.get_mut(c).ok_or(Error::UnknownCell(c))?.push(i);
    }
    let mut out = Vec::new();
    for (c, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let d: Vec<bool> = idx.iter().map(|&i| delta[i]).collect();
        let v: Vec<f64> = idx.iter().map(|&i| e[i]).collect();
        let report = npa_covariance(&d, &v)?;
        let band = match null {
            Some(n) => Some(permutation_band_in(&d, &v, n, derive_seed(n.seed, c as u64))?),
            None => None,
        };
        let flagged = band.is_some_and(|b| libm::fabs(report.cov) > b);
        out.push(CellNpa { cell: c, report, coverage_violation: report.mean_delta == 0.0, band, flagged });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub satisfied: bool,
}

impl Check {
    pub fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        Check { name: name.to_string(), residual, tolerance, satisfied: libm::fabs(residual) <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn all_satisfied(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// `r1 = sum_B 1/p_hat - N` and `r2 = sum_U p_hat - n_B` for unit-level
/// propensities on all of `U` (indexed by unit id).
pub fn propensity_checks(p_hat: &[f64], b: &NonProbSample, population_size: usize) -> Result<CheckReport> {
    check_len(population_size, p_hat.len())?;
    let mut inv = 0.0;
    for &u in &b.members {
        let p = *p_hat.get(u).ok_or(Error::UnknownCell(u))?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidProbability { unit: u, value: p });
        }
        inv += 1.0 / p;
    }
    let n = population_size as f64;
    let nb = b.len() as f64;
    let r1 = inv - n;
    let r2 = p_hat.iter().sum::<f64>() - nb;
    Ok(propensity_report(r1, r2, n, nb))
}

/// As [`propensity_checks`] with one propensity per cell and the cell sizes
/// `N_x`.
pub fn propensity_checks_cells(p_hat: &[f64], stratum_sizes: &[usize], b: &NonProbSample) -> Result<CheckReport> {
    check_len(stratum_sizes.len(), p_hat.len())?;
    let mut inv = 0.0;
    for &c in &b.x {
        let p = *p_hat.get(c).ok_or(Error::UnknownCell(c))?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidPropensity { cell: c, value: p });
        }
        inv += 1.0 / p;
    }
    let n: f64 = stratum_sizes.iter().map(|&v| v as f64).sum();
    let nb = b.len() as f64;
    let r1 = inv - n;
    let r2 = p_hat.iter().zip(stratum_sizes).map(|(p, &s)| p * s as f64).sum::<f64>() - nb;
    Ok(propensity_report(r1, r2, n, nb))
}

fn propensity_report(r1: f64, r2: f64, n: f64, nb: f64) -> CheckReport {
    let checks = vec![
        Check::new("inverse_propensity_sum", r1, CHECK_TOLERANCE * n),
        Check::new("propensity_sum", r2, CHECK_TOLERANCE * nb),
    ];
    let mut notes = Vec::new();
    if checks.iter().any(|c| c.satisfied) {
        notes.push(PROPENSITY_CAVEAT.to_string());
    }
    CheckReport { checks, notes }
}

/// The two observable `z` identities for cell propensities `p_hat_x`:
/// `z_B = sum_x p_hat_x N_x Zbar_x` and `Z = sum_x n_xB zbar_xB / p_hat_x`,
/// together with a per-cell comparison of `Zbar_x` and `zbar_xB`.
/// `tolerance` is relative to the scale of each side; defaults to
/// [`CHECK_TOLERANCE`].
pub fn z_checks(
    b: &NonProbSample,
    z_bar: &[f64],
    stratum_sizes: &[usize],
    p_hat: &[f64],
    tolerance: Option<f64>,
) -> Result<CheckReport> {
    let k = stratum_sizes.len();
    if z_bar.len() != k {
        return Err(Error::Missing(format!("population z means for {k} cells, got {}", z_bar.len())));
    }
    check_len(k, p_hat.len())?;
    let z = b.z.as_deref().ok_or_else(|| Error::Missing("z on B".into()))?;
    let tol = tolerance.unwrap_or(CHECK_TOLERANCE);
    let mut nb = vec![0usize; k];
    let mut zb = vec![0.0; k];
    for (&c, &v) in b.x.iter().zip(z) {
        if c >= k {
            return Err(Error::UnknownCell(c));
        }
        nb[c] += 1;
        zb[c] += v;
    }
    let z_b: f64 = zb.iter().sum();
    let mut expected_zb = 0.0;
    let mut z_hat = 0.0;
    let mut z_total = 0.0;
    let mut checks = Vec::new();
    for c in 0..k {
        let nx = stratum_sizes[c] as f64;
        z_total += nx * z_bar[c];
        expected_zb += p_hat[c] * nx * z_bar[c];
        if nb[c] > 0 {
            if !(p_hat[c] > 0.0) {
                return Err(Error::InvalidPropensity { cell: c, value: p_hat[c] });
            }
            z_hat += zb[c] / p_hat[c];
        }
    }
    let scale1 = libm::fabs(z_b).max(libm::fabs(expected_zb)).max(1.0);
    let scale2 = libm::fabs(z_total).max(1.0);
    checks.push(Check::new("z_sample_total", z_b - expected_zb, tol * scale1));
    checks.push(Check::new("z_population_total", z_total - z_hat, tol * scale2));
    for c in 0..k {
        if nb[c] > 0 {
            let diff = z_bar[c] - zb[c] / nb[c] as f64;
            checks.push(Check::new(&format!("z_mean_cell_{c}"), diff, tol * libm::fabs(z_bar[c]).max(1.0)));
        }
    }
    let mut notes = vec![Z_CAVEAT.to_string()];
    if checks.iter().take(2).any(|c| c.satisfied) {
        notes.push(PROPENSITY_CAVEAT.to_string());
    }
    Ok(CheckReport { checks, notes })
}

/// Null band for the `z_population_total` residual with saturated
/// `p_hat_x = n_xB / N_x`: B is redrawn by permuting membership within each
/// cell, keeping every `n_xB`.
pub fn z_check_null_band(pop_z: &[f64], pop_x: &[usize], delta: &[bool], null: &PermutationNull) -> Result<f64> {
    check_len(pop_z.len(), pop_x.len())?;
    check_len(pop_z.len(), delta.len())?;
    let k = pop_x.iter().max().map_or(0, |v| v + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in pop_x.iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = rng_from_seed(null.seed);
    let mut stats = Vec::with_capacity(null.permutations);
    let z_total: f64 = pop_z.iter().sum();
    let mut cells: Vec<Vec<bool>> = members.iter().map(|m| m.iter().map(|&i| delta[i]).collect()).collect();
    for _ in 0..null.permutations {
        let mut z_hat = 0.0;
        for (m, d) in members.iter().zip(cells.iter_mut()) {
            d.shuffle(&mut rng);
            let nb = d.iter().filter(|&&v| v).count();
            if nb == 0 {
                continue;
            }
            let s: f64 = m.iter().zip(d.iter()).filter(|(_, &v)| v).map(|(&i, _)| pop_z[i]).sum();
            z_hat += s * m.len() as f64 / nb as f64;
        }
        stats.push(libm::fabs(z_total - z_hat));
    }
    Ok(quantile(&stats, 1.0 - null.level))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchQuality {
    pub max: f64,
    pub mean: f64,
    pub p95: f64,
    pub fraction_exact: f64,
    pub size: usize,
}

pub fn match_quality(m: &MatchAssignment) -> Result<MatchQuality> {
    let d = &m.distances;
    if d.is_empty() {
        return Err(Error::Degenerate("empty match assignment".into()));
    }
    let n = d.len() as f64;
    Ok(MatchQuality {
        max: d.iter().copied().fold(0.0, f64::max),
        mean: d.iter().sum::<f64>() / n,
        p95: quantile(d, 0.95),
        fraction_exact: d.iter().filter(|&&v| v == 0.0).count() as f64 / n,
        size: d.len(),
    })
}
