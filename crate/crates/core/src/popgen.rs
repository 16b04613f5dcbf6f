//! Synthetic finite populations and the two sampling mechanisms drawn from
//! them: Bernoulli selection of the non-probability sample B and designed
//! selection of the probability sample S.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::{logistic, logit};

/// Maximum number of Bernoulli redraws before an empty B-sample is an error.
pub const MAX_B_DRAW_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    /// Uniform on `[-scale*sqrt(3), scale*sqrt(3)]`, i.e. standard deviation `scale`.
    Uniform,
}

/// Auxiliary numeric covariate `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSpec {
    #[default]
    None,
    /// `z ~ Unif(0, 1)` independently of the stratum.
    Uniform,
    /// Stratum `k` of `K` covers `[k/K, (k+1)/K)`; `z` is an evenly spaced
    /// grid inside that interval, so the stratum mean of `z` is the midpoint.
    StratumGrid,
}

/// How the two-point perturbation is assigned inside a stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// A random half of the stratum goes up, the other half down.
    #[default]
    Random,
    /// Units with the larger outcomes go up.
    ByOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnderCoverageRule {
    #[default]
    LargestY,
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct UnderCoverage {
    /// Share of all units forced to `p_true = 0`.
    pub fraction: f64,
    /// Strata the uncovered units are taken from; all strata when `None`.
    #[serde(default)]
    pub strata: Option<Vec<usize>>,
    #[serde(default)]
    pub rule: UnderCoverageRule,
}

/// Data-generating process for one synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub size: usize,
    pub proportions: Vec<f64>,
    /// Conditional mean per stratum, `mu(x)`.
    pub stratum_means: Vec<f64>,
    /// Two-point `+-h` perturbation of unit means inside each stratum.
    #[serde(default)]
    pub mean_heterogeneity: f64,
    #[serde(default)]
    pub covariate: CovariateSpec,
    /// Slope of the unit mean on `z`, centred within each stratum.
    #[serde(default)]
    pub covariate_slope: f64,
    pub noise_scale: f64,
    #[serde(default)]
    pub noise_family: NoiseFamily,
    /// B-inclusion propensity per stratum, `p(x)`.
    pub propensities: Vec<f64>,
    /// Relative two-point perturbation: `p_i = p(x) * (1 +- h)`.
    #[serde(default)]
    pub propensity_heterogeneity: f64,
    #[serde(default)]
    pub propensity_pairing: Pairing,
    /// Shift of the propensity on the logit scale per standardised residual
    /// `(y - mu_i) / noise_scale`. Zero switches informativeness off.
    #[serde(default)]
    pub informativeness: f64,
    #[serde(default)]
    pub under_coverage: UnderCoverage,
}

impl DgpSpec {
    pub fn new(
        size: usize,
        proportions: Vec<f64>,
        stratum_means: Vec<f64>,
        propensities: Vec<f64>,
        noise_scale: f64,
    ) -> Self {
        DgpSpec {
            size,
            proportions,
            stratum_means,
            mean_heterogeneity: 0.0,
            covariate: CovariateSpec::None,
            covariate_slope: 0.0,
            noise_scale,
            noise_family: NoiseFamily::Gaussian,
            propensities,
            propensity_heterogeneity: 0.0,
            propensity_pairing: Pairing::Random,
            informativeness: 0.0,
            under_coverage: UnderCoverage::default(),
        }
    }

    pub fn num_strata(&self) -> usize {
        self.proportions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.proportions.len();
        if self.size == 0 {
            return Err(Error::Config("population size must be at least 1".into()));
        }
        if k == 0 {
            return Err(Error::Config("at least one stratum is required".into()));
        }
        if self.stratum_means.len() != k || self.propensities.len() != k {
            return Err(Error::Config(format!(
                "{k} proportions but {} means and {} propensities",
                self.stratum_means.len(),
                self.propensities.len()
            )));
        }
        if self.proportions.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config("proportions must be non-negative".into()));
        }
        let total: f64 = self.proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("proportions sum to {total}, not 1")));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config(format!("noise scale {} must be >= 0", self.noise_scale)));
        }
        if !(self.mean_heterogeneity >= 0.0) {
            return Err(Error::Config("mean heterogeneity must be >= 0".into()));
        }
        if self.stratum_means.iter().any(|m| !m.is_finite()) || !self.covariate_slope.is_finite() {
            return Err(Error::Config("means must be finite".into()));
        }
        let h = self.propensity_heterogeneity;
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::Config(format!("propensity heterogeneity {h} outside [0, 1]")));
        }
        for (x, &p) in self.propensities.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("propensity {p} of stratum {x} outside [0, 1]")));
            }
            if p * (1.0 + h) > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "stratum {x}: p(x) * (1 + h) = {} exceeds 1",
                    p * (1.0 + h)
                )));
            }
        }
        if !self.informativeness.is_finite() {
            return Err(Error::Config("informativeness must be finite".into()));
        }
        let uc = &self.under_coverage;
        if !(0.0..1.0).contains(&uc.fraction) {
            return Err(Error::Config(format!("under-coverage fraction {} outside [0, 1)", uc.fraction)));
        }
        if let Some(strata) = &uc.strata {
            if let Some(&bad) = strata.iter().find(|&&s| s >= k) {
                return Err(Error::Config(format!("under-coverage stratum {bad} does not exist")));
            }
        }
        Ok(())
    }

    /// Integer stratum sizes by largest remainder; ties go to the lower label.
    pub fn allocation(&self) -> Result<Vec<usize>> {
        let n = self.size as f64;
        let mut sizes: Vec<usize> = self
            .proportions
            .iter()
            .map(|p| libm::floor(p * n) as usize)
            .collect();
        let assigned: usize = sizes.iter().sum();
        let mut order: Vec<(usize, f64)> = self
            .proportions
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p * n - libm::floor(p * n)))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(i, _) in order.iter().take(self.size.saturating_sub(assigned)) {
            sizes[i] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!(
                "stratum {empty} receives no units at N = {}",
                self.size
            )));
        }
        Ok(sizes)
    }
}

/// A finite population `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub y: Vec<f64>,
    /// Post-stratum label per unit, dense in `0..num_strata`.
    pub x: Vec<usize>,
    pub z: Option<Vec<f64>>,
    /// B-inclusion propensity per unit (simulation oracle).
    pub p_true: Vec<f64>,
    /// Unit-level conditional means.
    pub mu: Option<Vec<f64>>,
}

impl Population {
    pub fn new(
        y: Vec<f64>,
        x: Vec<usize>,
        z: Option<Vec<f64>>,
        p_true: Vec<f64>,
        mu: Option<Vec<f64>>,
    ) -> Result<Self> {
        let pop = Population { y, x, z, p_true, mu };
        pop.validate()?;
        Ok(pop)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::InconsistentInputs("population is empty".into()));
        }
        check_len(n, self.x.len())?;
        check_len(n, self.p_true.len())?;
        if let Some(z) = &self.z {
            check_len(n, z.len())?;
        }
        if let Some(mu) = &self.mu {
            check_len(n, mu.len())?;
        }
        for (i, &p) in self.p_true.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbability { unit: i, value: p });
            }
        }
        let sizes = self.stratum_sizes();
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InconsistentInputs(format!("post-stratum {empty} has no units")));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn num_strata(&self) -> usize {
        self.x.iter().max().map_or(0, |m| m + 1)
    }

    pub fn stratum_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_strata()];
        for &c in &self.x {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn total(&self) -> f64 {
        self.y.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.size() as f64
    }

    /// Mean of `y` within each post-stratum.
    pub fn stratum_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_strata()];
        for (&c, &y) in self.x.iter().zip(&self.y) {
            sums[c] += y;
        }
        sums.iter()
            .zip(self.stratum_sizes())
            .map(|(s, n)| s / n as f64)
            .collect()
    }

    /// Mean of an arbitrary per-unit column within each post-stratum.
    pub fn stratum_average(&self, column: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_strata()];
        for (&c, &v) in self.x.iter().zip(column) {
            sums[c] += v;
        }
        sums.iter()
            .zip(self.stratum_sizes())
            .map(|(s, n)| s / n as f64)
            .collect()
    }

    /// Unit indices of each post-stratum, ascending.
    pub fn strata_members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_strata()];
        for (i, &c) in self.x.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }

    /// B-membership indicator over `U`.
    pub fn indicator(&self, b: &NonProbSample) -> Vec<bool> {
        let mut delta = vec![false; self.size()];
        for &i in &b.members {
            delta[i] = true;
        }
        delta
    }

    pub fn sample(&self, members: Vec<usize>) -> Result<NonProbSample> {
        for &i in &members {
            if i >= self.size() {
                return Err(Error::InconsistentInputs(format!("unit {i} outside population")));
            }
        }
        let y = members.iter().map(|&i| self.y[i]).collect();
        let x = members.iter().map(|&i| self.x[i]).collect();
        let z = self.z.as_ref().map(|z| members.iter().map(|&i| z[i]).collect());
        NonProbSample::new(members, y, x, z)
    }
}

fn two_point(amplitude: f64, order: &[usize], out: &mut [f64]) {
    let half = order.len() / 2;
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < half {
            amplitude
        } else if rank < 2 * half {
            -amplitude
        } else {
            0.0
        };
    }
}

/// Generates a population from `spec`; identical `(spec, seed)` give
/// bit-identical output.
pub fn generate_population(spec: &DgpSpec, seed: u64) -> Result<Population> {
    spec.validate()?;
    let sizes = spec.allocation()?;
    let n = spec.size;
    let k = sizes.len();
    let mut x = Vec::with_capacity(n);
    for (c, &s) in sizes.iter().enumerate() {
        x.extend(core::iter::repeat(c).take(s));
    }
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut start = 0;
    for &s in &sizes {
        groups.push((start..start + s).collect());
        start += s;
    }

    let z = match spec.covariate {
        CovariateSpec::None => None,
        CovariateSpec::Uniform => {
            let mut rng = rng_from_seed(derive_seed(seed, 1));
            Some((0..n).map(|_| rng.random::<f64>()).collect::<Vec<f64>>())
        }
        CovariateSpec::StratumGrid => {
            let mut z = vec![0.0; n];
            for (c, g) in groups.iter().enumerate() {
                let m = g.len() as f64;
                for (j, &i) in g.iter().enumerate() {
                    z[i] = (c as f64 + (j as f64 + 0.5) / m) / k as f64;
                }
            }
            Some(z)
        }
    };

    let mut mu: Vec<f64> = x.iter().map(|&c| spec.stratum_means[c]).collect();
    if let (Some(z), true) = (&z, spec.covariate_slope != 0.0) {
        for g in &groups {
            let zbar = g.iter().map(|&i| z[i]).sum::<f64>() / g.len() as f64;
            for &i in g {
                mu[i] += spec.covariate_slope * (z[i] - zbar);
            }
        }
    }
    if spec.mean_heterogeneity > 0.0 {
        let mut rng = rng_from_seed(derive_seed(seed, 2));
        let mut shift = vec![0.0; n];
        for g in &groups {
            let mut order = g.clone();
            order.shuffle(&mut rng);
            two_point(spec.mean_heterogeneity, &order, &mut shift);
        }
        for (m, s) in mu.iter_mut().zip(&shift) {
            *m += s;
        }
    }

    let mut rng = rng_from_seed(derive_seed(seed, 3));
    let y: Vec<f64> = mu
        .iter()
        .map(|m| {
            let e = match spec.noise_family {
                NoiseFamily::Gaussian => rng.sample::<f64, _>(StandardNormal),
                NoiseFamily::Uniform => (2.0 * rng.random::<f64>() - 1.0) * libm::sqrt(3.0),
            };
            m + spec.noise_scale * e
        })
        .collect();

    let mut p_true: Vec<f64> = x.iter().map(|&c| spec.propensities[c]).collect();
    if spec.propensity_heterogeneity > 0.0 {
        let mut rng = rng_from_seed(derive_seed(seed, 4));
        let mut rel = vec![0.0; n];
        for g in &groups {
            let mut order = g.clone();
            match spec.propensity_pairing {
                Pairing::Random => order.shuffle(&mut rng),
                Pairing::ByOutcome => order.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b))),
            }
            two_point(spec.propensity_heterogeneity, &order, &mut rel);
        }
        for (p, r) in p_true.iter_mut().zip(&rel) {
            *p *= 1.0 + r;
        }
    }
    if spec.informativeness != 0.0 {
        let s = if spec.noise_scale > 0.0 { spec.noise_scale } else { 1.0 };
        for i in 0..n {
            let p = p_true[i];
            if p > 0.0 && p < 1.0 {
                p_true[i] = logistic(logit(p) + spec.informativeness * (y[i] - mu[i]) / s);
            }
        }
    }
    let uc = &spec.under_coverage;
    if uc.fraction > 0.0 {
        let count = libm::round(uc.fraction * n as f64) as usize;
        let mut candidates: Vec<usize> = match &uc.strata {
            Some(strata) => strata.iter().flat_map(|&s| groups[s].iter().copied()).collect(),
            None => (0..n).collect(),
        };
        if count > candidates.len() {
            return Err(Error::Config(format!(
                "{count} uncovered units requested but only {} candidates",
                candidates.len()
            )));
        }
        match uc.rule {
            UnderCoverageRule::LargestY => {
                candidates.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
            }
            UnderCoverageRule::UniformRandom => {
                let mut rng = rng_from_seed(derive_seed(seed, 5));
                candidates.shuffle(&mut rng);
            }
        }
        for &i in candidates.iter().take(count) {
            p_true[i] = 0.0;
        }
    }
    for p in p_true.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }

    Population::new(y, x, z, p_true, Some(mu))
}

/// The observed non-probability sample `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonProbSample {
    /// Unit indices, strictly increasing.
    pub members: Vec<usize>,
    pub y: Vec<f64>,
    pub x: Vec<usize>,
    pub z: Option<Vec<f64>>,
}

impl NonProbSample {
    pub fn new(members: Vec<usize>, y: Vec<f64>, x: Vec<usize>, z: Option<Vec<f64>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::ImpossibleSample("B-sample has no members".into()));
        }
        check_len(members.len(), y.len())?;
        check_len(members.len(), x.len())?;
        if let Some(z) = &z {
            check_len(members.len(), z.len())?;
        }
        if let Some(w) = members.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InconsistentInputs(format!(
                "B members must be strictly increasing (unit {} after {})",
                w[1], w[0]
            )));
        }
        Ok(NonProbSample { members, y, x, z })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.members.binary_search(&unit).is_ok()
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.len() as f64
    }

    /// `n_xB` per label; labels beyond `num_cells` are an error.
    pub fn cell_counts(&self, num_cells: usize) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; num_cells];
        for &c in &self.x {
            *counts.get_mut(c).ok_or(Error::UnknownCell(c))? += 1;
        }
        Ok(counts)
    }
}

/// Draws `B` by independent Bernoulli selection with `p_true`. An empty draw
/// is discarded and redrawn from the next derived seed.
pub fn draw_b_sample(pop: &Population, seed: u64) -> Result<NonProbSample> {
    if pop.p_true.iter().all(|&p| p <= 0.0) {
        return Err(Error::ImpossibleSample("every unit has p_true = 0".into()));
    }
    for attempt in 0..MAX_B_DRAW_ATTEMPTS {
        let s = if attempt == 0 { seed } else { derive_seed(seed, attempt) };
        let mut rng = rng_from_seed(s);
        let members: Vec<usize> = pop
            .p_true
            .iter()
            .enumerate()
            .filter(|(_, &p)| rng.random::<f64>() < p)
            .map(|(i, _)| i)
            .collect();
        if !members.is_empty() {
            if attempt > 0 {
                log::info!("B-sample redrawn {attempt} time(s) after empty draws");
            }
            return pop.sample(members);
        }
        log::debug!("empty B-sample draw on attempt {attempt}");
    }
    Err(Error::ImpossibleSample(format!(
        "{MAX_B_DRAW_ATTEMPTS} consecutive empty B-sample draws"
    )))
}

/// Probability sampling design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Srs { n: usize },
    /// Stratified SRS by post-stratum with `n_h = round(f_h * N_h)`.
    StratifiedSrs { fractions: Vec<f64> },
    StratifiedSizes { sizes: Vec<usize> },
    /// Independent inclusion with a rate per post-stratum.
    Poisson { rates: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Srs,
    StratifiedSrs,
    Poisson,
}

/// What the variance estimators need to know about a realised design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignInfo {
    pub kind: DesignKind,
    /// Frame size per design stratum (a single entry for SRS and Poisson).
    pub frame_sizes: Vec<usize>,
    pub sample_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub enum Frame<'a> {
    Full,
    /// `U \ B`.
    ComplementOf(&'a NonProbSample),
}

/// The probability sample `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSample {
    pub members: Vec<usize>,
    pub pi: Vec<f64>,
    pub d: Vec<f64>,
    /// Design stratum per member (0 for unstratified designs).
    pub design_strata: Vec<usize>,
    pub x: Vec<usize>,
    pub z: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub design: DesignInfo,
}

impl ProbSample {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        members: Vec<usize>,
        pi: Vec<f64>,
        design_strata: Vec<usize>,
        x: Vec<usize>,
        z: Option<Vec<f64>>,
        y: Option<Vec<f64>>,
        design: DesignInfo,
    ) -> Result<Self> {
        let n = members.len();
        check_len(n, pi.len())?;
        check_len(n, design_strata.len())?;
        check_len(n, x.len())?;
        if let Some(z) = &z {
            check_len(n, z.len())?;
        }
        if let Some(y) = &y {
            check_len(n, y.len())?;
        }
        if let Some(w) = members.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InconsistentInputs(format!(
                "S members must be strictly increasing (unit {} after {})",
                w[1], w[0]
            )));
        }
        for (&u, &p) in members.iter().zip(&pi) {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidProbability { unit: u, value: p });
            }
        }
        let d = pi.iter().map(|p| 1.0 / p).collect();
        Ok(ProbSample { members, pi, d, design_strata, x, z, y, design })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// The sample with the outcome column removed.
    pub fn without_outcome(mut self) -> Self {
        self.y = None;
        self
    }

    pub fn outcome(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::Missing("outcome y is not observed on S".into()))
    }

    /// First unit present in both samples, if any.
    pub fn first_overlap(&self, b: &NonProbSample) -> Option<usize> {
        let (mut i, mut j) = (0, 0);
        while i < self.members.len() && j < b.members.len() {
            match self.members[i].cmp(&b.members[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => return Some(self.members[i]),
            }
        }
        None
    }
}

fn frame_units(pop: &Population, frame: Frame<'_>) -> Vec<usize> {
    match frame {
        Frame::Full => (0..pop.size()).collect(),
        Frame::ComplementOf(b) => {
            let mut out = Vec::with_capacity(pop.size().saturating_sub(b.len()));
            let mut j = 0;
            for i in 0..pop.size() {
                if j < b.members.len() && b.members[j] == i {
                    j += 1;
                } else {
                    out.push(i);
                }
            }
            out
        }
    }
}

fn check_rate(r: f64, what: &str) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::Design(format!("{what} {r} outside (0, 1]")))
    }
}

/// Draws `S` from the requested frame under `design`.
pub fn draw_s_sample(pop: &Population, design: &Design, frame: Frame<'_>, seed: u64) -> Result<ProbSample> {
    let units = frame_units(pop, frame);
    let mut rng = rng_from_seed(seed);
    let k = pop.num_strata();
    let mut chosen: Vec<(usize, f64, usize)> = Vec::new();
    let info = match design {
        Design::Srs { n } => {
            let nf = units.len();
            if *n > nf {
                return Err(Error::Design(format!("SRS size {n} exceeds frame size {nf}")));
            }
            let pi = if nf == 0 { 1.0 } else { *n as f64 / nf as f64 };
            for i in index::sample(&mut rng, nf, *n).into_iter() {
                chosen.push((units[i], pi, 0));
            }
            DesignInfo { kind: DesignKind::Srs, frame_sizes: vec![nf], sample_sizes: vec![*n] }
        }
        Design::StratifiedSrs { .. } | Design::StratifiedSizes { .. } => {
            let mut by_stratum: Vec<Vec<usize>> = vec![Vec::new(); k];
            for &u in &units {
                by_stratum[pop.x[u]].push(u);
            }
            let sizes: Vec<usize> = match design {
                Design::StratifiedSrs { fractions } => {
                    if fractions.len() != k {
                        return Err(Error::Design(format!("{} fractions for {k} strata", fractions.len())));
                    }
                    for &f in fractions {
                        if !(0.0..=1.0).contains(&f) {
                            return Err(Error::Design(format!("sampling fraction {f} outside [0, 1]")));
                        }
                    }
                    fractions
                        .iter()
                        .zip(&by_stratum)
                        .map(|(f, g)| libm::round(f * g.len() as f64) as usize)
                        .collect()
                }
                Design::StratifiedSizes { sizes } => {
                    if sizes.len() != k {
                        return Err(Error::Design(format!("{} sizes for {k} strata", sizes.len())));
                    }
                    sizes.clone()
                }
                _ => unreachable!(),
            };
            for (h, (g, &nh)) in by_stratum.iter().zip(&sizes).enumerate() {
                if nh > g.len() {
                    return Err(Error::Design(format!(
                        "stratum {h}: sample size {nh} exceeds frame size {}",
                        g.len()
                    )));
                }
                if nh == 0 {
                    continue;
                }
                let pi = nh as f64 / g.len() as f64;
                for i in index::sample(&mut rng, g.len(), nh).into_iter() {
                    chosen.push((g[i], pi, h));
                }
            }
            DesignInfo {
                kind: DesignKind::StratifiedSrs,
                frame_sizes: by_stratum.iter().map(Vec::len).collect(),
                sample_sizes: sizes,
            }
        }
        Design::Poisson { rates } => {
            if rates.len() != k {
                return Err(Error::Design(format!("{} rates for {k} strata", rates.len())));
            }
            for &r in rates {
                check_rate(r, "Poisson rate")?;
            }
            for &u in &units {
                let r = rates[pop.x[u]];
                if rng.random::<f64>() < r {
                    chosen.push((u, r, 0));
                }
            }
            DesignInfo {
                kind: DesignKind::Poisson,
                frame_sizes: vec![units.len()],
                sample_sizes: vec![chosen.len()],
            }
        }
    };
    chosen.sort_by_key(|c| c.0);
    let members: Vec<usize> = chosen.iter().map(|c| c.0).collect();
    let pi = chosen.iter().map(|c| c.1).collect();
    let strata = chosen.iter().map(|c| c.2).collect();
    let x = members.iter().map(|&i| pop.x[i]).collect();
    let z = pop.z.as_ref().map(|z| members.iter().map(|&i| z[i]).collect());
    let y = Some(members.iter().map(|&i| pop.y[i]).collect());
    ProbSample::new(members, pi, strata, x, z, y, info)
}

/// Human-readable label for reports.
pub fn design_label(kind: DesignKind) -> String {
    match kind {
        DesignKind::Srs => "srs".into(),
        DesignKind::StratifiedSrs => "stratified_srs".into(),
        DesignKind::Poisson => "poisson".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize, p: f64) -> DgpSpec {
        DgpSpec::new(n, vec![0.5, 0.5], vec![1.0, 2.0], vec![p, p], 1.0)
    }

    #[test]
    fn zero_amplitude_gives_cell_values() {
        let spec = DgpSpec::new(101, vec![0.3, 0.7], vec![1.0, 5.0], vec![0.2, 0.6], 0.0);
        let pop = generate_population(&spec, 3).unwrap();
        let mu = pop.mu.as_ref().unwrap();
        for i in 0..pop.size() {
            assert_eq!(pop.p_true[i], spec.propensities[pop.x[i]]);
            assert_eq!(mu[i], spec.stratum_means[pop.x[i]]);
        }
    }

    #[test]
    fn under_coverage_count_is_exact() {
        let mut spec = flat(1000, 0.4);
        spec.under_coverage.fraction = 0.2;
        let pop = generate_population(&spec, 11).unwrap();
        assert_eq!(pop.p_true.iter().filter(|&&p| p == 0.0).count(), 200);
    }

    #[test]
    fn largest_y_rule_removes_top_outcomes() {
        let mut spec = flat(400, 0.4);
        spec.under_coverage = UnderCoverage { fraction: 0.1, strata: Some(vec![1]), rule: UnderCoverageRule::LargestY };
        let pop = generate_population(&spec, 5).unwrap();
        let uncovered_min = (0..400).filter(|&i| pop.p_true[i] == 0.0).map(|i| pop.y[i]).fold(f64::INFINITY, f64::min);
        let covered_max = (0..400)
            .filter(|&i| pop.p_true[i] > 0.0 && pop.x[i] == 1)
            .map(|i| pop.y[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(uncovered_min >= covered_max);
        assert!((0..400).all(|i| pop.p_true[i] > 0.0 || pop.x[i] == 1));
    }

    #[test]
    fn invalid_specs_are_configuration_errors() {
        let mut spec = flat(10, 0.5);
        spec.proportions = vec![0.5, 0.6];
        assert!(matches!(generate_population(&spec, 0), Err(Error::Config(_))));
        let mut spec = flat(10, 0.5);
        spec.noise_scale = -1.0;
        assert!(matches!(generate_population(&spec, 0), Err(Error::Config(_))));
        let mut spec = flat(10, 0.5);
        spec.under_coverage.fraction = 1.0;
        assert!(matches!(generate_population(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn heterogeneity_is_mean_preserving() {
        let mut spec = DgpSpec::new(999, vec![0.2, 0.3, 0.5], vec![1.0, -2.0, 3.0], vec![0.2, 0.4, 0.5], 1.0);
        spec.mean_heterogeneity = 0.7;
        spec.propensity_heterogeneity = 0.5;
        spec.propensity_pairing = Pairing::ByOutcome;
        spec.covariate = CovariateSpec::Uniform;
        spec.covariate_slope = 2.0;
        let pop = generate_population(&spec, 9).unwrap();
        let pbar = pop.stratum_average(&pop.p_true);
        let mubar = pop.stratum_average(pop.mu.as_ref().unwrap());
        for c in 0..3 {
            assert!((pbar[c] - spec.propensities[c]).abs() < 1e-12);
            assert!((mubar[c] - spec.stratum_means[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn certainty_and_zero_inclusion() {
        let pop = generate_population(&flat(50, 1.0), 1).unwrap();
        let b = draw_b_sample(&pop, 2).unwrap();
        assert_eq!(b.members, (0..50).collect::<Vec<_>>());
        let pop = generate_population(&flat(50, 0.0), 1).unwrap();
        assert!(matches!(draw_b_sample(&pop, 2), Err(Error::ImpossibleSample(_))));
    }

    #[test]
    fn empty_draws_are_redrawn() {
        let mut pop = generate_population(&flat(20, 0.0), 1).unwrap();
        pop.p_true[7] = 0.05;
        let b = draw_b_sample(&pop, 4).unwrap();
        assert_eq!(b.members, vec![7]);
    }

    #[test]
    fn stratified_design_arithmetic() {
        let spec = DgpSpec::new(1100, vec![100.0 / 1100.0, 1000.0 / 1100.0], vec![0.0, 1.0], vec![0.5, 0.5], 1.0);
        let pop = generate_population(&spec, 1).unwrap();
        assert_eq!(pop.stratum_sizes(), vec![100, 1000]);
        let s = draw_s_sample(&pop, &Design::StratifiedSrs { fractions: vec![0.5, 0.1] }, Frame::Full, 3).unwrap();
        let n0 = s.x.iter().filter(|&&c| c == 0).count();
        assert_eq!((n0, s.len() - n0), (50, 100));
        for (c, p) in s.x.iter().zip(&s.pi) {
            assert_eq!(*p, if *c == 0 { 0.5 } else { 0.1 });
        }
        let err = draw_s_sample(&pop, &Design::StratifiedSizes { sizes: vec![101, 1] }, Frame::Full, 3);
        assert!(matches!(err, Err(Error::Design(_))));
    }

    #[test]
    fn census_of_frame_and_complement_restriction() {
        let pop = generate_population(&flat(200, 0.3), 1).unwrap();
        let b = draw_b_sample(&pop, 2).unwrap();
        let nf = 200 - b.len();
        let s = draw_s_sample(&pop, &Design::Srs { n: nf }, Frame::ComplementOf(&b), 5).unwrap();
        assert!(s.pi.iter().all(|&p| p == 1.0));
        assert_eq!(s.len(), nf);
        assert!(s.first_overlap(&b).is_none());
    }
}
