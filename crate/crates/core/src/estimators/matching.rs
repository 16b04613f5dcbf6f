//! Nearest-neighbour sample matching and the two-phase variant with support
//! screening.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::calibration::least_distance_weights;
use super::{Estimate, Target};
use crate::error::{check_len, Error, Result};
use crate::popgen::{NonProbSample, ProbSample};
use crate::stats::{quantile, sample_variance};

/// Per-coordinate contribution to the matching distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    /// `((a - b) / scale)^2`.
    Numeric { scale: f64 },
    /// 0 when equal, infinite otherwise.
    Categorical,
}

/// Row-major matrix of matching covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    dim: usize,
    data: Vec<f64>,
}

impl Covariates {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InconsistentInputs(format!(
                "{} covariate values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Covariates { dim, data })
    }

    pub fn from_column(v: &[f64]) -> Self {
        Covariates { dim: 1, data: v.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Which observed columns are matched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOn {
    /// The numeric auxiliary `z`.
    Z,
    /// The cell label `x`, exact matching only.
    X,
    /// Exact on `x`, nearest on `z` within the cell.
    XAndZ,
}

impl MatchOn {
    fn extract(self, x: &[usize], z: Option<&[f64]>) -> Result<Covariates> {
        let need_z = || z.ok_or_else(|| Error::Missing("z is required for matching".into()));
        Ok(match self {
            MatchOn::Z => Covariates::from_column(need_z()?),
            MatchOn::X => Covariates { dim: 1, data: x.iter().map(|&c| c as f64).collect() },
            MatchOn::XAndZ => {
                let z = need_z()?;
                check_len(x.len(), z.len())?;
                let data = x.iter().zip(z).flat_map(|(&c, &v)| [c as f64, v]).collect();
                Covariates { dim: 2, data }
            }
        })
    }

    pub fn of_b(self, b: &NonProbSample) -> Result<Covariates> {
        self.extract(&b.x, b.z.as_deref())
    }

    pub fn of_s(self, s: &ProbSample) -> Result<Covariates> {
        self.extract(&s.x, s.z.as_deref())
    }
}

/// Default metric: numeric coordinates standardised by `population_sd` when
/// given, else by the pooled-sample SD, else left unscaled.
pub fn default_metric(on: MatchOn, population_sd: Option<f64>, s: &ProbSample, b: &NonProbSample) -> Result<Vec<Metric>> {
    let numeric = |pop: Option<f64>| -> Result<Metric> {
        let scale = match pop {
            Some(sd) if sd > 0.0 && sd.is_finite() => sd,
            _ => {
                let mut pooled: Vec<f64> = Vec::new();
                pooled.extend_from_slice(s.z.as_deref().ok_or_else(|| Error::Missing("z on S".into()))?);
                pooled.extend_from_slice(b.z.as_deref().ok_or_else(|| Error::Missing("z on B".into()))?);
                let sd = libm::sqrt(sample_variance(&pooled));
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            }
        };
        Ok(Metric::Numeric { scale })
    };
    Ok(match on {
        MatchOn::Z => vec![numeric(population_sd)?],
        MatchOn::X => vec![Metric::Categorical],
        MatchOn::XAndZ => vec![Metric::Categorical, numeric(population_sd)?],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    /// Donor unit id per S-member.
    pub donors: Vec<usize>,
    /// Donor position within B per S-member.
    pub donor_positions: Vec<usize>,
    pub distances: Vec<f64>,
    pub imputed: Vec<f64>,
    pub metric: Vec<Metric>,
    pub max_distance: f64,
    pub mean_distance: f64,
}

fn squared_distance(a: &[f64], b: &[f64], metric: &[Metric]) -> f64 {
    let mut d2 = 0.0;
    for ((&u, &v), m) in a.iter().zip(b).zip(metric) {
        match *m {
            Metric::Numeric { scale } => {
                let t = (u - v) / scale;
                d2 += t * t;
            }
            Metric::Categorical => {
                if u != v {
                    return f64::INFINITY;
                }
            }
        }
    }
    d2
}

fn better(cand: (f64, usize), best: (f64, usize)) -> bool {
    cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1)
}

/// Nearest donor by all-pairs scan. Ties go to the smallest donor index.
/// Returns `(position, squared distance)` per query row.
pub fn nearest_brute_force(queries: &Covariates, donors: &Covariates, metric: &[Metric]) -> Result<Vec<(usize, f64)>> {
    validate(queries, donors, metric)?;
    Ok((0..queries.len())
        .map(|i| {
            let q = queries.row(i);
            let mut best = (f64::INFINITY, 0);
            for j in 0..donors.len() {
                let d2 = squared_distance(q, donors.row(j), metric);
                if better((d2, j), best) {
                    best = (d2, j);
                }
            }
            (best.1, best.0)
        })
        .collect())
}

fn validate(queries: &Covariates, donors: &Covariates, metric: &[Metric]) -> Result<()> {
    if donors.is_empty() {
        return Err(Error::NoDonor);
    }
    check_len(donors.dim(), queries.dim())?;
    check_len(donors.dim(), metric.len())?;
    for m in metric {
        if let Metric::Numeric { scale } = m {
            if !(*scale > 0.0) || !scale.is_finite() {
                return Err(Error::Config(format!("metric scale {scale} must be positive")));
            }
        }
    }
    Ok(())
}

/// Donors grouped by their categorical coordinates; inside a group they are
/// sorted on the first numeric coordinate so a query can sweep outwards and
/// stop once that coordinate alone exceeds the best distance.
struct DonorIndex<'a> {
    donors: &'a Covariates,
    metric: &'a [Metric],
    categorical: Vec<usize>,
    lead: Option<(usize, f64)>,
    groups: BTreeMap<Vec<u64>, Vec<usize>>,
}

impl<'a> DonorIndex<'a> {
    fn build(donors: &'a Covariates, metric: &'a [Metric]) -> Self {
        let categorical: Vec<usize> = (0..metric.len()).filter(|&j| metric[j] == Metric::Categorical).collect();
        let lead = metric.iter().enumerate().find_map(|(j, m)| match m {
            Metric::Numeric { scale } => Some((j, *scale)),
            Metric::Categorical => None,
        });
        let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
        for i in 0..donors.len() {
            let key = categorical.iter().map(|&j| donors.row(i)[j].to_bits()).collect();
            groups.entry(key).or_default().push(i);
        }
        if let Some((j, _)) = lead {
            for g in groups.values_mut() {
                g.sort_by(|&a, &b| donors.row(a)[j].total_cmp(&donors.row(b)[j]).then(a.cmp(&b)));
            }
        }
        DonorIndex { donors, metric, categorical, lead, groups }
    }

    fn nearest(&self, q: &[f64], exclude: Option<usize>) -> (usize, f64) {
        let key: Vec<u64> = self.categorical.iter().map(|&j| q[j].to_bits()).collect();
        let none = (exclude.map_or(0, |e| usize::from(e == 0)), f64::INFINITY);
        let Some(group) = self.groups.get(&key) else {
            return none;
        };
        let Some((lj, scale)) = self.lead else {
            // every coordinate categorical: all group members are at 0
            return group
                .iter()
                .copied()
                .filter(|&i| Some(i) != exclude)
                .min()
                .map_or(none, |i| (i, 0.0));
        };
        let lead_of = |i: usize| self.donors.row(i)[lj];
        let start = group.partition_point(|&i| lead_of(i) < q[lj]);
        let mut best = (f64::INFINITY, usize::MAX);
        let visit = |i: usize, best: &mut (f64, usize)| {
            if Some(i) == exclude {
                return;
            }
            let d2 = squared_distance(q, self.donors.row(i), self.metric);
            if better((d2, i), *best) {
                *best = (d2, i);
            }
        };
        for &i in &group[start..] {
            let t = (lead_of(i) - q[lj]) / scale;
            if t * t > best.0 {
                break;
            }
            visit(i, &mut best);
        }
        for &i in group[..start].iter().rev() {
            let t = (lead_of(i) - q[lj]) / scale;
            if t * t > best.0 {
                break;
            }
            visit(i, &mut best);
        }
        if best.1 == usize::MAX {
            return none;
        }
        (best.1, best.0)
    }
}

/// Nearest donor per query row via the sorted sweep. Agrees with
/// [`nearest_brute_force`] including the tie rule.
pub fn nearest(queries: &Covariates, donors: &Covariates, metric: &[Metric]) -> Result<Vec<(usize, f64)>> {
    validate(queries, donors, metric)?;
    let index = DonorIndex::build(donors, metric);
    Ok((0..queries.len()).map(|i| index.nearest(queries.row(i), None)).collect())
}

/// Matches every S-member to its nearest B-member under `metric`.
pub fn nn_match(s: &ProbSample, b: &NonProbSample, on: MatchOn, metric: &[Metric]) -> Result<MatchAssignment> {
    let sx = on.of_s(s)?;
    let bx = on.of_b(b)?;
    let found = nearest(&sx, &bx, metric)?;
    let distances: Vec<f64> = found.iter().map(|&(_, d2)| libm::sqrt(d2)).collect();
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    let mean_distance = if distances.is_empty() { 0.0 } else { distances.iter().sum::<f64>() / distances.len() as f64 };
    Ok(MatchAssignment {
        donors: found.iter().map(|&(j, _)| b.members[j]).collect(),
        donor_positions: found.iter().map(|&(j, _)| j).collect(),
        imputed: found.iter().map(|&(j, _)| b.y[j]).collect(),
        distances,
        metric: metric.to_vec(),
        max_distance,
        mean_distance,
    })
}

/// `sum_S d_i y_hat_i`; the implied population size is `sum_S d_i`.
pub fn sm_estimate(s: &ProbSample, m: &MatchAssignment) -> Result<Estimate> {
    check_len(s.len(), m.imputed.len())?;
    let value: f64 = s.d.iter().zip(&m.imputed).map(|(d, y)| d * y).sum();
    let n_hat: f64 = s.d.iter().sum();
    let unmatched = m.distances.iter().filter(|d| d.is_infinite()).count();
    Ok(Estimate::new("sm", Target::Total, value)
        .with_population_size(n_hat)
        .assuming("y independent of B-selection given x, with exact matching in the limit")
        .diag("max_distance", m.max_distance)
        .diag("mean_distance", m.mean_distance)
        .diag("unmatched", unmatched as f64))
}

/// Hájek means of the imputed values within each domain label, indexed by
/// label. A domain with no S-members yields `None`.
pub fn sm_domain_means(s: &ProbSample, m: &MatchAssignment, domains: &[usize]) -> Result<Vec<Option<f64>>> {
    check_len(s.len(), m.imputed.len())?;
    check_len(s.len(), domains.len())?;
    let k = domains.iter().max().map_or(0, |v| v + 1);
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for ((&h, &d), &y) in domains.iter().zip(&s.d).zip(&m.imputed) {
        num[h] += d * y;
        den[h] += d;
    }
    Ok(num.iter().zip(&den).map(|(n, d)| (*d > 0.0).then(|| n / d)).collect())
}

/// Quantile of the within-B nearest-neighbour distances used as the default
/// support threshold.
pub const DEFAULT_EPSILON_QUANTILE: f64 = 0.95;

/// [`epsilon_at_quantile`] at [`DEFAULT_EPSILON_QUANTILE`].
pub fn default_epsilon(b: &NonProbSample, on: MatchOn, metric: &[Metric]) -> Result<f64> {
    epsilon_at_quantile(b, on, metric, DEFAULT_EPSILON_QUANTILE)
}

/// Quantile `q` of the distance from each B-member to its nearest other
/// B-member. Falls back to the smallest positive finite distance, then to 1,
/// when the quantile is not a usable threshold.
pub fn epsilon_at_quantile(b: &NonProbSample, on: MatchOn, metric: &[Metric], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("epsilon quantile {q} outside [0, 1]")));
    }
    let bx = on.of_b(b)?;
    validate(&bx, &bx, metric)?;
    let index = DonorIndex::build(&bx, metric);
    let d: Vec<f64> = (0..bx.len())
        .map(|i| libm::sqrt(index.nearest(bx.row(i), Some(i)).1))
        .filter(|v| v.is_finite())
        .collect();
    if d.is_empty() {
        return Ok(1.0);
    }
    let eps = quantile(&d, q);
    if eps > 0.0 {
        return Ok(eps);
    }
    Ok(d.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min).min(1.0))
}

/// Auxiliary vectors `u_i` the second-phase weights are calibrated on.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseTwoVariables {
    Intercept,
    /// `(1, z_i)`.
    InterceptAndZ,
    /// Indicator of the cell label `x_i`.
    CellDummies(usize),
    /// One row per S-member.
    Custom(Vec<Vec<f64>>),
}

impl PhaseTwoVariables {
    fn rows(&self, s: &ProbSample) -> Result<Vec<Vec<f64>>> {
        Ok(match self {
            PhaseTwoVariables::Intercept => vec![vec![1.0]; s.len()],
            PhaseTwoVariables::InterceptAndZ => {
                let z = s.z.as_deref().ok_or_else(|| Error::Missing("z on S".into()))?;
                z.iter().map(|&v| vec![1.0, v]).collect()
            }
            PhaseTwoVariables::CellDummies(k) => s
                .x
                .iter()
                .map(|&c| {
                    if c >= *k {
                        return Err(Error::UnknownCell(c));
                    }
                    let mut r = vec![0.0; *k];
                    r[c] = 1.0;
                    Ok(r)
                })
                .collect::<Result<_>>()?,
            PhaseTwoVariables::Custom(rows) => {
                check_len(s.len(), rows.len())?;
                rows.clone()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseFit {
    pub estimate: Estimate,
    /// Positions in S judged supported by B.
    pub supported: Vec<usize>,
    /// Positions in S judged outside the B support.
    pub unsupported: Vec<usize>,
    /// Second-phase weights aligned with `supported`.
    pub phase_two_weights: Vec<f64>,
    pub epsilon: f64,
}

/// Two-phase SM: screen S on the B support, then calibrate the supported
/// part back to the full-S HT totals of the auxiliary vector.
pub fn two_phase_sm(
    s: &ProbSample,
    b: &NonProbSample,
    on: MatchOn,
    metric: &[Metric],
    epsilon: f64,
    variables: &PhaseTwoVariables,
) -> Result<TwoPhaseFit> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let m = nn_match(s, b, on, metric)?;
    let (supported, unsupported): (Vec<usize>, Vec<usize>) = (0..s.len()).partition(|&i| m.distances[i] < epsilon);
    if supported.is_empty() {
        return Err(Error::NoSupport { epsilon });
    }
    let u = variables.rows(s)?;
    let k = u.first().map_or(0, |r| r.len());
    let mut target = vec![0.0; k];
    for (r, &d) in u.iter().zip(&s.d) {
        check_len(k, r.len())?;
        for j in 0..k {
            target[j] += d * r[j];
        }
    }
    let rows: Vec<Vec<f64>> = supported.iter().map(|&i| u[i].iter().map(|v| s.d[i] * v).collect()).collect();
    let (w2, _) = least_distance_weights(&vec![1.0; supported.len()], &rows, &target)?;
    let value: f64 = supported.iter().zip(&w2).map(|(&i, w)| s.d[i] * w * m.imputed[i]).sum();
    let n_hat: f64 = s.d.iter().sum();
    let estimate = Estimate::new("two_phase_sm", Target::Total, value)
        .with_population_size(n_hat)
        .assuming("outcome linear in the phase-two variables, shared by covered and uncovered units")
        .diag("epsilon", epsilon)
        .diag("s0_size", unsupported.len() as f64)
        .diag("s1_size", supported.len() as f64)
        .diag("max_distance_s1", supported.iter().map(|&i| m.distances[i]).fold(0.0, f64::max))
        .diag("min_w2", w2.iter().copied().fold(f64::INFINITY, f64::min))
        .diag("max_w2", w2.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    Ok(TwoPhaseFit { estimate, supported, unsupported, phase_two_weights: w2, epsilon })
}
