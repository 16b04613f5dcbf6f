//! Propensity models for B-sample inclusion and the IPW estimators built on
//! them.
//!
//! Covariates are cell labels, so every estimating equation reduces to cell
//! aggregates: a "trial" weight `W_c` and a "success" weight `D_c` per cell.
//! The logistic score is `sum_c t_c (D_c - W_c p_c)`; the saturated model
//! solves it cell by cell with `p_c = D_c / W_c`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Estimate, TMap, Target};
use crate::error::{check_len, Error, Result};
use crate::linalg::{solve_gram, SquareMatrix};
use crate::popgen::{NonProbSample, ProbSample};
use crate::stats::{log_logistic, logistic, logit};

/// Convergence threshold on `||score||_inf / sum_c W_c`.
pub const SCORE_TOLERANCE: f64 = 1e-10;
pub const MAX_NEWTON_ITERATIONS: usize = 100;
/// Fitted logistic propensities are clamped to `[CLAMP, 1 - CLAMP]`.
pub const CLAMP: f64 = 1e-6;
/// A cell whose linear predictor exceeds this in magnitude signals separation.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub enum PropensityModel {
    /// One free propensity per cell.
    Saturated,
    /// `p(x) = logistic(t(x)' eta)`.
    Logistic(TMap),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropensitySource {
    CensusU,
    PseudoPopulationS,
    UnweightedS,
    ReferencePooled,
}

/// Where the covariate distribution comes from, which also fixes the
/// estimating equation.
#[derive(Debug, Clone, Copy)]
pub enum CovariateSource<'a> {
    /// `x` known on all of `U`: post-stratum sizes `N_x`.
    Census(&'a [usize]),
    /// `sum_S d_i H(delta_i; eta) = 0`.
    PseudoPopulation(&'a ProbSample),
    /// `sum_S H(delta_i; eta) = 0`.
    UnweightedS(&'a ProbSample),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    pub model: PropensityModel,
    /// Logistic coefficients, or the cell propensities for the saturated model.
    pub params: Vec<f64>,
    /// Fitted propensity per cell; `None` for cells without information.
    pub cell_propensities: Vec<Option<f64>>,
    pub source: PropensitySource,
    pub iterations: usize,
    pub score_norm: f64,
    /// True when a logistic propensity was clamped into `[CLAMP, 1 - CLAMP]`.
    pub clamped: bool,
    pub assumptions: Vec<String>,
}

impl PropensityFit {
    pub fn p_hat(&self, cell: usize) -> Option<f64> {
        self.cell_propensities.get(cell).copied().flatten()
    }

    /// Propensity for every label in `cells`.
    pub fn unit_propensities(&self, cells: &[usize]) -> Result<Vec<f64>> {
        cells
            .iter()
            .map(|&c| {
                self.p_hat(c)
                    .ok_or(Error::InvalidPropensity { cell: c, value: f64::NAN })
            })
            .collect()
    }
}

struct CellData {
    trials: Vec<f64>,
    successes: Vec<f64>,
}

fn cell_data(b: &NonProbSample, source: CovariateSource<'_>) -> Result<(CellData, PropensitySource)> {
    match source {
        CovariateSource::Census(sizes) => {
            let counts = b.cell_counts(sizes.len())?;
            for (c, (&n, &nb)) in sizes.iter().zip(&counts).enumerate() {
                if nb > n {
                    return Err(Error::InconsistentInputs(format!("cell {c}: n_xB = {nb} > N_x = {n}")));
                }
            }
            Ok((
                CellData {
                    trials: sizes.iter().map(|&n| n as f64).collect(),
                    successes: counts.iter().map(|&n| n as f64).collect(),
                },
                PropensitySource::CensusU,
            ))
        }
        CovariateSource::PseudoPopulation(s) | CovariateSource::UnweightedS(s) => {
            let weighted = matches!(source, CovariateSource::PseudoPopulation(_));
            let m = s
                .x
                .iter()
                .chain(&b.x)
                .max()
                .map_or(0, |v| v + 1);
            let mut trials = vec![0.0; m];
            let mut successes = vec![0.0; m];
            for ((&u, &c), &d) in s.members.iter().zip(&s.x).zip(&s.d) {
                let w = if weighted { d } else { 1.0 };
                trials[c] += w;
                if b.contains(u) {
                    successes[c] += w;
                }
            }
            Ok((
                CellData { trials, successes },
                if weighted { PropensitySource::PseudoPopulationS } else { PropensitySource::UnweightedS },
            ))
        }
    }
}

fn saturated(data: &CellData, b_cells: &[usize]) -> Result<Vec<Option<f64>>> {
    let m = data.trials.len();
    let mut needed = vec![false; m];
    for &c in b_cells {
        *needed.get_mut(c).ok_or(Error::UnknownCell(c))? = true;
    }
    (0..m)
        .map(|c| {
            let (w, d) = (data.trials[c], data.successes[c]);
            if w > 0.0 && d > 0.0 {
                Ok(Some(d / w))
            } else if needed[c] {
                Err(Error::EmptyCell { cell: c, population_size: w })
            } else {
                Ok(None)
            }
        })
        .collect()
}

struct LogisticResult {
    eta: Vec<f64>,
    iterations: usize,
    score_norm: f64,
}

fn log_likelihood(t_map: &TMap, data: &CellData, eta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for c in 0..data.trials.len() {
        if data.trials[c] == 0.0 {
            continue;
        }
        let lin: f64 = t_map.row(c).unwrap().iter().zip(eta).map(|(t, e)| t * e).sum();
        let (d, f) = (data.successes[c], data.trials[c] - data.successes[c]);
        if d > 0.0 {
            ll += d * log_logistic(lin);
        }
        if f > 0.0 {
            ll += f * log_logistic(-lin);
        }
    }
    ll
}

/// Newton–Raphson with step halving on the binomial log-likelihood.
fn fit_logistic(t_map: &TMap, data: &CellData) -> Result<LogisticResult> {
    let m = data.trials.len();
    if t_map.num_cells() < m {
        return Err(Error::UnknownCell(t_map.num_cells()));
    }
    let k = t_map.dim();
    let total_w: f64 = data.trials.iter().sum();
    let total_d: f64 = data.successes.iter().sum();
    if total_w <= 0.0 {
        return Err(Error::Degenerate("no units to fit the propensity model on".into()));
    }
    let mut eta = vec![0.0; k];
    // start from the overall rate on an intercept-like direction
    if let Some(j) = (0..k).find(|&j| (0..m).all(|c| data.trials[c] == 0.0 || t_map.row(c).unwrap()[j] == 1.0)) {
        let rate = (total_d / total_w).clamp(1e-6, 1.0 - 1e-6);
        eta[j] = logit(rate);
    }
    let score_at = |eta: &[f64]| -> (Vec<f64>, SquareMatrix) {
        let mut score = vec![0.0; k];
        let mut info = SquareMatrix::zeros(k);
        for c in 0..m {
            let w = data.trials[c];
            if w == 0.0 {
                continue;
            }
            let row = t_map.row(c).unwrap();
            let p = logistic(row.iter().zip(eta).map(|(t, e)| t * e).sum());
            let r = data.successes[c] - w * p;
            for j in 0..k {
                score[j] += row[j] * r;
            }
            info.add_outer(row, w * p * (1.0 - p));
        }
        (score, info)
    };
    let norm = |s: &[f64]| s.iter().fold(0.0f64, |a, v| a.max(v.abs())) / total_w;
    let mut trace = Vec::new();
    let mut ll = log_likelihood(t_map, data, &eta);
    for iter in 0..MAX_NEWTON_ITERATIONS {
        let (score, info) = score_at(&eta);
        let sn = norm(&score);
        trace.push(sn);
        if sn <= SCORE_TOLERANCE {
            // a score driven to zero by a diverging predictor on a cell
            // with only successes or only failures
            if let Some((c, lin)) = boundary_cell(t_map, data, &eta) {
                return Err(Error::Separation { cell: c, linear_predictor: lin });
            }
            return Ok(LogisticResult { eta, iterations: iter, score_norm: sn });
        }
        let step = match solve_gram(&info, &score) {
            Ok(s) => s,
            Err(Error::RankDeficient { dependent }) => {
                // a vanishing information direction: either collinear
                // design or separation driving p to 0 or 1
                if let Some((c, lin)) = separated_cell(t_map, data, &eta) {
                    return Err(Error::Separation { cell: c, linear_predictor: lin });
                }
                return Err(Error::RankDeficient { dependent });
            }
            Err(e) => return Err(e),
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = eta.iter().zip(&step).map(|(e, s)| e + scale * s).collect();
            let cand_ll = log_likelihood(t_map, data, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                eta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence { iterations: iter + 1, score_trace: trace });
        }
        if let Some((c, lin)) = separated_cell(t_map, data, &eta) {
            return Err(Error::Separation { cell: c, linear_predictor: lin });
        }
    }
    Err(Error::NonConvergence { iterations: MAX_NEWTON_ITERATIONS, score_trace: trace })
}

fn boundary_cell(t_map: &TMap, data: &CellData, eta: &[f64]) -> Option<(usize, f64)> {
    let bound = logit(1.0 - CLAMP);
    (0..data.trials.len())
        .filter(|&c| data.trials[c] > 0.0 && (data.successes[c] == 0.0 || data.successes[c] == data.trials[c]))
        .find_map(|c| {
            let lin: f64 = t_map.row(c).unwrap().iter().zip(eta).map(|(t, e)| t * e).sum();
            (lin.abs() > bound).then_some((c, lin))
        })
}

fn separated_cell(t_map: &TMap, data: &CellData, eta: &[f64]) -> Option<(usize, f64)> {
    (0..data.trials.len()).filter(|&c| data.trials[c] > 0.0).find_map(|c| {
        let lin: f64 = t_map.row(c).unwrap().iter().zip(eta).map(|(t, e)| t * e).sum();
        (lin.abs() > SEPARATION_BOUND).then_some((c, lin))
    })
}

fn source_assumptions(source: PropensitySource) -> Vec<String> {
    let mut a = vec![String::from("inclusion probability fully determined by x (QR_x)")];
    if matches!(source, PropensitySource::PseudoPopulationS | PropensitySource::UnweightedS) {
        a.push(String::from("S-sampling non-informative for B-inclusion given x"));
    }
    a
}

/// Fits `p(x)` from B-membership and the chosen covariate source.
pub fn fit_propensity(b: &NonProbSample, source: CovariateSource<'_>, model: &PropensityModel) -> Result<PropensityFit> {
    let (data, src) = cell_data(b, source)?;
    match model {
        PropensityModel::Saturated => {
            let cells = saturated(&data, &b.x)?;
            Ok(PropensityFit {
                model: model.clone(),
                params: cells.iter().map(|p| p.unwrap_or(f64::NAN)).collect(),
                cell_propensities: cells,
                source: src,
                iterations: 0,
                score_norm: 0.0,
                clamped: false,
                assumptions: source_assumptions(src),
            })
        }
        PropensityModel::Logistic(t_map) => {
            for &c in &b.x {
                t_map.row(c)?;
            }
            let fit = fit_logistic(t_map, &data)?;
            let mut clamped = false;
            let cells = (0..t_map.num_cells())
                .map(|c| {
                    let lin: f64 = t_map.row(c).unwrap().iter().zip(&fit.eta).map(|(t, e)| t * e).sum();
                    let p = logistic(lin);
                    let q = p.clamp(CLAMP, 1.0 - CLAMP);
                    if q != p {
                        clamped = true;
                    }
                    Some(q)
                })
                .collect();
            Ok(PropensityFit {
                model: model.clone(),
                params: fit.eta,
                cell_propensities: cells,
                source: src,
                iterations: fit.iterations,
                score_norm: fit.score_norm,
                clamped,
                assumptions: source_assumptions(src),
            })
        }
    }
}

/// `sum_B y_i / p_hat_i`.
pub fn ipw(b: &NonProbSample, fit: &PropensityFit) -> Result<Estimate> {
    let mut value = 0.0;
    for (&c, &y) in b.x.iter().zip(&b.y) {
        let p = fit.p_hat(c).unwrap_or(f64::NAN);
        if !(p > 0.0) {
            return Err(Error::InvalidPropensity { cell: c, value: p });
        }
        value += y / p;
    }
    let n_hat: f64 = b.x.iter().map(|&c| 1.0 / fit.p_hat(c).unwrap()).sum();
    let mut est = Estimate::new("ipw", Target::Total, value)
        .diag("implied_population_size", n_hat)
        .diag("iterations", fit.iterations as f64)
        .diag("clamped", if fit.clamped { 1.0 } else { 0.0 });
    for a in &fit.assumptions {
        est = est.assuming(a);
    }
    Ok(est)
}

/// Rescales raw inverse-propensity inputs so that `sum_B 1 / p_hat = N`.
/// Any common factor in `raw` cancels.
pub fn normalise_propensities(raw: &[f64], population_size: f64) -> Result<Vec<f64>> {
    if let Some((i, &p)) = raw.iter().enumerate().find(|(_, p)| !(**p > 0.0) || !p.is_finite()) {
        return Err(Error::InvalidPropensity { cell: i, value: p });
    }
    let inv_sum: f64 = raw.iter().map(|p| 1.0 / p).sum();
    let c = inv_sum / population_size;
    Ok(raw.iter().map(|p| p * c).collect())
}

/// IPW with propensities recovered from the pooled `B u S` membership odds,
/// scaled by the S-design inclusion probability of the cell and normalised
/// so that `sum_B 1 / p_hat = N`.
pub fn reference_ipw(b: &NonProbSample, s: &ProbSample, population_size: usize, model: &PropensityModel) -> Result<Estimate> {
    let m = b.x.iter().chain(&s.x).max().map_or(0, |v| v + 1);
    let mut n_b = vec![0.0; m];
    let mut n_s = vec![0.0; m];
    let mut d_s = vec![0.0; m];
    for &c in &b.x {
        n_b[c] += 1.0;
    }
    for (&c, &d) in s.x.iter().zip(&s.d) {
        n_s[c] += 1.0;
        d_s[c] += d;
    }
    let overlap = s.members.iter().filter(|&&u| b.contains(u)).count();
    for c in 0..m {
        if (n_b[c] > 0.0) != (n_s[c] > 0.0) {
            return Err(Error::InestimableRatio { cell: c });
        }
    }
    // membership odds Pr(B | x, pool) / Pr(S | x, pool)
    let odds: Vec<f64> = match model {
        PropensityModel::Saturated => (0..m)
            .map(|c| if n_s[c] > 0.0 { n_b[c] / n_s[c] } else { 0.0 })
            .collect(),
        PropensityModel::Logistic(t_map) => {
            let data = CellData {
                trials: (0..m).map(|c| n_b[c] + n_s[c]).collect(),
                successes: n_b.clone(),
            };
            let fit = fit_logistic(t_map, &data)?;
            (0..m)
                .map(|c| {
                    let lin: f64 = t_map.row(c).unwrap().iter().zip(&fit.eta).map(|(t, e)| t * e).sum();
                    libm::exp(lin)
                })
                .collect()
        }
    };
    // design inclusion probability of the cell, pi(x) = n_xS / sum_{S_x} d
    let raw: Vec<f64> = b
        .x
        .iter()
        .map(|&c| (n_s[c] / d_s[c]) * odds[c])
        .collect();
    let p_hat = normalise_propensities(&raw, population_size as f64)?;
    let value: f64 = b.y.iter().zip(&p_hat).map(|(y, p)| y / p).sum();
    let max_p = p_hat.iter().copied().fold(0.0, f64::max);
    check_len(b.len(), p_hat.len())?;
    Ok(Estimate::new("reference_ipw", Target::Total, value)
        .with_population_size(population_size as f64)
        .assuming("inclusion in both B and S fully determined by the same x")
        .diag("overlap_units", overlap as f64)
        .diag("max_p_hat", max_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{expansion, post_stratified};

    fn sample(y: &[f64], x: &[usize]) -> NonProbSample {
        NonProbSample::new((0..y.len()).collect(), y.to_vec(), x.to_vec(), None).unwrap()
    }

    #[test]
    fn saturated_census_matches_cell_rates() {
        let b = sample(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0, 0, 1, 2, 2]);
        let sizes = [7, 3, 11];
        let fit = fit_propensity(&b, CovariateSource::Census(&sizes), &PropensityModel::Saturated).unwrap();
        assert_eq!(fit.p_hat(0), Some(2.0 / 7.0));
        assert_eq!(fit.p_hat(1), Some(1.0 / 3.0));
        assert_eq!(fit.p_hat(2), Some(2.0 / 11.0));
        let ipw_est = ipw(&b, &fit).unwrap();
        let ps = post_stratified(&b, &sizes).unwrap();
        assert!((ipw_est.value - ps.value).abs() <= 1e-10 * ps.value.abs());
    }

    #[test]
    fn intercept_logistic_matches_overall_rate() {
        let b = sample(&[1.0, 2.0, 3.0], &[0, 1, 1]);
        let sizes = [5, 7];
        let fit = fit_propensity(&b, CovariateSource::Census(&sizes), &PropensityModel::Logistic(TMap::intercept(2))).unwrap();
        for c in 0..2 {
            assert!((fit.p_hat(c).unwrap() - 0.25).abs() < 1e-12);
        }
        assert!(fit.score_norm <= SCORE_TOLERANCE);
        let e = ipw(&b, &fit).unwrap();
        assert!((e.value - expansion(&b, 12).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn dummy_logistic_equals_saturated() {
        let b = sample(&[1.0; 6], &[0, 0, 1, 2, 2, 2]);
        let sizes = [9, 4, 10];
        let sat = fit_propensity(&b, CovariateSource::Census(&sizes), &PropensityModel::Saturated).unwrap();
        let log = fit_propensity(&b, CovariateSource::Census(&sizes), &PropensityModel::Logistic(TMap::dummies(3))).unwrap();
        for c in 0..3 {
            assert!((sat.p_hat(c).unwrap() - log.p_hat(c).unwrap()).abs() <= 1e-8);
        }
    }

    #[test]
    fn empty_cell_in_saturated_model() {
        let b = sample(&[1.0, 2.0], &[0, 0]);
        let sizes = [5, 5];
        // cell 1 has no B members but is not needed for B: allowed
        let fit = fit_propensity(&b, CovariateSource::Census(&sizes), &PropensityModel::Saturated).unwrap();
        assert_eq!(fit.p_hat(1), None);
    }

    #[test]
    fn separation_is_reported() {
        let b = sample(&[1.0, 2.0, 3.0], &[0, 0, 0]);
        let sizes = [3, 4];
        // cell 0 fully observed, so its logit diverges
        let err = fit_propensity(&b, CovariateSource::Census(&sizes), &PropensityModel::Logistic(TMap::dummies(2)));
        assert!(matches!(err, Err(Error::Separation { .. })), "{err:?}");
    }

    #[test]
    fn invalid_propensity_rejected() {
        let b = sample(&[1.0], &[0]);
        let fit = PropensityFit {
            model: PropensityModel::Saturated,
            params: vec![0.0],
            cell_propensities: vec![Some(0.0)],
            source: PropensitySource::CensusU,
            iterations: 0,
            score_norm: 0.0,
            clamped: false,
            assumptions: vec![],
        };
        assert!(matches!(ipw(&b, &fit), Err(Error::InvalidPropensity { .. })));
    }

    #[test]
    fn normalisation_cancels_common_factor() {
        let raw = [0.2, 0.5, 0.25];
        let a = normalise_propensities(&raw, 20.0).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|p| p * 7.3).collect();
        let b = normalise_propensities(&scaled, 20.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!((a.iter().map(|p| 1.0 / p).sum::<f64>() - 20.0).abs() < 1e-12);
    }
}
