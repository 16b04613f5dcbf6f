//! Linear (least-squares distance) calibration of B-sample weights.
//!
//! The weights minimise `sum_B (w_i - a_i)^2` subject to
//! `sum_B w_i t_i = T`. The minimiser is `w_i = a_i + t_i' lambda`, where
//! `lambda` solves the `K x K` system `(sum_B t t') lambda = T - sum_B a t`.
//! Because `t_i = t(x_i)` is a function of the cell, both sums reduce to
//! per-cell aggregates and, with uniform initial weights, the calibrated
//! weights are constant within each `t`-cell.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Estimate, Target};
use crate::error::{check_len, Error, Result};
use crate::linalg::{solve_gram, solve_general, SquareMatrix};
use crate::popgen::{NonProbSample, ProbSample};

/// Relative tolerance on `||sum w t - T||_inf / ||T||_inf`.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-8;

/// Many-to-one map from a cell label `x` to the calibration vector `t(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TMap {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl TMap {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 {
            return Err(Error::Config("t-map needs at least one cell and one component".into()));
        }
        if let Some((c, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Config(format!("t(x) for cell {c} has {} components, expected {dim}", r.len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("t-map entries must be finite".into()));
        }
        Ok(TMap { dim, rows })
    }

    /// Post-stratum indicators.
    pub fn dummies(num_cells: usize) -> Self {
        let rows = (0..num_cells)
            .map(|c| (0..num_cells).map(|j| if j == c { 1.0 } else { 0.0 }).collect())
            .collect();
        TMap { dim: num_cells, rows }
    }

    pub fn intercept(num_cells: usize) -> Self {
        TMap { dim: 1, rows: vec![vec![1.0]; num_cells] }
    }

    /// `t(x) = (1, v_x)`.
    pub fn linear(values: &[f64]) -> Self {
        TMap { dim: 2, rows: values.iter().map(|&v| vec![1.0, v]).collect() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, cell: usize) -> Result<&[f64]> {
        self.rows.get(cell).map(Vec::as_slice).ok_or(Error::UnknownCell(cell))
    }

    /// Known totals `T = sum_x N_x t(x)`.
    pub fn population_totals(&self, stratum_sizes: &[usize]) -> Result<Vec<f64>> {
        check_len(self.num_cells(), stratum_sizes.len())?;
        let mut t = vec![0.0; self.dim];
        for (row, &n) in self.rows.iter().zip(stratum_sizes) {
            for (acc, v) in t.iter_mut().zip(row) {
                *acc += n as f64 * v;
            }
        }
        Ok(t)
    }

    /// Groups cell labels sharing the same `t` value; returns the group id
    /// of every label, numbered by first appearance.
    pub fn t_cells(&self) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.rows.len());
        let mut reps: Vec<usize> = Vec::new();
        for (c, row) in self.rows.iter().enumerate() {
            match reps.iter().position(|&r| self.rows[r] == *row) {
                Some(g) => ids.push(g),
                None => {
                    ids.push(reps.len());
                    reps.push(c);
                }
            }
        }
        ids
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationTotals {
    Known(Vec<f64>),
    /// Estimated from a probability sample; the variance is carried as a
    /// diagnostic only.
    Estimated { values: Vec<f64>, variance: Option<Vec<f64>> },
}

impl CalibrationTotals {
    pub fn values(&self) -> &[f64] {
        match self {
            CalibrationTotals::Known(v) => v,
            CalibrationTotals::Estimated { values, .. } => values,
        }
    }

    /// Horvitz–Thompson totals `sum_S d_i t(x_i)` with the
    /// independent-inclusion variance `sum_S (1 - pi) t^2 / pi^2`.
    pub fn from_prob_sample(t_map: &TMap, s: &ProbSample) -> Result<Self> {
        let mut values = vec![0.0; t_map.dim()];
        let mut variance = vec![0.0; t_map.dim()];
        for ((&c, &d), &p) in s.x.iter().zip(&s.d).zip(&s.pi) {
            let row = t_map.row(c)?;
            for k in 0..row.len() {
                values[k] += d * row[k];
                variance[k] += (1.0 - p) * (d * row[k]) * (d * row[k]);
            }
        }
        Ok(CalibrationTotals::Estimated { values, variance: Some(variance) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialWeights {
    /// `a_i = N / n_B`.
    Uniform { population_size: usize },
    /// `a_i = 1 / p_i`, one propensity per B member.
    InversePropensity(Vec<f64>),
    Explicit(Vec<f64>),
}

impl InitialWeights {
    fn resolve(&self, n_b: usize) -> Result<Vec<f64>> {
        match self {
            InitialWeights::Uniform { population_size } => {
                if *population_size < n_b {
                    return Err(Error::InconsistentInputs(format!("N = {population_size} < n_B = {n_b}")));
                }
                Ok(vec![*population_size as f64 / n_b as f64; n_b])
            }
            InitialWeights::InversePropensity(p) => {
                check_len(n_b, p.len())?;
                p.iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        if p > 0.0 && p <= 1.0 {
                            Ok(1.0 / p)
                        } else {
                            Err(Error::InvalidProbability { unit: i, value: p })
                        }
                    })
                    .collect()
            }
            InitialWeights::Explicit(a) => {
                check_len(n_b, a.len())?;
                Ok(a.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSpec {
    pub t_map: TMap,
    pub totals: CalibrationTotals,
    pub initial: InitialWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub weights: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `(sum w t t')^-1 (sum w t y)`.
    pub beta_hat: Vec<f64>,
    /// `y_i - t_i' beta_hat` per B member.
    pub residuals: Vec<f64>,
    pub constraint_residual: f64,
    pub totals: Vec<f64>,
    pub totals_variance: Option<Vec<f64>>,
    pub t_map: TMap,
    /// Cell label per B member.
    pub cells: Vec<usize>,
}

fn relative_inf_error(achieved: &[f64], target: &[f64]) -> f64 {
    let scale = target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = achieved
        .iter()
        .zip(target)
        .fold(0.0f64, |m, (a, t)| m.max((a - t).abs()));
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Calibrates the B-sample weights to the totals in `spec`.
pub fn calibrate(b: &NonProbSample, spec: &CalibrationSpec) -> Result<CalibrationFit> {
    let t_map = &spec.t_map;
    let k = t_map.dim();
    let totals = spec.totals.values();
    if totals.len() != k {
        return Err(Error::LengthMismatch { expected: k, found: totals.len() });
    }
    let a = spec.initial.resolve(b.len())?;
    let m = t_map.num_cells();
    let mut count = vec![0usize; m];
    let mut a_sum = vec![0.0; m];
    for (&c, &ai) in b.x.iter().zip(&a) {
        if c >= m {
            return Err(Error::UnknownCell(c));
        }
        count[c] += 1;
        a_sum[c] += ai;
    }
    let mut gram = SquareMatrix::zeros(k);
    let mut at = vec![0.0; k];
    for c in 0..m {
        if count[c] == 0 {
            continue;
        }
        let row = t_map.row(c)?;
        gram.add_outer(row, count[c] as f64);
        for j in 0..k {
            at[j] += a_sum[c] * row[j];
        }
    }
    let achieved_with = |lambda: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; k];
        for c in 0..m {
            if count[c] == 0 {
                continue;
            }
            let row = &t_map.rows[c];
            let shift: f64 = row.iter().zip(lambda).map(|(t, l)| t * l).sum();
            let w_sum = a_sum[c] + count[c] as f64 * shift;
            for j in 0..k {
                acc[j] += w_sum * row[j];
            }
        }
        acc
    };
    let rhs: Vec<f64> = totals.iter().zip(&at).map(|(t, s)| t - s).collect();
    let mut lambda = solve_gram(&gram, &rhs)?;
    let mut achieved = achieved_with(&lambda);
    if relative_inf_error(&achieved, totals) > 1e-14 {
        // one step of iterative refinement
        let gap: Vec<f64> = totals.iter().zip(&achieved).map(|(t, a)| t - a).collect();
        let corr = solve_gram(&gram, &gap)?;
        for (l, c) in lambda.iter_mut().zip(&corr) {
            *l += c;
        }
        achieved = achieved_with(&lambda);
    }
    let constraint_residual = relative_inf_error(&achieved, totals);
    if constraint_residual > CONSTRAINT_TOLERANCE {
        return Err(Error::Degenerate(format!(
            "calibration constraints met only to relative error {constraint_residual:e}"
        )));
    }
    let weights: Vec<f64> = b
        .x
        .iter()
        .zip(&a)
        .map(|(&c, &ai)| ai + t_map.rows[c].iter().zip(&lambda).map(|(t, l)| t * l).sum::<f64>())
        .collect();

    let mut wtt = SquareMatrix::zeros(k);
    let mut wty = vec![0.0; k];
    let mut w_cell = vec![0.0; m];
    let mut wy_cell = vec![0.0; m];
    for ((&c, &w), &y) in b.x.iter().zip(&weights).zip(&b.y) {
        w_cell[c] += w;
        wy_cell[c] += w * y;
    }
    for c in 0..m {
        if count[c] == 0 {
            continue;
        }
        let row = &t_map.rows[c];
        wtt.add_outer(row, w_cell[c]);
        for j in 0..k {
            wty[j] += wy_cell[c] * row[j];
        }
    }
    let beta_hat = solve_general(&wtt, &wty)?;
    let residuals = b
        .x
        .iter()
        .zip(&b.y)
        .map(|(&c, &y)| y - t_map.rows[c].iter().zip(&beta_hat).map(|(t, bh)| t * bh).sum::<f64>())
        .collect();
    let totals_variance = match &spec.totals {
        CalibrationTotals::Estimated { variance, .. } => variance.clone(),
        CalibrationTotals::Known(_) => None,
    };
    Ok(CalibrationFit {
        weights,
        lambda,
        beta_hat,
        residuals,
        constraint_residual,
        totals: totals.to_vec(),
        totals_variance,
        t_map: t_map.clone(),
        cells: b.x.clone(),
    })
}

/// `sum_B w_i y_i`.
pub fn calibration_estimate(fit: &CalibrationFit, b: &NonProbSample) -> Result<Estimate> {
    check_len(fit.weights.len(), b.len())?;
    if fit.cells != b.x {
        return Err(Error::InconsistentInputs("calibration fit was produced from a different sample".into()));
    }
    let value: f64 = fit.weights.iter().zip(&b.y).map(|(w, y)| w * y).sum();
    let min_w = fit.weights.iter().copied().fold(f64::INFINITY, f64::min);
    let max_w = fit.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut est = Estimate::new("calibration", Target::Total, value)
        .assuming("linear mean in t(x) with non-informative selection given x")
        .diag("k", fit.t_map.dim() as f64)
        .diag("constraint_residual", fit.constraint_residual)
        .diag("min_weight", min_w)
        .diag("max_weight", max_w);
    if let Some(var) = &fit.totals_variance {
        est = est.diag("totals_variance_sum", var.iter().sum());
    }
    // The intercept component, when present, fixes N.
    if let Some(j) = (0..fit.t_map.dim()).find(|&j| fit.t_map.rows.iter().all(|r| r[j] == 1.0)) {
        est = est.with_population_size(fit.totals[j]);
    } else if fit.t_map.t_cells().len() == fit.t_map.num_cells() && is_partition(&fit.t_map) {
        est = est.with_population_size(fit.totals.iter().sum());
    }
    Ok(est)
}

fn is_partition(t_map: &TMap) -> bool {
    t_map.rows.iter().all(|r| {
        r.iter().filter(|&&v| v == 1.0).count() == 1 && r.iter().all(|&v| v == 0.0 || v == 1.0)
    })
}

/// General least-distance calibration: minimises `sum (w_i - a_i)^2`
/// subject to `sum w_i u_i = target`, where `rows[i] = u_i`.
/// Returns `(weights, lambda)`.
pub fn least_distance_weights(initial: &[f64], rows: &[Vec<f64>], target: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(initial.len(), rows.len())?;
    let k = target.len();
    let mut gram = SquareMatrix::zeros(k);
    let mut au = vec![0.0; k];
    for (u, &a) in rows.iter().zip(initial) {
        check_len(k, u.len())?;
        gram.add_outer(u, 1.0);
        for j in 0..k {
            au[j] += a * u[j];
        }
    }
    let rhs: Vec<f64> = target.iter().zip(&au).map(|(t, s)| t - s).collect();
    let mut lambda = solve_gram(&gram, &rhs)?;
    let weights_for = |lambda: &[f64]| -> Vec<f64> {
        rows.iter()
            .zip(initial)
            .map(|(u, &a)| a + u.iter().zip(lambda).map(|(x, l)| x * l).sum::<f64>())
            .collect()
    };
    let mut w = weights_for(&lambda);
    let achieved = |w: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; k];
        for (u, wi) in rows.iter().zip(w) {
            for j in 0..k {
                acc[j] += wi * u[j];
            }
        }
        acc
    };
    let got = achieved(&w);
    if relative_inf_error(&got, target) > 1e-14 {
        let gap: Vec<f64> = target.iter().zip(&got).map(|(t, a)| t - a).collect();
        let corr = solve_gram(&gram, &gap)?;
        for (l, c) in lambda.iter_mut().zip(&corr) {
            *l += c;
        }
        w = weights_for(&lambda);
    }
    let err = relative_inf_error(&achieved(&w), target);
    if err > CONSTRAINT_TOLERANCE {
        return Err(Error::Degenerate(format!("calibration constraints met only to relative error {err:e}")));
    }
    Ok((w, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{expansion, post_stratified};

    fn sample(y: &[f64], x: &[usize]) -> NonProbSample {
        NonProbSample::new((0..y.len()).collect(), y.to_vec(), x.to_vec(), None).unwrap()
    }

    #[test]
    fn dummy_calibration_is_post_stratification() {
        let b = sample(&[1.0, 3.0, 2.0, 8.0, 5.0], &[0, 0, 1, 2, 2]);
        let sizes = [10, 4, 6];
        let t_map = TMap::dummies(3);
        let spec = CalibrationSpec {
            totals: CalibrationTotals::Known(t_map.population_totals(&sizes).unwrap()),
            t_map,
            initial: InitialWeights::Uniform { population_size: 20 },
        };
        let fit = calibrate(&b, &spec).unwrap();
        let expected = [5.0, 5.0, 4.0, 3.0, 3.0];
        for (w, e) in fit.weights.iter().zip(expected) {
            assert!((w - e).abs() < 1e-12);
        }
        let est = calibration_estimate(&fit, &b).unwrap();
        let ps = post_stratified(&b, &sizes).unwrap();
        assert!((est.value - ps.value).abs() < 1e-10 * ps.value.abs());
        assert_eq!(est.population_size, Some(20.0));
    }

    #[test]
    fn intercept_calibration_is_expansion() {
        let b = sample(&[1.0, 3.0, 2.0, 8.0], &[0, 1, 1, 0]);
        let spec = CalibrationSpec {
            t_map: TMap::intercept(2),
            totals: CalibrationTotals::Known(vec![17.0]),
            initial: InitialWeights::Uniform { population_size: 17 },
        };
        let fit = calibrate(&b, &spec).unwrap();
        assert!(fit.weights.iter().all(|w| (w - 17.0 / 4.0).abs() < 1e-12));
        let est = calibration_estimate(&fit, &b).unwrap();
        assert!((est.value - expansion(&b, 17).unwrap().value).abs() < 1e-10);
    }

    #[test]
    fn census_identity() {
        let b = sample(&[1.0, 3.0, 2.0], &[0, 0, 0]);
        let spec = CalibrationSpec {
            t_map: TMap::intercept(1),
            totals: CalibrationTotals::Known(vec![3.0]),
            initial: InitialWeights::Explicit(vec![1.0; 3]),
        };
        let fit = calibrate(&b, &spec).unwrap();
        assert_eq!(calibration_estimate(&fit, &b).unwrap().value, 6.0);
    }

    #[test]
    fn collinear_t_is_rank_deficient() {
        let b = sample(&[1.0, 2.0, 3.0], &[0, 1, 1]);
        // third component duplicates the first
        let t_map = TMap::new(vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let spec = CalibrationSpec {
            t_map,
            totals: CalibrationTotals::Known(vec![5.0, 5.0, 5.0]),
            initial: InitialWeights::Uniform { population_size: 10 },
        };
        match calibrate(&b, &spec) {
            Err(Error::RankDeficient { dependent }) => assert_eq!(dependent, vec![2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exact_linear_outcome_has_zero_residuals() {
        let b = sample(&[1.0, 1.5, 2.0, 2.0], &[0, 1, 2, 2]);
        let t_map = TMap::linear(&[0.0, 1.0, 2.0]);
        let spec = CalibrationSpec {
            totals: CalibrationTotals::Known(t_map.population_totals(&[3, 3, 4]).unwrap()),
            t_map,
            initial: InitialWeights::Uniform { population_size: 10 },
        };
        let fit = calibrate(&b, &spec).unwrap();
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-12));
        assert!((fit.beta_hat[0] - 1.0).abs() < 1e-12 && (fit.beta_hat[1] - 0.5).abs() < 1e-12);
    }
}
