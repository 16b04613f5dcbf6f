//! Variance estimators, the test of `ybar_B = Ybar`, and relative
//! efficiency of the split-population estimator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::estimators::simple::cell_moments;
use crate::estimators::CalibrationFit;
use crate::popgen::{DesignKind, NonProbSample, ProbSample};
use crate::stats::chi_square_1_critical;

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub value: f64,
    pub method: String,
    /// Per-cell (or per-stratum) contributions summing to `value`.
    pub components: Option<Vec<f64>>,
}

impl VarianceEstimate {
    fn from_components(method: &str, components: Vec<f64>) -> Self {
        VarianceEstimate { value: components.iter().sum(), method: method.into(), components: Some(components) }
    }
}

/// Bernoulli-selection variance of the post-stratified total,
/// `sum_x (N_x/n_xB - 1)(N_x/n_xB) sum_{B_x} y^2`.
///
/// With `include_phat_term` the extra term from the variability of
/// `p_hat_x` is added, which centres the inner sum:
/// `sum_{B_x} (y - ybar_xB)^2`.
pub fn poststrat_variance(b: &NonProbSample, stratum_sizes: &[usize], include_phat_term: bool) -> Result<VarianceEstimate> {
    let cells = cell_moments(b, stratum_sizes)?;
    let components = cells
        .iter()
        .zip(stratum_sizes)
        .map(|(&(n, s1, s2), &nx)| {
            if n == 0 {
                return 0.0;
            }
            let inv = nx as f64 / n as f64;
            let inner = if include_phat_term { (s2 - s1 * s1 / n as f64).max(0.0) } else { s2 };
            (inv - 1.0) * inv * inner
        })
        .collect();
    let method = if include_phat_term { "poststrat_bernoulli_centred" } else { "poststrat_bernoulli" };
    Ok(VarianceEstimate::from_components(method, components))
}

/// `sum_t (N_t/n_tB - 1)(N_t/n_tB) sum_{B_t} e_i^2` over the `t`-cells of the
/// fit. `stratum_sizes` are the `N_x`; labels sharing a `t` value are pooled.
pub fn calibration_variance(fit: &CalibrationFit, b: &NonProbSample, stratum_sizes: &[usize]) -> Result<VarianceEstimate> {
    check_len(fit.residuals.len(), b.len())?;
    check_len(fit.t_map.num_cells(), stratum_sizes.len())?;
    let groups = fit.t_map.t_cells();
    let g = groups.iter().max().map_or(0, |v| v + 1);
    let mut size = vec![0usize; g];
    for (&c, &n) in groups.iter().zip(stratum_sizes) {
        size[c] += n;
    }
    let mut count = vec![0usize; g];
    let mut ss = vec![0.0; g];
    for (&c, &e) in b.x.iter().zip(&fit.residuals) {
        let t = *groups.get(c).ok_or(Error::UnknownCell(c))?;
        count[t] += 1;
        ss[t] += e * e;
    }
    let mut components = Vec::with_capacity(g);
    for t in 0..g {
        if size[t] > 0 && count[t] == 0 {
            return Err(Error::EmptyCell { cell: t, population_size: size[t] as f64 });
        }
        if count[t] == 0 {
            components.push(0.0);
            continue;
        }
        let inv = size[t] as f64 / count[t] as f64;
        components.push((inv - 1.0) * inv * ss[t]);
    }
    Ok(VarianceEstimate::from_components("calibration_bernoulli", components))
}

/// Linearised variance of the Hájek mean with residuals
/// `u_i = y_i - ybar_w`.
///
/// SRS and stratified SRS: `sum_h N_h^2 (1 - n_h/N_h) s_uh^2 / n_h / N_hat^2`.
/// Poisson: `sum (1 - pi) u^2 / pi^2 / N_hat^2`.
pub fn design_variance_hajek(s: &ProbSample) -> Result<VarianceEstimate> {
    let y = s.outcome()?;
    let n_hat: f64 = s.d.iter().sum();
    if s.is_empty() || !(n_hat > 0.0) {
        return Err(Error::Degenerate("empty S-sample".into()));
    }
    let yw = y.iter().zip(&s.d).map(|(y, d)| y * d).sum::<f64>() / n_hat;
    let u: Vec<f64> = y.iter().map(|v| v - yw).collect();
    match s.design.kind {
        DesignKind::Poisson => {
            let total: f64 = u
                .iter()
                .zip(&s.pi)
                .map(|(u, p)| (1.0 - p) * u * u / (p * p))
                .sum();
            Ok(VarianceEstimate {
                value: total / (n_hat * n_hat),
                method: "hajek_linearised_poisson".into(),
                components: None,
            })
        }
        DesignKind::Srs | DesignKind::StratifiedSrs => {
            let h = s.design.frame_sizes.len();
            if h == 0 || s.design.sample_sizes.len() != h {
                return Err(Error::UnsupportedDesign("stratum frame and sample sizes are not recorded".into()));
            }
            let mut sum = vec![0.0; h];
            let mut sum2 = vec![0.0; h];
            let mut count = vec![0usize; h];
            for (&st, &ui) in s.design_strata.iter().zip(&u) {
                if st >= h {
                    return Err(Error::UnknownCell(st));
                }
                count[st] += 1;
                sum[st] += ui;
                sum2[st] += ui * ui;
            }
            let mut components = Vec::with_capacity(h);
            for st in 0..h {
                let (nh, big) = (count[st], s.design.frame_sizes[st] as f64);
                if nh == 0 {
                    components.push(0.0);
                    continue;
                }
                let f = nh as f64 / big;
                if nh < 2 {
                    if f < 1.0 {
                        return Err(Error::Degenerate(format!("design stratum {st} has a single member")));
                    }
                    components.push(0.0);
                    continue;
                }
                let s2 = ((sum2[st] - sum[st] * sum[st] / nh as f64) / (nh as f64 - 1.0)).max(0.0);
                components.push(big * big * (1.0 - f) * s2 / nh as f64 / (n_hat * n_hat));
            }
            Ok(VarianceEstimate::from_components("hajek_linearised_srs", components))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct H0TestResult {
    /// `(ybar_B - ybar_w)^2 / V(ybar_w)`.
    pub statistic: f64,
    pub reject: bool,
    pub level: f64,
    pub critical_value: f64,
    pub ybar_b: f64,
    pub complement_mean: f64,
    pub complement_variance: f64,
}

/// Tests `ybar_B = Ybar` by comparing `ybar_B` with the S-estimate of the
/// mean outside B; the statistic is referred to chi-square with one degree
/// of freedom.
pub fn h0_test(b: &NonProbSample, s: &ProbSample, level: f64) -> Result<H0TestResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("test level {level} outside (0, 1)")));
    }
    if let Some(unit) = s.first_overlap(b) {
        return Err(Error::FrameViolation { unit });
    }
    let y = s.outcome()?;
    let n_hat: f64 = s.d.iter().sum();
    let yw = y.iter().zip(&s.d).map(|(y, d)| y * d).sum::<f64>() / n_hat;
    let v = design_variance_hajek(s)?.value;
    if !(v > 0.0) {
        return Err(Error::Degenerate("variance of the complement mean is zero".into()));
    }
    let yb = b.mean_y();
    let statistic = (yb - yw) * (yb - yw) / v;
    let critical_value = chi_square_1_critical(level);
    Ok(H0TestResult {
        statistic,
        reject: statistic > critical_value,
        level,
        critical_value,
        ybar_b: yb,
        complement_mean: yw,
        complement_variance: v,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeEfficiency {
    pub value: f64,
    pub w_b: f64,
    /// `V(ybar_w)` for the actual design on `U \ B`.
    pub v_complement: f64,
    /// Variance of the same design applied to all of `U`.
    pub v_full: f64,
}

/// `(1 - W_B)^2 V(ybar_w) / V(Ybar')`, where `Ybar'` is the mean from the
/// same design run on all of `U`.
///
/// The full-frame variance uses the SRS formula per design stratum, with the
/// stratum variance of `y` over `U` assembled from the B-values (known
/// exactly) and Hájek moments of S for the rest. Stratified designs are
/// assumed to stratify on the cell label `x`.
pub fn relative_efficiency(b: &NonProbSample, s: &ProbSample, population_size: usize) -> Result<RelativeEfficiency> {
    if let Some(unit) = s.first_overlap(b) {
        return Err(Error::FrameViolation { unit });
    }
    let y = s.outcome()?;
    let n = population_size as f64;
    if b.len() > population_size {
        return Err(Error::InconsistentInputs(format!("n_B = {} exceeds N = {population_size}", b.len())));
    }
    let w_b = b.len() as f64 / n;
    let (frame_sizes, sample_sizes) = match s.design.kind {
        DesignKind::Poisson => {
            return Err(Error::UnsupportedDesign("relative efficiency needs an SRS-type design".into()))
        }
        DesignKind::Srs | DesignKind::StratifiedSrs => (&s.design.frame_sizes, &s.design.sample_sizes),
    };
    let h = frame_sizes.len();
    let stratum_of_b = |i: usize| if h == 1 { 0 } else { b.x[i] };
    // per stratum: (B count, B sum, B sum sq) and S Hájek moments
    let mut nb = vec![0.0; h];
    let mut b1 = vec![0.0; h];
    let mut b2 = vec![0.0; h];
    for i in 0..b.len() {
        let st = stratum_of_b(i);
        if st >= h {
            return Err(Error::UnknownCell(st));
        }
        nb[st] += 1.0;
        b1[st] += b.y[i];
        b2[st] += b.y[i] * b.y[i];
    }
    let mut sd = vec![0.0; h];
    let mut s1 = vec![0.0; h];
    let mut s2 = vec![0.0; h];
    for ((&st, &d), &yi) in s.design_strata.iter().zip(&s.d).zip(y) {
        sd[st] += d;
        s1[st] += d * yi;
        s2[st] += d * yi * yi;
    }
    let v_complement = design_variance_hajek(s)?.value;
    let mut v_full = 0.0;
    for st in 0..h {
        let rest = frame_sizes[st] as f64;
        let big = rest + nb[st];
        let nh = sample_sizes[st] as f64;
        if nh == 0.0 || big == 0.0 {
            continue;
        }
        let (m1, m2) = if sd[st] > 0.0 { (s1[st] / sd[st], s2[st] / sd[st]) } else { (0.0, 0.0) };
        let total = b1[st] + rest * m1;
        let total_sq = b2[st] + rest * m2;
        let var_u = if big > 1.0 { ((total_sq - total * total / big) / (big - 1.0)).max(0.0) } else { 0.0 };
        v_full += big * big * (1.0 - nh / big) * var_u / nh;
    }
    v_full /= n * n;
    let num = (1.0 - w_b) * (1.0 - w_b) * v_complement;
    if !(v_full > 0.0) {
        return Err(Error::Degenerate("variance of the full-frame design is zero".into()));
    }
    Ok(RelativeEfficiency { value: num / v_full, w_b, v_complement, v_full })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::popgen::DesignInfo;

    fn b_sample(y: &[f64], x: &[usize]) -> NonProbSample {
        NonProbSample::new((0..y.len()).collect(), y.to_vec(), x.to_vec(), None).unwrap()
    }

    fn srs(members: Vec<usize>, y: Vec<f64>, frame: usize) -> ProbSample {
        let n = members.len();
        ProbSample::new(
            members,
            vec![n as f64 / frame as f64; n],
            vec![0; n],
            vec![0; n],
            None,
            Some(y),
            DesignInfo { kind: DesignKind::Srs, frame_sizes: vec![frame], sample_sizes: vec![n] },
        )
        .unwrap()
    }

    #[test]
    fn census_has_zero_variance() {
        let b = b_sample(&[1.0, 2.0, 3.0], &[0, 0, 1]);
        assert_eq!(poststrat_variance(&b, &[2, 1], false).unwrap().value, 0.0);
    }

    #[test]
    fn single_stratum_arithmetic() {
        let b = b_sample(&[1.0, 1.0], &[0, 0]);
        assert_eq!(poststrat_variance(&b, &[4], false).unwrap().value, 4.0);
        assert_eq!(poststrat_variance(&b, &[4], true).unwrap().value, 0.0);
    }

    #[test]
    fn srs_hajek_textbook_case() {
        let big = 1000;
        let s = srs(vec![3, 7], vec![0.0, 2.0], big);
        let v = design_variance_hajek(&s).unwrap().value;
        let expected = 2.0 / 2.0 * (1.0 - 2.0 / big as f64);
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn test_statistic_arithmetic() {
        // ybar_w = 1, V = 1 from SRS n = 2 with u = (-1, 1) and negligible fpc
        let s = srs(vec![10, 11], vec![0.0, 2.0], usize::MAX / 4);
        let b = b_sample(&[3.0, 3.0], &[0, 0]);
        let r = h0_test(&b, &s, 0.05).unwrap();
        assert!((r.statistic - 4.0).abs() < 1e-9);
        assert!(r.reject);
        let b = b_sample(&[1.0], &[0]);
        let r = h0_test(&b, &s, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.reject);
    }

    #[test]
    fn constant_outcome_is_degenerate() {
        let s = srs(vec![10, 11, 12], vec![1.0; 3], 100);
        let b = b_sample(&[1.0; 4], &[0; 4]);
        assert!(matches!(h0_test(&b, &s, 0.05), Err(Error::Degenerate(_))));
        assert!(matches!(relative_efficiency(&b, &s, 104), Err(Error::Degenerate(_))));
    }
}
