//! Estimators that combine `B` with a probability sample of `y` drawn from
//! the rest of the population.

use alloc::format;

use super::{Estimate, Target};
use crate::error::{Error, Result};
use crate::popgen::{NonProbSample, ProbSample};
use crate::uncertainty::design_variance_hajek;

/// `sum_S y_i / pi_i / sum_S 1 / pi_i`.
pub fn hajek_mean(s: &ProbSample) -> Result<Estimate> {
    let y = s.outcome()?;
    if s.is_empty() {
        return Err(Error::Degenerate("empty S-sample".into()));
    }
    let (num, den) = y
        .iter()
        .zip(&s.d)
        .fold((0.0, 0.0), |(n, d), (yi, di)| (n + yi * di, d + di));
    Ok(Estimate::new("hajek", Target::Mean, num / den).diag("n_s", s.len() as f64).diag("sum_d", den))
}

fn check_frame(b: &NonProbSample, s: &ProbSample, population_size: usize) -> Result<f64> {
    if let Some(unit) = s.first_overlap(b) {
        return Err(Error::FrameViolation { unit });
    }
    if b.len() > population_size {
        return Err(Error::InconsistentInputs(format!(
            "n_B = {} exceeds N = {population_size}",
            b.len()
        )));
    }
    Ok(b.len() as f64 / population_size as f64)
}

/// `W_B ybar_B + (1 - W_B) ybar_w` with `W_B = n_B / N`.
pub fn split_population(b: &NonProbSample, s: &ProbSample, population_size: usize) -> Result<Estimate> {
    let w_b = check_frame(b, s, population_size)?;
    let yb = b.mean_y();
    // a census B leaves nothing for S to estimate
    let yw = if w_b == 1.0 { yb } else { hajek_mean(s)?.value };
    let mut est = Estimate::new("split_population", Target::Mean, w_b * yb + (1.0 - w_b) * yw)
        .with_population_size(population_size as f64)
        .assuming("S is a probability sample from U minus B")
        .diag("w_b", w_b)
        .diag("ybar_b", yb)
        .diag("ybar_w", yw);
    if w_b < 1.0 {
        if let Ok(v) = design_variance_hajek(s) {
            est = est.with_variance((1.0 - w_b) * (1.0 - w_b) * v.value);
        }
    }
    Ok(est)
}

/// Composition weight for [`composite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Fixed(f64),
    /// `min(W_B + (1 - W_B) V(ybar_w) / (ybar_B - ybar_w)^2, 1)`.
    Estimated,
}

/// `gamma ybar_B + (1 - gamma) ybar_w`.
pub fn composite(b: &NonProbSample, s: &ProbSample, gamma: Gamma, population_size: usize) -> Result<Estimate> {
    let w_b = check_frame(b, s, population_size)?;
    let yb = b.mean_y();
    let hajek = hajek_mean(s)?;
    let yw = hajek.value;
    let g = match gamma {
        Gamma::Fixed(g) => {
            if !(g >= w_b && g <= 1.0) {
                return Err(Error::Domain { value: g, lower: w_b, upper: 1.0 });
            }
            g
        }
        Gamma::Estimated => {
            let v = design_variance_hajek(s)?.value;
            let diff = yb - yw;
            if diff == 0.0 {
                1.0
            } else {
                (w_b + (1.0 - w_b) * v / (diff * diff)).min(1.0)
            }
        }
    };
    Ok(Estimate::new("composite", Target::Mean, g * yb + (1.0 - g) * yw)
        .with_population_size(population_size as f64)
        .assuming("S is a probability sample from U minus B")
        .diag("gamma", g)
        .diag("w_b", w_b)
        .diag("ybar_b", yb)
        .diag("ybar_w", yw))
}

/// MSE-minimising composition weight `(V + W_B delta^2) / (V + delta^2)`.
pub fn optimal_gamma(v_w: f64, w_b: f64, delta: f64) -> Result<f64> {
    if !(v_w >= 0.0) {
        return Err(Error::Domain { value: v_w, lower: 0.0, upper: f64::INFINITY });
    }
    if !(0.0..=1.0).contains(&w_b) {
        return Err(Error::Domain { value: w_b, lower: 0.0, upper: 1.0 });
    }
    let d2 = delta * delta;
    if v_w == 0.0 && d2 == 0.0 {
        return Err(Error::Indeterminate("optimal gamma with V = 0 and delta = 0".into()));
    }
    Ok((v_w + w_b * d2) / (v_w + d2))
}
