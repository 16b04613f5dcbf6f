use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use super::config::{Expectation, ScenarioConfig};
use super::run::{Layout, Point, ReplicateOutput, SlotResult};
use super::HarnessError;

/// Two-sided 95% normal quantile used for interval coverage.
pub const Z_95: f64 = 1.959963984540054;

pub const SUMMARY_HEADER: &str = "scenario,estimator,N,R,bias,mc_se,rmse,var_hat_mean,coverage,fail_rate";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub estimator: String,
    pub n: usize,
    pub r: usize,
    pub r_ok: usize,
    /// Mean of `estimate - truth` over successful replicates.
    pub bias: f64,
    pub mc_se: f64,
    pub rmse: f64,
    /// Variance of `estimate - truth`, divisor `r_ok`.
    pub emp_var: f64,
    pub var_hat_mean: Option<f64>,
    pub coverage: Option<f64>,
    pub fail_rate: f64,
    pub mean_estimate: f64,
    pub mean_truth: f64,
    /// Lag-1 autocorrelation of the errors in replicate order.
    pub lag1: Option<f64>,
    pub expect: Expectation,
}

impl PointSummary {
    /// `|bias|` in units of its Monte Carlo standard error.
    pub fn bias_z(&self) -> f64 {
        self.bias.abs() / self.mc_se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub estimator: String,
    pub n: usize,
    pub name: String,
    pub r_ok: usize,
    pub mean: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorCount {
    pub estimator: String,
    pub n: usize,
    pub kind: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub scenario: String,
    pub replicates: usize,
    pub points: Vec<PointSummary>,
    pub metrics: Vec<MetricSummary>,
    pub errors: Vec<ErrorCount>,
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

impl McSummary {
    pub fn point(&self, estimator: &str, n: usize) -> Option<&PointSummary> {
        self.points.iter().find(|p| p.estimator == estimator && p.n == n)
    }

    pub fn metric(&self, estimator: &str, n: usize, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.estimator == estimator && m.n == n && m.name == name)
    }

    /// All grid points of one estimator, in grid order.
    pub fn series(&self, estimator: &str) -> Vec<&PointSummary> {
        self.points.iter().filter(|p| p.estimator == estimator).collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.scenario,
                p.estimator,
                p.n,
                p.r,
                num(p.bias),
                num(p.mc_se),
                num(p.rmse),
                opt(p.var_hat_mean),
                opt(p.coverage),
                num(p.fail_rate)
            );
        }
        out
    }

    /// Long format, one statistic per row, for plotting.
    pub fn long_csv(&self) -> String {
        let mut out = String::from("scenario,estimator,N,statistic,value\n");
        let mut row = |est: &str, n: usize, stat: &str, v: String| {
            let _ = writeln!(out, "{},{est},{n},{stat},{v}", self.scenario);
        };
        for p in &self.points {
            let stats = [
                ("bias", num(p.bias)),
                ("mc_se", num(p.mc_se)),
                ("rmse", num(p.rmse)),
                ("emp_var", num(p.emp_var)),
                ("var_hat_mean", opt(p.var_hat_mean)),
                ("coverage", opt(p.coverage)),
                ("fail_rate", num(p.fail_rate)),
                ("mean_estimate", num(p.mean_estimate)),
                ("mean_truth", num(p.mean_truth)),
                ("r_ok", p.r_ok.to_string()),
                ("lag1_autocorr", opt(p.lag1)),
            ];
            for (name, v) in stats {
                row(&p.estimator, p.n, name, v);
            }
        }
        for m in &self.metrics {
            row(&m.estimator, m.n, &m.name, num(m.mean));
            row(&m.estimator, m.n, &format!("{}_mc_se", m.name), num(m.mc_se));
        }
        out
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("scenario,estimator,N,metric,r_ok,mean,mc_se\n");
        for m in &self.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.scenario,
                m.estimator,
                m.n,
                m.name,
                m.r_ok,
                num(m.mean),
                num(m.mc_se)
            );
        }
        out
    }

    pub fn errors_csv(&self) -> String {
        let mut out = String::from("scenario,estimator,N,kind,count\n");
        for e in &self.errors {
            let _ = writeln!(out, "{},{},{},{},{}", self.scenario, e.estimator, e.n, e.kind, e.count);
        }
        out
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (m - 1.0) / m).sqrt())
}

pub(crate) fn summarise_point(label: &str, n: usize, expect: Expectation, results: &[SlotResult<Point>]) -> PointSummary {
    let ok: Vec<&Point> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let m = ok.len() as f64;
    let errs: Vec<f64> = ok.iter().map(|p| p.value - p.truth).collect();
    let (bias, mc_se) = mean_se(&errs);
    let emp_var = errs.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / m;
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / m).sqrt();
    let with_var: Vec<(&Point, f64)> = ok.iter().filter_map(|p| p.variance.map(|v| (*p, v))).collect();
    let (var_hat_mean, coverage) = if with_var.is_empty() {
        (None, None)
    } else {
        let k = with_var.len() as f64;
        let covered = with_var.iter().filter(|(p, v)| (p.value - p.truth).abs() <= Z_95 * v.sqrt()).count();
        (Some(with_var.iter().map(|(_, v)| v).sum::<f64>() / k), Some(covered as f64 / k))
    };
    let ss: f64 = errs.iter().map(|e| (e - bias) * (e - bias)).sum();
    let lag1 = (errs.len() > 2 && ss > 0.0)
        .then(|| errs.windows(2).map(|w| (w[0] - bias) * (w[1] - bias)).sum::<f64>() / ss);
    PointSummary {
        estimator: label.to_string(),
        n,
        r: results.len(),
        r_ok: ok.len(),
        bias,
        mc_se,
        rmse,
        emp_var,
        var_hat_mean,
        coverage,
        fail_rate: (results.len() - ok.len()) as f64 / results.len() as f64,
        mean_estimate: ok.iter().map(|p| p.value).sum::<f64>() / m,
        mean_truth: ok.iter().map(|p| p.truth).sum::<f64>() / m,
        lag1,
        expect,
    }
}

fn count_errors<T>(label: &str, n: usize, results: &[SlotResult<T>], out: &mut Vec<ErrorCount>) {
    let mut by_kind: BTreeMap<&str, usize> = BTreeMap::new();
    for r in results {
        if let Err(k) = r {
            *by_kind.entry(k).or_default() += 1;
        }
    }
    out.extend(by_kind.into_iter().map(|(kind, count)| ErrorCount {
        estimator: label.to_string(),
        n,
        kind: kind.to_string(),
        count,
    }));
}

fn all_failed<T>(label: &str, n: usize, results: &[SlotResult<T>]) -> HarnessError {
    let mut kinds: Vec<&str> = results.iter().filter_map(|r| r.as_ref().err().copied()).collect();
    kinds.sort();
    kinds.dedup();
    HarnessError::AllFailed { estimator: label.to_string(), n, kinds: kinds.join(";") }
}

/// Reduces replicate outputs, in replicate order, to the summary tables.
pub(crate) fn summarise(
    cfg: &ScenarioConfig,
    layout: &Layout,
    per_grid: &[(usize, Vec<ReplicateOutput>)],
) -> Result<McSummary, HarnessError> {
    let mut summary = McSummary {
        scenario: cfg.name.clone(),
        replicates: cfg.replicates,
        points: Vec::new(),
        metrics: Vec::new(),
        errors: Vec::new(),
    };
    for (n, outputs) in per_grid {
        for (j, (label, entry)) in layout.points.iter().enumerate() {
            let results: Vec<SlotResult<Point>> = outputs.iter().map(|o| o.points[j]).collect();
            if results.iter().all(Result::is_err) {
                return Err(all_failed(label, *n, &results));
            }
            count_errors(label, *n, &results, &mut summary.errors);
            summary.points.push(summarise_point(label, *n, cfg.estimators[*entry].expect, &results));
        }
        for (j, (label, name, entry)) in layout.metrics.iter().enumerate() {
            let results: Vec<SlotResult<f64>> = outputs.iter().map(|o| o.metrics[j]).collect();
            if results.iter().all(Result::is_err) {
                return Err(all_failed(label, *n, &results));
            }
            let first_metric = layout.metrics.iter().position(|m| m.2 == *entry) == Some(j);
            let has_points = layout.points.iter().any(|p| p.1 == *entry);
            if first_metric && !has_points {
                count_errors(label, *n, &results, &mut summary.errors);
            }
            let ok: Vec<f64> = results.iter().filter_map(|r| r.ok()).collect();
            let (mean, mc_se) = mean_se(&ok);
            summary.metrics.push(MetricSummary {
                estimator: label.clone(),
                n: *n,
                name: name.to_string(),
                r_ok: ok.len(),
                mean,
                mc_se,
            });
        }
    }
    Ok(summary)
}
