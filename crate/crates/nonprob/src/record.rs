//! Flat text renderings of estimates and check reports.

use std::fmt::Write as _;

use nonprob_core::diagnostics::CheckReport;
use nonprob_core::estimators::Estimate;

pub const ESTIMATE_HEADER: &str = "estimator_id,target,value,variance,diagnostics";
pub const CHECKS_HEADER: &str = "diagnostic,check,residual,tolerance,satisfied";

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

/// `estimator_id,target,value,variance,k=v;k=v`. A missing variance is empty.
pub fn estimate_record(e: &Estimate) -> String {
    let diags: Vec<String> = e.diagnostics.iter().map(|(k, v)| format!("{k}={}", num(*v))).collect();
    format!(
        "{},{},{},{},{}",
        e.estimator_id,
        e.target.as_str(),
        num(e.value),
        e.variance.map(num).unwrap_or_default(),
        diags.join(";")
    )
}

pub fn estimates_csv(estimates: &[Estimate]) -> String {
    let mut out = String::from(ESTIMATE_HEADER);
    out.push('\n');
    for e in estimates {
        out.push_str(&estimate_record(e));
        out.push('\n');
    }
    out
}

/// Checks of several reports, each row tagged with the report name.
pub fn checks_csv(reports: &[(String, CheckReport)]) -> String {
    let mut out = String::from(CHECKS_HEADER);
    out.push('\n');
    for (name, r) in reports {
        for c in &r.checks {
            let _ = writeln!(out, "{name},{},{},{},{}", c.name, num(c.residual), num(c.tolerance), c.satisfied);
        }
    }
    out
}

fn short(v: f64) -> String {
    if v == 0.0 || !v.is_finite() || (1e-3..1e6).contains(&v.abs()) {
        num(v)
    } else {
        format!("{v:.3e}")
    }
}

/// Human-readable summary with the interpretive notes of every report.
pub fn report_text(reports: &[(String, CheckReport)], statistics: &[(String, String, f64)]) -> String {
    let mut out = String::new();
    for (name, r) in reports {
        let _ = writeln!(out, "[{name}]");
        for c in &r.checks {
            let verdict = if c.satisfied { "ok" } else { "FAILED" };
            let _ = writeln!(out, "  {:<28} residual {:<12} tolerance {:<12} {verdict}", c.name, short(c.residual), short(c.tolerance));
        }
        for n in &r.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        out.push('\n');
    }
    let mut current = "";
    for (diag, name, value) in statistics {
        if diag != current {
            let _ = writeln!(out, "[{diag}]");
            current = diag;
        }
        let _ = writeln!(out, "  {name} = {}", num(*value));
    }
    out
}

pub fn statistics_csv(statistics: &[(String, String, f64)]) -> String {
    let mut out = String::from("diagnostic,statistic,value\n");
    for (d, n, v) in statistics {
        let _ = writeln!(out, "{d},{n},{}", num(*v));
    }
    out
}
