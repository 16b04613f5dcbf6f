use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Total,
    Mean,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Total => "total",
            Target::Mean => "mean",
        }
    }
}

/// A point estimate with optional variance and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub estimator_id: String,
    pub target: Target,
    pub value: f64,
    /// Variance of `value` on its own scale.
    pub variance: Option<f64>,
    /// Known `N`, which links the total and mean views.
    pub population_size: Option<f64>,
    /// Validity conditions the estimator relies on.
    pub assumptions: Vec<String>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl Estimate {
    pub fn new(estimator_id: &str, target: Target, value: f64) -> Self {
        Estimate {
            estimator_id: estimator_id.to_string(),
            target,
            value,
            variance: None,
            population_size: None,
            assumptions: Vec::new(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_population_size(mut self, n: f64) -> Self {
        self.population_size = Some(n);
        self
    }

    pub fn with_variance(mut self, v: f64) -> Self {
        self.variance = Some(v.max(0.0));
        self
    }

    pub fn assuming(mut self, what: &str) -> Self {
        self.assumptions.push(what.to_string());
        self
    }

    pub fn diag(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn total(&self) -> Option<f64> {
        match self.target {
            Target::Total => Some(self.value),
            Target::Mean => self.population_size.map(|n| n * self.value),
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self.target {
            Target::Mean => Some(self.value),
            Target::Total => self.population_size.map(|n| self.value / n),
        }
    }

    /// Variance of the mean view.
    pub fn mean_variance(&self) -> Option<f64> {
        let v = self.variance?;
        match self.target {
            Target::Mean => Some(v),
            Target::Total => self.population_size.map(|n| v / (n * n)),
        }
    }
}
