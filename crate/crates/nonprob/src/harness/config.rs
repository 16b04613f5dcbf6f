use nonprob_core::estimators::matching::MatchOn;
use nonprob_core::popgen::DgpSpec;
use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One Monte Carlo experiment: a population model, the two sampling
/// mechanisms and the estimators to run on every replicate.
///
/// B is always drawn by independent Bernoulli selection with the unit
/// propensities `p_true` produced by the DGP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Qualitative outcome the scenario is meant to show.
    #[serde(default)]
    pub expected: String,
    pub dgp: DgpSpec,
    #[serde(default)]
    pub population: PopulationMode,
    #[serde(default)]
    pub s_sample: Option<SSampleConfig>,
    pub estimators: Vec<EstimatorEntry>,
    pub replicates: usize,
    pub root_seed: u64,
    /// Population sizes to sweep; empty means `dgp.size` only.
    #[serde(default)]
    pub n_grid: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PopulationMode {
    /// One population per grid point; only the samples vary.
    #[default]
    Fixed,
    /// A fresh population every replicate.
    PerReplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SSampleConfig {
    pub design: SDesign,
    #[serde(default)]
    pub frame: FrameSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SDesign {
    /// SRS with `n = round(fraction * frame size)`.
    SrsFraction { fraction: f64 },
    SrsSize { n: usize },
    /// Stratified SRS on the DGP strata.
    Stratified { fractions: Vec<f64> },
    Poisson { rates: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrameSpec {
    #[default]
    Full,
    ComplementOfB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorEntry {
    /// Output label; defaults to the estimator kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub expect: Expectation,
    #[serde(flatten)]
    pub spec: EstimatorSpec,
}

impl EstimatorEntry {
    pub fn new(spec: EstimatorSpec, expect: Expectation) -> Self {
        EstimatorEntry { label: None, expect, spec }
    }

    pub fn labelled(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.spec.kind().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Unbiased,
    Biased,
    #[default]
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TSpec {
    /// Cell indicators.
    Dummies,
    Intercept,
    /// `(1, v(x))`; `v(x) = x` when no values are given.
    Linear {
        #[serde(default)]
        values: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Saturated,
    Logistic { t: TSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceSpec {
    #[default]
    Census,
    PseudoPopulation,
    UnweightedS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTwoSpec {
    Intercept,
    #[default]
    InterceptAndZ,
    CellDummies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Expansion,
    PostStratified {
        #[serde(default)]
        variance: bool,
        #[serde(default)]
        centred: bool,
    },
    Calibration {
        t: TSpec,
        #[serde(default)]
        variance: bool,
        /// Totals estimated from S instead of the census.
        #[serde(default)]
        estimated_totals: bool,
    },
    Ipw {
        model: ModelSpec,
        #[serde(default)]
        source: SourceSpec,
    },
    ReferenceIpw {
        model: ModelSpec,
    },
    Sm {
        on: MatchOn,
        /// Also report SM means of each DGP stratum.
        #[serde(default)]
        domains: bool,
    },
    TwoPhaseSm {
        on: MatchOn,
        /// Fixed support threshold.
        #[serde(default)]
        epsilon: Option<f64>,
        /// Quantile of the within-B NN distances used when `epsilon` is absent.
        #[serde(default)]
        epsilon_quantile: Option<f64>,
        #[serde(default)]
        variables: PhaseTwoSpec,
    },
    /// Hájek mean of y over S.
    Hajek {
        #[serde(default)]
        variance: bool,
    },
    /// Hájek mean over a second sample drawn with the same design from all of U.
    HajekFullFrame,
    SplitPopulation,
    Composite {
        /// Fixed gamma; estimated when absent.
        #[serde(default)]
        gamma: Option<f64>,
    },
    H0Test {
        level: f64,
    },
    RelativeEfficiency,
}

impl EstimatorSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EstimatorSpec::Expansion => "expansion",
            EstimatorSpec::PostStratified { .. } => "post_stratified",
            EstimatorSpec::Calibration { .. } => "calibration",
            EstimatorSpec::Ipw { .. } => "ipw",
            EstimatorSpec::ReferenceIpw { .. } => "reference_ipw",
            EstimatorSpec::Sm { .. } => "sm",
            EstimatorSpec::TwoPhaseSm { .. } => "two_phase_sm",
            EstimatorSpec::Hajek { .. } => "hajek",
            EstimatorSpec::HajekFullFrame => "hajek_full_frame",
            EstimatorSpec::SplitPopulation => "split_population",
            EstimatorSpec::Composite { .. } => "composite",
            EstimatorSpec::H0Test { .. } => "h0_test",
            EstimatorSpec::RelativeEfficiency => "relative_efficiency",
        }
    }

    pub fn needs_s(&self) -> bool {
        !matches!(
            self,
            EstimatorSpec::Expansion
                | EstimatorSpec::PostStratified { .. }
                | EstimatorSpec::Calibration { estimated_totals: false, .. }
                | EstimatorSpec::Ipw { source: SourceSpec::Census, .. }
        )
    }

    /// Names of the point outputs this estimator contributes.
    pub(crate) fn point_slots(&self, label: &str, num_strata: usize) -> Vec<String> {
        match self {
            EstimatorSpec::H0Test { .. } | EstimatorSpec::RelativeEfficiency => Vec::new(),
            EstimatorSpec::Sm { domains: true, .. } => core::iter::once(label.to_string())
                .chain((0..num_strata).map(|c| format!("{label}.domain_{c}")))
                .collect(),
            _ => vec![label.to_string()],
        }
    }

    /// Names of the per-replicate scalar metrics this estimator reports.
    pub(crate) fn metric_slots(&self) -> &'static [&'static str] {
        match self {
            EstimatorSpec::TwoPhaseSm { .. } => &["s0_share", "s0_true_share", "s0_misclassified"],
            EstimatorSpec::Composite { gamma: None } => &["gamma_hat"],
            EstimatorSpec::H0Test { .. } => &["h0_reject", "h0_eta"],
            EstimatorSpec::RelativeEfficiency => &["re"],
            _ => &[],
        }
    }
}

impl ScenarioConfig {
    pub fn grid(&self) -> Vec<usize> {
        if self.n_grid.is_empty() {
            vec![self.dgp.size]
        } else {
            self.n_grid.clone()
        }
    }

    /// DGP at population size `n`.
    pub fn dgp_at(&self, n: usize) -> DgpSpec {
        let mut spec = self.dgp.clone();
        spec.size = n;
        spec
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("n_grid must be strictly increasing, got {:?}", self.n_grid));
        }
        if self.estimators.is_empty() {
            return bad("no estimators configured".into());
        }
        let mut labels: Vec<String> = self.estimators.iter().map(EstimatorEntry::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate estimator label {}", w[0]));
        }
        for e in &self.estimators {
            if let EstimatorSpec::TwoPhaseSm { epsilon: Some(_), epsilon_quantile: Some(_), .. } = e.spec {
                return bad(format!("estimator {} sets both epsilon and epsilon_quantile", e.label()));
            }
            if e.spec.needs_s() && self.s_sample.is_none() {
                return bad(format!("estimator {} needs an S-sample but none is configured", e.label()));
            }
        }
        for n in self.grid() {
            self.dgp_at(n).validate()?;
        }
        Ok(())
    }
}
