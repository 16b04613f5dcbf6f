//! Named scenarios, one per qualitative claim the harness reproduces.

use nonprob_core::estimators::matching::MatchOn;
use nonprob_core::popgen::{CovariateSpec, DgpSpec, Pairing, UnderCoverage, UnderCoverageRule};

use super::config::*;
use super::HarnessError;

pub const PRESETS: &[&str] = &[
    "sp_flat",
    "qr_flat",
    "calib_linear",
    "ipw_logistic",
    "ref_ipw",
    "sm_basic",
    "sec2_5_counterexample",
    "undercoverage_kimrao",
    "hetero_mu",
    "hetero_p",
    "split_composite",
];

const CONSISTENCY_GRID: [usize; 3] = [1_000, 10_000, 100_000];
const BIAS_REPLICATES: usize = 2_000;
const COVERAGE_REPLICATES: usize = 10_000;
const ROOT_SEED: u64 = 20_240_901;

fn entry(spec: EstimatorSpec, expect: Expectation) -> EstimatorEntry {
    EstimatorEntry::new(spec, expect)
}

fn even(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Stratum means `a + b * midpoint` for `k` equal-width bins of `z` on [0, 1).
fn grid_means(k: usize, a: f64, b: f64) -> Vec<f64> {
    (0..k).map(|c| a + b * (c as f64 + 0.5) / k as f64).collect()
}

fn base(name: &str, description: &str, expected: &str, dgp: DgpSpec, estimators: Vec<EstimatorEntry>) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        description: description.into(),
        expected: expected.into(),
        dgp,
        population: PopulationMode::Fixed,
        s_sample: None,
        estimators,
        replicates: BIAS_REPLICATES,
        root_seed: ROOT_SEED,
        n_grid: CONSISTENCY_GRID.to_vec(),
    }
}

pub fn preset(name: &str) -> Result<ScenarioConfig, HarnessError> {
    use EstimatorSpec as E;
    use Expectation::*;
    let cfg = match name {
        "sp_flat" => {
            let dgp = DgpSpec::new(1_000, even(4), vec![5.0; 4], vec![0.1, 0.3, 0.5, 0.7], 1.0);
            let mut c = base(
                name,
                "y iid across strata while selection varies by stratum; a new population each replicate",
                "expansion unbiased for the population mean",
                dgp,
                vec![entry(E::Expansion, Unbiased)],
            );
            c.population = PopulationMode::PerReplicate;
            c
        }
        "qr_flat" => {
            let dgp = DgpSpec::new(1_000, even(4), vec![1.0, 2.0, 3.0, 4.0], vec![0.3; 4], 1.0);
            base(
                name,
                "constant Bernoulli selection with stratum means 1..4",
                "expansion and post-stratification unbiased; centred variance covers",
                dgp,
                vec![
                    entry(E::Expansion, Unbiased),
                    entry(E::PostStratified { variance: true, centred: true }, Unbiased),
                    entry(E::PostStratified { variance: true, centred: false }, Unbiased).labelled("post_stratified_uncentred"),
                ],
            )
        }
        "calib_linear" => {
            let k = 5;
            let dgp = DgpSpec::new(
                1_000,
                even(k),
                (0..k).map(|x| 1.0 + 0.5 * x as f64).collect(),
                (0..k).map(|x| 1.0 / (2.0 + 0.5 * x as f64)).collect(),
                1.0,
            );
            base(
                name,
                "mean linear in x, selection varying with x only",
                "calibration on (1, x) unbiased; expansion biased",
                dgp,
                vec![
                    entry(E::Calibration { t: TSpec::Linear { values: None }, variance: true, estimated_totals: false }, Unbiased),
                    entry(E::Expansion, Biased),
                ],
            )
        }
        "ipw_logistic" => {
            let k = 5;
            let dgp = DgpSpec::new(
                1_000,
                even(k),
                (0..k).map(|x| 1.0 + x as f64).collect(),
                (0..k).map(|x| nonprob_core::stats::logistic(-1.0 + 0.5 * x as f64)).collect(),
                1.0,
            );
            base(
                name,
                "logistic propensity in x with known census of x",
                "logistic IPW unbiased; expansion biased",
                dgp,
                vec![
                    entry(
                        E::Ipw { model: ModelSpec::Logistic { t: TSpec::Linear { values: None } }, source: SourceSpec::Census },
                        Unbiased,
                    ),
                    entry(E::Expansion, Biased),
                ],
            )
        }
        "ref_ipw" => {
            let dgp = DgpSpec::new(10_000, even(4), vec![1.0, 2.0, 3.0, 4.0], vec![0.1, 0.2, 0.3, 0.4], 1.0);
            let mut c = base(
                name,
                "propensity recovered from pooled B and stratified S memberships",
                "reference IPW unbiased; expansion biased",
                dgp,
                vec![entry(E::ReferenceIpw { model: ModelSpec::Saturated }, Unbiased), entry(E::Expansion, Biased)],
            );
            c.s_sample = Some(SSampleConfig {
                design: SDesign::Stratified { fractions: vec![0.05, 0.02, 0.04, 0.01] },
                frame: FrameSpec::Full,
            });
            c.n_grid = vec![10_000, 100_000];
            c
        }
        "sm_basic" => {
            let k = 5;
            let mut dgp = DgpSpec::new(1_000, even(k), grid_means(k, 1.0, 2.0), vec![0.1, 0.2, 0.3, 0.4, 0.5], 1.0);
            dgp.covariate = CovariateSpec::StratumGrid;
            dgp.covariate_slope = 2.0;
            let mut c = base(
                name,
                "y = 1 + 2z + e, selection depends on z only; SRS reference sample",
                "SM on z consistent; expansion biased",
                dgp,
                vec![entry(E::Sm { on: MatchOn::Z, domains: false }, Unbiased), entry(E::Expansion, Biased)],
            );
            c.s_sample = Some(SSampleConfig { design: SDesign::SrsFraction { fraction: 0.05 }, frame: FrameSpec::Full });
            c
        }
        "sec2_5_counterexample" => {
            let mut dgp = DgpSpec::new(10_000, even(2), vec![0.0, 1.0], vec![0.1, 0.1], 1.0);
            dgp.covariate = CovariateSpec::Uniform;
            let mut c = base(
                name,
                "matching variable independent of y and of the design strata; S stratified with fractions 0.5 and 0.1",
                "SM stratum means biased, overall SM mean unbiased",
                dgp,
                vec![entry(E::Sm { on: MatchOn::Z, domains: true }, Any)],
            );
            c.s_sample = Some(SSampleConfig { design: SDesign::Stratified { fractions: vec![0.5, 0.1] }, frame: FrameSpec::Full });
            c.n_grid = Vec::new();
            c
        }
        "undercoverage_kimrao" => {
            let k = 5;
            let mut dgp = DgpSpec::new(2_500, even(k), grid_means(k, 1.0, 2.0), vec![0.5; k], 0.5);
            dgp.covariate = CovariateSpec::StratumGrid;
            dgp.covariate_slope = 2.0;
            dgp.under_coverage = UnderCoverage { fraction: 0.2, strata: Some(vec![k - 1]), rule: UnderCoverageRule::LargestY };
            let mut c = base(
                name,
                "top z-bin (20% of units) has zero B propensity; mean linear in z",
                "two-phase SM removes most of the naive SM bias; the unsupported share of S approaches the uncovered share",
                dgp,
                vec![
                    entry(E::Sm { on: MatchOn::Z, domains: false }, Biased),
                    entry(
                        E::TwoPhaseSm {
                            on: MatchOn::Z,
                            epsilon: None,
                            epsilon_quantile: Some(1.0),
                            variables: PhaseTwoSpec::InterceptAndZ,
                        },
                        Any,
                    ),
                    entry(
                        E::TwoPhaseSm { on: MatchOn::Z, epsilon: None, epsilon_quantile: None, variables: PhaseTwoSpec::InterceptAndZ },
                        Any,
                    )
                    .labelled("two_phase_sm_q95"),
                ],
            );
            c.s_sample = Some(SSampleConfig { design: SDesign::SrsFraction { fraction: 0.1 }, frame: FrameSpec::Full });
            c.n_grid = vec![2_500, 25_000];
            c
        }
        "hetero_mu" => {
            let mut dgp = DgpSpec::new(1_000, even(4), vec![1.0, 2.0, 3.0, 4.0], vec![0.2, 0.3, 0.4, 0.5], 1.0);
            dgp.mean_heterogeneity = 1.0;
            base(
                name,
                "unit means vary within cells but average to the cell mean; propensity constant within cells",
                "post-stratification, dummy calibration and saturated IPW unbiased",
                dgp,
                vec![
                    entry(E::PostStratified { variance: false, centred: false }, Unbiased),
                    entry(E::Calibration { t: TSpec::Dummies, variance: false, estimated_totals: false }, Unbiased),
                    entry(E::Ipw { model: ModelSpec::Saturated, source: SourceSpec::Census }, Unbiased),
                ],
            )
        }
        "hetero_p" => {
            let mut dgp = DgpSpec::new(10_000, even(4), vec![1.0, 2.0, 3.0, 4.0], vec![0.2, 0.3, 0.4, 0.5], 1.0);
            dgp.propensity_heterogeneity = 0.5;
            dgp.propensity_pairing = Pairing::ByOutcome;
            let mut c = base(
                name,
                "unit propensities vary within cells, higher for larger y, averaging to the cell propensity",
                "cell-propensity IPW biased although the cell propensities are correct on average",
                dgp,
                vec![
                    entry(E::Ipw { model: ModelSpec::Saturated, source: SourceSpec::Census }, Biased),
                    entry(E::PostStratified { variance: false, centred: false }, Biased),
                ],
            );
            c.n_grid = Vec::new();
            c
        }
        "split_composite" => {
            let dgp = DgpSpec::new(20_000, vec![1.0], vec![0.0], vec![0.5], 1.0);
            let mut c = base(
                name,
                "B covers half the population; SRS of 500 from U minus B",
                "split-population unbiased; test holds its size under non-informative B",
                dgp,
                vec![
                    entry(E::SplitPopulation, Unbiased),
                    entry(E::Composite { gamma: None }, Any),
                    entry(E::Hajek { variance: true }, Unbiased),
                    entry(E::HajekFullFrame, Unbiased),
                    entry(E::H0Test { level: 0.05 }, Any),
                    entry(E::RelativeEfficiency, Any),
                    entry(E::Expansion, Any),
                ],
            );
            c.s_sample = Some(SSampleConfig { design: SDesign::SrsSize { n: 500 }, frame: FrameSpec::ComplementOfB });
            c.replicates = COVERAGE_REPLICATES;
            c.n_grid = Vec::new();
            c
        }
        other => return Err(HarnessError::Config(format!("unknown preset {other}; known: {}", PRESETS.join(", ")))),
    };
    Ok(cfg)
}
