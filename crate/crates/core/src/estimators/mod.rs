//! Point estimators of the population total and mean.

mod estimate;

pub mod calibration;
pub mod matching;
pub mod propensity;
pub mod simple;
pub mod supplementary;

pub use calibration::{
    calibrate, calibration_estimate, least_distance_weights, CalibrationFit, CalibrationSpec, CalibrationTotals,
    InitialWeights, TMap,
};
pub use estimate::{Estimate, Target};
pub use matching::{
    default_epsilon, default_metric, epsilon_at_quantile, DEFAULT_EPSILON_QUANTILE, nn_match, sm_domain_means, sm_estimate, two_phase_sm, Covariates, MatchAssignment,
    MatchOn, Metric, PhaseTwoVariables, TwoPhaseFit,
};
pub use propensity::{
    fit_propensity, ipw, normalise_propensities, reference_ipw, CovariateSource, PropensityFit, PropensityModel,
    PropensitySource,
};
pub use simple::{collapse_cells, expansion, post_stratified};
pub use supplementary::{composite, hajek_mean, optimal_gamma, split_population, Gamma};
