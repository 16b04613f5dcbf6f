use nonprob::harness::presets::{preset, PRESETS};
use nonprob::harness::*;
use nonprob_core::popgen::{DgpSpec, Pairing};
use proptest::prelude::*;

fn small(name: &str, replicates: usize, grid: Vec<usize>) -> ScenarioConfig {
    let mut cfg = preset(name).unwrap();
    cfg.replicates = replicates;
    cfg.n_grid = grid;
    cfg
}

#[test]
fn census_b_has_zero_error() {
    let dgp = DgpSpec::new(500, vec![0.5, 0.5], vec![1.0, 3.0], vec![1.0, 1.0], 1.0);
    let cfg = ScenarioConfig {
        name: "census".into(),
        description: String::new(),
        expected: String::new(),
        dgp,
        population: PopulationMode::Fixed,
        s_sample: None,
        estimators: vec![
            EstimatorEntry::new(EstimatorSpec::Expansion, Expectation::Unbiased),
            EstimatorEntry::new(EstimatorSpec::PostStratified { variance: true, centred: true }, Expectation::Unbiased),
        ],
        replicates: 1,
        root_seed: 5,
        n_grid: Vec::new(),
    };
    let s = run_scenario(&cfg, 1).unwrap();
    for p in &s.points {
        assert!(p.bias.abs() < 1e-12, "{p:?}");
        assert_eq!(p.r_ok, 1);
    }
}

#[test]
fn thread_count_does_not_change_output() {
    for name in ["qr_flat", "sm_basic", "undercoverage_kimrao", "split_composite"] {
        let cfg = small(name, 60, Vec::new());
        let cfg = ScenarioConfig { n_grid: vec![cfg.grid()[0]], ..cfg };
        let a = run_scenario(&cfg, 1).unwrap();
        let b = run_scenario(&cfg, 4).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv(), "{name}");
        assert_eq!(a.long_csv(), b.long_csv(), "{name}");
        assert_eq!(a.metrics_csv(), b.metrics_csv(), "{name}");
    }
}

#[test]
fn root_seed_changes_output() {
    let mut cfg = small("qr_flat", 20, vec![1000]);
    let a = run_scenario(&cfg, 1).unwrap();
    cfg.root_seed += 1;
    let b = run_scenario(&cfg, 1).unwrap();
    assert_ne!(a.summary_csv(), b.summary_csv());
}

#[test]
fn rmse_decomposes_into_bias_and_variance() {
    let s = run_scenario(&small("calib_linear", 200, vec![1000]), 1).unwrap();
    for p in &s.points {
        let lhs = p.rmse * p.rmse;
        let rhs = p.bias * p.bias + p.emp_var;
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0), "{}: {lhs} vs {rhs}", p.estimator);
    }
}

#[test]
fn replicate_errors_are_uncorrelated() {
    let s = run_scenario(&small("qr_flat", 1000, vec![1000]), 1).unwrap();
    for p in &s.points {
        let lag1 = p.lag1.unwrap();
        assert!(lag1.abs() <= 3.0 / (p.r_ok as f64).sqrt(), "{}: {lag1}", p.estimator);
    }
}

#[test]
fn presets_validate_and_round_trip_through_json() {
    for name in PRESETS {
        let cfg = preset(name).unwrap();
        cfg.validate().unwrap();
        let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
    assert!(preset("nope").is_err());
}

#[test]
fn preset_settings() {
    let qr = preset("qr_flat").unwrap();
    assert!(qr.dgp.propensities.windows(2).all(|w| w[0] == w[1]));
    let hp = preset("hetero_p").unwrap();
    assert_eq!(hp.dgp.propensity_heterogeneity, 0.5);
    assert_eq!(hp.dgp.propensity_pairing, Pairing::ByOutcome);
    let uc = preset("undercoverage_kimrao").unwrap();
    assert!(uc.dgp.under_coverage.fraction > 0.0);
    let sc = preset("split_composite").unwrap();
    assert!(matches!(sc.s_sample.as_ref().unwrap().frame, FrameSpec::ComplementOfB));
}

#[test]
fn invalid_scenarios_rejected() {
    let mut cfg = small("qr_flat", 10, vec![1000, 1000]);
    assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
    cfg.n_grid = vec![1000];
    cfg.replicates = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = small("sm_basic", 10, vec![1000]);
    cfg.s_sample = None;
    assert!(cfg.validate().is_err());
    let mut cfg = small("qr_flat", 10, vec![1000]);
    cfg.estimators.push(cfg.estimators[0].clone());
    assert!(cfg.validate().is_err());
}

#[test]
fn estimator_failing_everywhere_is_an_error() {
    let mut cfg = small("qr_flat", 5, vec![200]);
    // a cell with no population members cannot be post-stratified
    cfg.dgp = DgpSpec::new(200, vec![0.5, 0.5], vec![1.0, 2.0], vec![0.0, 0.5], 1.0);
    cfg.estimators = vec![EstimatorEntry::new(EstimatorSpec::PostStratified { variance: false, centred: false }, Expectation::Any)];
    match run_scenario(&cfg, 1) {
        Err(HarnessError::AllFailed { estimator, .. }) => assert_eq!(estimator, "post_stratified"),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn summaries_are_internally_consistent(seed in any::<u64>(), r in 3usize..40) {
        let mut cfg = small("qr_flat", r, vec![300]);
        cfg.root_seed = seed;
        let s = run_scenario(&cfg, 2).unwrap();
        for p in &s.points {
            prop_assert_eq!(p.r, r);
            prop_assert!(p.r_ok <= p.r);
            prop_assert!(p.rmse >= p.bias.abs() - 1e-12);
            if let Some(c) = p.coverage {
                prop_assert!((0.0..=1.0).contains(&c));
            }
            prop_assert!((p.fail_rate - (r - p.r_ok) as f64 / r as f64).abs() < 1e-15);
        }
    }
}
