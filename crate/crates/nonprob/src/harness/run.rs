use nonprob_core::estimators::*;
use nonprob_core::popgen::{draw_b_sample, draw_s_sample, generate_population, Design, Frame, NonProbSample, Population, ProbSample};
use nonprob_core::rng::{derive_path, derive_seed};
use nonprob_core::uncertainty::{calibration_variance, design_variance_hajek, h0_test, poststrat_variance, relative_efficiency};
use nonprob_core::Error;
use rayon::prelude::*;

use super::config::*;
use super::summary::{summarise, McSummary};
use super::HarnessError;

/// A point estimate on the mean scale and the quantity it targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub value: f64,
    pub truth: f64,
    pub variance: Option<f64>,
}

pub type SlotResult<T> = Result<T, &'static str>;

/// Everything one replicate produced, flattened over the estimator entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutput {
    pub points: Vec<SlotResult<Point>>,
    pub metrics: Vec<SlotResult<f64>>,
}

/// Output columns of a scenario, fixed before any replicate runs.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    /// `(slot label, owning entry)`.
    pub points: Vec<(String, usize)>,
    /// `(entry label, metric name, owning entry)`.
    pub metrics: Vec<(String, &'static str, usize)>,
}

impl Layout {
    pub(crate) fn of(cfg: &ScenarioConfig) -> Self {
        let k = cfg.dgp.num_strata();
        let mut points = Vec::new();
        let mut metrics = Vec::new();
        for (i, e) in cfg.estimators.iter().enumerate() {
            let label = e.label();
            points.extend(e.spec.point_slots(&label, k).into_iter().map(|p| (p, i)));
            metrics.extend(e.spec.metric_slots().iter().map(|m| (label.clone(), *m, i)));
        }
        Layout { points, metrics }
    }
}

/// Runs every replicate at every grid point on a pool of `threads` workers.
///
/// Replicate `r` at grid point `g` draws all of its randomness from
/// `derive_path(root_seed, [g, r])`, and results are merged in replicate
/// order, so the summary does not depend on `threads`.
pub fn run_scenario(cfg: &ScenarioConfig, threads: usize) -> Result<McSummary, HarnessError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Internal(e.to_string()))?;
    let layout = Layout::of(cfg);
    let mut per_grid = Vec::new();
    for (g, &n) in cfg.grid().iter().enumerate() {
        let fixed = match cfg.population {
            PopulationMode::Fixed => Some(generate_population(&cfg.dgp_at(n), derive_path(cfg.root_seed, &[g as u64, u64::MAX]))?),
            PopulationMode::PerReplicate => None,
        };
        let outputs: Vec<ReplicateOutput> = pool.install(|| {
            (0..cfg.replicates)
                .into_par_iter()
                .map(|r| replicate(cfg, &layout, fixed.as_ref(), g, n, r))
                .collect()
        });
        per_grid.push((n, outputs));
    }
    summarise(cfg, &layout, &per_grid)
}

/// One replicate at grid point `g`.
pub(crate) fn replicate(
    cfg: &ScenarioConfig,
    layout: &Layout,
    fixed: Option<&Population>,
    g: usize,
    n: usize,
    r: usize,
) -> ReplicateOutput {
    let seed = derive_path(cfg.root_seed, &[g as u64, r as u64]);
    let fail_all = |e: &Error| ReplicateOutput {
        points: vec![Err(e.kind()); layout.points.len()],
        metrics: vec![Err(e.kind()); layout.metrics.len()],
    };
    let owned;
    let pop = match fixed {
        Some(p) => p,
        None => {
            owned = generate_population(&cfg.dgp_at(n), derive_seed(seed, 0));
            match &owned {
                Ok(p) => p,
                Err(e) => return fail_all(e),
            }
        }
    };
    let b = match draw_b_sample(pop, derive_seed(seed, 1)) {
        Ok(b) => b,
        Err(e) => return fail_all(&e),
    };
    let s = cfg.s_sample.as_ref().map(|sc| {
        let frame = match sc.frame {
            FrameSpec::Full => Frame::Full,
            FrameSpec::ComplementOfB => Frame::ComplementOf(&b),
        };
        draw_s(pop, &sc.design, frame, derive_seed(seed, 2))
    });
    let ctx = Context { cfg, pop, b: &b, s: s.as_ref(), seed, sizes: pop.stratum_sizes(), ybar: pop.mean() };

    let mut points = Vec::with_capacity(layout.points.len());
    let mut metrics = Vec::with_capacity(layout.metrics.len());
    for (i, entry) in cfg.estimators.iter().enumerate() {
        let np = layout.points.iter().filter(|p| p.1 == i).count();
        let nm = layout.metrics.iter().filter(|m| m.2 == i).count();
        match ctx.evaluate(&entry.spec) {
            Ok((p, m)) => {
                debug_assert_eq!((p.len(), m.len()), (np, nm));
                points.extend(p);
                metrics.extend(m.into_iter().map(Ok));
            }
            Err(e) => {
                points.extend(std::iter::repeat(Err(e.kind())).take(np));
                metrics.extend(std::iter::repeat(Err(e.kind())).take(nm));
            }
        }
    }
    ReplicateOutput { points, metrics }
}

/// Draws S under a configured design from `frame`.
pub fn draw_s(pop: &Population, design: &SDesign, frame: Frame<'_>, seed: u64) -> nonprob_core::Result<ProbSample> {
    let design = match design {
        SDesign::SrsFraction { fraction } => {
            if !(*fraction > 0.0 && *fraction <= 1.0) {
                return Err(Error::Design(format!("SRS fraction {fraction} outside (0, 1]")));
            }
            let frame_size = match frame {
                Frame::Full => pop.size(),
                Frame::ComplementOf(b) => pop.size() - b.len(),
            };
            Design::Srs { n: (fraction * frame_size as f64).round() as usize }
        }
        SDesign::SrsSize { n } => Design::Srs { n: *n },
        SDesign::Stratified { fractions } => Design::StratifiedSrs { fractions: fractions.clone() },
        SDesign::Poisson { rates } => Design::Poisson { rates: rates.clone() },
    };
    draw_s_sample(pop, &design, frame, seed)
}

pub(crate) fn population_z_sd(pop: &Population) -> Option<f64> {
    let z = pop.z.as_ref()?;
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    Some((z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt())
}

pub(crate) fn t_map(t: &TSpec, k: usize) -> nonprob_core::Result<TMap> {
    Ok(match t {
        TSpec::Dummies => TMap::dummies(k),
        TSpec::Intercept => TMap::intercept(k),
        TSpec::Linear { values: Some(v) } => {
            if v.len() != k {
                return Err(Error::Config(format!("{} linear values for {k} cells", v.len())));
            }
            TMap::linear(v)
        }
        TSpec::Linear { values: None } => TMap::linear(&(0..k).map(|c| c as f64).collect::<Vec<_>>()),
    })
}

pub(crate) fn model(m: &ModelSpec, k: usize) -> nonprob_core::Result<PropensityModel> {
    Ok(match m {
        ModelSpec::Saturated => PropensityModel::Saturated,
        ModelSpec::Logistic { t } => PropensityModel::Logistic(t_map(t, k)?),
    })
}

struct Context<'a> {
    cfg: &'a ScenarioConfig,
    pop: &'a Population,
    b: &'a NonProbSample,
    s: Option<&'a nonprob_core::Result<ProbSample>>,
    seed: u64,
    sizes: Vec<usize>,
    ybar: f64,
}

type Evaluated = (Vec<SlotResult<Point>>, Vec<f64>);

impl Context<'_> {
    fn s(&self) -> nonprob_core::Result<&ProbSample> {
        match self.s {
            Some(Ok(s)) => Ok(s),
            Some(Err(e)) => Err(e.clone()),
            None => Err(Error::Config("no S-sample configured".into())),
        }
    }

    fn n(&self) -> usize {
        self.pop.size()
    }

    fn point(&self, est: &Estimate, truth: f64) -> Point {
        let n = self.n() as f64;
        match est.target {
            Target::Mean => Point { value: est.value, truth, variance: est.variance },
            Target::Total => Point { value: est.value / n, truth, variance: est.variance.map(|v| v / (n * n)) },
        }
    }

    fn single(&self, est: &Estimate, variance_total: Option<f64>) -> Evaluated {
        let mut p = self.point(est, self.ybar);
        if let Some(v) = variance_total {
            let n = self.n() as f64;
            p.variance = Some(v / (n * n));
        }
        (vec![Ok(p)], Vec::new())
    }

    fn complement_mean(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut next = self.b.members.iter().peekable();
        for (u, y) in self.pop.y.iter().enumerate() {
            if next.peek() == Some(&&u) {
                next.next();
                continue;
            }
            sum += y;
            count += 1;
        }
        sum / count as f64
    }

    fn evaluate(&self, spec: &EstimatorSpec) -> nonprob_core::Result<Evaluated> {
        let b = self.b;
        let n = self.n();
        let k = self.cfg.dgp.num_strata();
        Ok(match spec {
            EstimatorSpec::Expansion => self.single(&expansion(b, n)?, None),
            EstimatorSpec::PostStratified { variance, centred } => {
                let est = post_stratified(b, &self.sizes)?;
                let v = if *variance { Some(poststrat_variance(b, &self.sizes, *centred)?.value) } else { None };
                self.single(&est, v)
            }
            EstimatorSpec::Calibration { t, variance, estimated_totals } => {
                let t_map = t_map(t, k)?;
                let totals = if *estimated_totals {
                    CalibrationTotals::from_prob_sample(&t_map, self.s()?)?
                } else {
                    CalibrationTotals::Known(t_map.population_totals(&self.sizes)?)
                };
                let fit = calibrate(b, &CalibrationSpec { t_map, totals, initial: InitialWeights::Uniform { population_size: n } })?;
                let est = calibration_estimate(&fit, b)?;
                let v = if *variance { Some(calibration_variance(&fit, b, &self.sizes)?.value) } else { None };
                self.single(&est, v)
            }
            EstimatorSpec::Ipw { model: m, source } => {
                let m = model(m, k)?;
                let source = match source {
                    SourceSpec::Census => CovariateSource::Census(&self.sizes),
                    SourceSpec::PseudoPopulation => CovariateSource::PseudoPopulation(self.s()?),
                    SourceSpec::UnweightedS => CovariateSource::UnweightedS(self.s()?),
                };
                let fit = fit_propensity(b, source, &m)?;
                self.single(&ipw(b, &fit)?, None)
            }
            EstimatorSpec::ReferenceIpw { model: m } => self.single(&reference_ipw(b, self.s()?, n, &model(m, k)?)?, None),
            EstimatorSpec::Sm { on, domains } => {
                let s = self.s()?;
                let metric = default_metric(*on, population_z_sd(self.pop), s, b)?;
                let m = nn_match(s, b, *on, &metric)?;
                let (mut points, _) = self.single(&sm_estimate(s, &m)?, None);
                if *domains {
                    let means = sm_domain_means(s, &m, &s.x)?;
                    let truth = self.pop.stratum_means();
                    for (c, t) in truth.iter().enumerate().take(k) {
                        points.push(match means.get(c).copied().flatten() {
                            Some(v) => Ok(Point { value: v, truth: *t, variance: None }),
                            None => Err("empty_domain"),
                        });
                    }
                }
                (points, Vec::new())
            }
            EstimatorSpec::TwoPhaseSm { on, epsilon, epsilon_quantile, variables } => {
                let s = self.s()?;
                let metric = default_metric(*on, population_z_sd(self.pop), s, b)?;
                let eps = match epsilon {
                    Some(e) => *e,
                    None => epsilon_at_quantile(b, *on, &metric, epsilon_quantile.unwrap_or(DEFAULT_EPSILON_QUANTILE))?,
                };
                let vars = match variables {
                    PhaseTwoSpec::Intercept => PhaseTwoVariables::Intercept,
                    PhaseTwoSpec::InterceptAndZ => PhaseTwoVariables::InterceptAndZ,
                    PhaseTwoSpec::CellDummies => PhaseTwoVariables::CellDummies(k),
                };
                let fit = two_phase_sm(s, b, *on, &metric, eps, &vars)?;
                let ns = s.len() as f64;
                let mut flagged = vec![false; s.len()];
                for &i in &fit.unsupported {
                    flagged[i] = true;
                }
                let uncovered: Vec<bool> = s.members.iter().map(|&u| self.pop.p_true[u] == 0.0).collect();
                let truly = uncovered.iter().filter(|&&v| v).count() as f64;
                let wrong = flagged.iter().zip(&uncovered).filter(|(a, b)| a != b).count() as f64;
                let (points, _) = self.single(&fit.estimate, None);
                (points, vec![fit.unsupported.len() as f64 / ns, truly / ns, wrong / ns])
            }
            EstimatorSpec::Hajek { variance } => {
                let s = self.s()?;
                let truth = match self.cfg.s_sample.as_ref().map(|c| c.frame) {
                    Some(FrameSpec::ComplementOfB) => self.complement_mean(),
                    _ => self.ybar,
                };
                let mut p = self.point(&hajek_mean(s)?, truth);
                if *variance {
                    p.variance = Some(design_variance_hajek(s)?.value);
                }
                (vec![Ok(p)], Vec::new())
            }
            EstimatorSpec::HajekFullFrame => {
                let design = &self.cfg.s_sample.as_ref().ok_or_else(|| Error::Config("no S design".into()))?.design;
                let s2 = draw_s(self.pop, design, Frame::Full, derive_seed(self.seed, 3))?;
                self.single(&hajek_mean(&s2)?, None)
            }
            EstimatorSpec::SplitPopulation => self.single(&split_population(b, self.s()?, n)?, None),
            EstimatorSpec::Composite { gamma } => {
                let g = gamma.map_or(Gamma::Estimated, Gamma::Fixed);
                let est = composite(b, self.s()?, g, n)?;
                let (points, _) = self.single(&est, None);
                let metrics = match gamma {
                    None => vec![*est.diagnostics.get("gamma").ok_or_else(|| Error::Missing("gamma diagnostic".into()))?],
                    Some(_) => Vec::new(),
                };
                (points, metrics)
            }
            EstimatorSpec::H0Test { level } => {
                let r = h0_test(b, self.s()?, *level)?;
                (Vec::new(), vec![if r.reject { 1.0 } else { 0.0 }, r.statistic])
            }
            EstimatorSpec::RelativeEfficiency => {
                let r = relative_efficiency(b, self.s()?, n)?;
                (Vec::new(), vec![r.value])
            }
        })
    }
}
