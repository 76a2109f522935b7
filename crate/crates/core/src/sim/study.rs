//! Replications of the simulation design and their performance summaries.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generate::{check_scenario, event_times, generate_covariates, true_effect, EffectGrid};
use super::missing::{apply_missingness, Missingness};
use crate::basis::{quantile_sorted, select_knots, TveSpec};
use crate::cox::{default_grid, fit, CoxTveModel};
use crate::error::{Error, Result};
use crate::impute::{impute_approx, impute_smc, ApproxConfig, ImputationDiagnostics, ImputedDatasets, SmcConfig};
use crate::pool::{fit_imputed, pool_models, pooled_curve, pooled_ph_test, WaldMode};
use crate::surv::{CovariateKind, CovariateMeta, SurvivalDataset};

/// Times at which bias and coverage are reported.
pub const EVALUATION_TIMES: [f64; 3] = [1.0, 5.0, 9.0];

/// Analyses compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Fit before any values are removed.
    CompleteData,
    /// Fit to the subjects with both covariates observed.
    CompleteCase,
    /// Approximate imputation ignoring time-varying effects.
    MiApprox,
    /// Approximate imputation with the analysis model's time-varying forms.
    MiTveApprox,
    /// Rejection-sampling imputation under a proportional hazards model.
    MiSmc,
    /// Rejection-sampling imputation under the analysis model.
    MiTveSmc,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::CompleteData,
        Method::CompleteCase,
        Method::MiApprox,
        Method::MiTveApprox,
        Method::MiSmc,
        Method::MiTveSmc,
    ];

    pub fn is_imputation(self) -> bool {
        !matches!(self, Method::CompleteData | Method::CompleteCase)
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::CompleteData => "complete-data",
            Method::CompleteCase => "complete-case",
            Method::MiApprox => "mi-approx",
            Method::MiTveApprox => "mi-tve-approx",
            Method::MiSmc => "mi-smc",
            Method::MiTveSmc => "mi-tve-smc",
        })
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.to_string() == s).ok_or_else(|| {
            let names: Vec<String> = Method::ALL.iter().map(|m| m.to_string()).collect();
            Error::InvalidArgument(format!("unknown method {s:?} (expected one of {})", names.join(", ")))
        })
    }
}

/// Everything that defines a replication study.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Time-varying effect scenario, 1 to 5.
    pub scenario: u8,
    pub covariate_kind: CovariateKind,
    pub n_subjects: usize,
    /// Baseline event rate per year.
    pub lambda_e: f64,
    /// Dropout rate per year.
    pub lambda_c: f64,
    /// Administrative censoring time.
    pub admin_censor: f64,
    pub missingness: Missingness,
    pub n_reps: usize,
    /// Imputations per imputation method.
    pub m: usize,
    /// Analyses to run; the complete-data fit always runs because bias is measured
    /// against it.
    pub methods: Vec<Method>,
    pub base_seed: u64,
    pub fcs_iterations: usize,
    pub rejection_cap: usize,
    /// Spline knots for both covariates in the analysis model.
    pub n_knots: usize,
    /// Level of the proportional hazards tests.
    pub alpha: f64,
    pub wald: WaldMode,
    /// Points of the reported mean-curve grid over `[0, admin_censor]`.
    pub grid_points: usize,
}

impl ScenarioConfig {
    /// 2000 subjects, 10-year horizon, standard missingness, all methods, 10
    /// imputations with 10 rounds, 5 knots.
    pub fn new(scenario: u8, covariate_kind: CovariateKind, lambda_e: f64, lambda_c: f64, n_reps: usize) -> Self {
        ScenarioConfig {
            scenario,
            covariate_kind,
            n_subjects: 2000,
            lambda_e,
            lambda_c,
            admin_censor: 10.0,
            missingness: Missingness::Standard30,
            n_reps,
            m: 10,
            methods: Method::ALL.to_vec(),
            base_seed: 0,
            fcs_iterations: 10,
            rejection_cap: 1000,
            n_knots: 5,
            alpha: 0.05,
            wald: WaldMode::ChiSquare,
            grid_points: 101,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_scenario(self.scenario)?;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lambda_e > 0.0 && self.lambda_e.is_finite()) {
            return bad(format!("lambda_e must be positive, got {}", self.lambda_e));
        }
        if !(self.lambda_c > 0.0 && self.lambda_c.is_finite()) {
            return bad(format!("lambda_c must be positive, got {}", self.lambda_c));
        }
        if !(self.admin_censor > 0.0 && self.admin_censor.is_finite()) {
            return bad(format!("admin_censor must be positive, got {}", self.admin_censor));
        }
        if self.n_reps == 0 {
            return bad("n_reps must be at least 1".into());
        }
        if self.n_subjects < 10 {
            return bad(format!("n_subjects must be at least 10, got {}", self.n_subjects));
        }
        if self.methods.iter().any(|m| m.is_imputation()) && self.m < 2 {
            return bad(format!("pooling needs at least 2 imputations, got {}", self.m));
        }
        if self.fcs_iterations == 0 || self.rejection_cap == 0 {
            return bad("fcs_iterations and rejection_cap must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2".into());
        }
        crate::basis::knot_percentiles(self.n_knots)?;
        Ok(())
    }

    /// Methods in canonical order with the complete-data fit first.
    pub fn resolved_methods(&self) -> Vec<Method> {
        let mut out: Vec<Method> = Method::ALL
            .into_iter()
            .filter(|m| *m == Method::CompleteData || self.methods.contains(m))
            .collect();
        out.dedup();
        out
    }

    /// Seed of replication `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.base_seed ^ rep as u64
    }

    pub fn grid(&self) -> Vec<f64> {
        default_grid(self.admin_censor, self.grid_points)
    }
}

/// One simulated cohort before and after values are removed.
#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    pub complete: SurvivalDataset,
    pub masked: SurvivalDataset,
    /// Latent event times (infinite beyond the horizon).
    pub event_times: Vec<f64>,
    pub dropout_times: Vec<f64>,
}

/// Draw covariates, outcomes and missingness for one replication.
pub fn simulate_cohort<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<SimulatedCohort> {
    config.validate()?;
    let n = config.n_subjects;
    let x = generate_covariates(config.covariate_kind, n, rng);
    let mut unit = || -(1.0 - rng.random::<f64>()).ln();
    let event_draws: Vec<f64> = (0..n).map(|_| unit()).collect();
    let dropout_times: Vec<f64> = (0..n).map(|_| unit() / config.lambda_c).collect();
    let mut grid = EffectGrid::new(config.scenario, config.admin_censor)?;
    let latent = event_times(&mut grid, &x, &event_draws, config.lambda_e);
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let t = latent[i].min(dropout_times[i]).min(config.admin_censor);
        times.push(t);
        events.push(latent[i] < dropout_times[i] && latent[i] <= config.admin_censor);
    }
    let meta = vec![
        CovariateMeta::new("x1", config.covariate_kind),
        CovariateMeta::new("x2", config.covariate_kind),
    ];
    let complete = SurvivalDataset::complete(times, events, x, meta)?;
    let masked = apply_missingness(&complete, config.missingness, rng)?;
    Ok(SimulatedCohort {
        complete,
        masked,
        event_times: latent,
        dropout_times,
    })
}

/// Outcome and missingness fractions of one cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortStats {
    pub event_fraction: f64,
    pub dropout_fraction: f64,
    pub missing_first: f64,
    pub missing_second: f64,
    pub missing_any: f64,
}

impl CohortStats {
    fn of(cohort: &SimulatedCohort, horizon: f64) -> Self {
        let d = &cohort.masked;
        let n = d.n_subjects() as f64;
        let dropouts = (0..d.n_subjects())
            .filter(|&i| !d.events()[i] && cohort.dropout_times[i] < horizon && d.times()[i] == cohort.dropout_times[i])
            .count();
        let mask = d.missing_mask();
        let count = |k: usize| mask.column(k).iter().filter(|&&b| b).count() as f64 / n;
        CohortStats {
            event_fraction: d.n_events() as f64 / n,
            dropout_fraction: dropouts as f64 / n,
            missing_first: count(0),
            missing_second: count(1),
            missing_any: (d.n_subjects() - d.complete_rows().len()) as f64 / n,
        }
    }
}

/// A failed analysis within one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodFailure {
    pub category: String,
    pub message: String,
}

impl MethodFailure {
    fn from_error(e: &Error) -> Self {
        MethodFailure {
            category: e.category().into(),
            message: e.to_string(),
        }
    }
}

/// One method's results in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    /// Per covariate, the estimated curve over the study grid.
    pub curves: Vec<Vec<f64>>,
    /// Per covariate, `(estimate, lower95, upper95)` at the evaluation times.
    pub points: Vec<Vec<(f64, f64, f64)>>,
    /// Per covariate, the p-value of the proportional hazards test.
    pub ph_p_values: Vec<f64>,
    pub diagnostics: Option<ImputationDiagnostics>,
}

/// Everything recorded from one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    /// `None` when the cohort itself could not be generated.
    pub cohort: Option<CohortStats>,
    /// Aligned with [`ScenarioConfig::resolved_methods`].
    pub methods: Vec<(Method, core::result::Result<MethodResult, MethodFailure>)>,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer, to decorrelate imputation streams from cohort streams
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Analysis<'a> {
    config: &'a ScenarioConfig,
    specs: Vec<TveSpec>,
    grid: Vec<f64>,
}

impl Analysis<'_> {
    fn single(&self, dataset: &SurvivalDataset, x: &DMatrix<f64>) -> Result<MethodResult> {
        let model = fit(dataset, &self.specs, x)?;
        self.summarize_model(&model)
    }

    fn summarize_model(&self, model: &CoxTveModel) -> Result<MethodResult> {
        let mut out = MethodResult {
            curves: Vec::new(),
            points: Vec::new(),
            ph_p_values: Vec::new(),
            diagnostics: None,
        };
        for k in 0..self.specs.len() {
            out.curves.push(model.tve_curve(k, &self.grid)?.estimate);
            let c = model.tve_curve(k, &EVALUATION_TIMES)?;
            out.points.push((0..c.times.len()).map(|j| (c.estimate[j], c.lower95[j], c.upper95[j])).collect());
            out.ph_p_values.push(model.ph_wald_test(k)?.p_value);
        }
        Ok(out)
    }

    fn pooled(&self, imputed: &ImputedDatasets) -> Result<MethodResult> {
        let models = fit_imputed(imputed, &self.specs)?;
        let pooled = pool_models(&models)?;
        let max_follow_up = imputed.dataset().max_time();
        let mut out = MethodResult {
            curves: Vec::new(),
            points: Vec::new(),
            ph_p_values: Vec::new(),
            diagnostics: Some(imputed.total_diagnostics()),
        };
        for k in 0..self.specs.len() {
            out.curves
                .push(pooled_curve(&pooled, &self.specs, k, &self.grid, max_follow_up)?.estimate);
            let c = pooled_curve(&pooled, &self.specs, k, &EVALUATION_TIMES, max_follow_up)?;
            out.points.push((0..c.times.len()).map(|j| (c.estimate[j], c.lower95[j], c.upper95[j])).collect());
            out.ph_p_values
                .push(pooled_ph_test(&pooled, &self.specs, k, self.config.wald)?.p_value);
        }
        Ok(out)
    }

    fn run(&self, method: Method, cohort: &SimulatedCohort, seed: u64) -> Result<MethodResult> {
        let c = self.config;
        let masked = &cohort.masked;
        let constant = vec![TveSpec::constant(); self.specs.len()];
        let approx = |specs: Vec<TveSpec>| {
            let mut a = ApproxConfig::new(specs, c.m, seed);
            a.fcs_iterations = c.fcs_iterations;
            a
        };
        let smc = || {
            let mut s = SmcConfig::new(c.m, seed);
            s.fcs_iterations = c.fcs_iterations;
            s.rejection_cap = c.rejection_cap;
            s
        };
        match method {
            Method::CompleteData => self.single(&cohort.complete, cohort.complete.covariates()),
            Method::CompleteCase => {
                let cc = masked.subset(&masked.complete_rows())?;
                self.single(&cc, cc.covariates())
            }
            Method::MiApprox => self.pooled(&impute_approx(masked, &approx(constant))?),
            Method::MiTveApprox => self.pooled(&impute_approx(masked, &approx(self.specs.clone()))?),
            Method::MiSmc => self.pooled(&impute_smc(masked, &constant, &smc())?),
            Method::MiTveSmc => self.pooled(&impute_smc(masked, &self.specs, &smc())?),
        }
    }
}

/// Run replication `rep`: simulate, place knots at the complete-data event times,
/// and fit every configured method to the same masked cohort.
pub fn run_rep(config: &ScenarioConfig, rep: usize) -> Result<RepOutcome> {
    config.validate()?;
    let seed = config.rep_seed(rep);
    let methods = config.resolved_methods();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prepared = simulate_cohort(config, &mut rng).and_then(|cohort| {
        let knots = select_knots(&cohort.complete.observed_event_times(), config.n_knots)?;
        let spec = TveSpec::rcs(knots)?;
        Ok((cohort, spec))
    });
    let (cohort, spec) = match prepared {
        Ok(v) => v,
        Err(e) => {
            let failure = MethodFailure::from_error(&e);
            return Ok(RepOutcome {
                rep,
                seed,
                cohort: None,
                methods: methods.into_iter().map(|m| (m, Err(failure.clone()))).collect(),
            });
        }
    };
    let analysis = Analysis {
        config,
        specs: vec![spec; 2],
        grid: config.grid(),
    };
    let results = methods
        .into_iter()
        .map(|m| {
            let r = analysis.run(m, &cohort, mix(seed ^ (m.tag() << 56)));
            (m, r.map_err(|e| MethodFailure::from_error(&e)))
        })
        .collect();
    Ok(RepOutcome {
        rep,
        seed,
        cohort: Some(CohortStats::of(&cohort, config.admin_censor)),
        methods: results,
    })
}

/// Bias and coverage of one covariate's curve at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPerformance {
    pub time: f64,
    pub truth: f64,
    /// What bias is measured against: the complete-data mean estimate for other
    /// methods, the true value for the complete-data fit itself.
    pub reference: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// `sqrt(Var(estimate) / reps)`.
    pub bias_mcse: f64,
    pub bias_lower95: f64,
    pub bias_upper95: f64,
    /// Percent of replications whose pointwise 95% band contains the true value.
    pub coverage: f64,
    pub coverage_mcse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePerformance {
    pub name: String,
    pub mean_curve: Vec<f64>,
    /// Per grid point, the 2.5%, 50% and 97.5% quantiles over replications.
    pub curve_quantiles: Vec<[f64; 3]>,
    pub points: Vec<PointPerformance>,
    /// Percent of replications rejecting proportional hazards.
    pub rejection: f64,
    pub rejection_mcse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodPerformance {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    /// Failure counts by category, sorted by category.
    pub failure_categories: Vec<(String, usize)>,
    pub covariates: Vec<CovariatePerformance>,
    /// Imputation diagnostics summed over successful replications.
    pub diagnostics: Option<ImputationDiagnostics>,
}

/// Aggregate performance of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub n_reps: usize,
    pub grid: Vec<f64>,
    pub methods: Vec<MethodPerformance>,
    /// Mean cohort statistics over generated replications.
    pub cohort: Option<CohortStats>,
    pub generation_failures: usize,
}

impl PerformanceReport {
    pub fn method(&self, method: Method) -> Option<&MethodPerformance> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn total_failures(&self) -> usize {
        self.methods.iter().map(|m| m.failures).sum::<usize>() + self.generation_failures
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn percent_mcse(pct: f64, n: usize) -> f64 {
    (pct * (100.0 - pct) / n as f64).sqrt()
}

/// Fold replication outcomes, in replication order, into a report.
pub fn aggregate(config: &ScenarioConfig, outcomes: &[RepOutcome]) -> Result<PerformanceReport> {
    config.validate()?;
    let mut outcomes: Vec<&RepOutcome> = outcomes.iter().collect();
    outcomes.sort_by_key(|o| o.rep);
    let grid = config.grid();
    let methods = config.resolved_methods();
    let names = ["x1", "x2"];

    let cohorts: Vec<CohortStats> = outcomes.iter().filter_map(|o| o.cohort).collect();
    let generation_failures = outcomes.len() - cohorts.len();
    let cohort = (!cohorts.is_empty()).then(|| {
        let avg = |f: fn(&CohortStats) -> f64| cohorts.iter().map(f).sum::<f64>() / cohorts.len() as f64;
        CohortStats {
            event_fraction: avg(|c| c.event_fraction),
            dropout_fraction: avg(|c| c.dropout_fraction),
            missing_first: avg(|c| c.missing_first),
            missing_second: avg(|c| c.missing_second),
            missing_any: avg(|c| c.missing_any),
        }
    });

    let successes_of = |method: Method| -> Vec<&MethodResult> {
        outcomes
            .iter()
            .filter_map(|o| o.methods.iter().find(|(m, _)| *m == method))
            .filter_map(|(_, r)| r.as_ref().ok())
            .collect()
    };
    // complete-data mean estimates at the evaluation times, per covariate
    let reference_results = successes_of(Method::CompleteData);
    let reference: Vec<Vec<f64>> = (0..2)
        .map(|k| {
            (0..EVALUATION_TIMES.len())
                .map(|j| {
                    let v: Vec<f64> = reference_results.iter().map(|r| r.points[k][j].0).collect();
                    if v.is_empty() {
                        f64::NAN
                    } else {
                        mean(&v)
                    }
                })
                .collect()
        })
        .collect();

    let mut report_methods = Vec::with_capacity(methods.len());
    for &method in &methods {
        let ok = successes_of(method);
        let mut categories: Vec<(String, usize)> = Vec::new();
        let mut failures = 0;
        for o in &outcomes {
            if let Some((_, Err(f))) = o.methods.iter().find(|(m, _)| *m == method) {
                failures += 1;
                match categories.iter_mut().find(|(c, _)| *c == f.category) {
                    Some(entry) => entry.1 += 1,
                    None => categories.push((f.category.clone(), 1)),
                }
            }
        }
        categories.sort();
        let n_ok = ok.len();
        let mut covariates = Vec::with_capacity(2);
        for (k, name) in names.iter().enumerate() {
            let mut mean_curve = Vec::with_capacity(grid.len());
            let mut curve_quantiles = Vec::with_capacity(grid.len());
            for g in 0..grid.len() {
                let mut v: Vec<f64> = ok.iter().map(|r| r.curves[k][g]).collect();
                if v.is_empty() {
                    mean_curve.push(f64::NAN);
                    curve_quantiles.push([f64::NAN; 3]);
                    continue;
                }
                mean_curve.push(mean(&v));
                v.sort_by(|a, b| a.total_cmp(b));
                curve_quantiles.push([
                    quantile_sorted(&v, 0.025),
                    quantile_sorted(&v, 0.5),
                    quantile_sorted(&v, 0.975),
                ]);
            }
            let mut points = Vec::with_capacity(EVALUATION_TIMES.len());
            for (j, &t) in EVALUATION_TIMES.iter().enumerate() {
                let truth = true_effect(config.scenario, k, t)?;
                let reference = if method == Method::CompleteData { truth } else { reference[k][j] };
                let est: Vec<f64> = ok.iter().map(|r| r.points[k][j].0).collect();
                let covered = ok
                    .iter()
                    .filter(|r| {
                        let (_, lo, hi) = r.points[k][j];
                        lo <= truth && truth <= hi
                    })
                    .count();
                let (mean_estimate, bias_mcse, coverage) = if n_ok == 0 {
                    (f64::NAN, f64::NAN, f64::NAN)
                } else {
                    (
                        mean(&est),
                        (sample_variance(&est) / n_ok as f64).sqrt(),
                        100.0 * covered as f64 / n_ok as f64,
                    )
                };
                let bias = mean_estimate - reference;
                points.push(PointPerformance {
                    time: t,
                    truth,
                    reference,
                    mean_estimate,
                    bias,
                    bias_mcse,
                    bias_lower95: bias - 1.96 * bias_mcse,
                    bias_upper95: bias + 1.96 * bias_mcse,
                    coverage,
                    coverage_mcse: percent_mcse(coverage, n_ok),
                });
            }
            let rejections = ok.iter().filter(|r| r.ph_p_values[k] < config.alpha).count();
            let rejection = if n_ok == 0 { f64::NAN } else { 100.0 * rejections as f64 / n_ok as f64 };
            covariates.push(CovariatePerformance {
                name: (*name).into(),
                mean_curve,
                curve_quantiles,
                points,
                rejection,
                rejection_mcse: percent_mcse(rejection, n_ok),
            });
        }
        let diagnostics = method.is_imputation().then(|| {
            let mut total = ImputationDiagnostics::default();
            for r in &ok {
                if let Some(d) = &r.diagnostics {
                    total.cap_hits += d.cap_hits;
                    total.sampled_cells += d.sampled_cells;
                    total.event_evaluations += d.event_evaluations;
                    total.clamped += d.clamped;
                    total.fallbacks += d.fallbacks;
                    total.substantive_fits += d.substantive_fits;
                    for c in &d.dropped_columns {
                        if !total.dropped_columns.contains(c) {
                            total.dropped_columns.push(c.clone());
                        }
                    }
                }
            }
            total
        });
        report_methods.push(MethodPerformance {
            method,
            successes: n_ok,
            failures,
            failure_categories: categories,
            covariates,
            diagnostics,
        });
    }
    Ok(PerformanceReport {
        n_reps: outcomes.len(),
        grid,
        methods: report_methods,
        cohort,
        generation_failures,
    })
}

/// Run every replication in order and aggregate.
pub fn run_replication_study(config: &ScenarioConfig) -> Result<PerformanceReport> {
    config.validate()?;
    let outcomes = (0..config.n_reps).map(|r| run_rep(config, r)).collect::<Result<Vec<_>>>()?;
    aggregate(config, &outcomes)
}
