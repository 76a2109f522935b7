//! Imputation compatible with the substantive Cox model, by rejection sampling.
//!
//! Each missing value is proposed from a regression of the covariate on the other
//! covariates and accepted with a probability built from the Cox likelihood at
//! drawn coefficients `β` and the Breslow baseline `ΔH₀` at those coefficients.
//! With `S(x) = Σ_{t_j ≤ T} ΔH₀(t_j) exp(lp(t_j; x))`:
//!
//! * censored subjects accept with probability `exp(−S(x))`;
//! * subjects with an event accept with probability
//!   `min(1, ΔH₀(T) exp(1 + lp(T; x) − S(x)))`.
//!
//! Since the `t_j = T` term of `S` is `y = ΔH₀(T) e^{lp(T; x)}`, the event-branch
//! expression is at most `y e^{1−y} ≤ 1`, so the proposal/accept loop draws
//! exactly from the target `p(x | x₋ₖ) e^{lp(T;x)} e^{−S(x)}`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::Rng;

use super::{check_m, finite_or_context, imputation_rng, initial_completion, with_context};
use super::{ImputationDiagnostics, ImputedDatasets, RegressionDraw};
use crate::basis::TveSpec;
use crate::cox::{effects_at, fit, CoefficientLayout, CoxTveModel};
use crate::error::{Error, Result};
use crate::linalg::{mvn_draw, psd_factor};
use crate::special::expit;
use crate::surv::{breslow_from_coefficients, BaselineHazard, CovariateKind, SurvivalDataset};

/// Scale factor of the event-branch acceptance expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcceptanceRule {
    /// `ΔH₀(T) exp(1 + lp(T) − S)`: the baseline increment at the event time.
    #[default]
    Increment,
    /// `H₀(T) exp(1 + lp(T) − S)`: the cumulative baseline at the event time. Accepts
    /// far more often, but is only guaranteed to be at most 1 when effects are
    /// constant in time; larger values are clamped.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    pub m: usize,
    pub fcs_iterations: usize,
    pub rejection_cap: usize,
    /// Draw the Cox coefficients from their approximate posterior; when false the
    /// point estimate is used.
    pub draw_coefficients: bool,
    pub rule: AcceptanceRule,
    pub seed: u64,
}

impl SmcConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        SmcConfig {
            m,
            fcs_iterations: 10,
            rejection_cap: 1000,
            draw_coefficients: true,
            rule: AcceptanceRule::Increment,
            seed,
        }
    }
}

/// One evaluated acceptance probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub probability: f64,
    /// The expression before clamping to `[0, 1]`.
    pub raw: f64,
    /// The event time was not a failure time of the baseline; the nearest earlier
    /// failure time was used.
    pub fallback: bool,
}

/// Draw coefficients from `N(β̂, Σ̂)` using a symmetric factor of `Σ̂` (negative
/// eigenvalues clipped to zero).
pub fn draw_substantive_params<R: Rng + ?Sized>(model: &CoxTveModel, rng: &mut R) -> Result<DVector<f64>> {
    draw_normal(model.coefficients(), model.covariance(), rng)
}

/// Draw from `N(mean, cov)` using a symmetric factor of `cov`.
pub fn draw_normal<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            found: cov.nrows(),
        });
    }
    Ok(mvn_draw(mean, &psd_factor(cov), rng))
}

/// Acceptance probability for covariate row `x` of a subject with time `time` and
/// event indicator `event`, at coefficients `beta` and baseline `baseline`.
pub fn acceptance_probability(
    time: f64,
    event: bool,
    x: &[f64],
    specs: &[TveSpec],
    beta: &[f64],
    baseline: &BaselineHazard,
    rule: AcceptanceRule,
) -> Result<Acceptance> {
    let layout = CoefficientLayout::new(specs.to_vec());
    if x.len() != specs.len() || beta.len() != layout.dimension() {
        return Err(Error::DimensionMismatch {
            expected: layout.dimension(),
            found: beta.len(),
        });
    }
    let upto = baseline.count_upto(time);
    let times = &baseline.event_times()[..upto];
    let effects = effects_at(&layout, beta, times);
    let p = specs.len();
    let lp = |j: usize| -> f64 { (0..p).map(|k| effects[j * p + k] * x[k]).sum() };
    let mut s = 0.0;
    for j in 0..upto {
        s += baseline.increments()[j] * lp(j).exp();
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("cumulative hazard in the acceptance probability".into()));
    }
    if !event {
        let raw = (-s).exp();
        return Ok(Acceptance {
            probability: raw,
            raw,
            fallback: false,
        });
    }
    if upto == 0 {
        return Ok(Acceptance {
            probability: 0.0,
            raw: 0.0,
            fallback: true,
        });
    }
    let j = upto - 1;
    let fallback = baseline.event_times()[j] != time;
    let scale = match rule {
        AcceptanceRule::Increment => baseline.increments()[j],
        AcceptanceRule::Cumulative => baseline.cumulative(time),
    };
    let raw = scale * (1.0 + lp(j) - s).exp();
    if !raw.is_finite() {
        return Err(Error::NonFinite("acceptance expression".into()));
    }
    Ok(Acceptance {
        probability: raw.clamp(0.0, 1.0),
        raw,
        fallback,
    })
}

/// Result of one proposal/accept loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionOutcome {
    pub value: f64,
    pub proposals: usize,
    /// No proposal was accepted within the cap; `value` is the last proposal.
    pub cap_hit: bool,
}

/// Propose and accept until acceptance or `cap` proposals.
pub fn rejection_sample<R, P, A>(rng: &mut R, cap: usize, mut propose: P, mut accept: A) -> RejectionOutcome
where
    R: Rng + ?Sized,
    P: FnMut(&mut R) -> f64,
    A: FnMut(f64) -> f64,
{
    let mut last = f64::NAN;
    for n in 1..=cap.max(1) {
        last = propose(rng);
        let u: f64 = rng.random();
        if u <= accept(last) {
            return RejectionOutcome {
                value: last,
                proposals: n,
                cap_hit: false,
            };
        }
    }
    RejectionOutcome {
        value: last,
        proposals: cap.max(1),
        cap_hit: true,
    }
}

/// The proposal/accept loop for a binary covariate, resolved in closed form.
///
/// With proposal `P(x=1) = pi1` and acceptance probabilities `a0`, `a1`, a single
/// trial accepts with probability `q = (1−pi1)a0 + pi1 a1`. The loop exhausts `cap`
/// trials with probability `(1−q)^cap`, in which case the last proposal was
/// rejected and equals 1 with probability `pi1(1−a1)/(1−q)`; otherwise the accepted
/// value equals 1 with probability `pi1 a1 / q`. The outcome has the same
/// distribution as running the loop, using two uniforms per cell.
pub fn binary_rejection_sample<R: Rng + ?Sized>(rng: &mut R, cap: usize, pi1: f64, a0: f64, a1: f64) -> RejectionOutcome {
    let q = (1.0 - pi1) * a0 + pi1 * a1;
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    let exhausted = (1.0 - q).powi(cap.max(1) as i32);
    if u < exhausted {
        let p1 = if q < 1.0 { pi1 * (1.0 - a1) / (1.0 - q) } else { pi1 };
        RejectionOutcome {
            value: if v < p1 { 1.0 } else { 0.0 },
            proposals: cap.max(1),
            cap_hit: true,
        }
    } else {
        RejectionOutcome {
            value: if v * q < pi1 * a1 { 1.0 } else { 0.0 },
            proposals: 0,
            cap_hit: false,
        }
    }
}

/// Per-cell quantities that do not depend on the proposed value.
struct CellTerms {
    /// `ln ΔH₀(t_j) + Σ_{l≠k} f_l(t_j) x_l` for failure times up to `T`.
    offset: Vec<f64>,
    /// `f_k(t_j)` for the same failure times.
    slope: Vec<f64>,
    /// `ln(scale) + 1 + Σ_{l≠k} f_l(T) x_l` and `f_k(T)` for the event branch.
    event_terms: Option<(f64, f64)>,
    fallback: bool,
}

impl CellTerms {
    fn new(
        i: usize,
        k: usize,
        dataset: &SurvivalDataset,
        x: &DMatrix<f64>,
        effects: &[f64],
        log_increments: &[f64],
        baseline: &BaselineHazard,
        rule: AcceptanceRule,
    ) -> Self {
        let p = dataset.n_covariates();
        let t = dataset.times()[i];
        let upto = baseline.count_upto(t);
        let mut offset = Vec::with_capacity(upto);
        let mut slope = Vec::with_capacity(upto);
        for j in 0..upto {
            let mut o = log_increments[j];
            for l in 0..p {
                if l != k {
                    o += effects[j * p + l] * x[(i, l)];
                }
            }
            offset.push(o);
            slope.push(effects[j * p + k]);
        }
        let fallback;
        let event_terms = if dataset.events()[i] && upto > 0 {
            let j = upto - 1;
            fallback = baseline.event_times()[j] != t;
            let log_scale = match rule {
                AcceptanceRule::Increment => log_increments[j],
                AcceptanceRule::Cumulative => baseline.cumulative(t).ln(),
            };
            Some((log_scale + 1.0 + offset[j] - log_increments[j], slope[j]))
        } else {
            fallback = dataset.events()[i];
            None
        };
        CellTerms {
            offset,
            slope,
            event_terms,
            fallback,
        }
    }

    /// Returns `(probability, clamped)`.
    fn acceptance(&self, event: bool, value: f64) -> (f64, bool) {
        let s: f64 = self.offset.iter().zip(&self.slope).map(|(o, b)| (o + b * value).exp()).sum();
        if !event {
            return ((-s).exp(), false);
        }
        match self.event_terms {
            None => (0.0, false),
            Some((c, b)) => {
                let raw = (c + b * value - s).exp();
                if raw > 1.0 {
                    (1.0, true)
                } else if raw.is_nan() {
                    (0.0, false)
                } else {
                    (raw, false)
                }
            }
        }
    }
}

fn proposal_design(x: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<usize>) {
    let p = x.ncols();
    let others: Vec<usize> = (0..p).filter(|&j| j != k).collect();
    let design = DMatrix::from_fn(x.nrows(), others.len() + 1, |i, c| if c == 0 { 1.0 } else { x[(i, others[c - 1])] });
    (design, others)
}

/// Chained-equations imputation by rejection sampling against the Cox model.
///
/// Within every round, each incomplete covariate in turn: refit the Cox model to
/// the current completion, draw coefficients, recompute the Breslow baseline at
/// them, fit and draw the covariate's proposal regression on all subjects, then
/// resample each of its missing cells.
pub fn impute_smc(dataset: &SurvivalDataset, specs: &[TveSpec], config: &SmcConfig) -> Result<ImputedDatasets> {
    check_m(config.m, config.fcs_iterations)?;
    if specs.len() != dataset.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: dataset.n_covariates(),
            found: specs.len(),
        });
    }
    if config.rejection_cap < 1 {
        return Err(Error::InvalidArgument("rejection cap must be at least 1".into()));
    }
    let incomplete = dataset.incomplete_covariates();
    let start = initial_completion(dataset)?;
    let layout = CoefficientLayout::new(specs.to_vec());
    let missing: Vec<Vec<usize>> = (0..dataset.n_covariates())
        .map(|k| (0..dataset.n_subjects()).filter(|&i| dataset.is_missing(i, k)).collect())
        .collect();
    let all_rows: Vec<usize> = (0..dataset.n_subjects()).collect();

    let mut completed = Vec::with_capacity(config.m);
    let mut seeds = Vec::with_capacity(config.m);
    let mut diagnostics = Vec::with_capacity(config.m);
    for m in 0..config.m {
        let mut rng = imputation_rng(config.seed, m);
        let mut x = start.clone();
        let mut diag = ImputationDiagnostics::default();
        if incomplete.is_empty() {
            for iteration in 0..config.fcs_iterations {
                fit(dataset, specs, &x).map_err(|e| with_context(e, m, iteration, "(none)"))?;
                diag.substantive_fits += 1;
            }
        }
        for iteration in 0..config.fcs_iterations {
            for &k in &incomplete {
                let name: &String = &dataset.meta()[k].name;
                let ctx = |e| with_context(e, m, iteration, name);
                let model = fit(dataset, specs, &x).map_err(ctx)?;
                diag.substantive_fits += 1;
                let beta = if config.draw_coefficients {
                    draw_substantive_params(&model, &mut rng).map_err(ctx)?
                } else {
                    model.coefficients().clone()
                };
                let baseline = breslow_from_coefficients(dataset, specs, beta.as_slice(), &x).map_err(ctx)?;
                let effects = effects_at(&layout, beta.as_slice(), baseline.event_times());
                let log_increments: Vec<f64> = baseline.increments().iter().map(|h| h.ln()).collect();

                let (design, others) = proposal_design(&x, k);
                let mut names = vec![String::from("(intercept)")];
                names.extend(others.iter().map(|&j| dataset.meta()[j].name.clone()));
                let kind = dataset.meta()[k].kind;
                let proposal =
                    RegressionDraw::draw(kind, &design, &x, k, &all_rows, &names, &mut rng).map_err(ctx)?;

                for &i in &missing[k] {
                    let terms = CellTerms::new(i, k, dataset, &x, &effects, &log_increments, &baseline, config.rule);
                    let event = dataset.events()[i];
                    diag.sampled_cells += 1;
                    diag.fallbacks += terms.fallback as usize;
                    let outcome = match (&proposal, kind) {
                        (RegressionDraw::Logistic(g), CovariateKind::Binary) => {
                            let pi1 = expit(design.row(i).dot(&g.transpose()));
                            let (a0, c0) = terms.acceptance(event, 0.0);
                            let (a1, c1) = terms.acceptance(event, 1.0);
                            if event {
                                diag.event_evaluations += 2;
                                diag.clamped += c0 as usize + c1 as usize;
                            }
                            binary_rejection_sample(&mut rng, config.rejection_cap, pi1, a0, a1)
                        }
                        _ => {
                            let mut evaluations = 0;
                            let mut clamped = 0;
                            let out = rejection_sample(
                                &mut rng,
                                config.rejection_cap,
                                |r| proposal.sample(&design, i, r),
                                |v| {
                                    let (a, c) = terms.acceptance(event, v);
                                    evaluations += 1;
                                    clamped += c as usize;
                                    a
                                },
                            );
                            if event {
                                diag.event_evaluations += evaluations;
                                diag.clamped += clamped;
                            }
                            out
                        }
                    };
                    diag.cap_hits += outcome.cap_hit as usize;
                    x[(i, k)] = finite_or_context(outcome.value, m, iteration, name)?;
                }
            }
        }
        completed.push(x);
        seeds.push(config.seed ^ m as u64);
        diagnostics.push(diag);
    }
    ImputedDatasets::new(dataset.clone(), completed, seeds, diagnostics).map_err(|e| Error::Imputation {
        imputation: 0,
        iteration: config.fcs_iterations,
        covariate: format!("{:?}", incomplete),
        source: alloc::boxed::Box::new(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn baseline() -> BaselineHazard {
        BaselineHazard::from_increments(vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3]).unwrap()
    }

    #[test]
    fn censored_before_any_failure_always_accepts() {
        let a = acceptance_probability(0.5, false, &[1.0], &[TveSpec::constant()], &[0.7], &baseline(), AcceptanceRule::Increment)
            .unwrap();
        assert_eq!(a.probability, 1.0);
    }

    #[test]
    fn censored_probability_is_survival() {
        let b = BaselineHazard::from_increments(vec![1.0], vec![2f64.ln()]).unwrap();
        let a = acceptance_probability(1.5, false, &[0.0], &[TveSpec::constant()], &[0.7], &b, AcceptanceRule::Increment).unwrap();
        assert!((a.probability - 0.5).abs() < 1e-15);
    }

    #[test]
    fn event_branch_is_clamped() {
        // the cumulative rule with a time-varying effect can exceed one
        let b = BaselineHazard::from_increments(vec![1.0, 2.0], vec![0.5, 0.01]).unwrap();
        let a = acceptance_probability(2.0, true, &[1.0], &[TveSpec::linear()], &[-6.0, 3.0], &b, AcceptanceRule::Cumulative)
            .unwrap();
        assert!(a.raw > 1.0);
        assert_eq!(a.probability, 1.0);
        let a = acceptance_probability(2.0, true, &[1.0], &[TveSpec::linear()], &[-6.0, 3.0], &b, AcceptanceRule::Increment)
            .unwrap();
        assert!(a.raw <= 1.0);
    }

    #[test]
    fn constant_effect_matches_proportional_hazards_rule() {
        let b = baseline();
        let beta = 0.4;
        for (t, d) in [(2.0, true), (2.5, false), (3.0, true)] {
            for x in [0.0, 1.0, -0.5] {
                let a = acceptance_probability(t, d, &[x], &[TveSpec::constant()], &[beta], &b, AcceptanceRule::Increment).unwrap();
                let h = b.cumulative(t);
                let lp = beta * x;
                let expected = if d {
                    b.increments()[b.index_of(t).unwrap()] * (1.0 + lp - h * lp.exp()).exp()
                } else {
                    (-h * lp.exp()).exp()
                };
                assert!((a.probability - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fallback_is_flagged() {
        let a = acceptance_probability(2.5, true, &[0.0], &[TveSpec::constant()], &[0.0], &baseline(), AcceptanceRule::Increment)
            .unwrap();
        assert!(a.fallback);
    }

    #[test]
    fn closed_form_binary_loop_matches_the_loop() {
        let (pi1, a0, a1, cap) = (0.3, 0.02, 0.05, 40);
        let n = 200_000;
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let mut ones = [0usize; 2];
        let mut hits = [0usize; 2];
        for _ in 0..n {
            let a = binary_rejection_sample(&mut r1, cap, pi1, a0, a1);
            let b = rejection_sample(
                &mut r2,
                cap,
                |r| if r.random::<f64>() < pi1 { 1.0 } else { 0.0 },
                |v| if v == 1.0 { a1 } else { a0 },
            );
            ones[0] += (a.value == 1.0) as usize;
            ones[1] += (b.value == 1.0) as usize;
            hits[0] += a.cap_hit as usize;
            hits[1] += b.cap_hit as usize;
        }
        let f = |c: usize| c as f64 / n as f64;
        assert!((f(ones[0]) - f(ones[1])).abs() < 0.006, "{ones:?}");
        assert!((f(hits[0]) - f(hits[1])).abs() < 0.006, "{hits:?}");
        // (1 - q)^cap with q = 0.029
        assert!((f(hits[0]) - 0.971f64.powi(40)).abs() < 0.006);
    }

    #[test]
    fn zero_covariance_draw_is_the_estimate() {
        let mean = DVector::from_vec(vec![0.2, -0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(draw_normal(&mean, &DMatrix::zeros(2, 2), &mut rng).unwrap(), mean);
        let tiny_negative = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        assert!(draw_normal(&mean, &tiny_negative, &mut rng).unwrap().iter().all(|v| v.is_finite()));
        assert!(draw_normal(&mean, &DMatrix::zeros(3, 3), &mut rng).is_err());
    }
}
