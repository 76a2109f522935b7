//! Cox regression with time-varying effects, fitted by maximum partial likelihood.
//!
//! Each covariate `k` carries a [`TveSpec`]; its log hazard ratio at time `t` is
//! `basis_k(t) · β_k`, and the linear predictor of subject `i` at `t` is
//! `Σ_k (basis_k(t) · β_k) x_ik`. The bases are evaluated at each failure time inside
//! the risk-set sums, so no episode splitting of the data is needed. Ties use the
//! Breslow approximation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;
use core::ops::Range;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::basis::TveSpec;
use crate::error::{Error, Result};
use crate::linalg::{equilibrated_rcond, spd_inverse, symmetrize};
use crate::riskset::RiskSetEngine;
use crate::surv::{breslow_from_coefficients, BaselineHazard, SurvivalDataset};
use crate::wald::{wald_chi_square, WaldTest};

/// Per-covariate specs and the slices of the coefficient vector they own.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientLayout {
    specs: Vec<TveSpec>,
    offsets: Vec<usize>,
}

impl CoefficientLayout {
    pub fn new(specs: Vec<TveSpec>) -> Self {
        let mut offsets = vec![0];
        for s in &specs {
            offsets.push(offsets.last().unwrap() + s.dimension());
        }
        CoefficientLayout { specs, offsets }
    }

    pub fn specs(&self) -> &[TveSpec] {
        &self.specs
    }

    pub fn n_covariates(&self) -> usize {
        self.specs.len()
    }

    pub fn dimension(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Coefficient names such as `x1`, `x1:t`, `x1:s2`, `x2:I3`.
    pub fn coefficient_names(&self, covariate_names: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dimension());
        for (spec, name) in self.specs.iter().zip(covariate_names) {
            for label in spec.term_labels() {
                if label.is_empty() {
                    out.push(name.clone());
                } else {
                    out.push(format!("{name}:{label}"));
                }
            }
        }
        out
    }
}

/// Basis values of every block at every time (times × dimension, row-major).
fn basis_table(layout: &CoefficientLayout, times: &[f64]) -> Vec<f64> {
    let dim = layout.dimension();
    let mut out = vec![0.0; times.len() * dim];
    for (j, &t) in times.iter().enumerate() {
        for (k, spec) in layout.specs.iter().enumerate() {
            let r = layout.block(k);
            spec.basis_into(t, &mut out[j * dim + r.start..j * dim + r.end]);
        }
    }
    out
}

/// Log hazard ratio of each covariate at each time (times × p, row-major).
pub(crate) fn effects_at(layout: &CoefficientLayout, coefficients: &[f64], times: &[f64]) -> Vec<f64> {
    let p = layout.n_covariates();
    let dim = layout.dimension();
    let mut row = vec![0.0; dim];
    let mut out = vec![0.0; times.len() * p];
    for (j, &t) in times.iter().enumerate() {
        for (k, spec) in layout.specs.iter().enumerate() {
            let r = layout.block(k);
            spec.basis_into(t, &mut row[r.clone()]);
            out[j * p + k] = row[r.clone()].iter().zip(&coefficients[r]).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Controls for the Newton–Raphson maximizer.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub max_step_halvings: usize,
    pub score_tolerance: f64,
    pub loglik_tolerance: f64,
    pub coefficient_bound: f64,
    pub min_rcond: f64,
    /// Starting point; zeros when `None`.
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 100,
            max_step_halvings: 20,
            score_tolerance: 1e-8,
            loglik_tolerance: 1e-10,
            coefficient_bound: 50.0,
            min_rcond: 1e-12,
            start: None,
        }
    }
}

/// Log partial likelihood with its score and observed information.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log_likelihood: f64,
    pub score: DVector<f64>,
    /// Present when requested.
    pub information: Option<DMatrix<f64>>,
}

/// The Breslow-ties log partial likelihood of one dataset as a function of the
/// coefficients.
pub struct PartialLikelihood {
    layout: CoefficientLayout,
    engine: RiskSetEngine,
    basis: Vec<f64>,
}

impl PartialLikelihood {
    pub fn new(dataset: &SurvivalDataset, specs: &[TveSpec], completed: &DMatrix<f64>) -> Result<Self> {
        if specs.len() != completed.ncols() {
            return Err(Error::DimensionMismatch {
                expected: completed.ncols(),
                found: specs.len(),
            });
        }
        if completed.nrows() != dataset.n_subjects() {
            return Err(Error::DimensionMismatch {
                expected: dataset.n_subjects(),
                found: completed.nrows(),
            });
        }
        if completed.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariate matrix".into()));
        }
        if dataset.n_events() == 0 {
            return Err(Error::InvalidData("no events: the partial likelihood is empty".into()));
        }
        let layout = CoefficientLayout::new(specs.to_vec());
        let engine = RiskSetEngine::new(dataset.times(), dataset.events(), completed);
        let basis = basis_table(&layout, engine.failure_times());
        Ok(PartialLikelihood { layout, engine, basis })
    }

    pub fn layout(&self) -> &CoefficientLayout {
        &self.layout
    }

    pub fn dimension(&self) -> usize {
        self.layout.dimension()
    }

    pub fn failure_times(&self) -> &[f64] {
        self.engine.failure_times()
    }

    pub fn evaluate(&self, beta: &[f64], with_information: bool) -> Result<Evaluation> {
        let dim = self.dimension();
        if beta.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: beta.len(),
            });
        }
        let p = self.layout.n_covariates();
        let times = self.engine.failure_times();
        let effects = effects_at(&self.layout, beta, times);
        let blocks: Vec<Range<usize>> = (0..p).map(|k| self.layout.block(k)).collect();
        let mut loglik = 0.0;
        let mut score = DVector::zeros(dim);
        let mut info = if with_information { Some(DMatrix::zeros(dim, dim)) } else { None };
        let mut residual = vec![0.0; p];
        self.engine.sweep(&effects, with_information, |j, m| {
            let d = self.engine.deaths()[j];
            let e = self.engine.event_sums(j);
            let f = &effects[j * p..(j + 1) * p];
            loglik += e.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() - d * m.log_s0;
            for k in 0..p {
                residual[k] = e[k] - d * m.mean[k];
            }
            let b = &self.basis[j * dim..(j + 1) * dim];
            for (k, r) in blocks.iter().enumerate() {
                for c in r.clone() {
                    score[c] += b[c] * residual[k];
                }
            }
            if let Some(info) = info.as_mut() {
                for (k, rk) in blocks.iter().enumerate() {
                    for (l, rl) in blocks.iter().enumerate().take(k + 1) {
                        let w = d * m.cov[k * p + l];
                        if w == 0.0 {
                            continue;
                        }
                        for c in rk.clone() {
                            let wc = w * b[c];
                            for c2 in rl.clone() {
                                if c2 > c {
                                    break;
                                }
                                info[(c, c2)] += wc * b[c2];
                            }
                        }
                    }
                }
            }
        });
        if let Some(info) = info.as_mut() {
            for c in 0..dim {
                for c2 in 0..c {
                    info[(c2, c)] = info[(c, c2)];
                }
            }
        }
        if !loglik.is_finite() {
            return Err(Error::NonFinite("log partial likelihood".into()));
        }
        Ok(Evaluation {
            log_likelihood: loglik,
            score,
            information: info,
        })
    }

    pub fn log_likelihood(&self, beta: &[f64]) -> Result<f64> {
        Ok(self.evaluate(beta, false)?.log_likelihood)
    }
}

/// A fitted Cox model with time-varying effects.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxTveModel {
    layout: CoefficientLayout,
    names: Vec<String>,
    coefficients: DVector<f64>,
    covariance: DMatrix<f64>,
    log_partial_likelihood: f64,
    iterations: usize,
    max_follow_up: f64,
    baseline: BaselineHazard,
}

/// Pointwise estimate of one covariate's log hazard ratio over a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TveCurve {
    pub times: Vec<f64>,
    pub estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
    /// True where the grid point lies outside `[0, max follow-up]`.
    pub outside_follow_up: Vec<bool>,
}

impl TveCurve {
    /// Delta-method curve for a coefficient block with covariance `cov`.
    pub fn from_block(
        spec: &TveSpec,
        coefficients: &[f64],
        cov: &DMatrix<f64>,
        times: &[f64],
        max_follow_up: f64,
    ) -> Result<Self> {
        let d = spec.dimension();
        if coefficients.len() != d || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: coefficients.len(),
            });
        }
        let mut curve = TveCurve {
            times: times.to_vec(),
            estimate: Vec::with_capacity(times.len()),
            std_error: Vec::with_capacity(times.len()),
            lower95: Vec::with_capacity(times.len()),
            upper95: Vec::with_capacity(times.len()),
            outside_follow_up: Vec::with_capacity(times.len()),
        };
        let mut b = vec![0.0; d];
        for &t in times {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("curve grid point {t}")));
            }
            spec.basis_into(t, &mut b);
            let est: f64 = b.iter().zip(coefficients).map(|(x, y)| x * y).sum();
            let mut var = 0.0;
            for r in 0..d {
                for c in 0..d {
                    var += b[r] * cov[(r, c)] * b[c];
                }
            }
            let se = var.max(0.0).sqrt();
            curve.estimate.push(est);
            curve.std_error.push(se);
            curve.lower95.push(est - 1.96 * se);
            curve.upper95.push(est + 1.96 * se);
            curve.outside_follow_up.push(t < 0.0 || t > max_follow_up);
        }
        Ok(curve)
    }
}

/// `n` equally spaced points from 0 to `end`.
pub fn default_grid(end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Fit with default options.
pub fn fit(dataset: &SurvivalDataset, specs: &[TveSpec], completed: &DMatrix<f64>) -> Result<CoxTveModel> {
    fit_with(dataset, specs, completed, &FitOptions::default())
}

pub fn fit_with(
    dataset: &SurvivalDataset,
    specs: &[TveSpec],
    completed: &DMatrix<f64>,
    options: &FitOptions,
) -> Result<CoxTveModel> {
    let objective = PartialLikelihood::new(dataset, specs, completed)?;
    let (beta, eval, iterations) = maximize(&objective, options)?;
    let info = eval.information.expect("information requested");
    let covariance = spd_inverse(&info).map_err(|_| Error::SingularInformation {
        rcond: equilibrated_rcond(&info),
    })?;
    let names = objective
        .layout
        .coefficient_names(&dataset.meta().iter().map(|m| m.name.clone()).collect::<Vec<_>>());
    let baseline = breslow_from_coefficients(dataset, specs, beta.as_slice(), completed)?;
    Ok(CoxTveModel {
        layout: objective.layout,
        names,
        coefficients: beta,
        covariance,
        log_partial_likelihood: eval.log_likelihood,
        iterations,
        max_follow_up: dataset.max_time(),
        baseline,
    })
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn maximize(objective: &PartialLikelihood, options: &FitOptions) -> Result<(DVector<f64>, Evaluation, usize)> {
    let dim = objective.dimension();
    let mut beta = match &options.start {
        Some(s) if s.len() == dim => DVector::from_column_slice(s),
        Some(s) => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.len(),
            })
        }
        None => DVector::zeros(dim),
    };
    let mut current = objective.evaluate(beta.as_slice(), true)?;
    let mut delta = f64::INFINITY;
    for iteration in 0..=options.max_iterations {
        let info = current.information.as_ref().unwrap();
        let rcond = equilibrated_rcond(info);
        if rcond < options.min_rcond {
            return Err(Error::SingularInformation { rcond });
        }
        let max_score = max_abs(&current.score);
        if max_score < options.score_tolerance && delta.abs() < options.loglik_tolerance {
            return Ok((beta, current, iteration));
        }
        if iteration == options.max_iterations {
            return Err(Error::NonConvergence {
                iterations: iteration,
                max_score,
                delta_loglik: delta,
            });
        }
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&current.score))
            .or_else(|| info.clone().lu().solve(&current.score))
            .ok_or(Error::SingularInformation { rcond })?;
        let slack = 1e-12 * current.log_likelihood.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_step_halvings {
            let candidate = &beta + &step * scale;
            if let Some((index, value)) = candidate.iter().enumerate().find(|(_, v)| v.abs() > options.coefficient_bound) {
                return Err(Error::MonotoneLikelihood {
                    index,
                    value: *value,
                    iteration: iteration + 1,
                });
            }
            match objective.evaluate(candidate.as_slice(), true) {
                Ok(e) if e.log_likelihood + slack >= current.log_likelihood => {
                    accepted = Some((candidate, e));
                    break;
                }
                Ok(_) | Err(Error::NonFinite(_)) => scale *= 0.5,
                Err(e) => return Err(e),
            }
        }
        match accepted {
            Some((b, e)) => {
                delta = e.log_likelihood - current.log_likelihood;
                beta = b;
                current = e;
            }
            None => {
                // no ascent is possible at floating-point resolution
                if max_score < options.score_tolerance {
                    return Ok((beta, current, iteration));
                }
                return Err(Error::NonConvergence {
                    iterations: iteration + 1,
                    max_score,
                    delta_loglik: delta,
                });
            }
        }
    }
    unreachable!()
}

impl CoxTveModel {
    pub fn layout(&self) -> &CoefficientLayout {
        &self.layout
    }

    pub fn specs(&self) -> &[TveSpec] {
        self.layout.specs()
    }

    pub fn coefficient_names(&self) -> &[String] {
        &self.names
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn log_partial_likelihood(&self) -> f64 {
        self.log_partial_likelihood
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn max_follow_up(&self) -> f64 {
        self.max_follow_up
    }

    pub fn baseline(&self) -> &BaselineHazard {
        &self.baseline
    }

    pub fn block(&self, covariate: usize) -> Range<usize> {
        self.layout.block(covariate)
    }

    pub fn block_coefficients(&self, covariate: usize) -> &[f64] {
        &self.coefficients.as_slice()[self.layout.block(covariate)]
    }

    pub fn block_covariance(&self, covariate: usize) -> DMatrix<f64> {
        let r = self.layout.block(covariate);
        self.covariance.view((r.start, r.start), (r.len(), r.len())).into_owned()
    }

    fn check_covariate(&self, covariate: usize) -> Result<()> {
        if covariate >= self.layout.n_covariates() {
            return Err(Error::InvalidArgument(format!(
                "covariate index {covariate} out of range for a model with {} covariates",
                self.layout.n_covariates()
            )));
        }
        Ok(())
    }

    pub fn tve_curve(&self, covariate: usize, times: &[f64]) -> Result<TveCurve> {
        self.check_covariate(covariate)?;
        TveCurve::from_block(
            &self.layout.specs()[covariate],
            self.block_coefficients(covariate),
            &self.block_covariance(covariate),
            times,
            self.max_follow_up,
        )
    }

    /// Wald test that the covariate's effect is constant in time.
    pub fn ph_wald_test(&self, covariate: usize) -> Result<WaldTest> {
        self.check_covariate(covariate)?;
        ph_wald(
            &self.layout.specs()[covariate],
            self.block_coefficients(covariate),
            &self.block_covariance(covariate),
        )
    }

    /// Flat `key = value` text: specs, coefficients, covariance lower triangle.
    pub fn export(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "log_partial_likelihood = {:e}", self.log_partial_likelihood);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "max_follow_up = {}", self.max_follow_up);
        let mut pos = 0;
        for spec in self.specs() {
            let name = self.names[pos].split(':').next().unwrap_or_default();
            let _ = writeln!(s, "spec.{name} = {spec}");
            pos += spec.dimension();
        }
        for (name, value) in self.names.iter().zip(self.coefficients.iter()) {
            let _ = writeln!(s, "coef.{name} = {value:e}");
        }
        for r in 0..self.names.len() {
            for c in 0..=r {
                let _ = writeln!(s, "cov.{}.{} = {:e}", self.names[r], self.names[c], self.covariance[(r, c)]);
            }
        }
        s
    }
}

/// Wald test of time-constancy for one coefficient block.
pub fn ph_wald(spec: &TveSpec, coefficients: &[f64], cov: &DMatrix<f64>) -> Result<WaldTest> {
    let contrast = spec
        .ph_contrast()
        .ok_or_else(|| Error::InvalidArgument("a constant effect has no time-varying terms to test".into()))?;
    let theta = &contrast * DVector::from_column_slice(coefficients);
    let mut v = &contrast * cov * contrast.transpose();
    symmetrize(&mut v);
    wald_chi_square(&theta, &v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surv::{CovariateKind, CovariateMeta};

    fn four() -> SurvivalDataset {
        SurvivalDataset::complete(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true, true, true, true],
            DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 1.0, 0.0]),
            vec![CovariateMeta::new("x", CovariateKind::Binary)],
        )
        .unwrap()
    }

    fn explicit_loglik(beta: f64) -> f64 {
        // risk sets {1,2,3,4}, {2,3,4}, {3,4}, {4}; x = 1,0,1,0
        let e = beta.exp();
        (beta - (2.0 * e + 2.0).ln()) + (0.0 - (e + 2.0).ln()) + (beta - (e + 1.0).ln()) + (0.0 - 1.0f64.ln())
    }

    #[test]
    fn constant_fit_matches_golden_section() {
        let (mut a, mut b) = (-10.0f64, 10.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if explicit_loglik(c) > explicit_loglik(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let oracle = 0.5 * (a + b);
        let d = four();
        let m = fit(&d, &[TveSpec::constant()], d.covariates()).unwrap();
        assert!((m.coefficients()[0] - oracle).abs() < 1e-6);
        assert!((m.log_partial_likelihood() - explicit_loglik(oracle)).abs() < 1e-9);
    }

    #[test]
    fn constant_covariate_is_singular() {
        let d = SurvivalDataset::complete(
            vec![1.0, 2.0, 3.0],
            vec![true, true, false],
            DMatrix::from_element(3, 1, 1.0),
            vec![CovariateMeta::new("x", CovariateKind::Binary)],
        )
        .unwrap();
        assert!(matches!(fit(&d, &[TveSpec::constant()], d.covariates()), Err(Error::SingularInformation { .. })));
    }

    #[test]
    fn perfect_separation_is_monotone() {
        // the exposed subject always fails first
        let d = SurvivalDataset::complete(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true, false, false, false],
            DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]),
            vec![CovariateMeta::new("x", CovariateKind::Binary)],
        )
        .unwrap();
        // the score vanishes numerically before the bound is hit; either way the
        // estimate is useless and the variance shows it
        match fit(&d, &[TveSpec::constant()], d.covariates()) {
            Ok(m) => assert!(m.coefficients()[0] > 10.0 && m.covariance()[(0, 0)] > 1e6),
            Err(e) => assert!(matches!(e, Error::MonotoneLikelihood { .. } | Error::SingularInformation { .. }), "{e:?}"),
        }
    }

    #[test]
    fn constant_curve_band() {
        let spec = TveSpec::constant();
        let cov = DMatrix::from_element(1, 1, 0.01);
        let c = TveCurve::from_block(&spec, &[0.5], &cov, &[0.0, 3.0, 20.0], 10.0).unwrap();
        assert!(c.estimate.iter().all(|&e| e == 0.5));
        assert!((c.lower95[1] - 0.304).abs() < 1e-12);
        assert!((c.upper95[1] - 0.696).abs() < 1e-12);
        assert_eq!(c.outside_follow_up, vec![false, false, true]);
    }

    #[test]
    fn zero_covariance_collapses_band() {
        let spec = TveSpec::rcs(vec![1.0, 2.0, 3.0]).unwrap();
        let c = TveCurve::from_block(&spec, &[0.1, 0.2, 0.3], &DMatrix::zeros(3, 3), &[0.5, 2.5], 3.0).unwrap();
        assert_eq!(c.lower95, c.estimate);
        assert_eq!(c.upper95, c.estimate);
    }

    #[test]
    fn ph_wald_examples() {
        let spec = TveSpec::linear();
        let cov = DMatrix::from_row_slice(2, 2, &[0.04, 0.0, 0.0, 0.25]);
        let w = ph_wald(&spec, &[0.3, 0.0], &cov).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert_eq!(w.p_value, 1.0);
        let w = ph_wald(&spec, &[0.3, 1.96 * 0.5], &cov).unwrap();
        assert_eq!(w.df, 1);
        assert!((w.p_value - 0.05).abs() < 1e-3);
        assert!(ph_wald(&TveSpec::constant(), &[0.3], &DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn coefficient_names() {
        let layout = CoefficientLayout::new(vec![TveSpec::rcs(vec![1.0, 2.0, 3.0, 4.0]).unwrap(), TveSpec::constant()]);
        let names = layout.coefficient_names(&["a".into(), "b".into()]);
        assert_eq!(names, vec!["a", "a:t", "a:s1", "a:s2", "b"]);
        assert_eq!(layout.block(1), 4..5);
    }
}
