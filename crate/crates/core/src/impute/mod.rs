//! Multiple imputation of missing covariates for the time-varying Cox model.
//!
//! Two methods share the containers and regression draws defined here:
//! [`approx`] imputes from regressions on an approximately compatible set of
//! outcome-derived columns, and [`smc`] rejection-samples against the fitted Cox
//! likelihood itself. Both cycle over incomplete covariates (chained equations) and
//! draw imputation `m` from its own RNG stream seeded with `seed ^ m`.

pub mod approx;
pub mod smc;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{psd_factor, spd_inverse, symmetrize};
use crate::special::expit;
use crate::surv::{CovariateKind, SurvivalDataset};

pub use approx::{build_imputation_design, impute_approx, ApproxConfig, ImputationDesign};
pub use smc::{acceptance_probability, draw_substantive_params, impute_smc, AcceptanceRule, SmcConfig};

/// RNG stream for imputation `m`.
pub fn imputation_rng(seed: u64, m: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ m as u64)
}

/// Counters collected while producing one imputed dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImputationDiagnostics {
    /// Imputation-model columns dropped as collinear (deduplicated).
    pub dropped_columns: Vec<String>,
    /// Cells whose rejection sampler hit the cap and kept its last proposal.
    pub cap_hits: usize,
    /// Cells processed by the rejection sampler.
    pub sampled_cells: usize,
    /// Acceptance evaluations for subjects with an event.
    pub event_evaluations: usize,
    /// Of those, evaluations whose raw acceptance expression exceeded 1.
    pub clamped: usize,
    /// Event times that were not failure times of the baseline.
    pub fallbacks: usize,
    /// Cox fits performed inside the chained-equations loop.
    pub substantive_fits: usize,
}

impl ImputationDiagnostics {
    fn note_dropped(&mut self, names: &[String]) {
        for n in names {
            if !self.dropped_columns.contains(n) {
                self.dropped_columns.push(n.clone());
            }
        }
    }

    pub fn clamp_fraction(&self) -> f64 {
        if self.event_evaluations == 0 {
            0.0
        } else {
            self.clamped as f64 / self.event_evaluations as f64
        }
    }
}

/// `M` completed covariate matrices over one dataset skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDatasets {
    dataset: SurvivalDataset,
    completed: Vec<DMatrix<f64>>,
    seeds: Vec<u64>,
    diagnostics: Vec<ImputationDiagnostics>,
}

impl ImputedDatasets {
    /// Wraps externally produced completions, checking them against the dataset.
    pub fn new(
        dataset: SurvivalDataset,
        completed: Vec<DMatrix<f64>>,
        seeds: Vec<u64>,
        diagnostics: Vec<ImputationDiagnostics>,
    ) -> Result<Self> {
        if completed.is_empty() || seeds.len() != completed.len() || diagnostics.len() != completed.len() {
            return Err(Error::InvalidArgument("imputations, seeds and diagnostics must align".into()));
        }
        for c in &completed {
            dataset.check_completed(c)?;
            for (k, meta) in dataset.meta().iter().enumerate() {
                if meta.kind == CovariateKind::Binary && c.column(k).iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidData(format!("imputed binary covariate {} left {{0,1}}", meta.name)));
                }
            }
        }
        Ok(ImputedDatasets {
            dataset,
            completed,
            seeds,
            diagnostics,
        })
    }

    pub fn dataset(&self) -> &SurvivalDataset {
        &self.dataset
    }

    pub fn m(&self) -> usize {
        self.completed.len()
    }

    pub fn completed(&self) -> &[DMatrix<f64>] {
        &self.completed
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn diagnostics(&self) -> &[ImputationDiagnostics] {
        &self.diagnostics
    }

    /// Diagnostics summed over imputations.
    pub fn total_diagnostics(&self) -> ImputationDiagnostics {
        let mut total = ImputationDiagnostics::default();
        for d in &self.diagnostics {
            total.note_dropped(&d.dropped_columns);
            total.cap_hits += d.cap_hits;
            total.sampled_cells += d.sampled_cells;
            total.event_evaluations += d.event_evaluations;
            total.clamped += d.clamped;
            total.fallbacks += d.fallbacks;
            total.substantive_fits += d.substantive_fits;
        }
        total
    }
}

/// Starting values: observed mean for continuous columns, observed mode for binary
/// columns (ties go to 1).
pub fn initial_completion(dataset: &SurvivalDataset) -> Result<DMatrix<f64>> {
    let mut x = dataset.covariates().clone();
    for (k, meta) in dataset.meta().iter().enumerate() {
        let observed: Vec<f64> = (0..dataset.n_subjects())
            .filter(|&i| !dataset.is_missing(i, k))
            .map(|i| x[(i, k)])
            .collect();
        if observed.len() == dataset.n_subjects() {
            continue;
        }
        if observed.is_empty() {
            return Err(Error::InvalidData(format!("covariate {} has no observed values", meta.name)));
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        let fill = match meta.kind {
            CovariateKind::Continuous => mean,
            CovariateKind::Binary => {
                if mean >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        for i in 0..dataset.n_subjects() {
            if dataset.is_missing(i, k) {
                x[(i, k)] = fill;
            }
        }
    }
    Ok(x)
}

fn rows_of(design: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), design.ncols(), |r, c| design[(rows[r], c)])
}

/// A draw of linear-regression parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDraw {
    pub coefficients: DVector<f64>,
    pub residual_variance: f64,
}

/// Draw `(β*, σ²*)` from the approximate posterior of a normal linear regression.
///
/// Least squares on the rows given, then `σ²* = σ̂²(n−p)/g` with `g ~ χ²(n−p)` and
/// `β* ~ N(β̂, (XᵀX)⁻¹σ²*)`.
pub fn posterior_draw_linear<R: Rng + ?Sized>(design: &DMatrix<f64>, response: &DVector<f64>, rng: &mut R) -> Result<LinearDraw> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: response.len() });
    }
    if n < p + 2 {
        return Err(Error::InsufficientRows { rows: n, columns: p });
    }
    let xtx = design.tr_mul(design);
    let xtx_inv = spd_inverse(&xtx).map_err(|_| Error::Singular("imputation design XᵀX".into()))?;
    let beta_hat = &xtx_inv * design.tr_mul(response);
    let resid = response - design * &beta_hat;
    let dof = (n - p) as f64;
    let sigma2_hat = resid.norm_squared() / dof;
    let g: f64 = ChiSquared::new(dof).map_err(|_| Error::InvalidArgument("chi-square degrees of freedom".into()))?.sample(rng);
    let sigma2 = sigma2_hat * dof / g;
    let factor = psd_factor(&(xtx_inv * sigma2));
    let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(rng)));
    Ok(LinearDraw {
        coefficients: beta_hat + factor * z,
        residual_variance: sigma2,
    })
}

/// Maximum-likelihood logistic fit with its inverse observed information.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Absolute coefficient, on the standardized-column scale, beyond which the fit is
/// treated as separated.
pub const SEPARATION_BOUND: f64 = 15.0;

/// Logistic regression by Newton–Raphson.
///
/// The first column must be the intercept. Other columns are centred and scaled to
/// unit standard deviation for fitting, and separation is judged on that scale so
/// that columns measured in small units are not flagged spuriously.
pub fn logistic_mle(design: &DMatrix<f64>, response: &DVector<f64>, names: &[String]) -> Result<LogisticFit> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: response.len() });
    }
    if n < p {
        return Err(Error::InsufficientRows { rows: n, columns: p });
    }
    if p == 0 || design.column(0).iter().any(|&v| v != 1.0) {
        return Err(Error::InvalidArgument("logistic design must start with an intercept column".into()));
    }
    let mut centre = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for c in 1..p {
        let col = design.column(c);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        centre[c] = mean;
        scale[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let z = DMatrix::from_fn(n, p, |i, c| (design[(i, c)] - centre[c]) / scale[c]);

    let deviance = |b: &DVector<f64>| -> f64 {
        let eta = &z * b;
        let mut dev = 0.0;
        for i in 0..n {
            let e = eta[i];
            // log(1 + exp(e)) - y e
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            dev += softplus - response[i] * e;
        }
        2.0 * dev
    };
    let mut beta = DVector::zeros(p);
    let mut dev = deviance(&beta);
    let mut info = DMatrix::zeros(p, p);
    let mut converged = false;
    for _ in 0..100 {
        let eta = &z * &beta;
        let mut grad = DVector::zeros(p);
        info.fill(0.0);
        for i in 0..n {
            let mu = expit(eta[i]);
            let w = mu * (1.0 - mu);
            let r = response[i] - mu;
            for a in 0..p {
                grad[a] += z[(i, a)] * r;
                let wa = w * z[(i, a)];
                for b in 0..=a {
                    info[(a, b)] += wa * z[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let step = match info.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => break,
        };
        let mut t = 1.0;
        let mut next = &beta + &step;
        let mut next_dev = deviance(&next);
        for _ in 0..20 {
            if next_dev <= dev + 1e-12 * dev.abs().max(1.0) {
                break;
            }
            t *= 0.5;
            next = &beta + &step * t;
            next_dev = deviance(&next);
        }
        let change = (dev - next_dev).abs();
        beta = next;
        dev = next_dev;
        if beta.iter().any(|b| !b.is_finite()) {
            break;
        }
        if change < 1e-10 * (dev.abs() + 0.1) && step.amax() * t < 1e-8 {
            converged = true;
            break;
        }
        if change < 1e-12 && beta.amax() > SEPARATION_BOUND {
            break;
        }
    }
    if let Some((c, v)) = beta.iter().enumerate().find(|(_, v)| !(v.abs() <= SEPARATION_BOUND)) {
        return Err(Error::Separation {
            column: c,
            name: names.get(c).cloned().unwrap_or_else(|| format!("column {c}")),
            value: *v,
        });
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: 100,
            max_score: f64::NAN,
            delta_loglik: f64::NAN,
        });
    }
    // final information at the optimum
    let eta = &z * &beta;
    info.fill(0.0);
    for i in 0..n {
        let mu = expit(eta[i]);
        let w = mu * (1.0 - mu);
        for a in 0..p {
            for b in 0..=a {
                info[(a, b)] += w * z[(i, a)] * z[(i, b)];
            }
        }
    }
    symmetrize_lower(&mut info);
    let cov_z = spd_inverse(&info).map_err(|_| Error::Singular("logistic information".into()))?;
    // back to the raw columns: β_raw = A β_z
    let mut a = DMatrix::zeros(p, p);
    a[(0, 0)] = 1.0;
    for c in 1..p {
        a[(c, c)] = 1.0 / scale[c];
        a[(0, c)] = -centre[c] / scale[c];
    }
    let coefficients = &a * beta;
    let mut covariance = &a * cov_z * a.transpose();
    symmetrize(&mut covariance);
    Ok(LogisticFit {
        coefficients,
        covariance,
    })
}

fn symmetrize_lower(m: &mut DMatrix<f64>) {
    for a in 0..m.nrows() {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
}

/// Draw `β* ~ N(β̂, V̂)` around the maximum-likelihood logistic fit.
pub fn posterior_draw_logistic<R: Rng + ?Sized>(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    names: &[String],
    rng: &mut R,
) -> Result<DVector<f64>> {
    let fit = logistic_mle(design, response, names)?;
    let factor = psd_factor(&fit.covariance);
    let p = fit.coefficients.len();
    let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(rng)));
    Ok(fit.coefficients + factor * z)
}

/// Parameters drawn for one covariate's imputation regression.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RegressionDraw {
    Logistic(DVector<f64>),
    Linear(LinearDraw),
}

impl RegressionDraw {
    /// Draw from the approximate posterior of the regression of `target` on the
    /// design, using only `rows`.
    pub(crate) fn draw<R: Rng + ?Sized>(
        kind: CovariateKind,
        design: &DMatrix<f64>,
        target: &DMatrix<f64>,
        column: usize,
        rows: &[usize],
        names: &[String],
        rng: &mut R,
    ) -> Result<Self> {
        let x = rows_of(design, rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| target[(i, column)]));
        match kind {
            CovariateKind::Binary => Ok(RegressionDraw::Logistic(posterior_draw_logistic(&x, &y, names, rng)?)),
            CovariateKind::Continuous => Ok(RegressionDraw::Linear(posterior_draw_linear(&x, &y, rng)?)),
        }
    }

    /// Sample a value for design row `row`.
    pub(crate) fn sample<R: Rng + ?Sized>(&self, design: &DMatrix<f64>, row: usize, rng: &mut R) -> f64 {
        match self {
            RegressionDraw::Logistic(b) => {
                let eta = design.row(row).dot(&b.transpose());
                let u: f64 = rng.random();
                if u < expit(eta) {
                    1.0
                } else {
                    0.0
                }
            }
            RegressionDraw::Linear(d) => {
                let mean = design.row(row).dot(&d.coefficients.transpose());
                let z: f64 = StandardNormal.sample(rng);
                mean + d.residual_variance.sqrt() * z
            }
        }
    }
}

/// Names of columns that are (numerically) linear combinations of earlier columns,
/// judged on `rows`, and the indices of the columns to keep.
pub(crate) fn collinear_columns(design: &DMatrix<f64>, rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let p = design.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    let mut drop = Vec::new();
    for c in 0..p {
        let mut v = DVector::from_iterator(rows.len(), rows.iter().map(|&i| design[(i, c)]));
        let norm0 = v.norm();
        if norm0 == 0.0 {
            drop.push(c);
            continue;
        }
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= 1e-9 * norm0 {
            drop.push(c);
        } else {
            basis.push(v / norm);
            keep.push(c);
        }
    }
    (keep, drop)
}

/// Check a completed value before writing it.
pub(crate) fn finite_or_context(value: f64, m: usize, iteration: usize, name: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Imputation {
            imputation: m,
            iteration,
            covariate: name.into(),
            source: alloc::boxed::Box::new(Error::NonFinite(format!("imputed value {value}"))),
        })
    }
}

pub(crate) fn with_context(e: Error, m: usize, iteration: usize, name: &str) -> Error {
    match e {
        e @ Error::Imputation { .. } => e,
        e => Error::Imputation {
            imputation: m,
            iteration,
            covariate: name.into(),
            source: alloc::boxed::Box::new(e),
        },
    }
}

pub(crate) fn check_m(m: usize, fcs_iterations: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("at least 2 imputations are needed for pooling, got {m}")));
    }
    if fcs_iterations < 1 {
        return Err(Error::InvalidArgument("at least one chained-equations iteration is needed".into()));
    }
    Ok(())
}
