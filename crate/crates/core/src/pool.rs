//! Rubin's-rules pooling, pooled Wald tests and forward selection of time-varying
//! effects across imputed datasets.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::basis::{select_knots, TveSpec};
use crate::cox::{fit, CoxTveModel, TveCurve};
use crate::error::{Error, Result};
use crate::impute::ImputedDatasets;
use crate::linalg::symmetrize;
use crate::wald::{wald_chi_square, wald_d1, WaldTest};

/// Rubin's-rules combination of `M` estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEstimate {
    pub m: usize,
    pub coefficients: DVector<f64>,
    /// Mean of the per-imputation covariances.
    pub within: DMatrix<f64>,
    /// Sample covariance of the per-imputation estimates.
    pub between: DMatrix<f64>,
    /// `within + (1 + 1/M) between`.
    pub total: DMatrix<f64>,
}

pub fn rubin_pool(estimates: &[DVector<f64>], covariances: &[DMatrix<f64>]) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("pooling needs at least 2 imputations, got {m}")));
    }
    if covariances.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: covariances.len(),
        });
    }
    let p = estimates[0].len();
    for (e, c) in estimates.iter().zip(covariances) {
        if e.len() != p || c.nrows() != p || c.ncols() != p {
            return Err(Error::DimensionMismatch { expected: p, found: e.len() });
        }
    }
    let mf = m as f64;
    let mut mean = DVector::zeros(p);
    for e in estimates {
        mean += e;
    }
    mean /= mf;
    let mut within = DMatrix::zeros(p, p);
    for c in covariances {
        within += c;
    }
    within /= mf;
    symmetrize(&mut within);
    let mut between = DMatrix::zeros(p, p);
    for e in estimates {
        let d = e - &mean;
        between += &d * d.transpose();
    }
    between /= mf - 1.0;
    symmetrize(&mut between);
    let total = &within + &between * (1.0 + 1.0 / mf);
    Ok(PooledEstimate {
        m,
        coefficients: mean,
        within,
        between,
        total,
    })
}

/// Pool fitted models sharing one coefficient layout.
pub fn pool_models(models: &[CoxTveModel]) -> Result<PooledEstimate> {
    if let Some(first) = models.first() {
        if models.iter().any(|m| m.specs() != first.specs()) {
            return Err(Error::InvalidArgument("pooled models must share their time-varying forms".into()));
        }
    }
    let est: Vec<DVector<f64>> = models.iter().map(|m| m.coefficients().clone()).collect();
    let cov: Vec<DMatrix<f64>> = models.iter().map(|m| m.covariance().clone()).collect();
    rubin_pool(&est, &cov)
}

/// Fit the Cox model to every imputed dataset.
pub fn fit_imputed(imputed: &ImputedDatasets, specs: &[TveSpec]) -> Result<Vec<CoxTveModel>> {
    imputed.completed().iter().map(|x| fit(imputed.dataset(), specs, x)).collect()
}

/// Reference distribution for pooled Wald tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WaldMode {
    /// `θ̄ᵀ T⁻¹ θ̄` against chi-square.
    #[default]
    ChiSquare,
    /// The D1 statistic against its F reference.
    D1,
}

impl fmt::Display for WaldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WaldMode::ChiSquare => "chisq",
            WaldMode::D1 => "d1",
        })
    }
}

impl core::str::FromStr for WaldMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chisq" => Ok(WaldMode::ChiSquare),
            "d1" => Ok(WaldMode::D1),
            _ => Err(Error::InvalidArgument(format!("unknown Wald mode {s:?} (expected chisq or d1)"))),
        }
    }
}

/// Pooled Wald test of `C β = 0`.
pub fn pooled_wald_contrast(pooled: &PooledEstimate, contrast: &DMatrix<f64>, mode: WaldMode) -> Result<WaldTest> {
    if contrast.ncols() != pooled.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: pooled.coefficients.len(),
            found: contrast.ncols(),
        });
    }
    let theta = contrast * &pooled.coefficients;
    let sandwich = |v: &DMatrix<f64>| {
        let mut s = contrast * v * contrast.transpose();
        symmetrize(&mut s);
        s
    };
    match mode {
        WaldMode::ChiSquare => wald_chi_square(&theta, &sandwich(&pooled.total)),
        WaldMode::D1 => wald_d1(&theta, &sandwich(&pooled.within), &sandwich(&pooled.between), pooled.m),
    }
}

/// Pooled Wald test that the coefficients at `indices` are all zero.
pub fn pooled_wald(pooled: &PooledEstimate, indices: &[usize], mode: WaldMode) -> Result<WaldTest> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("Wald test needs at least one coefficient".into()));
    }
    let p = pooled.coefficients.len();
    if let Some(&bad) = indices.iter().find(|&&i| i >= p) {
        return Err(Error::InvalidArgument(format!("coefficient index {bad} out of range")));
    }
    let c = DMatrix::from_fn(indices.len(), p, |r, col| if indices[r] == col { 1.0 } else { 0.0 });
    pooled_wald_contrast(pooled, &c, mode)
}

/// Pooled test that covariate `k`'s effect is constant in time.
pub fn pooled_ph_test(pooled: &PooledEstimate, specs: &[TveSpec], k: usize, mode: WaldMode) -> Result<WaldTest> {
    let spec = specs
        .get(k)
        .ok_or_else(|| Error::InvalidArgument(format!("no covariate with index {k}")))?;
    let block = spec
        .ph_contrast()
        .ok_or_else(|| Error::InvalidArgument("a constant effect has no time-varying terms to test".into()))?;
    let offset: usize = specs[..k].iter().map(|s| s.dimension()).sum();
    let mut c = DMatrix::zeros(block.nrows(), pooled.coefficients.len());
    c.view_mut((0, offset), (block.nrows(), block.ncols())).copy_from(&block);
    pooled_wald_contrast(pooled, &c, mode)
}

/// Pooled curve of covariate `k`'s log hazard ratio with pointwise 95% bounds from
/// the total covariance.
pub fn pooled_curve(pooled: &PooledEstimate, specs: &[TveSpec], k: usize, times: &[f64], max_follow_up: f64) -> Result<TveCurve> {
    let offset: usize = specs[..k].iter().map(|s| s.dimension()).sum();
    let d = specs[k].dimension();
    let cov = pooled.total.view((offset, offset), (d, d)).into_owned();
    TveCurve::from_block(&specs[k], &pooled.coefficients.as_slice()[offset..offset + d], &cov, times, max_follow_up)
}

/// Candidate time-varying forms considered during selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SelectionForm {
    Linear,
    Rcs3,
    Rcs4,
    Rcs5,
}

impl SelectionForm {
    pub const ALL: [SelectionForm; 4] = [SelectionForm::Linear, SelectionForm::Rcs3, SelectionForm::Rcs4, SelectionForm::Rcs5];

    pub fn dimension(self) -> usize {
        match self {
            SelectionForm::Linear => 2,
            SelectionForm::Rcs3 => 3,
            SelectionForm::Rcs4 => 4,
            SelectionForm::Rcs5 => 5,
        }
    }

    pub fn spec(self, event_times: &[f64]) -> Result<TveSpec> {
        match self {
            SelectionForm::Linear => Ok(TveSpec::linear()),
            other => TveSpec::rcs(select_knots(event_times, other.dimension())?),
        }
    }
}

impl fmt::Display for SelectionForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionForm::Linear => "linear",
            SelectionForm::Rcs3 => "rcs3",
            SelectionForm::Rcs4 => "rcs4",
            SelectionForm::Rcs5 => "rcs5",
        })
    }
}

impl core::str::FromStr for SelectionForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectionForm::ALL
            .into_iter()
            .find(|f| format!("{f}") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown selection form {s:?} (expected linear, rcs3, rcs4 or rcs5)")))
    }
}

/// One candidate evaluated during selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep {
    /// Selection round, from 1.
    pub round: usize,
    pub covariate: usize,
    pub form: SelectionForm,
    pub p_value: f64,
    /// The candidate was adopted into the working model.
    pub accepted: bool,
    /// The candidate's fit or test failed; its p-value is recorded as 1.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub steps: Vec<SelectionStep>,
    /// Specs of the final model, one per covariate.
    pub final_specs: Vec<TveSpec>,
    pub alpha: f64,
}

impl SelectionTrace {
    /// Adopted `(covariate, form)` pairs in order of adoption.
    pub fn adopted(&self) -> Vec<(usize, SelectionForm)> {
        self.steps.iter().filter(|s| s.accepted).map(|s| (s.covariate, s.form)).collect()
    }
}

/// Forward selection of time-varying effects.
///
/// Starting from the model with every effect constant, each round fits, for every
/// candidate covariate still constant and every form, the working model plus that
/// effect on each imputed dataset, pools, and tests the added effect's time-varying
/// terms. The candidate with the smallest p-value is adopted if it is below `alpha`
/// (ties: smaller form, then earlier covariate); selection stops otherwise. Adopted
/// effects are never revisited. Spline knots are placed once on the observed event
/// times.
pub fn mi_mtve_select(
    imputed: &ImputedDatasets,
    candidates: &[usize],
    alpha: f64,
    forms: &[SelectionForm],
    mode: WaldMode,
) -> Result<SelectionTrace> {
    if imputed.m() < 2 {
        return Err(Error::InvalidArgument("selection pools over at least 2 imputations".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let p = imputed.dataset().n_covariates();
    if let Some(&bad) = candidates.iter().find(|&&c| c >= p) {
        return Err(Error::InvalidArgument(format!("no covariate with index {bad}")));
    }
    let event_times = imputed.dataset().observed_event_times();
    let form_specs: Vec<(SelectionForm, TveSpec)> = forms.iter().map(|&f| f.spec(&event_times).map(|s| (f, s))).collect::<Result<_>>()?;
    let mut working: Vec<TveSpec> = (0..p).map(|_| TveSpec::constant()).collect();
    let mut open: Vec<usize> = candidates.to_vec();
    let mut steps = Vec::new();
    let mut round = 0;
    while !open.is_empty() {
        round += 1;
        let first = steps.len();
        let mut best: Option<(f64, usize, usize, usize)> = None; // (p, dimension, covariate order, step index)
        for (order, &c) in open.iter().enumerate() {
            for (form, spec) in &form_specs {
                let mut specs = working.clone();
                specs[c] = spec.clone();
                let outcome = fit_imputed(imputed, &specs)
                    .and_then(|models| pool_models(&models))
                    .and_then(|pooled| pooled_ph_test(&pooled, &specs, c, mode));
                let (p_value, failure) = match outcome {
                    Ok(w) if w.p_value.is_finite() => (w.p_value, None),
                    Ok(w) => (1.0, Some(format!("non-finite p-value {}", w.p_value))),
                    Err(e) => (1.0, Some(format!("{e}"))),
                };
                let idx = steps.len();
                steps.push(SelectionStep {
                    round,
                    covariate: c,
                    form: *form,
                    p_value,
                    accepted: false,
                    failure: failure.clone(),
                });
                if failure.is_none() {
                    let key = (p_value, form.dimension(), order, idx);
                    let better = match best {
                        None => true,
                        Some(b) => (key.0, key.1, key.2) < (b.0, b.1, b.2),
                    };
                    if better {
                        best = Some(key);
                    }
                }
            }
        }
        let Some((p_value, _, order, idx)) = best else {
            let reasons: Vec<String> = steps[first..].iter().filter_map(|s| s.failure.clone()).collect();
            return Err(Error::Selection(format!("every candidate failed in round {round}: {}", reasons.join("; "))));
        };
        if p_value >= alpha {
            break;
        }
        steps[idx].accepted = true;
        let c = open.remove(order);
        working[c] = form_specs.iter().find(|(f, _)| *f == steps[idx].form).unwrap().1.clone();
    }
    Ok(SelectionTrace {
        steps,
        final_specs: working,
        alpha,
    })
}
