//! Survival data model, risk sets and nonparametric cumulative hazards.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::basis::TveSpec;
use crate::cox::{effects_at, CoefficientLayout, CoxTveModel};
use crate::error::{Error, Result};
use crate::riskset::{unique_failure_times, RiskSetEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovariateKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateMeta {
    pub name: String,
    pub kind: CovariateKind,
}

impl core::fmt::Display for CovariateKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            CovariateKind::Binary => "binary",
            CovariateKind::Continuous => "continuous",
        })
    }
}

impl core::str::FromStr for CovariateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(CovariateKind::Binary),
            "continuous" => Ok(CovariateKind::Continuous),
            _ => Err(Error::InvalidArgument(format!("unknown covariate kind {s:?} (expected binary or continuous)"))),
        }
    }
}

impl CovariateMeta {
    pub fn new(name: impl Into<String>, kind: CovariateKind) -> Self {
        CovariateMeta { name: name.into(), kind }
    }
}

/// Right-censored survival data with a covariate matrix and a missingness mask.
///
/// Masked cells hold `0.0` and are never read by any computation; completed
/// covariate matrices are passed alongside the dataset where needed.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    ids: Vec<String>,
    times: Vec<f64>,
    events: Vec<bool>,
    covariates: DMatrix<f64>,
    missing: DMatrix<bool>,
    meta: Vec<CovariateMeta>,
}

impl SurvivalDataset {
    pub fn new(
        times: Vec<f64>,
        events: Vec<bool>,
        covariates: DMatrix<f64>,
        missing: DMatrix<bool>,
        meta: Vec<CovariateMeta>,
    ) -> Result<Self> {
        let ids = (1..=times.len()).map(|i| i.to_string()).collect();
        Self::with_ids(ids, times, events, covariates, missing, meta)
    }

    /// Dataset with no missing cells.
    pub fn complete(times: Vec<f64>, events: Vec<bool>, covariates: DMatrix<f64>, meta: Vec<CovariateMeta>) -> Result<Self> {
        let missing = DMatrix::from_element(covariates.nrows(), covariates.ncols(), false);
        Self::new(times, events, covariates, missing, meta)
    }

    pub fn with_ids(
        ids: Vec<String>,
        times: Vec<f64>,
        events: Vec<bool>,
        mut covariates: DMatrix<f64>,
        missing: DMatrix<bool>,
        meta: Vec<CovariateMeta>,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no subjects".into()));
        }
        if events.len() != n || ids.len() != n || covariates.nrows() != n {
            return Err(Error::InvalidData(format!(
                "row counts disagree: {} times, {} events, {} ids, {} covariate rows",
                n,
                events.len(),
                ids.len(),
                covariates.nrows()
            )));
        }
        if missing.shape() != covariates.shape() {
            return Err(Error::InvalidData("missingness mask shape differs from covariates".into()));
        }
        if meta.len() != covariates.ncols() {
            return Err(Error::InvalidData(format!(
                "{} covariate descriptions for {} columns",
                meta.len(),
                covariates.ncols()
            )));
        }
        for (i, (&t, &d)) in times.iter().zip(&events).enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::InvalidData(format!("subject {} ({}): time {t} is not finite and >= 0", i + 1, ids[i])));
            }
            if t == 0.0 && d {
                return Err(Error::InvalidData(format!("subject {} ({}): event at time 0", i + 1, ids[i])));
            }
        }
        for (k, m) in meta.iter().enumerate() {
            for i in 0..n {
                if missing[(i, k)] {
                    covariates[(i, k)] = 0.0;
                    continue;
                }
                let v = covariates[(i, k)];
                if !v.is_finite() {
                    return Err(Error::InvalidData(format!("subject {}: covariate {} is not finite", i + 1, m.name)));
                }
                if m.kind == CovariateKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidData(format!(
                        "subject {}: binary covariate {} has value {v}",
                        i + 1,
                        m.name
                    )));
                }
            }
        }
        Ok(SurvivalDataset {
            ids,
            times,
            events,
            covariates,
            missing,
            meta,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.times.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    /// Covariate values; masked cells read as 0.
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn missing_mask(&self) -> &DMatrix<bool> {
        &self.missing
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[(row, col)]
    }

    pub fn meta(&self) -> &[CovariateMeta] {
        &self.meta
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.name == name)
    }

    pub fn n_missing(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    /// Columns with at least one missing cell, in column order.
    pub fn incomplete_covariates(&self) -> Vec<usize> {
        (0..self.n_covariates()).filter(|&k| self.missing.column(k).iter().any(|&m| m)).collect()
    }

    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n_subjects()).filter(|&i| !self.missing.row(i).iter().any(|&m| m)).collect()
    }

    /// Times of subjects with an observed event (with repeats for ties).
    pub fn observed_event_times(&self) -> Vec<f64> {
        self.times.iter().zip(&self.events).filter(|(_, &d)| d).map(|(&t, _)| t).collect()
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|&&d| d).count()
    }

    pub fn max_time(&self) -> f64 {
        self.times.iter().cloned().fold(0.0, f64::max)
    }

    /// Rows `rows` of this dataset, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let p = self.n_covariates();
        let pick = |i: usize| rows[i];
        SurvivalDataset::with_ids(
            rows.iter().map(|&i| self.ids[i].clone()).collect(),
            rows.iter().map(|&i| self.times[i]).collect(),
            rows.iter().map(|&i| self.events[i]).collect(),
            DMatrix::from_fn(rows.len(), p, |i, k| self.covariates[(pick(i), k)]),
            DMatrix::from_fn(rows.len(), p, |i, k| self.missing[(pick(i), k)]),
            self.meta.clone(),
        )
    }

    /// The same subjects with a different missingness mask.
    pub fn with_mask(&self, missing: DMatrix<bool>) -> Result<Self> {
        SurvivalDataset::with_ids(
            self.ids.clone(),
            self.times.clone(),
            self.events.clone(),
            self.covariates.clone(),
            missing,
            self.meta.clone(),
        )
    }

    /// The covariates, requiring that no cell is missing.
    pub fn require_complete(&self) -> Result<&DMatrix<f64>> {
        if self.has_missing() {
            return Err(Error::InvalidData(format!("{} covariate cells are missing", self.n_missing())));
        }
        Ok(&self.covariates)
    }

    /// Checks that `completed` has the right shape, no non-finite cells and agrees
    /// with every observed cell.
    pub fn check_completed(&self, completed: &DMatrix<f64>) -> Result<()> {
        if completed.shape() != self.covariates.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.covariates.len(),
                found: completed.len(),
            });
        }
        for k in 0..self.n_covariates() {
            for i in 0..self.n_subjects() {
                let v = completed[(i, k)];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("completed covariate {} at row {}", self.meta[k].name, i + 1)));
                }
                if !self.missing[(i, k)] && v != self.covariates[(i, k)] {
                    return Err(Error::InvalidData(format!(
                        "completed covariate {} at row {} disagrees with the observed value",
                        self.meta[k].name,
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Number at risk (`time ≥ t`) and number of events exactly at `t`.
pub fn risk_set_counts(dataset: &SurvivalDataset, t: f64) -> (usize, usize) {
    let mut at_risk = 0;
    let mut events = 0;
    for (&ti, &di) in dataset.times.iter().zip(&dataset.events) {
        if ti >= t {
            at_risk += 1;
            if ti == t && di {
                events += 1;
            }
        }
    }
    (at_risk, events)
}

/// Right-continuous step functions `Ĥ(t) = Σ_{s≤t} d(s)/n(s)` and
/// `Ĥ⁽¹⁾(t) = Σ_{s≤t} s·d(s)/n(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeHazardEstimate {
    event_times: Vec<f64>,
    h_increments: Vec<f64>,
    h1_increments: Vec<f64>,
    h_cumulative: Vec<f64>,
    h1_cumulative: Vec<f64>,
}

fn prefix_sums(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

impl CumulativeHazardEstimate {
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn h_increments(&self) -> &[f64] {
        &self.h_increments
    }

    pub fn h1_increments(&self) -> &[f64] {
        &self.h1_increments
    }

    fn upto(&self, t: f64) -> usize {
        self.event_times.partition_point(|&s| s <= t)
    }

    /// Ĥ(t).
    pub fn h(&self, t: f64) -> f64 {
        match self.upto(t) {
            0 => 0.0,
            j => self.h_cumulative[j - 1],
        }
    }

    /// Ĥ⁽¹⁾(t).
    pub fn h1(&self, t: f64) -> f64 {
        match self.upto(t) {
            0 => 0.0,
            j => self.h1_cumulative[j - 1],
        }
    }

    /// Σ over event times in `(a, b]` of d(t)/n(t).
    pub fn h_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            0.0
        } else {
            self.h(b) - self.h(a)
        }
    }
}

/// Nelson–Aalen estimates Ĥ and Ĥ⁽¹⁾ from the outcome data alone.
pub fn nelson_aalen(dataset: &SurvivalDataset) -> CumulativeHazardEstimate {
    let (event_times, deaths) = unique_failure_times(&dataset.times, &dataset.events);
    let mut sorted = dataset.times.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let h_increments: Vec<f64> = event_times
        .iter()
        .zip(&deaths)
        .map(|(&t, &d)| d / (n - sorted.partition_point(|&s| s < t)) as f64)
        .collect();
    let h1_increments: Vec<f64> = event_times.iter().zip(&h_increments).map(|(t, h)| t * h).collect();
    CumulativeHazardEstimate {
        h_cumulative: prefix_sums(&h_increments),
        h1_cumulative: prefix_sums(&h1_increments),
        event_times,
        h_increments,
        h1_increments,
    }
}

/// Breslow estimate of the baseline cumulative hazard, as increments at the unique
/// failure times.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHazard {
    event_times: Vec<f64>,
    increments: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BaselineHazard {
    pub fn from_increments(event_times: Vec<f64>, increments: Vec<f64>) -> Result<Self> {
        if event_times.len() != increments.len() {
            return Err(Error::DimensionMismatch {
                expected: event_times.len(),
                found: increments.len(),
            });
        }
        if event_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("baseline event times must be strictly increasing".into()));
        }
        if increments.iter().any(|&h| !(h >= 0.0) || !h.is_finite()) {
            return Err(Error::InvalidArgument("baseline increments must be finite and >= 0".into()));
        }
        Ok(BaselineHazard {
            cumulative: prefix_sums(&increments),
            event_times,
            increments,
        })
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// H₀(t).
    pub fn cumulative(&self, t: f64) -> f64 {
        match self.event_times.partition_point(|&s| s <= t) {
            0 => 0.0,
            j => self.cumulative[j - 1],
        }
    }

    /// Index of the failure time exactly equal to `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let j = self.event_times.partition_point(|&s| s < t);
        (j < self.event_times.len() && self.event_times[j] == t).then_some(j)
    }

    /// Number of failure times `≤ t`.
    pub fn count_upto(&self, t: f64) -> usize {
        self.event_times.partition_point(|&s| s <= t)
    }
}

/// Breslow baseline at a fitted model's coefficients.
pub fn breslow_baseline(dataset: &SurvivalDataset, model: &CoxTveModel, completed: &DMatrix<f64>) -> Result<BaselineHazard> {
    breslow_from_coefficients(dataset, model.specs(), model.coefficients().as_slice(), completed)
}

/// Breslow baseline `ΔH₀(t_j) = d(t_j) / Σ_{i at risk} exp(lp_i(t_j))` at arbitrary
/// coefficients, with each linear predictor evaluated at the failure time.
pub fn breslow_from_coefficients(
    dataset: &SurvivalDataset,
    specs: &[TveSpec],
    coefficients: &[f64],
    completed: &DMatrix<f64>,
) -> Result<BaselineHazard> {
    let layout = CoefficientLayout::new(specs.to_vec());
    if coefficients.len() != layout.dimension() {
        return Err(Error::DimensionMismatch {
            expected: layout.dimension(),
            found: coefficients.len(),
        });
    }
    if specs.len() != completed.ncols() || completed.nrows() != dataset.n_subjects() {
        return Err(Error::DimensionMismatch {
            expected: dataset.n_subjects() * specs.len(),
            found: completed.len(),
        });
    }
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("Breslow coefficients".into()));
    }
    let engine = RiskSetEngine::new(&dataset.times, &dataset.events, completed);
    let times = engine.failure_times().to_vec();
    let effects = effects_at(&layout, coefficients, &times);
    let mut increments = alloc::vec![0.0; times.len()];
    let mut failure = None;
    engine.sweep(&effects, false, |j, m| {
        let v = engine.deaths()[j] * (-m.log_s0).exp();
        if !v.is_finite() || m.log_s0 == f64::NEG_INFINITY {
            failure.get_or_insert(times[j]);
        }
        increments[j] = v;
    });
    if let Some(time) = failure {
        return Err(Error::EmptyRiskSet { time });
    }
    BaselineHazard::from_increments(times, increments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny() -> SurvivalDataset {
        SurvivalDataset::complete(
            vec![1.0, 2.0, 3.0],
            vec![true, true, false],
            DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]),
            vec![CovariateMeta::new("x", CovariateKind::Binary)],
        )
        .unwrap()
    }

    #[test]
    fn risk_set_counts_examples() {
        let d = tiny();
        assert_eq!(risk_set_counts(&d, 1.0), (3, 1));
        assert_eq!(risk_set_counts(&d, 2.5), (1, 0));
        assert_eq!(risk_set_counts(&d, 0.0), (3, 0));
    }

    #[test]
    fn nelson_aalen_hand_sums() {
        let na = nelson_aalen(&tiny());
        assert!((na.h(1.0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((na.h(2.0) - (1.0 / 3.0 + 0.5)).abs() < 1e-12);
        assert!((na.h(3.0) - (1.0 / 3.0 + 0.5)).abs() < 1e-12);
        assert!((na.h1(2.0) - (1.0 / 3.0 + 1.0)).abs() < 1e-12);
        assert_eq!(na.h(0.99), 0.0);
        assert_eq!(na.h1(0.5), 0.0);
    }

    #[test]
    fn nelson_aalen_without_events_is_zero() {
        let d = SurvivalDataset::complete(
            vec![1.0, 2.0],
            vec![false, false],
            DMatrix::zeros(2, 0),
            vec![],
        )
        .unwrap();
        let na = nelson_aalen(&d);
        assert!(na.event_times().is_empty());
        assert_eq!(na.h(10.0), 0.0);
        assert_eq!(na.h1(10.0), 0.0);
    }

    #[test]
    fn tied_events_are_grouped() {
        let d = SurvivalDataset::complete(
            vec![1.0, 1.0, 2.0, 4.0],
            vec![true, true, false, true],
            DMatrix::zeros(4, 0),
            vec![],
        )
        .unwrap();
        let na = nelson_aalen(&d);
        assert_eq!(na.event_times(), &[1.0, 4.0]);
        assert!((na.h_increments()[0] - 0.5).abs() < 1e-15);
        assert!((na.h_increments()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ingestion_rules() {
        let meta = vec![CovariateMeta::new("x", CovariateKind::Binary)];
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        assert!(SurvivalDataset::complete(vec![1.0, 2.0], vec![true, false], x, meta.clone()).is_err());
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(SurvivalDataset::complete(vec![0.0, 2.0], vec![true, false], x.clone(), meta.clone()).is_err());
        assert!(SurvivalDataset::complete(vec![-1.0, 2.0], vec![false, false], x.clone(), meta.clone()).is_err());
        assert!(SurvivalDataset::complete(vec![0.0, 2.0], vec![false, false], x.clone(), meta.clone()).is_ok());
        // masked cells are ignored, whatever they hold
        let mask = DMatrix::from_column_slice(2, 1, &[false, true]);
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 7.5]);
        let d = SurvivalDataset::new(vec![1.0, 2.0], vec![true, false], x, mask, meta).unwrap();
        assert_eq!(d.covariates()[(1, 0)], 0.0);
        assert_eq!(d.incomplete_covariates(), vec![0]);
        assert_eq!(d.complete_rows(), vec![0]);
    }

    #[test]
    fn breslow_examples() {
        let d = SurvivalDataset::complete(
            vec![1.0, 2.0],
            vec![true, true],
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            vec![CovariateMeta::new("x", CovariateKind::Binary)],
        )
        .unwrap();
        let b = breslow_from_coefficients(&d, &[TveSpec::constant()], &[2f64.ln()], d.covariates()).unwrap();
        assert!((b.increments()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((b.increments()[1] - 1.0).abs() < 1e-12);
        assert!((b.cumulative(5.0) - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(b.index_of(2.0), Some(1));
        assert_eq!(b.index_of(1.5), None);

        let single = SurvivalDataset::complete(
            vec![3.0],
            vec![true],
            DMatrix::from_column_slice(1, 1, &[1.0]),
            vec![CovariateMeta::new("x", CovariateKind::Continuous)],
        )
        .unwrap();
        let b = breslow_from_coefficients(&single, &[TveSpec::linear()], &[0.3, 0.1], single.covariates()).unwrap();
        assert!((b.increments()[0] - 1.0 / (0.3f64 + 0.1 * 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn breslow_at_zero_equals_nelson_aalen() {
        let d = tiny();
        let specs = [TveSpec::rcs(vec![0.5, 1.5, 2.5]).unwrap()];
        let b = breslow_from_coefficients(&d, &specs, &[0.0; 3], d.covariates()).unwrap();
        let na = nelson_aalen(&d);
        assert_eq!(b.event_times(), na.event_times());
        for (a, c) in b.increments().iter().zip(na.h_increments()) {
            assert!((a - c).abs() < 1e-12);
        }
    }
}
