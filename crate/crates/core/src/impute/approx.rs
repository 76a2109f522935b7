//! Imputation by regression on an approximately compatible set of columns.
//!
//! For target covariate `k` the imputation regression (logistic for binary, linear
//! for continuous) uses an intercept, the other covariates, the event indicator
//! times every basis function of the target's time-varying form evaluated at the
//! subject's own time, and the Nelson–Aalen cumulative hazard `Ĥ(T)`. Optionally
//! `Ĥ⁽¹⁾(T) = Σ_{t≤T} t·d(t)/n(t)` and interactions of the other covariates with
//! both. With a constant form this is the classical `{1, X₋ₖ, D, Ĥ(T)}` model.
//!
//! Step forms use `D·I_k`, the hazard accumulated over each completed period
//! before `T` and the hazard accumulated since the last completed period. The last
//! period is open-ended (times past the final cutpoint belong to it), so it never
//! counts as completed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{check_m, collinear_columns, finite_or_context, imputation_rng, initial_completion, with_context};
use super::{ImputationDiagnostics, ImputedDatasets, RegressionDraw};
use crate::basis::{TveKind, TveSpec};
use crate::error::{Error, Result};
use crate::surv::{nelson_aalen, CumulativeHazardEstimate, SurvivalDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxConfig {
    pub m: usize,
    pub fcs_iterations: usize,
    pub include_h1: bool,
    pub include_interactions: bool,
    /// Time-varying form assumed for each covariate; drives the `D·basis(T)` columns.
    pub specs: Vec<TveSpec>,
    pub seed: u64,
}

impl ApproxConfig {
    pub fn new(specs: Vec<TveSpec>, m: usize, seed: u64) -> Self {
        ApproxConfig {
            m,
            fcs_iterations: 10,
            include_h1: false,
            include_interactions: false,
            specs,
            seed,
        }
    }
}

/// Imputation-model design for one target covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationDesign {
    /// All subjects × retained columns.
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
    /// Columns removed because they were collinear on the fitting rows.
    pub dropped: Vec<String>,
}

/// Outcome-side columns for one subject; they depend only on `(T, D)`.
struct OutcomeColumns {
    names: Vec<String>,
    values: Vec<f64>,
    /// Columns interacted with the other covariates.
    hazard_columns: Vec<usize>,
}

fn outcome_columns(
    spec: &TveSpec,
    hazard: &CumulativeHazardEstimate,
    include_h1: bool,
    times: &[f64],
    events: &[bool],
) -> OutcomeColumns {
    let n = times.len();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut hazard_columns = Vec::new();
    let labels = spec.term_labels();
    let d = spec.dimension();
    let mut b = vec![0.0; d];
    let mut dcols = vec![vec![0.0; n]; d];
    for i in 0..n {
        if events[i] {
            spec.basis_into(times[i], &mut b);
            for c in 0..d {
                dcols[c][i] = b[c];
            }
        }
    }
    for (c, col) in dcols.into_iter().enumerate() {
        names.push(if labels[c].is_empty() { "D".into() } else { format!("D:{}", labels[c]) });
        cols.push(col);
    }
    if spec.kind() == TveKind::Step {
        let cuts = spec.knots();
        // completed periods (0,c1], ..., (c_{K-2}, c_{K-1}]
        for k in 0..cuts.len() - 1 {
            let lo = if k == 0 { 0.0 } else { cuts[k - 1] };
            let period = hazard.h_between(lo, cuts[k]);
            hazard_columns.push(cols.len());
            names.push(format!("Hstar:{}", k + 1));
            cols.push(times.iter().map(|&t| if cuts[k] < t { period } else { 0.0 }).collect());
        }
        hazard_columns.push(cols.len());
        names.push("Hstar:T".into());
        cols.push(
            times
                .iter()
                .map(|&t| {
                    let done = cuts[..cuts.len() - 1].iter().filter(|&&c| c < t).count();
                    let since = if done == 0 { 0.0 } else { cuts[done - 1] };
                    hazard.h_between(since, t)
                })
                .collect(),
        );
    } else {
        hazard_columns.push(cols.len());
        names.push("H".into());
        cols.push(times.iter().map(|&t| hazard.h(t)).collect());
        if include_h1 {
            hazard_columns.push(cols.len());
            names.push("H1".into());
            cols.push(times.iter().map(|&t| hazard.h1(t)).collect());
        }
    }
    let width = cols.len();
    let mut values = vec![0.0; n * width];
    for (c, col) in cols.iter().enumerate() {
        for i in 0..n {
            values[i * width + c] = col[i];
        }
    }
    OutcomeColumns {
        names,
        values,
        hazard_columns,
    }
}

fn assemble(
    dataset: &SurvivalDataset,
    completed: &DMatrix<f64>,
    target: usize,
    outcome: &OutcomeColumns,
    include_interactions: bool,
) -> (DMatrix<f64>, Vec<String>) {
    let n = dataset.n_subjects();
    let p = dataset.n_covariates();
    let others: Vec<usize> = (0..p).filter(|&j| j != target).collect();
    let width = outcome.names.len();
    let mut names: Vec<String> = vec!["(intercept)".into()];
    names.extend(others.iter().map(|&j| dataset.meta()[j].name.clone()));
    names.extend(outcome.names.iter().cloned());
    if include_interactions {
        for &j in &others {
            for &h in &outcome.hazard_columns {
                names.push(format!("{}:{}", dataset.meta()[j].name, outcome.names[h]));
            }
        }
    }
    let mut m = DMatrix::zeros(n, names.len());
    for i in 0..n {
        let mut c = 0;
        m[(i, c)] = 1.0;
        c += 1;
        for &j in &others {
            m[(i, c)] = completed[(i, j)];
            c += 1;
        }
        let row = &outcome.values[i * width..(i + 1) * width];
        for &v in row {
            m[(i, c)] = v;
            c += 1;
        }
        if include_interactions {
            for &j in &others {
                for &h in &outcome.hazard_columns {
                    m[(i, c)] = completed[(i, j)] * row[h];
                    c += 1;
                }
            }
        }
    }
    (m, names)
}

fn observed_rows(dataset: &SurvivalDataset, k: usize) -> Vec<usize> {
    (0..dataset.n_subjects()).filter(|&i| !dataset.is_missing(i, k)).collect()
}

fn finish(matrix: DMatrix<f64>, names: Vec<String>, rows: &[usize]) -> ImputationDesign {
    let (keep, drop) = collinear_columns(&matrix, rows);
    if drop.is_empty() {
        return ImputationDesign {
            matrix,
            names,
            dropped: Vec::new(),
        };
    }
    ImputationDesign {
        matrix: matrix.select_columns(keep.iter()),
        names: keep.iter().map(|&c| names[c].clone()).collect(),
        dropped: drop.iter().map(|&c| names[c].clone()).collect(),
    }
}

/// Imputation design for covariate `target`, with the other covariates taken from
/// `completed`. Collinear columns (judged on the rows where the target is observed)
/// are dropped and listed in [`ImputationDesign::dropped`].
pub fn build_imputation_design(
    dataset: &SurvivalDataset,
    completed: &DMatrix<f64>,
    target: usize,
    config: &ApproxConfig,
    hazard: &CumulativeHazardEstimate,
) -> Result<ImputationDesign> {
    check_config(dataset, config)?;
    if target >= dataset.n_covariates() {
        return Err(Error::InvalidArgument(format!("no covariate with index {target}")));
    }
    let outcome = outcome_columns(&config.specs[target], hazard, config.include_h1, dataset.times(), dataset.events());
    let (matrix, names) = assemble(dataset, completed, target, &outcome, config.include_interactions);
    Ok(finish(matrix, names, &observed_rows(dataset, target)))
}

fn check_config(dataset: &SurvivalDataset, config: &ApproxConfig) -> Result<()> {
    if config.specs.len() != dataset.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: dataset.n_covariates(),
            found: config.specs.len(),
        });
    }
    Ok(())
}

/// Chained-equations imputation from the approximately compatible regressions.
pub fn impute_approx(dataset: &SurvivalDataset, config: &ApproxConfig) -> Result<ImputedDatasets> {
    check_m(config.m, config.fcs_iterations)?;
    check_config(dataset, config)?;
    let incomplete = dataset.incomplete_covariates();
    let start = initial_completion(dataset)?;
    let hazard = nelson_aalen(dataset);
    let outcome: Vec<Option<OutcomeColumns>> = (0..dataset.n_covariates())
        .map(|k| {
            incomplete.contains(&k).then(|| {
                outcome_columns(&config.specs[k], &hazard, config.include_h1, dataset.times(), dataset.events())
            })
        })
        .collect();
    let observed: Vec<Vec<usize>> = (0..dataset.n_covariates()).map(|k| observed_rows(dataset, k)).collect();
    let missing: Vec<Vec<usize>> = (0..dataset.n_covariates())
        .map(|k| (0..dataset.n_subjects()).filter(|&i| dataset.is_missing(i, k)).collect())
        .collect();
    // with one incomplete covariate the design never changes, so earlier rounds
    // cannot influence the final draw
    let rounds = if incomplete.len() == 1 { 1 } else { config.fcs_iterations };

    let mut completed = Vec::with_capacity(config.m);
    let mut seeds = Vec::with_capacity(config.m);
    let mut diagnostics = Vec::with_capacity(config.m);
    for m in 0..config.m {
        let mut rng = imputation_rng(config.seed, m);
        let mut x = start.clone();
        let mut diag = ImputationDiagnostics::default();
        for iteration in 0..rounds {
            for &k in &incomplete {
                let name = &dataset.meta()[k].name;
                let ctx = |e| with_context(e, m, iteration, name);
                let (matrix, names) = assemble(dataset, &x, k, outcome[k].as_ref().unwrap(), config.include_interactions);
                let design = finish(matrix, names, &observed[k]);
                diag.note_dropped(&design.dropped);
                let draw = RegressionDraw::draw(dataset.meta()[k].kind, &design.matrix, &x, k, &observed[k], &design.names, &mut rng)
                    .map_err(ctx)?;
                for &i in &missing[k] {
                    x[(i, k)] = finite_or_context(draw.sample(&design.matrix, i, &mut rng), m, iteration, name)?;
                }
            }
        }
        completed.push(x);
        seeds.push(config.seed ^ m as u64);
        diagnostics.push(diag);
    }
    ImputedDatasets::new(dataset.clone(), completed, seeds, diagnostics)
}
