//! Missing-at-random mechanisms for the two simulation covariates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::special::expit;
use crate::surv::SurvivalDataset;

/// How covariate values are removed.
///
/// Subjects are split at random into three equal groups. Group 1 may lose the first
/// covariate depending on the second, group 2 the second depending on the first,
/// and group 3 loses both together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Missingness {
    /// About 30% missing per covariate, about half the subjects incomplete.
    #[default]
    Standard30,
    /// As `Standard30`, with probabilities also depending on the event indicator.
    OutcomeDependent,
    /// About 10% missing per covariate.
    Low10,
    /// Nothing removed.
    None,
}

impl Missingness {
    pub const ALL: [Missingness; 4] = [
        Missingness::Standard30,
        Missingness::OutcomeDependent,
        Missingness::Low10,
        Missingness::None,
    ];

    /// Probabilities of removal for (group 1 first covariate, group 2 second
    /// covariate, group 3 both) given the subject's values.
    fn probabilities(self, x1: f64, x2: f64, event: bool) -> (f64, f64, f64) {
        let d = event as u8 as f64;
        match self {
            Missingness::Standard30 => (expit(0.4 + 0.5 * x2), expit(0.4 + 0.5 * x1), 0.3),
            Missingness::OutcomeDependent => (
                expit(-0.4 + 0.5 * x2 + 0.5 * d + 0.5 * x2 * d),
                expit(-0.4 + 0.5 * x1 + 0.5 * d + 0.5 * x1 * d),
                expit(-0.4 + 0.5 * d),
            ),
            Missingness::Low10 => (expit(-1.2 + 0.5 * x2), expit(-1.2 + 0.5 * x1), 0.1),
            Missingness::None => (0.0, 0.0, 0.0),
        }
    }
}

impl fmt::Display for Missingness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Missingness::Standard30 => "standard30",
            Missingness::OutcomeDependent => "outcome_dependent",
            Missingness::Low10 => "low10",
            Missingness::None => "none",
        })
    }
}

impl core::str::FromStr for Missingness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Missingness::ALL
            .into_iter()
            .find(|m| format!("{m}") == s)
            .ok_or_else(|| {
                let names: Vec<String> = Missingness::ALL.iter().map(|m| format!("{m}")).collect();
                Error::InvalidArgument(format!("unknown missingness mechanism {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

/// Mask values of a complete two-covariate dataset.
pub fn apply_missingness<R: Rng + ?Sized>(
    dataset: &SurvivalDataset,
    mechanism: Missingness,
    rng: &mut R,
) -> Result<SurvivalDataset> {
    if dataset.n_covariates() != 2 {
        return Err(Error::InvalidArgument(format!(
            "missingness mechanisms are defined for two covariates, dataset has {}",
            dataset.n_covariates()
        )));
    }
    let x = dataset.require_complete()?;
    let n = dataset.n_subjects();
    let mut mask = DMatrix::from_element(n, 2, false);
    if mechanism == Missingness::None {
        return dataset.with_mask(mask);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut group = alloc::vec![0u8; n];
    for (rank, &i) in order.iter().enumerate() {
        group[i] = (rank % 3) as u8;
    }
    for i in 0..n {
        let (p1, p2, p3) = mechanism.probabilities(x[(i, 0)], x[(i, 1)], dataset.events()[i]);
        let u: f64 = rng.random();
        match group[i] {
            0 => mask[(i, 0)] = u < p1,
            1 => mask[(i, 1)] = u < p2,
            _ => {
                mask[(i, 0)] = u < p3;
                mask[(i, 1)] = u < p3;
            }
        }
    }
    dataset.with_mask(mask)
}
