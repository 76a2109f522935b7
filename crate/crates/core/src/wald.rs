//! Joint Wald tests with chi-square or F reference distributions.

use alloc::format;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{equilibrated_rcond, spd_inverse};
use crate::special::{chi_square_sf, f_sf};

/// Reference distribution that produced a p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaldReference {
    ChiSquare,
    /// F with `df` numerator and this many denominator degrees of freedom.
    F { denominator_df: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reference: WaldReference,
}

fn check(theta: &DVector<f64>, v: &DMatrix<f64>) -> Result<()> {
    if theta.is_empty() {
        return Err(Error::InvalidArgument("Wald test needs at least one parameter".into()));
    }
    if v.nrows() != theta.len() || v.ncols() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            found: v.nrows(),
        });
    }
    if theta.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Wald test inputs".into()));
    }
    Ok(())
}

fn inverse_checked(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rcond = equilibrated_rcond(v);
    if rcond < 1e-14 {
        return Err(Error::Singular(format!("Wald covariance (reciprocal condition {rcond:e})")));
    }
    spd_inverse(v)
}

/// `θᵀ V⁻¹ θ` referred to chi-square with `len(θ)` degrees of freedom.
pub fn wald_chi_square(theta: &DVector<f64>, v: &DMatrix<f64>) -> Result<WaldTest> {
    check(theta, v)?;
    let df = theta.len();
    let statistic = if theta.iter().all(|&x| x == 0.0) {
        0.0
    } else {
        (theta.transpose() * inverse_checked(v)? * theta)[(0, 0)].max(0.0)
    };
    Ok(WaldTest {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df as f64),
        reference: WaldReference::ChiSquare,
    })
}

/// Multiple-imputation D1 statistic with its F reference.
///
/// `within` is the average within-imputation covariance and `between` the
/// between-imputation covariance of the tested parameters, from `m` imputations.
pub fn wald_d1(theta: &DVector<f64>, within: &DMatrix<f64>, between: &DMatrix<f64>, m: usize) -> Result<WaldTest> {
    check(theta, within)?;
    check(theta, between)?;
    if m < 2 {
        return Err(Error::InvalidArgument(format!("D1 needs at least 2 imputations, got {m}")));
    }
    let k = theta.len() as f64;
    let mf = m as f64;
    let w_inv = inverse_checked(within)?;
    let r = (1.0 + 1.0 / mf) * (between * &w_inv).trace() / k;
    let statistic = ((theta.transpose() * &w_inv * theta)[(0, 0)] / (k * (1.0 + r))).max(0.0);
    let t = k * (mf - 1.0);
    let denominator_df = if r <= 0.0 {
        f64::INFINITY
    } else if t > 4.0 {
        let a = 1.0 + (1.0 - 2.0 / t) / r;
        4.0 + (t - 4.0) * a * a
    } else {
        let a = 1.0 + 1.0 / r;
        t * (1.0 + 1.0 / k) * a * a / 2.0
    };
    let p_value = if denominator_df.is_infinite() {
        chi_square_sf(statistic * k, k)
    } else {
        f_sf(statistic, k, denominator_df)
    };
    Ok(WaldTest {
        statistic,
        df: theta.len(),
        p_value,
        reference: WaldReference::F { denominator_df },
    })
}
