//! Functional forms for time-varying log hazard ratios.
//!
//! A [`TveSpec`] maps follow-up time `t` to a basis vector; the log hazard ratio of a
//! covariate at `t` is the dot product of that vector with the covariate's coefficient
//! block.
//!
//! | form     | basis                                   | dimension |
//! |----------|-----------------------------------------|-----------|
//! | constant | `1`                                     | 1         |
//! | linear   | `1, t`                                  | 2         |
//! | rcs      | `1, t, s_1(t), …, s_{L-2}(t)`           | L         |
//! | step     | `I(0<t≤c_1), …, I(c_{K-1}<t≤c_K)`       | K         |
//!
//! The restricted cubic spline terms are
//! `s_i(t) = (t-u_i)₊³ - (t-u_{L-1})₊³ (u_L-u_i)/(u_L-u_{L-1}) + (t-u_L)₊³ (u_{L-1}-u_i)/(u_L-u_{L-1})`,
//! which makes the curve linear beyond the outer knots.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::DMatrix;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Form {
    Constant,
    Linear,
    Rcs(Vec<f64>),
    Step(Vec<f64>),
}

/// Which family a [`TveSpec`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TveKind {
    Constant,
    Linear,
    Rcs,
    Step,
}

/// Functional form of one covariate's log hazard ratio over time.
#[derive(Debug, Clone, PartialEq)]
pub struct TveSpec {
    form: Form,
}

fn check_increasing(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} must be finite")));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::KnotDegeneracy(format!("{what} must be strictly increasing: {values:?}")));
    }
    Ok(())
}

#[inline]
fn cube_pos(x: f64) -> f64 {
    if x > 0.0 {
        x * x * x
    } else {
        0.0
    }
}

impl TveSpec {
    pub const fn constant() -> Self {
        TveSpec { form: Form::Constant }
    }

    pub const fn linear() -> Self {
        TveSpec { form: Form::Linear }
    }

    /// Restricted cubic spline with the given knots (at least three, strictly increasing).
    pub fn rcs(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "a restricted cubic spline needs at least 3 knots, got {}",
                knots.len()
            )));
        }
        check_increasing(&knots, "spline knots")?;
        Ok(TveSpec { form: Form::Rcs(knots) })
    }

    /// Step function with intervals `(0, c_1], (c_1, c_2], …, (c_{K-1}, c_K]`.
    pub fn step(cutpoints: Vec<f64>) -> Result<Self> {
        if cutpoints.is_empty() {
            return Err(Error::InvalidArgument("a step function needs at least one cutpoint".into()));
        }
        check_increasing(&cutpoints, "step cutpoints")?;
        if cutpoints[0] <= 0.0 {
            return Err(Error::InvalidArgument("step cutpoints must be positive".into()));
        }
        Ok(TveSpec { form: Form::Step(cutpoints) })
    }

    pub fn kind(&self) -> TveKind {
        match self.form {
            Form::Constant => TveKind::Constant,
            Form::Linear => TveKind::Linear,
            Form::Rcs(_) => TveKind::Rcs,
            Form::Step(_) => TveKind::Step,
        }
    }

    /// Spline knots or step cutpoints; empty for constant and linear forms.
    pub fn knots(&self) -> &[f64] {
        match &self.form {
            Form::Rcs(k) | Form::Step(k) => k,
            _ => &[],
        }
    }

    pub fn dimension(&self) -> usize {
        match &self.form {
            Form::Constant => 1,
            Form::Linear => 2,
            Form::Rcs(k) | Form::Step(k) => k.len(),
        }
    }

    pub fn is_time_varying(&self) -> bool {
        self.dimension() > 1
    }

    /// Basis vector at `t`.
    pub fn basis(&self, t: f64) -> Result<Vec<f64>> {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("basis evaluated at t = {t}")));
        }
        let mut out = vec![0.0; self.dimension()];
        self.basis_into(t, &mut out);
        Ok(out)
    }

    /// Writes the basis at `t` into `out` (length must equal [`dimension`](Self::dimension)).
    pub fn basis_into(&self, t: f64, out: &mut [f64]) {
        match &self.form {
            Form::Constant => out[0] = 1.0,
            Form::Linear => {
                out[0] = 1.0;
                out[1] = t;
            }
            Form::Rcs(u) => {
                let l = u.len();
                let (ul1, ul) = (u[l - 2], u[l - 1]);
                let span = ul - ul1;
                let tail1 = cube_pos(t - ul1);
                let tail2 = cube_pos(t - ul);
                out[0] = 1.0;
                out[1] = t;
                for i in 0..l - 2 {
                    out[i + 2] = cube_pos(t - u[i]) - tail1 * (ul - u[i]) / span + tail2 * (ul1 - u[i]) / span;
                }
            }
            Form::Step(c) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                if t > 0.0 {
                    let idx = c.partition_point(|&s| s < t).min(c.len() - 1);
                    out[idx] = 1.0;
                }
            }
        }
    }

    /// Log hazard ratio at `t` for the given coefficient block.
    pub fn eval(&self, coefficients: &[f64], t: f64) -> Result<f64> {
        if coefficients.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                found: coefficients.len(),
            });
        }
        Ok(self.basis(t)?.iter().zip(coefficients).map(|(b, c)| b * c).sum())
    }

    /// Contrast matrix whose rows are zero exactly when the effect is constant in time.
    ///
    /// For linear and spline forms this selects every coefficient but the leading
    /// constant; for step functions it takes differences against the first period.
    /// `None` for the constant form.
    pub fn ph_contrast(&self) -> Option<DMatrix<f64>> {
        let d = self.dimension();
        if d < 2 {
            return None;
        }
        let mut c = DMatrix::zeros(d - 1, d);
        for r in 0..d - 1 {
            c[(r, r + 1)] = 1.0;
            if self.kind() == TveKind::Step {
                c[(r, 0)] = -1.0;
            }
        }
        Some(c)
    }

    /// Short labels for each coefficient slot, e.g. `["", "t", "s1", "s2"]`.
    pub fn term_labels(&self) -> Vec<String> {
        match &self.form {
            Form::Constant => vec![String::new()],
            Form::Linear => vec![String::new(), "t".into()],
            Form::Rcs(k) => {
                let mut v = vec![String::new(), "t".into()];
                v.extend((1..k.len() - 1).map(|i| format!("s{i}")));
                v
            }
            Form::Step(k) => (1..=k.len()).map(|i| format!("I{i}")).collect(),
        }
    }
}

impl fmt::Display for TveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match &self.form {
            Form::Constant => f.write_str("constant"),
            Form::Linear => f.write_str("linear"),
            Form::Rcs(k) => write!(f, "rcs:{}", list(k)),
            Form::Step(k) => write!(f, "step:{}", list(k)),
        }
    }
}

impl FromStr for TveSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse_list = |body: &str| -> Result<Vec<f64>> {
            body.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad number {x:?} in {s:?}")))
                })
                .collect()
        };
        match s.split_once(':') {
            None if s.eq_ignore_ascii_case("constant") => Ok(TveSpec::constant()),
            None if s.eq_ignore_ascii_case("linear") => Ok(TveSpec::linear()),
            Some((tag, body)) if tag.eq_ignore_ascii_case("rcs") => TveSpec::rcs(parse_list(body)?),
            Some((tag, body)) if tag.eq_ignore_ascii_case("step") => TveSpec::step(parse_list(body)?),
            _ => Err(Error::InvalidArgument(format!("unknown time-varying effect form {s:?}"))),
        }
    }
}

/// Basis vector of `spec` at `t`.
pub fn basis(spec: &TveSpec, t: f64) -> Result<Vec<f64>> {
    spec.basis(t)
}

/// Log hazard ratio `basis(spec, t) · coefficients`.
pub fn tve_eval(spec: &TveSpec, coefficients: &[f64], t: f64) -> Result<f64> {
    spec.eval(coefficients, t)
}

/// Percentiles used for knot placement with `n_knots` knots.
pub fn knot_percentiles(n_knots: usize) -> Result<&'static [f64]> {
    match n_knots {
        3 => Ok(&[10.0, 50.0, 90.0]),
        4 => Ok(&[5.0, 35.0, 65.0, 95.0]),
        5 => Ok(&[5.0, 25.0, 50.0, 75.0, 95.0]),
        _ => Err(Error::InvalidArgument(format!("knot count must be 3, 4 or 5, got {n_knots}"))),
    }
}

/// Quantile by linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Spline knots at conventional percentiles of the given (event) times.
pub fn select_knots(times: &[f64], n_knots: usize) -> Result<Vec<f64>> {
    let percentiles = knot_percentiles(n_knots)?;
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("knot placement times".into()));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < n_knots {
        return Err(Error::KnotDegeneracy(format!(
            "{} distinct event times cannot support {n_knots} knots",
            distinct.len()
        )));
    }
    let knots: Vec<f64> = percentiles.iter().map(|p| quantile_sorted(&sorted, p / 100.0)).collect();
    if knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::KnotDegeneracy(format!("computed knots collide: {knots:?}")));
    }
    Ok(knots)
}
