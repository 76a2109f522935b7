//! Event and dropout rates that reach target outcome fractions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generate::{generate_covariates, EffectGrid, SECOND_EFFECT};
use crate::error::{Error, Result};
use crate::surv::CovariateKind;

/// Default pilot cohort size per probe.
pub const PILOT_SUBJECTS: usize = 20_000;

/// What to calibrate.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTarget {
    pub scenario: u8,
    pub kind: CovariateKind,
    /// Fraction of subjects with an observed event.
    pub event_fraction: f64,
    /// Fraction censored by random dropout before the horizon.
    pub dropout_fraction: f64,
    /// Administrative censoring time.
    pub horizon: f64,
    pub pilot_subjects: usize,
    /// Accepted distance between simulated and target fractions.
    pub tolerance: f64,
    pub seed: u64,
}

impl CalibrationTarget {
    /// 10-year horizon, 20000-subject pilot, ±0.5 percentage points.
    pub fn new(scenario: u8, kind: CovariateKind, event_fraction: f64, dropout_fraction: f64) -> Self {
        CalibrationTarget {
            scenario,
            kind,
            event_fraction,
            dropout_fraction,
            horizon: 10.0,
            pilot_subjects: PILOT_SUBJECTS,
            tolerance: 0.005,
            seed: 0,
        }
    }
}

/// Which rate a probe moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Event,
    Dropout,
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateKind::Event => "event",
            RateKind::Dropout => "dropout",
        })
    }
}

/// One evaluation of the pilot cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub round: usize,
    pub rate_kind: RateKind,
    pub rate: f64,
    /// The simulated fraction of the outcome the probed rate controls.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub lambda_e: f64,
    pub lambda_c: f64,
    pub event_fraction: f64,
    pub dropout_fraction: f64,
    pub probes: Vec<Probe>,
}

/// Covariates and unit-exponential draws of a pilot or validation cohort.
struct Cohort {
    x1: Vec<f64>,
    /// `exp(0.5 x2)`.
    second: Vec<f64>,
    event_draws: Vec<f64>,
    dropout_draws: Vec<f64>,
}

impl Cohort {
    fn draw(kind: CovariateKind, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = generate_covariates(kind, n, &mut rng);
        let mut unit = || -(1.0 - rng.random::<f64>()).ln();
        let event_draws: Vec<f64> = (0..n).map(|_| unit()).collect();
        let dropout_draws: Vec<f64> = (0..n).map(|_| unit()).collect();
        Cohort {
            x1: x.column(0).iter().copied().collect(),
            second: x.column(1).iter().map(|v| (SECOND_EFFECT * v).exp()).collect(),
            event_draws,
            dropout_draws,
        }
    }

    fn len(&self) -> usize {
        self.x1.len()
    }

    /// Visit each subject's integrated effect profile, reusing profiles of equal
    /// first covariates.
    fn for_each_profile(&self, grid: &mut EffectGrid, mut visit: impl FnMut(usize, &super::generate::Profile)) {
        let mut cache: Vec<(f64, super::generate::Profile)> = Vec::new();
        for i in 0..self.len() {
            let x1 = self.x1[i];
            if let Some((_, p)) = cache.iter().find(|(v, _)| *v == x1) {
                visit(i, p);
            } else if x1 == 0.0 || x1 == 1.0 {
                cache.push((x1, grid.profile(x1, 1e-10)));
                visit(i, &cache.last().unwrap().1);
            } else {
                visit(i, &grid.profile(x1, 1e-8));
            }
        }
    }

    /// Per subject, the smallest event rate giving an event, at dropout rate `lambda_c`.
    fn event_thresholds(&self, grid: &mut EffectGrid, lambda_c: f64, horizon: f64) -> Vec<f64> {
        let mut out = alloc::vec![f64::INFINITY; self.len()];
        self.for_each_profile(grid, |i, p| {
            let end = (self.dropout_draws[i] / lambda_c).min(horizon);
            let g = p.at(end) * self.second[i];
            out[i] = if g > 0.0 { self.event_draws[i] / g } else { f64::INFINITY };
        });
        out
    }

    /// Per subject, the smallest dropout rate giving a dropout, at event rate `lambda_e`.
    fn dropout_thresholds(&self, grid: &mut EffectGrid, lambda_e: f64, horizon: f64) -> Vec<f64> {
        let mut out = alloc::vec![f64::INFINITY; self.len()];
        self.for_each_profile(grid, |i, p| {
            let event_time = p.invert(self.event_draws[i] / (lambda_e * self.second[i])).unwrap_or(f64::INFINITY);
            out[i] = self.dropout_draws[i] / event_time.min(horizon);
        });
        out
    }
}

fn fraction_below(thresholds: &[f64], rate: f64) -> f64 {
    thresholds.iter().filter(|&&t| t < rate).count() as f64 / thresholds.len() as f64
}

/// Bisection on the log rate for the fraction of thresholds below it.
fn bisect_rate(
    thresholds: &[f64],
    target: f64,
    tolerance: f64,
    round: usize,
    rate_kind: RateKind,
    probes: &mut Vec<Probe>,
) -> Result<f64> {
    let finite: Vec<f64> = thresholds.iter().copied().filter(|t| t.is_finite() && *t > 0.0).collect();
    let (min, max) = finite
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    if finite.is_empty() {
        return Err(Error::Calibration(format!("no {rate_kind} rate produces any {rate_kind}s")));
    }
    let (mut lo, mut hi) = ((0.5 * min).ln(), (2.0 * max).ln());
    let reachable = fraction_below(thresholds, hi.exp());
    if reachable < target - tolerance {
        probes.push(Probe {
            round,
            rate_kind,
            rate: hi.exp(),
            fraction: reachable,
        });
        return Err(Error::Calibration(format!(
            "{rate_kind} fraction {target} unreachable: at most {reachable} at rate {}; probes: {}",
            hi.exp(),
            trace(probes)
        )));
    }
    let mut rate = hi.exp();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        rate = mid.exp();
        let fraction = fraction_below(thresholds, rate);
        probes.push(Probe {
            round,
            rate_kind,
            rate,
            fraction,
        });
        if (fraction - target).abs() <= tolerance {
            break;
        }
        if fraction < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(rate)
}

fn trace(probes: &[Probe]) -> String {
    let parts: Vec<String> = probes
        .iter()
        .map(|p| format!("[{} {}: rate {:.6e} -> {:.4}]", p.round, p.rate_kind, p.rate, p.fraction))
        .collect();
    parts.join(" ")
}

fn check_target(target: &CalibrationTarget) -> Result<()> {
    super::generate::check_scenario(target.scenario)?;
    let (e, d) = (target.event_fraction, target.dropout_fraction);
    if !(e > 0.0 && e < 1.0 && d > 0.0 && d < 1.0 && e + d < 1.0) {
        return Err(Error::Calibration(format!(
            "targets must be positive fractions summing below one, got event {e} and dropout {d}"
        )));
    }
    if !(target.horizon > 0.0 && target.horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", target.horizon)));
    }
    if target.pilot_subjects == 0 || !(target.tolerance > 0.0) {
        return Err(Error::InvalidArgument("pilot size and tolerance must be positive".into()));
    }
    Ok(())
}

const MAX_ROUNDS: usize = 50;

/// Alternate bisections on the event and dropout rates over one fixed pilot
/// cohort until both simulated fractions are within tolerance.
pub fn calibrate_rates(target: &CalibrationTarget) -> Result<Calibration> {
    check_target(target)?;
    let cohort = Cohort::draw(target.kind, target.pilot_subjects, target.seed);
    let mut grid = EffectGrid::new(target.scenario, target.horizon)?;
    let inner = 0.1 * target.tolerance;
    let mut probes = Vec::new();
    // dropout rate ignoring events as a starting point
    let mut lambda_c = -(1.0 - target.dropout_fraction).ln() / target.horizon;
    let mut lambda_e = f64::NAN;
    for round in 0..MAX_ROUNDS {
        let thresholds = cohort.event_thresholds(&mut grid, lambda_c, target.horizon);
        if lambda_e.is_finite() {
            let event_fraction = fraction_below(&thresholds, lambda_e);
            let dropout = cohort.dropout_thresholds(&mut grid, lambda_e, target.horizon);
            let dropout_fraction = fraction_below(&dropout, lambda_c);
            if (event_fraction - target.event_fraction).abs() <= target.tolerance
                && (dropout_fraction - target.dropout_fraction).abs() <= target.tolerance
            {
                return Ok(Calibration {
                    lambda_e,
                    lambda_c,
                    event_fraction,
                    dropout_fraction,
                    probes,
                });
            }
        }
        lambda_e = bisect_rate(&thresholds, target.event_fraction, inner, round, RateKind::Event, &mut probes)?;
        let dropout = cohort.dropout_thresholds(&mut grid, lambda_e, target.horizon);
        lambda_c = bisect_rate(&dropout, target.dropout_fraction, inner, round, RateKind::Dropout, &mut probes)?;
    }
    Err(Error::Calibration(format!(
        "no joint solution after {MAX_ROUNDS} rounds; probes: {}",
        trace(&probes)
    )))
}

/// Simulated (event, dropout) fractions of an independent cohort.
pub fn outcome_fractions(
    scenario: u8,
    kind: CovariateKind,
    lambda_e: f64,
    lambda_c: f64,
    horizon: f64,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(lambda_e > 0.0 && lambda_c > 0.0) || n == 0 {
        return Err(Error::InvalidArgument("rates and cohort size must be positive".into()));
    }
    let cohort = Cohort::draw(kind, n, seed);
    let mut grid = EffectGrid::new(scenario, horizon)?;
    let events = cohort.event_thresholds(&mut grid, lambda_c, horizon);
    let dropouts = cohort.dropout_thresholds(&mut grid, lambda_e, horizon);
    Ok((fraction_below(&events, lambda_e), fraction_below(&dropouts, lambda_c)))
}
