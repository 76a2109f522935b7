//! Covariates and event times under the simulation scenarios.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::special::expit;
use crate::surv::CovariateKind;

/// Log hazard ratio of the second covariate in every scenario.
pub const SECOND_EFFECT: f64 = 0.5;

/// Correlation of the two continuous covariates.
pub const CONTINUOUS_CORRELATION: f64 = 0.5;

/// Prevalence of the first binary covariate.
pub const BINARY_PREVALENCE: f64 = 0.2;

/// Widest quadrature panel, in years.
pub const MAX_PANEL: f64 = 0.01;

/// Target accuracy of the cumulative hazard.
pub const QUADRATURE_TOLERANCE: f64 = 1e-8;

/// Number of time-varying effect scenarios.
pub const N_SCENARIOS: u8 = 5;

pub(crate) fn check_scenario(scenario: u8) -> Result<()> {
    if (1..=N_SCENARIOS).contains(&scenario) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("unknown scenario {scenario} (expected 1 to {N_SCENARIOS})")))
    }
}

fn first_effect(scenario: u8, t: f64) -> f64 {
    match scenario {
        1 => 0.5,
        2 => 0.1 + 0.2 * t,
        3 => 0.1 + 0.8 * t.powf(0.3),
        4 => 0.32 + 1.42 * (-t).exp() - 0.02 * t.powf(0.7),
        _ => 4.0 / (1.0 + (1.2 * (t + 0.5)).exp()) + 4.0 / (3.0 * (1.1 + (10.0 - t).exp())) + 0.02,
    }
}

/// True log hazard ratio of the first covariate at time `t`.
pub fn scenario_tve(scenario: u8, t: f64) -> Result<f64> {
    check_scenario(scenario)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be non-negative, got {t}")));
    }
    Ok(first_effect(scenario, t))
}

/// True log hazard ratio of covariate `k` (0 or 1) at time `t`.
pub fn true_effect(scenario: u8, k: usize, t: f64) -> Result<f64> {
    match k {
        0 => scenario_tve(scenario, t),
        1 => {
            check_scenario(scenario)?;
            Ok(SECOND_EFFECT)
        }
        _ => Err(Error::InvalidArgument(format!("scenarios have two covariates, asked for {k}"))),
    }
}

/// An `n × 2` matrix of covariates.
pub fn generate_covariates<R: Rng + ?Sized>(kind: CovariateKind, n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, 2);
    for i in 0..n {
        match kind {
            CovariateKind::Binary => {
                let x1 = (rng.random::<f64>() < BINARY_PREVALENCE) as u8 as f64;
                let x2 = (rng.random::<f64>() < expit(x1)) as u8 as f64;
                x[(i, 0)] = x1;
                x[(i, 1)] = x2;
            }
            CovariateKind::Continuous => {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                let r = CONTINUOUS_CORRELATION;
                x[(i, 0)] = z1;
                x[(i, 1)] = r * z1 + (1.0 - r * r).sqrt() * z2;
            }
        }
    }
    x
}

/// Scenario log hazard ratio of the first covariate sampled on a regular grid,
/// shared by all subjects.
#[derive(Debug, Clone)]
pub(crate) struct EffectGrid {
    scenario: u8,
    horizon: f64,
    /// Node spacing and `f(node)` per refinement level, coarsest first.
    levels: Vec<(f64, Vec<f64>)>,
}

const MAX_LEVELS: usize = 8;

impl EffectGrid {
    pub(crate) fn new(scenario: u8, horizon: f64) -> Result<Self> {
        check_scenario(scenario)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        let mut grid = EffectGrid {
            scenario,
            horizon,
            levels: Vec::new(),
        };
        grid.push_level();
        grid.push_level();
        Ok(grid)
    }

    fn push_level(&mut self) {
        let panels = (self.horizon / MAX_PANEL).ceil() as usize;
        // Simpson panels of width `horizon / panels`, halved per level; nodes at half-panels
        let nodes = 2 * panels << self.levels.len();
        let step = self.horizon / nodes as f64;
        let f = (0..=nodes).map(|j| first_effect(self.scenario, step * j as f64)).collect();
        self.levels.push((step, f));
    }

    /// Cumulative integral of `exp(f(u) x1)` at panel ends, refined until the
    /// integral to the horizon changes by less than `tolerance` between levels.
    pub(crate) fn profile(&mut self, x1: f64, tolerance: f64) -> Profile {
        let mut previous = self.level_profile(0, x1);
        for level in 1..MAX_LEVELS {
            if level == self.levels.len() {
                self.push_level();
            }
            let next = self.level_profile(level, x1);
            let change = (next.total() - previous.total()).abs();
            previous = next;
            if change < tolerance {
                break;
            }
        }
        previous
    }

    fn level_profile(&self, level: usize, x1: f64) -> Profile {
        let (step, f) = &self.levels[level];
        let panels = (f.len() - 1) / 2;
        let mut cumulative = Vec::with_capacity(panels + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        let mut left = (f[0] * x1).exp();
        for p in 0..panels {
            let mid = (f[2 * p + 1] * x1).exp();
            let right = (f[2 * p + 2] * x1).exp();
            acc += step / 3.0 * (left + 4.0 * mid + right);
            cumulative.push(acc);
            left = right;
        }
        Profile {
            scenario: self.scenario,
            x1,
            panel: 2.0 * step,
            cumulative,
        }
    }
}

/// Cumulative integral `G(t) = ∫₀ᵗ exp(f(u) x1) du` tabulated at panel ends.
#[derive(Debug, Clone)]
pub(crate) struct Profile {
    scenario: u8,
    x1: f64,
    panel: f64,
    cumulative: Vec<f64>,
}

impl Profile {
    pub(crate) fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn integrand(&self, u: f64) -> f64 {
        (first_effect(self.scenario, u) * self.x1).exp()
    }

    fn partial(&self, a: f64, b: f64) -> f64 {
        let m = 0.5 * (a + b);
        (b - a) / 6.0 * (self.integrand(a) + 4.0 * self.integrand(m) + self.integrand(b))
    }

    /// `G(t)` for `0 ≤ t ≤ horizon`.
    pub(crate) fn at(&self, t: f64) -> f64 {
        let last = self.cumulative.len() - 1;
        let i = ((t / self.panel).floor() as usize).min(last);
        let start = i as f64 * self.panel;
        if i == last || t <= start {
            return self.cumulative[i];
        }
        self.cumulative[i] + self.partial(start, t)
    }

    /// Smallest `t` with `G(t) = target`, or `None` when `G(horizon) < target`.
    pub(crate) fn invert(&self, target: f64) -> Option<f64> {
        if target > self.total() {
            return None;
        }
        if target <= 0.0 {
            return Some(0.0);
        }
        // first panel end reaching the target
        let upper = self.cumulative.partition_point(|&g| g < target);
        let i = upper - 1;
        let base = self.cumulative[i];
        let (mut a, mut b) = (i as f64 * self.panel, upper as f64 * self.panel);
        let (mut fa, mut fb) = (base - target, self.cumulative[upper] - target);
        let start = a;
        // Illinois-modified secant steps, safeguarded by bisection
        let mut side = 0i8;
        for _ in 0..200 {
            let mut c = b - fb * (b - a) / (fb - fa);
            if !(c > a && c < b) {
                c = 0.5 * (a + b);
            }
            let fc = base + self.partial(start, c) - target;
            if fc == 0.0 || b - a < 1e-13 {
                return Some(c);
            }
            if fc < 0.0 {
                a = c;
                fa = fc;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
            if fc.abs() < 1e-15 * target.max(1.0) {
                return Some(c);
            }
        }
        Some(0.5 * (a + b))
    }
}

/// Tolerance on `G` that keeps the cumulative hazard `scale · G` within the target.
pub(crate) fn profile_tolerance(scale: f64) -> f64 {
    QUADRATURE_TOLERANCE / scale.max(1e-300)
}

/// One event time under `λ_E exp{f₁(t) x1 + 0.5 x2}`; returns infinity when the
/// event would fall after `horizon`.
pub fn generate_event_time<R: Rng + ?Sized>(
    x1: f64,
    x2: f64,
    scenario: u8,
    lambda_e: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lambda_e > 0.0 && lambda_e.is_finite()) {
        return Err(Error::InvalidArgument(format!("event rate must be positive, got {lambda_e}")));
    }
    let mut grid = EffectGrid::new(scenario, horizon)?;
    let scale = lambda_e * (SECOND_EFFECT * x2).exp();
    let profile = grid.profile(x1, profile_tolerance(scale));
    let u: f64 = rng.random();
    let target = -(1.0 - u).ln() / scale;
    Ok(profile.invert(target).unwrap_or(f64::INFINITY))
}

/// Event times for many subjects, sharing profiles between equal first covariates.
pub(crate) fn event_times(
    grid: &mut EffectGrid,
    covariates: &DMatrix<f64>,
    exponentials: &[f64],
    lambda_e: f64,
) -> Vec<f64> {
    let mut cache: Vec<(f64, Profile)> = Vec::new();
    let mut out = vec![f64::INFINITY; exponentials.len()];
    for (i, &e) in exponentials.iter().enumerate() {
        let (x1, x2) = (covariates[(i, 0)], covariates[(i, 1)]);
        let scale = lambda_e * (SECOND_EFFECT * x2).exp();
        let tolerance = profile_tolerance(lambda_e * (SECOND_EFFECT * x2.abs().max(1.0)).exp());
        let target = e / scale;
        let cached = cache.iter().position(|(v, _)| *v == x1);
        let t = match cached {
            Some(c) => cache[c].1.invert(target),
            // binary covariates take two values, so their profiles are reused
            None if x1 == 0.0 || x1 == 1.0 => {
                let profile = grid.profile(x1, tolerance);
                let t = profile.invert(target);
                cache.push((x1, profile));
                t
            }
            None => grid.profile(x1, tolerance).invert(target),
        };
        out[i] = t.unwrap_or(f64::INFINITY);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scenario_values() {
        assert_eq!(scenario_tve(1, 7.3).unwrap(), 0.5);
        assert!((scenario_tve(2, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((scenario_tve(4, 0.0).unwrap() - 1.74).abs() < 1e-15);
        assert!(scenario_tve(6, 1.0).is_err());
        assert!(scenario_tve(0, 1.0).is_err());
        assert!(scenario_tve(2, -1.0).is_err());
        assert_eq!(true_effect(5, 1, 3.0).unwrap(), 0.5);
    }

    #[test]
    fn constant_scenario_inverts_closed_form() {
        let lambda = 0.03;
        for (x1, x2) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (-1.3, 0.4), (2.2, -0.7)] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut copy = rng.clone();
            let t = generate_event_time(x1, x2, 1, lambda, 1e4, &mut rng).unwrap();
            let u: f64 = copy.random();
            let exact = -(1.0 - u).ln() / (lambda * (0.5 * x1 + 0.5 * x2).exp());
            assert!((t - exact).abs() < 1e-6, "{t} vs {exact}");
        }
    }

    #[test]
    fn zero_covariates_give_exponential_times() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut copy = rng.clone();
        let t = generate_event_time(0.0, 0.0, 2, 0.2, 50.0, &mut rng).unwrap();
        let u: f64 = copy.random();
        assert!((t - (-(1.0 - u).ln() / 0.2)).abs() < 1e-9);
    }

    #[test]
    fn times_beyond_horizon_are_infinite() {
        // a tiny rate puts essentially every event after the horizon
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = generate_event_time(1.0, 1.0, 3, 1e-9, 10.0, &mut rng).unwrap();
        assert!(t.is_infinite());
    }

    #[test]
    fn profile_matches_fine_quadrature() {
        for scenario in 1..=5 {
            let mut grid = EffectGrid::new(scenario, 10.0).unwrap();
            let profile = grid.profile(1.7, 1e-10);
            // oracle: trapezoid rule with Richardson extrapolation on a much finer grid
            let trap = |n: usize| {
                let h = 10.0 / n as f64;
                let g = |u: f64| (first_effect(scenario, u) * 1.7).exp();
                let inner: f64 = (1..n).map(|j| g(h * j as f64)).sum();
                h * (0.5 * g(0.0) + inner + 0.5 * g(10.0))
            };
            let oracle = (4.0 * trap(400_000) - trap(200_000)) / 3.0;
            assert!((profile.total() - oracle).abs() < 1e-7 * oracle, "scenario {scenario}");
            for t in [0.0, 0.004, 1.0, 3.333, 9.99] {
                let g = profile.at(t);
                let back = profile.invert(g).unwrap();
                assert!((back - t).abs() < 1e-9, "scenario {scenario} t {t}: {back}");
            }
        }
    }

    #[test]
    fn generated_times_are_inverse_transform_draws() {
        // the cumulative hazard at the generated time equals the exponential draw
        let mut grid = EffectGrid::new(5, 10.0).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -0.8, 0.3]);
        let e = [0.05, 0.02, 0.1];
        let t = event_times(&mut grid, &x, &e, 0.02);
        for i in 0..3 {
            let profile = grid.profile(x[(i, 0)], 1e-12);
            let scale = 0.02 * (0.5 * x[(i, 1)]).exp();
            assert!((scale * profile.at(t[i]) - e[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn binary_covariate_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let x = generate_covariates(CovariateKind::Binary, n, &mut rng);
        let mean1 = x.column(0).sum() / n as f64;
        assert!((mean1 - 0.2).abs() < 3.0 * (0.16 / n as f64).sqrt());
        let (mut zeros, mut ones) = (0.0, 0.0);
        for i in 0..n {
            if x[(i, 0)] == 0.0 {
                zeros += 1.0;
                ones += x[(i, 1)];
            }
        }
        assert!((ones / zeros - 0.5).abs() < 3.0 * (0.25 / zeros).sqrt());
    }

    #[test]
    fn continuous_covariate_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1_000_000;
        let x = generate_covariates(CovariateKind::Continuous, n, &mut rng);
        let (m1, m2) = (x.column(0).mean(), x.column(1).mean());
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let (a, b) = (x[(i, 0)] - m1, x[(i, 1)] - m2);
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
        assert!((sxy / (sxx * syy).sqrt() - 0.5).abs() < 0.01);
        assert!((sxx / n as f64 - 1.0).abs() < 0.01 && (syy / n as f64 - 1.0).abs() < 0.01);
    }
}
