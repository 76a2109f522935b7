//! Risk-set accumulation shared by the partial likelihood and the Breslow estimator.
//!
//! Subjects with identical covariate rows are collapsed into patterns. Sweeping the
//! unique failure times from last to first, the risk set only ever grows, and the
//! patterns with at least one subject at risk always form a prefix once patterns are
//! ordered by their latest follow-up time. Each failure time therefore costs
//! O(active patterns), which for binary covariates is a handful of rows.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
#[allow(unused_imports)] // shadowed by inherent methods whenever std is linked
use num_traits::Float;

/// Weighted risk-set moments at one failure time, with weights `exp(lp - offset)`.
pub(crate) struct Moments<'a> {
    pub log_s0: f64,
    /// Risk-set weighted covariate means (length p).
    pub mean: &'a [f64],
    /// Risk-set weighted covariance (p × p, row-major).
    pub cov: &'a [f64],
}

pub(crate) struct RiskSetEngine {
    p: usize,
    failure_times: Vec<f64>,
    deaths: Vec<f64>,
    /// Σ over subjects failing at t_j of their covariate rows (J × p).
    event_sums: Vec<f64>,
    /// Unique covariate rows (P × p), ordered by latest follow-up time descending.
    patterns: Vec<f64>,
    /// Subjects by time descending: (time, pattern index).
    sweep: Vec<(f64, usize)>,
}

fn key(row: impl Iterator<Item = f64>) -> Vec<u64> {
    row.map(|v| (v + 0.0).to_bits()).collect()
}

impl RiskSetEngine {
    pub fn new(times: &[f64], events: &[bool], x: &DMatrix<f64>) -> Self {
        let n = times.len();
        let p = x.ncols();
        let (failure_times, deaths) = unique_failure_times(times, events);
        let j_count = failure_times.len();

        let mut lookup: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let mut pattern_of = vec![0usize; n];
        let mut max_time: Vec<f64> = Vec::new();
        let mut first_row: Vec<usize> = Vec::new();
        for i in 0..n {
            let k = key(x.row(i).iter().cloned());
            let next = lookup.len();
            let q = *lookup.entry(k).or_insert(next);
            if q == max_time.len() {
                max_time.push(times[i]);
                first_row.push(i);
            } else if times[i] > max_time[q] {
                max_time[q] = times[i];
            }
            pattern_of[i] = q;
        }
        // order patterns by latest time desc, ties by key order (independent of subject order)
        let mut keyed: Vec<(f64, Vec<u64>, usize)> = lookup.into_iter().map(|(k, q)| (max_time[q], k, q)).collect();
        keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let mut rank = vec![0usize; keyed.len()];
        let mut patterns = Vec::with_capacity(keyed.len() * p);
        for (r, (_, _, q)) in keyed.iter().enumerate() {
            rank[*q] = r;
            patterns.extend(x.row(first_row[*q]).iter().cloned());
        }

        let mut sweep: Vec<(f64, usize)> = (0..n).map(|i| (times[i], rank[pattern_of[i]])).collect();
        sweep.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));

        let mut event_sums = vec![0.0; j_count * p];
        let mut order: Vec<usize> = (0..n).filter(|&i| events[i]).collect();
        order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap().then_with(|| rank[pattern_of[a]].cmp(&rank[pattern_of[b]])));
        for i in order {
            let j = failure_times.partition_point(|&t| t < times[i]);
            for k in 0..p {
                event_sums[j * p + k] += x[(i, k)];
            }
        }

        RiskSetEngine {
            p,
            failure_times,
            deaths,
            event_sums,
            patterns,
            sweep,
        }
    }

    pub fn failure_times(&self) -> &[f64] {
        &self.failure_times
    }

    pub fn deaths(&self) -> &[f64] {
        &self.deaths
    }

    pub fn event_sums(&self, j: usize) -> &[f64] {
        &self.event_sums[j * self.p..(j + 1) * self.p]
    }

    /// Visit every failure time (in descending order) with its risk-set moments.
    ///
    /// `effects` is J × p row-major: the log hazard ratio of each covariate at each
    /// failure time. When `second_order` is false, `Moments::cov` is empty.
    pub fn sweep<F: FnMut(usize, &Moments<'_>)>(&self, effects: &[f64], second_order: bool, mut visit: F) {
        let p = self.p;
        let n_patterns = self.patterns.len() / p.max(1);
        let mut counts = vec![0.0f64; n_patterns.max(1)];
        let mut lp = vec![0.0f64; n_patterns.max(1)];
        let mut mean = vec![0.0f64; p];
        let mut cov = vec![0.0f64; if second_order { p * p } else { 0 }];
        let mut ptr = 0;
        let mut active = 0usize;

        for j in (0..self.failure_times.len()).rev() {
            let t = self.failure_times[j];
            while ptr < self.sweep.len() && self.sweep[ptr].0 >= t {
                let q = self.sweep[ptr].1;
                counts[q] += 1.0;
                active = active.max(q + 1);
                ptr += 1;
            }
            let f = &effects[j * p..(j + 1) * p];
            let mut offset = f64::NEG_INFINITY;
            for q in 0..active {
                let row = &self.patterns[q * p..(q + 1) * p];
                let v: f64 = row.iter().zip(f).map(|(a, b)| a * b).sum();
                lp[q] = v;
                if v > offset {
                    offset = v;
                }
            }
            let mut s0 = 0.0;
            mean.iter_mut().for_each(|m| *m = 0.0);
            cov.iter_mut().for_each(|m| *m = 0.0);
            for q in 0..active {
                let w = counts[q] * (lp[q] - offset).exp();
                s0 += w;
                let row = &self.patterns[q * p..(q + 1) * p];
                for k in 0..p {
                    mean[k] += w * row[k];
                }
                if second_order {
                    for k in 0..p {
                        let wk = w * row[k];
                        for l in 0..=k {
                            cov[k * p + l] += wk * row[l];
                        }
                    }
                }
            }
            if s0 > 0.0 {
                for m in mean.iter_mut() {
                    *m /= s0;
                }
                if second_order {
                    for k in 0..p {
                        for l in 0..=k {
                            let v = cov[k * p + l] / s0 - mean[k] * mean[l];
                            cov[k * p + l] = v;
                            cov[l * p + k] = v;
                        }
                    }
                }
            }
            let log_s0 = if s0 > 0.0 { offset + s0.ln() } else { f64::NEG_INFINITY };
            visit(
                j,
                &Moments {
                    log_s0,
                    mean: &mean,
                    cov: &cov,
                },
            );
        }
    }
}

/// Sorted unique failure times and the number of events at each.
pub(crate) fn unique_failure_times(times: &[f64], events: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut ev: Vec<f64> = times.iter().zip(events).filter(|(_, &d)| d).map(|(&t, _)| t).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out_t: Vec<f64> = Vec::new();
    let mut out_d: Vec<f64> = Vec::new();
    for t in ev {
        if out_t.last() == Some(&t) {
            *out_d.last_mut().unwrap() += 1.0;
        } else {
            out_t.push(t);
            out_d.push(1.0);
        }
    }
    (out_t, out_d)
}
