//! Parallel replication runs.

use rayon::prelude::*;
use tvemi_core::sim::{aggregate, run_rep, PerformanceReport, RepOutcome, ScenarioConfig};

use crate::error::{CliError, CliResult};

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "TVEMI_THREADS";

/// Worker count: `TVEMI_THREADS` when set to a positive integer, else all cores.
pub fn worker_count() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Run all replications on `threads` workers and fold them in replication order.
pub fn run_study(config: &ScenarioConfig, threads: usize) -> CliResult<(Vec<RepOutcome>, PerformanceReport)> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} workers: {e}")))?;
    let total = config.n_reps;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let outcomes: Vec<RepOutcome> = pool.install(|| {
        (0..total)
            .into_par_iter()
            .map(|rep| {
                let out = run_rep(config, rep);
                let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                log::info!("replication {rep} finished ({n}/{total})");
                out
            })
            .collect::<tvemi_core::Result<Vec<_>>>()
    })?;
    let report = aggregate(config, &outcomes)?;
    Ok((outcomes, report))
}
