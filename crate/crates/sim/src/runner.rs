//! Seed-parallel experiment execution.
//!
//! Each (arm, seed) job is one deterministic single-threaded simulation;
//! the pool only decides which jobs run concurrently. Results come back in
//! job order, so the artifacts are independent of the worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use smi_core::engine::{SimError, Simulation};
use smi_core::metrics::RunMetrics;

use crate::presets::Experiment;

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub arm: String,
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Worker count: `SMI_SIM_THREADS` caps the machine's parallelism.
pub fn worker_count(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("SMI_SIM_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(hw);
    cap.min(jobs.max(1))
}

/// Runs every arm for every seed and returns results ordered by
/// (arm index, seed index).
pub fn run_experiment(exp: &Experiment, seeds: &[u64]) -> Result<Vec<TrialResult>, SimError> {
    let jobs: Vec<(usize, u64)> = exp
        .arms
        .iter()
        .enumerate()
        .flat_map(|(arm_ix, _)| seeds.iter().map(move |&s| (arm_ix, s)))
        .collect();
    let workers = worker_count(jobs.len());
    let results: Vec<Mutex<Option<Result<RunMetrics, SimError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let ix = next.fetch_add(1, Ordering::Relaxed);
                if ix >= jobs.len() {
                    break;
                }
                let (arm_ix, seed) = jobs[ix];
                let outcome =
                    Simulation::new(exp.arms[arm_ix].cfg.clone(), seed).and_then(|sim| sim.run());
                *results[ix].lock().expect("result slot") = Some(outcome);
            });
        }
    });

    let mut out = Vec::with_capacity(jobs.len());
    for (ix, slot) in results.into_iter().enumerate() {
        let (arm_ix, seed) = jobs[ix];
        let metrics = slot.into_inner().expect("lock").expect("every job ran")?;
        out.push(TrialResult { arm: exp.arms[arm_ix].label.clone(), seed, metrics });
    }
    Ok(out)
}
