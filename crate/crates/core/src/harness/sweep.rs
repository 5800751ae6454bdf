use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::record::{RunFailure, RunRecord};
use super::runner::run_experiment;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config_index: usize,
    pub seed: u64,
    pub outcome: std::result::Result<RunRecord, RunFailure>,
}

/// Runs every (config, seed) pair on up to `jobs` threads. `seeds`
/// overrides each config's own seed list when given. Results are ordered
/// by (config index, seed) whatever the parallelism, and a failing run is
/// recorded without stopping the others.
pub fn sweep(configs: &[ExperimentConfig], seeds: Option<&[u64]>, jobs: usize) -> Result<Vec<SweepResult>> {
    let mut pairs: Vec<(usize, u64)> = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        let mut s: Vec<u64> = seeds.unwrap_or(&c.seeds).to_vec();
        s.sort_unstable();
        s.dedup();
        pairs.extend(s.into_iter().map(|seed| (i, seed)));
    }
    let run = |&(i, seed): &(usize, u64)| {
        let c = &configs[i];
        SweepResult {
            config_index: i,
            seed,
            outcome: run_experiment(c, seed).map_err(|e| RunFailure {
                name: c.name.clone(),
                config_hash: c.hash(),
                seed,
                error: e.to_string(),
            }),
        }
    };
    if jobs <= 1 {
        return Ok(pairs.iter().map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| pairs.par_iter().map(run).collect()))
}
