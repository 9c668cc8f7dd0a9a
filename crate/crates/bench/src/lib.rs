//! Workloads shared by the benchmarks and their smoke tests.

use tiltlab::experiments;
use tiltlab::{EnsembleConfig, IncrementModel, Result};

/// `(label, config)` pairs timed by the sweep benchmark.
pub fn sweep_workloads() -> Result<Vec<(String, EnsembleConfig)>> {
    [(1usize, 1024i64), (4, 1024), (4, 4096)]
        .iter()
        .map(|&(n, len)| Ok((format!("n{n}_len{len}"), experiments::scaling_config(n, 4.0, len)?)))
        .collect()
}

/// Small instances for exact partition functions.
pub fn oracle_workloads() -> Result<Vec<(String, EnsembleConfig)>> {
    [(1usize, 256i64), (2, 16), (3, 8)]
        .iter()
        .map(|&(n, len)| {
            let u: Vec<i32> = (0..n as i32).rev().map(|i| 2 * i).collect();
            let config = EnsembleConfig::builder(IncrementModel::lazy_srw(), n, (0, len))
                .tilt(1.0, 2.0, len as f64)
                .boundaries(u.clone(), u)
                .build()?;
            Ok((format!("n{n}_len{len}"), config))
        })
        .collect()
}

/// Multi-curve instance for heat-bath rounds.
pub fn heat_bath_workload() -> Result<EnsembleConfig> {
    experiments::scaling_config(4, 4.0, 1024)
}
