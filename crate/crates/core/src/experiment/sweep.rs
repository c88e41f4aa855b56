use rayon::prelude::*;

use super::config::{ExperimentConfig, KModeChoice, SelfishEntry};
use super::runner::{run_experiment, ResultBundle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub alpha: f64,
    pub selfish_count: usize,
    pub seed: u64,
    /// A failed cell keeps its error message; the sweep carries on.
    pub result: std::result::Result<ResultBundle, String>,
}

/// Config of one sweep cell: clients `0..selfish_count` are selfish at
/// `alpha`, and `seed` replaces both the partition and the global seed.
///
/// The selfish clients reuse the `k_mode` of the first roster entry of
/// `base`, or `known` for an empty roster.
pub fn cell_config(base: &ExperimentConfig, alpha: f64, selfish_count: usize, seed: u64) -> Result<ExperimentConfig> {
    let k_mode = base.selfish_roster.first().map_or(KModeChoice::Known, |e| e.k_mode);
    let cfg = ExperimentConfig {
        partition_seed: seed,
        global_seed: seed,
        selfish_roster: (0..selfish_count)
            .map(|client| SelfishEntry { client, alpha, k_mode })
            .collect(),
        ..base.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Every combination of `alphas x selfish_counts x seeds`, in that nesting
/// order.
pub fn run_sweep(
    base: &ExperimentConfig,
    alphas: &[f64],
    selfish_counts: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepCell>> {
    if alphas.is_empty() || selfish_counts.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one alpha, selfish count and seed".into(),
        ));
    }
    let mut grid = Vec::new();
    for &alpha in alphas {
        for &n in selfish_counts {
            for &seed in seeds {
                grid.push((alpha, n, seed));
            }
        }
    }
    Ok(grid
        .into_par_iter()
        .map(|(alpha, selfish_count, seed)| SweepCell {
            alpha,
            selfish_count,
            seed,
            result: cell_config(base, alpha, selfish_count, seed)
                .and_then(|cfg| run_experiment(&cfg))
                .map_err(|e| e.to_string()),
        })
        .collect())
}
