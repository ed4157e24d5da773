//! Task construction and experiment orchestration.
//!
//! Two protocols are supported:
//!
//! - many-way (pFSL): every class of the pool, `k` training rows each,
//!   evaluated on a full test split;
//! - episodic (FSL): `N` classes drawn per episode, `k` support and `q` query
//!   rows per class, labels remapped to `[0, N)`.

mod config;
mod experiment;
mod pipeline;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::seed;

pub use config::{DataSource, LrPolicy, Method, Mode, RunConfig, SearchSettings, TrainerSettings};
pub use experiment::{
    run_experiment, EpisodeRecord, ExperimentReport, MetricsSummary, RunReport, ShotReport,
    ShotSummary,
};
pub use pipeline::{run_pipeline, run_pipeline_grid, select_lr, LrSelection, PipelineConfig, TaskResult};

/// A many-way task: `k` rows of every class plus the whole test split.
#[derive(Debug, Clone)]
pub struct PfslTask {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub k: usize,
    pub seed: u64,
    /// Pool rows selected for `train`, ascending.
    pub train_indices: Vec<usize>,
}

/// Draws `k` rows per class without replacement.
pub fn sample_pfsl_task(
    pool: &FeatureDataset,
    test: &FeatureDataset,
    k: usize,
    seed: u64,
) -> Result<PfslTask> {
    if k == 0 {
        return Err(Error::config("shots must be >= 1"));
    }
    if test.dim() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: pool.dim(),
            got: test.dim(),
        });
    }
    let mut rng = seed::rng(seed);
    let mut indices = Vec::with_capacity(k * pool.class_count());
    for (class, mut rows) in pool.indices_by_class().into_iter().enumerate() {
        if rows.len() < k {
            return Err(Error::InsufficientRows {
                class,
                available: rows.len(),
                required: k,
            });
        }
        rows.shuffle(&mut rng);
        indices.extend_from_slice(&rows[..k]);
    }
    indices.sort_unstable();
    Ok(PfslTask {
        train: pool.subset(&indices)?,
        test: test.clone(),
        k,
        seed,
        train_indices: indices,
    })
}

/// An N-way K-shot episode with `q` queries per class.
#[derive(Debug, Clone)]
pub struct FslEpisode {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    /// Original class ids, ascending; position is the remapped label.
    pub classes: Vec<usize>,
    pub support: FeatureDataset,
    pub query: FeatureDataset,
    pub support_indices: Vec<usize>,
    pub query_indices: Vec<usize>,
    pub seed: u64,
}

/// Draws `way` classes, then `shot + query` rows of each, without
/// replacement. Every class of the pool must hold at least `shot + query`
/// rows.
pub fn sample_fsl_episode(
    pool: &FeatureDataset,
    way: usize,
    shot: usize,
    query: usize,
    seed: u64,
) -> Result<FslEpisode> {
    if way == 0 || shot == 0 || query == 0 {
        return Err(Error::config("way, shot and query must be >= 1"));
    }
    if pool.class_count() < way {
        return Err(Error::InsufficientClasses {
            available: pool.class_count(),
            required: way,
        });
    }
    let by_class = pool.indices_by_class();
    if let Some((class, rows)) = by_class.iter().enumerate().find(|(_, r)| r.len() < shot + query) {
        return Err(Error::InsufficientRows {
            class,
            available: rows.len(),
            required: shot + query,
        });
    }
    let mut rng = seed::rng(seed);
    let mut classes: Vec<usize> = (0..pool.class_count()).collect();
    classes.shuffle(&mut rng);
    classes.truncate(way);
    classes.sort_unstable();

    let mut support_indices = Vec::with_capacity(way * shot);
    let mut query_indices = Vec::with_capacity(way * query);
    for &class in &classes {
        let mut rows = by_class[class].clone();
        rows.shuffle(&mut rng);
        support_indices.extend_from_slice(&rows[..shot]);
        query_indices.extend_from_slice(&rows[shot..shot + query]);
    }
    let mut remap = vec![None; pool.class_count()];
    for (new, &old) in classes.iter().enumerate() {
        remap[old] = Some(new);
    }
    let names = pool
        .class_names()
        .map(|names| classes.iter().map(|&c| names[c].clone()).collect::<Vec<_>>());
    let support = pool.select(&support_indices, |l| remap[l], way, names.clone())?;
    let query_set = pool.select(&query_indices, |l| remap[l], way, names)?;
    Ok(FslEpisode {
        way,
        shot,
        query_per_class: query,
        classes,
        support,
        query: query_set,
        support_indices,
        query_indices,
        seed,
    })
}
