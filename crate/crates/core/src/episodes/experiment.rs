use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{LrPolicy, Method, Mode, RunConfig, DEFAULT_BASELINE_LR, DEFAULT_IBM2_LR};
use super::pipeline::{run_pipeline, run_pipeline_grid, select_lr, LrSelection, PipelineConfig, TaskResult};
use super::{sample_fsl_episode, sample_pfsl_task};
use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::margin_search::SearchTrace;
use crate::metrics::{episode_metrics, sample_std, EpisodeReport};
use crate::seed::{mix64, tag};

/// One evaluated task or episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub baseline_lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ibm2_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_fallback: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_histogram: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<SearchTrace>,
}

impl EpisodeRecord {
    fn new(index: usize, seed: u64, r: TaskResult) -> Self {
        EpisodeRecord {
            index,
            seed,
            accuracy: r.accuracy,
            baseline_accuracy: r.baseline_accuracy,
            baseline_lr: r.baseline_lr,
            ibm2_lr: r.ibm2_lr,
            acc_up: r.acc_up,
            eps_hat: r.eps_hat,
            range_fallback: r.range_fallback,
            gain_histogram: r.gain_histogram,
            trace: r.trace,
        }
    }
}

/// One repetition: a sampled task set (many-way, one record) or a batch of
/// episodes (episodic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_selection: Option<ArmSelections>,
    pub episodes: Vec<EpisodeRecord>,
    pub metrics: EpisodeReport,
    pub baseline_metrics: EpisodeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSelections {
    pub baseline: LrSelection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ibm2: Option<LrSelection>,
}

/// Per-field mean of [`EpisodeReport`]s across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub acc_m: f64,
    pub sigma: f64,
    pub acc_1: f64,
    pub acc_10: f64,
    pub acc_100: f64,
    pub ci95: f64,
}

impl MetricsSummary {
    fn mean_of(reports: &[&EpisodeReport]) -> Self {
        let n = reports.len() as f64;
        let avg = |f: fn(&EpisodeReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        MetricsSummary {
            acc_m: avg(|r| r.acc_m),
            sigma: avg(|r| r.sigma),
            acc_1: avg(|r| r.acc_1),
            acc_10: avg(|r| r.acc_10),
            acc_100: avg(|r| r.acc_100),
            ci95: avg(|r| r.ci95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSummary {
    /// Mean over runs of each run's mean accuracy.
    pub accuracy_mean: f64,
    /// Sample standard deviation over runs of each run's mean accuracy.
    pub accuracy_std: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub gain_mean: f64,
    pub metrics: MetricsSummary,
    pub baseline_metrics: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotReport {
    pub shot: usize,
    pub runs: Vec<RunReport>,
    pub summary: ShotSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub method: Method,
    pub shots: Vec<ShotReport>,
}

impl ExperimentReport {
    pub fn episode_count(&self) -> usize {
        self.shots
            .iter()
            .flat_map(|s| &s.runs)
            .map(|r| r.episodes.len())
            .sum()
    }
}

/// One unit of work: training data, evaluation data, seed.
type Task = (FeatureDataset, FeatureDataset, u64);

fn pipeline_config(config: &RunConfig, baseline_lr: f64, ibm2_lr: f64, seed: u64) -> PipelineConfig {
    PipelineConfig {
        method: config.method,
        sampling: config.sampling,
        trainer: config.train_config(),
        search: config.search_config(0),
        baseline_lr,
        ibm2_lr,
        seed,
    }
}

/// Probe episodes for LR selection, drawn from the pool with seeds disjoint
/// from the evaluated tasks.
fn probe_tasks(config: &RunConfig, pool: &FeatureDataset, shot: usize, run_seed: u64) -> Result<Vec<(FeatureDataset, FeatureDataset)>> {
    let probe_seed = mix64(run_seed, tag::PROBE);
    let (way, query) = match config.mode {
        Mode::Fsl => (config.way(), config.query()),
        Mode::Pfsl => {
            // every class, with the rows left after the shots as queries
            let min_rows = pool.class_counts().into_iter().min().unwrap_or(0);
            if min_rows <= shot {
                return Err(Error::InsufficientRows {
                    class: pool.class_counts().iter().position(|&c| c == min_rows).unwrap_or(0),
                    available: min_rows,
                    required: shot + 1,
                });
            }
            (pool.class_count(), (min_rows - shot).min(15))
        }
    };
    (0..config.probe_episodes)
        .map(|p| {
            let ep = sample_fsl_episode(pool, way, shot, query, mix64(probe_seed, p as u64))?;
            Ok((ep.support, ep.query))
        })
        .collect()
}

fn select_arms(
    config: &RunConfig,
    pool: &FeatureDataset,
    shot: usize,
    run_seed: u64,
) -> Result<(f64, f64, Option<ArmSelections>)> {
    match config.lr {
        LrPolicy::Default => Ok((DEFAULT_BASELINE_LR, DEFAULT_IBM2_LR, None)),
        LrPolicy::Fixed(lr) => Ok((lr, lr, None)),
        // resolved per task
        LrPolicy::Grid => Ok((DEFAULT_BASELINE_LR, DEFAULT_IBM2_LR, None)),
        LrPolicy::Probe => {
            let probes = probe_tasks(config, pool, shot, run_seed)?;
            let candidates = config.lr_candidates();
            let seed = mix64(run_seed, tag::PROBE);
            let mut cfg = pipeline_config(config, DEFAULT_BASELINE_LR, DEFAULT_IBM2_LR, seed);
            cfg.method = Method::Baseline;
            let baseline = select_lr(&probes, &candidates, &cfg)?;
            let ibm2 = match config.method {
                Method::Baseline => None,
                Method::Ibm2 => {
                    cfg.method = Method::Ibm2;
                    Some(select_lr(&probes, &candidates, &cfg)?)
                }
            };
            let ibm2_lr = ibm2.as_ref().map_or(DEFAULT_IBM2_LR, |s| s.best);
            Ok((baseline.best, ibm2_lr, Some(ArmSelections { baseline, ibm2 })))
        }
    }
}

fn run_tasks(config: &RunConfig, tasks: Vec<Task>, baseline_lr: f64, ibm2_lr: f64) -> Result<Vec<EpisodeRecord>> {
    let candidates = config.lr_candidates();
    let results: Vec<Result<EpisodeRecord>> = tasks
        .into_par_iter()
        .enumerate()
        .map(|(index, (train_set, test, seed))| {
            let cfg = pipeline_config(config, baseline_lr, ibm2_lr, seed);
            let result = match config.lr {
                LrPolicy::Grid => run_pipeline_grid(&train_set, &test, &cfg, &candidates),
                _ => run_pipeline(&train_set, &test, &cfg),
            };
            result
                .map(|r| EpisodeRecord::new(index, seed, r))
                .map_err(|e| Error::Episode {
                    index,
                    source: Box::new(e),
                })
        })
        .collect();
    // first failure by index, independent of completion order
    results.into_iter().collect()
}

fn run_report(run: usize, seed: u64, lr_selection: Option<ArmSelections>, episodes: Vec<EpisodeRecord>) -> Result<RunReport> {
    let accs: Vec<f64> = episodes.iter().map(|e| e.accuracy).collect();
    let base: Vec<f64> = episodes.iter().map(|e| e.baseline_accuracy).collect();
    Ok(RunReport {
        run,
        seed,
        lr_selection,
        metrics: episode_metrics(&accs)?,
        baseline_metrics: episode_metrics(&base)?,
        episodes,
    })
}

fn summarize(runs: &[RunReport]) -> ShotSummary {
    let means: Vec<f64> = runs.iter().map(|r| r.metrics.acc_m).collect();
    let base: Vec<f64> = runs.iter().map(|r| r.baseline_metrics.acc_m).collect();
    let n = runs.len() as f64;
    let accuracy_mean = means.iter().sum::<f64>() / n;
    let baseline_mean = base.iter().sum::<f64>() / n;
    ShotSummary {
        accuracy_mean,
        accuracy_std: sample_std(&means),
        baseline_mean,
        baseline_std: sample_std(&base),
        gain_mean: accuracy_mean - baseline_mean,
        metrics: MetricsSummary::mean_of(&runs.iter().map(|r| &r.metrics).collect::<Vec<_>>()),
        baseline_metrics: MetricsSummary::mean_of(
            &runs.iter().map(|r| &r.baseline_metrics).collect::<Vec<_>>(),
        ),
    }
}

fn run_shot(config: &RunConfig, pool: &FeatureDataset, test: Option<&FeatureDataset>, shot: usize) -> Result<ShotReport> {
    let mut runs = Vec::with_capacity(config.runs());
    for run in 0..config.runs() {
        let run_seed = mix64(mix64(mix64(config.seed, tag::RUN), shot as u64), run as u64);
        let (baseline_lr, ibm2_lr, selection) = select_arms(config, pool, shot, run_seed)?;
        let tasks: Vec<Task> = match config.mode {
            Mode::Pfsl => {
                let test = test.ok_or_else(|| Error::config("pfsl mode needs a test split"))?;
                let seed = mix64(run_seed, tag::TASK);
                let task = sample_pfsl_task(pool, test, shot, seed)?;
                vec![(task.train, task.test, seed)]
            }
            Mode::Fsl => (0..config.episodes())
                .map(|e| {
                    let seed = mix64(run_seed, e as u64);
                    let ep = sample_fsl_episode(pool, config.way(), shot, config.query(), seed)
                        .map_err(|err| Error::Episode {
                            index: e,
                            source: Box::new(err),
                        })?;
                    Ok((ep.support, ep.query, seed))
                })
                .collect::<Result<_>>()?,
        };
        let episodes = run_tasks(config, tasks, baseline_lr, ibm2_lr)?;
        runs.push(run_report(run, run_seed, selection, episodes)?);
    }
    let summary = summarize(&runs);
    Ok(ShotReport {
        shot,
        runs,
        summary,
    })
}

/// Runs every shot setting of `config` on `jobs` worker threads.
///
/// Results are gathered by index, so the report does not depend on `jobs`.
pub fn run_experiment(config: &RunConfig, jobs: usize) -> Result<ExperimentReport> {
    let config = config.clone().resolve()?;
    let (pool, test) = config.load_data()?;
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    threads.install(|| {
        let shots = config
            .shots
            .iter()
            .map(|&shot| run_shot(&config, &pool, test.as_ref(), shot))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentReport {
            mode: config.mode,
            method: config.method,
            shots,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::config::{SearchSettings, TrainerSettings};

    fn tiny_fsl(episodes: usize) -> RunConfig {
        RunConfig {
            mode: Mode::Fsl,
            data: crate::episodes::DataSource::Synthetic {
                preset: "iso-easy".into(),
            },
            episodes: Some(episodes),
            runs: Some(1),
            way: Some(3),
            query: Some(5),
            replicas: 5,
            trainer: TrainerSettings {
                epochs: Some(10),
                ..TrainerSettings::default()
            },
            search: SearchSettings {
                epochs: Some(3),
                ..SearchSettings::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn one_episode_metrics() {
        let report = run_experiment(&tiny_fsl(1), 1).unwrap();
        let run = &report.shots[0].runs[0];
        assert_eq!(run.episodes.len(), 1);
        let acc = run.episodes[0].accuracy;
        assert_eq!(run.metrics.acc_m, acc);
        assert_eq!(run.metrics.acc_1, acc);
    }

    #[test]
    fn jobs_do_not_change_report() {
        let cfg = tiny_fsl(6);
        let a = run_experiment(&cfg, 1).unwrap();
        let b = run_experiment(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episode_count(), 6);
        for e in &a.shots[0].runs[0].episodes {
            let eps = e.eps_hat.unwrap();
            assert!((0.0..=10.0).contains(&eps));
            assert!(e.trace.is_some());
        }
    }

    #[test]
    fn pfsl_default_lrs_recorded() {
        let cfg = RunConfig {
            data: crate::episodes::DataSource::Synthetic {
                preset: "iso-easy".into(),
            },
            replicas: 5,
            runs: Some(2),
            trainer: TrainerSettings {
                epochs: Some(5),
                ..TrainerSettings::default()
            },
            search: SearchSettings {
                epochs: Some(2),
                ..SearchSettings::default()
            },
            ..RunConfig::default()
        };
        let report = run_experiment(&cfg, 1).unwrap();
        let shot = &report.shots[0];
        assert_eq!(shot.runs.len(), 2);
        for run in &shot.runs {
            assert_eq!(run.episodes.len(), 1);
            assert_eq!(run.episodes[0].baseline_lr, 0.005);
            assert_eq!(run.episodes[0].ibm2_lr, Some(1.0));
        }
    }
}
