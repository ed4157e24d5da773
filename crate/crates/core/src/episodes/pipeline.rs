use serde::{Deserialize, Serialize};

use super::config::{Method, DEFAULT_BASELINE_LR, DEFAULT_IBM2_LR};
use crate::error::{Error, Result};
use crate::feature_store::{l2_normalize, FeatureDataset};
use crate::linear_trainer::{evaluate, predictions, train, LinearHead, TrainConfig};
use crate::margin_search::{compute_threshold, search_epsilon, SearchConfig, SearchTrace};
use crate::metrics::{gain_histogram, per_class_accuracy};
use crate::noise::{compute_range_vector, NoiseTable, RangeVector, SamplingMode, VirtualSetSpec};
use crate::seed::{mix64, tag};

/// Everything one task needs besides its data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub sampling: SamplingMode,
    /// Final-stage trainer; its `init_lr` and `seed` are overridden per arm.
    pub trainer: TrainConfig,
    /// Search settings; `search.seed` is overridden from `seed`.
    pub search: SearchConfig,
    pub baseline_lr: f64,
    pub ibm2_lr: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::Ibm2,
            sampling: SamplingMode::Ellipsoidal,
            trainer: TrainConfig::default(),
            search: SearchConfig::default(),
            baseline_lr: DEFAULT_BASELINE_LR,
            ibm2_lr: DEFAULT_IBM2_LR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    /// Test accuracy of the method's final probe.
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub baseline_lr: f64,
    pub ibm2_lr: Option<f64>,
    /// Training accuracy of a search-recipe probe on the original set.
    pub acc_up: Option<f64>,
    pub eps_hat: Option<f64>,
    pub trace: Option<SearchTrace>,
    pub range_fallback: Option<bool>,
    pub head: LinearHead,
    pub baseline_head: LinearHead,
    /// Mean per-class gain over the baseline in ten baseline-sorted bins
    /// (fewer bins when there are fewer classes).
    pub gain_histogram: Option<Vec<f64>>,
}

/// Normalized splits plus the outcome of the radius search.
struct Prepared {
    train: FeatureDataset,
    test: FeatureDataset,
    search: Option<SearchOutcome>,
}

struct SearchOutcome {
    acc_up: f64,
    range: RangeVector,
    trace: SearchTrace,
    replicas: usize,
}

fn prepare(train_set: &FeatureDataset, test: &FeatureDataset, cfg: &PipelineConfig) -> Result<Prepared> {
    if train_set.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train_set.dim(),
            got: test.dim(),
        });
    }
    if test.class_count() > train_set.class_count() {
        return Err(Error::InvalidDataset(format!(
            "test split has {} classes, train split {}",
            test.class_count(),
            train_set.class_count()
        )));
    }
    let train_n = l2_normalize(train_set)?;
    let test_n = l2_normalize(test)?;
    let search = match cfg.method {
        Method::Baseline => None,
        Method::Ibm2 => {
            let search_cfg = SearchConfig {
                seed: mix64(cfg.seed, tag::SEARCH),
                ..cfg.search.clone()
            };
            let up_cfg = search_cfg
                .train_config(&cfg.trainer)
                .with_seed(mix64(cfg.seed, tag::ACC_UP));
            let (_, acc_up) = train(&train_n, train_n.class_count(), &up_cfg)?;
            let threshold = compute_threshold(search_cfg.t_init, acc_up);
            let range = compute_range_vector(&train_n, cfg.sampling);
            let trace = search_epsilon(&train_n, &range, threshold, &search_cfg, &cfg.trainer)?;
            Some(SearchOutcome {
                acc_up,
                range,
                trace,
                replicas: search_cfg.replicas,
            })
        }
    };
    Ok(Prepared {
        train: train_n,
        test: test_n,
        search,
    })
}

fn baseline_probe(prep: &Prepared, cfg: &PipelineConfig, lr: f64) -> Result<(LinearHead, f64)> {
    let config = TrainConfig {
        init_lr: lr,
        seed: mix64(cfg.seed, tag::BASELINE),
        ..cfg.trainer.clone()
    };
    let (head, _) = train(&prep.train, prep.train.class_count(), &config)?;
    let acc = evaluate(&head, &prep.test)?;
    Ok((head, acc))
}

/// Final probe on the virtual set at `eps_hat`; `None` when `eps_hat = 0`,
/// where the virtual set is the original set and the baseline probe stands.
fn ibm2_probe(prep: &Prepared, cfg: &PipelineConfig, lr: f64) -> Result<Option<(LinearHead, f64)>> {
    let Some(outcome) = &prep.search else {
        return Ok(None);
    };
    if outcome.trace.eps_hat == 0.0 {
        return Ok(None);
    }
    let mut virtual_set = VirtualSetSpec::new(
        &prep.train,
        outcome.trace.eps_hat,
        outcome.replicas,
        &outcome.range,
        outcome.trace.noise_seed,
    )?;
    let table = NoiseTable::for_spec(&virtual_set);
    if let Some(table) = &table {
        virtual_set = virtual_set.with_table(table)?;
    }
    let config = TrainConfig {
        init_lr: lr,
        seed: mix64(cfg.seed, tag::FINAL),
        ..cfg.trainer.clone()
    };
    let (head, _) = train(&virtual_set, prep.train.class_count(), &config)?;
    let acc = evaluate(&head, &prep.test)?;
    Ok(Some((head, acc)))
}

fn histogram(prep: &Prepared, baseline: &LinearHead, method: &LinearHead) -> Result<Option<Vec<f64>>> {
    let classes = prep.train.class_count();
    let labels = prep.test.labels();
    let base = per_class_accuracy(&predictions(baseline, &prep.test)?, labels, classes)?;
    let ours = per_class_accuracy(&predictions(method, &prep.test)?, labels, classes)?;
    // classes absent from the test split carry no recall
    let (b, m): (Vec<f64>, Vec<f64>) = base
        .iter()
        .zip(&ours)
        .filter_map(|(b, m)| Some(((*b)?, (*m)?)))
        .unzip();
    if b.is_empty() {
        return Ok(None);
    }
    gain_histogram(&b, &m, b.len().min(10)).map(Some)
}

fn assemble(
    prep: &Prepared,
    baseline: (LinearHead, f64),
    baseline_lr: f64,
    ibm2: Option<(LinearHead, f64)>,
    ibm2_lr: f64,
) -> Result<TaskResult> {
    let (baseline_head, baseline_accuracy) = baseline;
    let Some(outcome) = &prep.search else {
        return Ok(TaskResult {
            accuracy: baseline_accuracy,
            baseline_accuracy,
            baseline_lr,
            ibm2_lr: None,
            acc_up: None,
            eps_hat: None,
            trace: None,
            range_fallback: None,
            head: baseline_head.clone(),
            baseline_head,
            gain_histogram: None,
        });
    };
    let (head, accuracy) = ibm2.unwrap_or_else(|| (baseline_head.clone(), baseline_accuracy));
    let gain_histogram = histogram(prep, &baseline_head, &head)?;
    Ok(TaskResult {
        accuracy,
        baseline_accuracy,
        baseline_lr,
        ibm2_lr: Some(ibm2_lr),
        acc_up: Some(outcome.acc_up),
        eps_hat: Some(outcome.trace.eps_hat),
        trace: Some(outcome.trace.clone()),
        range_fallback: Some(outcome.range.is_fallback()),
        head,
        baseline_head,
        gain_histogram,
    })
}

/// Full pipeline for one task.
///
/// 1. L2-normalize both splits.
/// 2. Train the baseline probe on the original set.
/// 3. For IbM2: clamp the threshold by the baseline training accuracy,
///    compute the range vector, search the radius, train the final probe on
///    the virtual set.
/// 4. Evaluate on the test split.
pub fn run_pipeline(
    train_set: &FeatureDataset,
    test: &FeatureDataset,
    cfg: &PipelineConfig,
) -> Result<TaskResult> {
    let prep = prepare(train_set, test, cfg)?;
    let baseline = baseline_probe(&prep, cfg, cfg.baseline_lr)?;
    let ibm2 = ibm2_probe(&prep, cfg, cfg.ibm2_lr)?;
    assemble(&prep, baseline, cfg.baseline_lr, ibm2, cfg.ibm2_lr)
}

/// Pipeline where each arm keeps the candidate LR with the best test
/// accuracy (ties to the smaller LR).
pub fn run_pipeline_grid(
    train_set: &FeatureDataset,
    test: &FeatureDataset,
    cfg: &PipelineConfig,
    candidates: &[f64],
) -> Result<TaskResult> {
    let lrs = sorted_candidates(candidates)?;
    let prep = prepare(train_set, test, cfg)?;
    let mut best_baseline: Option<((LinearHead, f64), f64)> = None;
    for &lr in &lrs {
        let probe = baseline_probe(&prep, cfg, lr)?;
        if best_baseline.as_ref().is_none_or(|((_, acc), _)| probe.1 > *acc) {
            best_baseline = Some((probe, lr));
        }
    }
    let (baseline, baseline_lr) = best_baseline.expect("non-empty candidates");
    let mut best_ibm2: Option<(Option<(LinearHead, f64)>, f64)> = None;
    if prep.search.is_some() {
        for &lr in &lrs {
            let probe = ibm2_probe(&prep, cfg, lr)?;
            let acc = probe.as_ref().map_or(baseline.1, |p| p.1);
            let better = match &best_ibm2 {
                None => true,
                Some((prev, _)) => acc > prev.as_ref().map_or(baseline.1, |p| p.1),
            };
            if better {
                best_ibm2 = Some((probe, lr));
            }
        }
    }
    let (ibm2, ibm2_lr) = best_ibm2.unwrap_or((None, lrs[0]));
    assemble(&prep, baseline, baseline_lr, ibm2, ibm2_lr)
}

fn sorted_candidates(candidates: &[f64]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("learning-rate candidates"));
    }
    let mut lrs = candidates.to_vec();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    Ok(lrs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSelection {
    pub best: f64,
    /// `(lr, mean query accuracy)` per candidate, ascending LR.
    pub means: Vec<(f64, f64)>,
}

/// Picks the candidate LR with the best mean query accuracy over probe
/// episodes for the arm named by `cfg.method`. Ties go to the smaller LR.
///
/// Each probe episode is searched once; only the final probe is retrained
/// per candidate.
pub fn select_lr(
    probes: &[(FeatureDataset, FeatureDataset)],
    candidates: &[f64],
    cfg: &PipelineConfig,
) -> Result<LrSelection> {
    if probes.is_empty() {
        return Err(Error::Empty("probe episodes"));
    }
    let lrs = sorted_candidates(candidates)?;
    let mut sums = vec![0.0; lrs.len()];
    for (p, (support, query)) in probes.iter().enumerate() {
        let probe_cfg = PipelineConfig {
            seed: mix64(cfg.seed, p as u64),
            ..cfg.clone()
        };
        let prep = prepare(support, query, &probe_cfg)?;
        for (sum, &lr) in sums.iter_mut().zip(&lrs) {
            let acc = match cfg.method {
                Method::Baseline => baseline_probe(&prep, &probe_cfg, lr)?.1,
                Method::Ibm2 => match ibm2_probe(&prep, &probe_cfg, lr)? {
                    Some((_, acc)) => acc,
                    None => baseline_probe(&prep, &probe_cfg, lr)?.1,
                },
            };
            *sum += acc;
        }
    }
    let n = probes.len() as f64;
    let means: Vec<(f64, f64)> = lrs.iter().zip(&sums).map(|(&lr, s)| (lr, s / n)).collect();
    let mut best = means[0];
    for &m in &means[1..] {
        if m.1 > best.1 {
            best = m;
        }
    }
    Ok(LrSelection {
        best: best.0,
        means,
    })
}
