//! Binary search for the largest noise radius whose virtual set the probe
//! still fits.
//!
//! ```text
//! left = 0; right = right_init; eps = right / 2
//! loop:
//!     acc = train_and_eval(W, x, y, eps, R)
//!     if acc > T: left = eps else: right = eps
//!     eps = (left + right) / 2
//!     if right - left < tol: break
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::linear_trainer::{evaluate, init_head, train_head, LinearHead, TrainConfig};
use crate::noise::{NoiseTable, RangeVector, VirtualSetSpec};
use crate::seed::{mix64, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Initial accuracy threshold, clamped by the baseline training accuracy.
    pub t_init: f64,
    /// Upper end of the initial interval. A value `<= tol` collapses the
    /// search: no step runs and `eps_hat = 0`.
    pub right_init: f64,
    /// Stop once `right - left < tol`.
    pub tol: f64,
    /// Virtual samples per instance.
    pub replicas: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Train one head across all steps instead of re-initializing per step.
    pub warm_start: bool,
    /// Draw fresh noise directions at every step.
    pub resample_per_step: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            t_init: 0.9,
            right_init: 10.0,
            tol: 0.05,
            replicas: 200,
            epochs: 20,
            lr: 1.0,
            warm_start: true,
            resample_per_step: false,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_init > 0.0 && self.t_init <= 1.0) {
            return Err(Error::config("t_init must lie in (0, 1]"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::config("tol must be finite and > 0"));
        }
        if !(self.right_init.is_finite() && self.right_init >= 0.0) {
            return Err(Error::config("right_init must be finite and >= 0"));
        }
        if self.replicas == 0 || self.epochs == 0 {
            return Err(Error::config("search replicas and epochs must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("search lr must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn is_collapsed(&self) -> bool {
        self.right_init <= self.tol
    }

    /// Trainer settings for search steps: `base` with the search epochs, LR
    /// and seed.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            init_lr: self.lr,
            epochs: self.epochs,
            seed: mix64(self.seed, tag::SEARCH),
            ..base.clone()
        }
    }

    /// Seed of the shared noise directions.
    pub fn noise_seed(&self) -> u64 {
        mix64(self.seed, tag::NOISE)
    }

    /// Upper bound on the number of steps, `ceil(log2(right_init / tol))`.
    pub fn expected_steps(&self) -> usize {
        if self.is_collapsed() {
            return 0;
        }
        let mut width = self.right_init;
        let mut steps = 0;
        while width >= self.tol {
            width /= 2.0;
            steps += 1;
        }
        steps
    }
}

/// `T = min(T_init, ACC_up)`.
pub fn compute_threshold(t_init: f64, baseline_train_acc: f64) -> f64 {
    t_init.min(baseline_train_acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    /// Radius evaluated at this step.
    pub eps: f64,
    pub accuracy: f64,
    /// Interval after the update.
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub steps: Vec<SearchStep>,
    pub eps_hat: f64,
    pub clamped_t: f64,
    pub noise_seed: u64,
}

/// Trains `head` on the virtual set at radius `eps` and returns the trained
/// head's accuracy on that same virtual set.
#[allow(clippy::too_many_arguments)]
pub fn train_and_eval(
    head: &mut LinearHead,
    dataset: &FeatureDataset,
    eps: f64,
    range: &RangeVector,
    replicas: usize,
    noise_seed: u64,
    config: &TrainConfig,
) -> Result<f64> {
    let virtual_set = VirtualSetSpec::new(dataset, eps, replicas, range, noise_seed)?;
    train_and_eval_on(head, &virtual_set, config)
}

fn train_and_eval_on(head: &mut LinearHead, virtual_set: &VirtualSetSpec<'_>, config: &TrainConfig) -> Result<f64> {
    train_head(head, virtual_set, config)?;
    evaluate(head, virtual_set)
}

/// Runs the radius search with threshold `threshold`.
pub fn search_epsilon(
    dataset: &FeatureDataset,
    range: &RangeVector,
    threshold: f64,
    search: &SearchConfig,
    base: &TrainConfig,
) -> Result<SearchTrace> {
    search.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("search dataset"));
    }
    let noise_seed = search.noise_seed();
    let mut trace = SearchTrace {
        steps: Vec::new(),
        eps_hat: 0.0,
        clamped_t: threshold,
        noise_seed,
    };
    if search.is_collapsed() {
        return Ok(trace);
    }

    let train_config = search.train_config(base);
    let init_seed = mix64(train_config.seed, tag::INIT);
    let mut head = init_head(dataset.dim(), dataset.class_count(), init_seed);
    let mut left = 0.0;
    let mut right = search.right_init;
    let mut eps = right / 2.0;
    let table = if search.resample_per_step {
        None
    } else {
        NoiseTable::for_spec(&VirtualSetSpec::new(dataset, 0.0, search.replicas, range, noise_seed)?)
    };
    loop {
        let step = trace.steps.len() as u64;
        let step_config = train_config.with_seed(mix64(train_config.seed, step));
        let step_noise = if search.resample_per_step {
            mix64(noise_seed, step + 1)
        } else {
            noise_seed
        };
        if !search.warm_start {
            head = init_head(dataset.dim(), dataset.class_count(), init_seed);
        }
        let mut virtual_set = VirtualSetSpec::new(dataset, eps, search.replicas, range, step_noise)?;
        if let Some(table) = &table {
            virtual_set = virtual_set.with_table(table)?;
        }
        let accuracy = train_and_eval_on(&mut head, &virtual_set, &step_config)?;
        if accuracy > threshold {
            left = eps;
        } else {
            right = eps;
        }
        trace.steps.push(SearchStep {
            eps,
            accuracy,
            left,
            right,
        });
        eps = (left + right) / 2.0;
        if right - left < search.tol {
            break;
        }
    }
    trace.eps_hat = eps;
    Ok(trace)
}
