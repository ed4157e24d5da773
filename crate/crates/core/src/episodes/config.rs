use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::feature_store::{load_feature_file, synth_mixture, FeatureDataset, MixtureSpec};
use crate::linear_trainer::TrainConfig;
use crate::margin_search::SearchConfig;
use crate::noise::SamplingMode;
use crate::seed::{mix64, tag};

pub const CONFIG_VERSION: u32 = 1;

/// Default final-stage learning rates under [`LrPolicy::Default`].
pub const DEFAULT_BASELINE_LR: f64 = 0.005;
pub const DEFAULT_IBM2_LR: f64 = 1.0;

/// Candidate initial learning rates for many-way tasks.
pub const PFSL_LR_GRID: [f64; 10] = [0.0001, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0];
/// Candidate initial learning rates for episodic tasks.
pub const FSL_LR_GRID: [f64; 6] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pfsl,
    Fsl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Ibm2,
}

macro_rules! parse_enum {
    ($ty:ty, $($name:literal => $val:expr),+) => {
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($val),)+
                    other => Err(Error::config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

parse_enum!(Mode, "pfsl" => Mode::Pfsl, "fsl" => Mode::Fsl);
parse_enum!(Method, "baseline" => Method::Baseline, "ibm2" => Method::Ibm2);

/// How the final-stage learning rate is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrPolicy {
    /// 0.005 for the baseline arm, 1.0 for the IbM2 arm.
    Default,
    /// The same value for both arms.
    Fixed(f64),
    /// Best test accuracy over the candidate grid, per task (an oracle
    /// upper bound, not a deployable protocol).
    Grid,
    /// Best mean query accuracy over extra probe episodes.
    Probe,
}

impl std::str::FromStr for LrPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(LrPolicy::Default),
            "grid" => Ok(LrPolicy::Grid),
            "probe" => Ok(LrPolicy::Probe),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .map(LrPolicy::Fixed)
                .ok_or_else(|| Error::config(format!("invalid lr policy {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LrPolicyRepr {
    Fixed(f64),
    Named(String),
}

impl Serialize for LrPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LrPolicy::Fixed(v) => LrPolicyRepr::Fixed(*v),
            LrPolicy::Default => LrPolicyRepr::Named("default".into()),
            LrPolicy::Grid => LrPolicyRepr::Named("grid".into()),
            LrPolicy::Probe => LrPolicyRepr::Named("probe".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LrPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match LrPolicyRepr::deserialize(d)? {
            LrPolicyRepr::Fixed(v) if v.is_finite() && v >= 0.0 => Ok(LrPolicy::Fixed(v)),
            LrPolicyRepr::Fixed(v) => Err(serde::de::Error::custom(format!("invalid lr {v}"))),
            LrPolicyRepr::Named(name) => name.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Where features come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// A named mixture preset; its train split is the sampling pool.
    Synthetic { preset: String },
    /// Binary feature files. Many-way runs need `test`.
    Files {
        pool: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSettings {
    pub batch_size: usize,
    /// Final-stage epochs; defaults to 100 (many-way) or 200 (episodic).
    pub epochs: Option<usize>,
    pub label_smoothing: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainerSettings {
            batch_size: t.batch_size,
            epochs: None,
            label_smoothing: t.label_smoothing,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub right_init: f64,
    pub tol: f64,
    /// Epochs per search step; defaults to 20 (many-way) or 50 (episodic).
    pub epochs: Option<usize>,
    pub lr: f64,
    pub warm_start: bool,
    pub resample_per_step: bool,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let s = SearchConfig::default();
        SearchSettings {
            right_init: s.right_init,
            tol: s.tol,
            epochs: None,
            lr: s.lr,
            warm_start: s.warm_start,
            resample_per_step: s.resample_per_step,
        }
    }
}

/// One experiment: a protocol, a method and the full training recipe.
///
/// Optional fields take mode-dependent defaults; [`RunConfig::resolve`]
/// fills them in so the echoed config is explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub mode: Mode,
    pub method: Method,
    pub sampling: SamplingMode,
    pub data: DataSource,
    pub shots: Vec<usize>,
    /// Episodic mode only.
    pub way: Option<usize>,
    /// Queries per class, episodic mode only.
    pub query: Option<usize>,
    /// Episodes per run, episodic mode only.
    pub episodes: Option<usize>,
    /// Independent repetitions: sampled task sets (many-way) or runs of
    /// `episodes` episodes (episodic). Defaults to 3 or 5.
    pub runs: Option<usize>,
    pub seed: u64,
    pub replicas: usize,
    /// Defaults to 0.9 (many-way) or 0.999 (episodic).
    pub t_init: Option<f64>,
    pub lr: LrPolicy,
    pub lr_candidates: Option<Vec<f64>>,
    pub probe_episodes: usize,
    pub trainer: TrainerSettings,
    pub search: SearchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_version: CONFIG_VERSION,
            mode: Mode::Pfsl,
            method: Method::Ibm2,
            sampling: SamplingMode::Ellipsoidal,
            data: DataSource::Synthetic {
                preset: "trend".into(),
            },
            shots: vec![1],
            way: None,
            query: None,
            episodes: None,
            runs: None,
            seed: 0,
            replicas: 200,
            t_init: None,
            lr: LrPolicy::Default,
            lr_candidates: None,
            probe_episodes: 20,
            trainer: TrainerSettings::default(),
            search: SearchSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.resolve()
    }

    /// Fills mode-dependent defaults and validates.
    pub fn resolve(mut self) -> Result<Self> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        let fsl = self.mode == Mode::Fsl;
        match self.mode {
            Mode::Fsl => {
                self.way.get_or_insert(5);
                self.query.get_or_insert(15);
                self.episodes.get_or_insert(500);
            }
            Mode::Pfsl => {
                if self.way.is_some() || self.query.is_some() || self.episodes.is_some() {
                    return Err(Error::config(
                        "way, query and episodes only apply to fsl mode",
                    ));
                }
            }
        }
        self.runs.get_or_insert(if fsl { 5 } else { 3 });
        self.t_init.get_or_insert(if fsl { 0.999 } else { 0.9 });
        self.trainer.epochs.get_or_insert(if fsl { 200 } else { 100 });
        self.search.epochs.get_or_insert(if fsl { 50 } else { 20 });
        if matches!(self.lr, LrPolicy::Grid | LrPolicy::Probe) && self.lr_candidates.is_none() {
            self.lr_candidates = Some(if fsl {
                FSL_LR_GRID.to_vec()
            } else {
                PFSL_LR_GRID.to_vec()
            });
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::config("shots must be a non-empty list of values >= 1"));
        }
        if self.runs == Some(0) || self.episodes == Some(0) {
            return Err(Error::config("runs and episodes must be >= 1"));
        }
        if self.way == Some(0) || self.query == Some(0) {
            return Err(Error::config("way and query must be >= 1"));
        }
        if self.replicas == 0 {
            return Err(Error::config("replicas (R) must be >= 1"));
        }
        if let Some(c) = &self.lr_candidates {
            if c.is_empty() || c.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::config("lr_candidates must be non-empty, finite, >= 0"));
            }
        }
        if self.lr == LrPolicy::Probe && self.probe_episodes == 0 {
            return Err(Error::config("probe lr selection needs probe_episodes >= 1"));
        }
        self.train_config().validate()?;
        self.search_config(0).validate()
    }

    pub fn runs(&self) -> usize {
        self.runs.unwrap_or(if self.mode == Mode::Fsl { 5 } else { 3 })
    }

    pub fn way(&self) -> usize {
        self.way.unwrap_or(5)
    }

    pub fn query(&self) -> usize {
        self.query.unwrap_or(15)
    }

    pub fn episodes(&self) -> usize {
        match self.mode {
            Mode::Fsl => self.episodes.unwrap_or(500),
            Mode::Pfsl => 1,
        }
    }

    pub fn lr_candidates(&self) -> Vec<f64> {
        self.lr_candidates.clone().unwrap_or_else(|| match self.mode {
            Mode::Fsl => FSL_LR_GRID.to_vec(),
            Mode::Pfsl => PFSL_LR_GRID.to_vec(),
        })
    }

    /// Final-stage trainer; `init_lr` is set per arm later.
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.trainer;
        TrainConfig {
            init_lr: DEFAULT_BASELINE_LR,
            batch_size: t.batch_size,
            epochs: t
                .epochs
                .unwrap_or(if self.mode == Mode::Fsl { 200 } else { 100 }),
            label_smoothing: t.label_smoothing,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            seed: 0,
        }
    }

    pub fn search_config(&self, seed: u64) -> SearchConfig {
        let s = &self.search;
        SearchConfig {
            t_init: self
                .t_init
                .unwrap_or(if self.mode == Mode::Fsl { 0.999 } else { 0.9 }),
            right_init: s.right_init,
            tol: s.tol,
            replicas: self.replicas,
            epochs: s
                .epochs
                .unwrap_or(if self.mode == Mode::Fsl { 50 } else { 20 }),
            lr: s.lr,
            warm_start: s.warm_start,
            resample_per_step: s.resample_per_step,
            seed,
        }
    }

    /// Loads (or synthesizes) the pool and the optional test split.
    pub fn load_data(&self) -> Result<(FeatureDataset, Option<FeatureDataset>)> {
        match &self.data {
            DataSource::Synthetic { preset } => {
                let spec = MixtureSpec::preset(preset, mix64(self.seed, tag::DATA))?;
                let (pool, test) = synth_mixture(&spec)?;
                Ok((pool, Some(test)))
            }
            DataSource::Files { pool, test } => {
                let pool_ds = load_feature_file(pool)?;
                let test_ds = test.as_ref().map(load_feature_file).transpose()?;
                Ok((pool_ds, test_ds))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_fills_mode_defaults() {
        let pfsl = RunConfig::default().resolve().unwrap();
        assert_eq!(pfsl.runs, Some(3));
        assert_eq!(pfsl.t_init, Some(0.9));
        assert_eq!(pfsl.trainer.epochs, Some(100));
        assert_eq!(pfsl.search.epochs, Some(20));

        let fsl = RunConfig {
            mode: Mode::Fsl,
            ..RunConfig::default()
        }
        .resolve()
        .unwrap();
        assert_eq!((fsl.way, fsl.query, fsl.episodes), (Some(5), Some(15), Some(500)));
        assert_eq!(fsl.runs, Some(5));
        assert_eq!(fsl.t_init, Some(0.999));
        assert_eq!(fsl.search.epochs, Some(50));
        assert_eq!(fsl.trainer.epochs, Some(200));
    }

    #[test]
    fn resolve_is_idempotent_through_json() {
        let cfg = RunConfig {
            lr: LrPolicy::Probe,
            ..RunConfig::default()
        }
        .resolve()
        .unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn lr_policy_forms() {
        for (text, policy) in [
            ("0.25", LrPolicy::Fixed(0.25)),
            ("\"grid\"", LrPolicy::Grid),
            ("\"probe\"", LrPolicy::Probe),
            ("\"default\"", LrPolicy::Default),
        ] {
            let parsed: LrPolicy = serde_json::from_str(text).unwrap();
            assert_eq!(parsed, policy);
            assert_eq!(serde_json::to_string(&parsed).unwrap(), text);
        }
        assert!(serde_json::from_str::<LrPolicy>("\"fast\"").is_err());
        assert!(serde_json::from_str::<LrPolicy>("-1.0").is_err());
        assert_eq!("0.5".parse::<LrPolicy>().unwrap(), LrPolicy::Fixed(0.5));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_json(r#"{"config_version": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mode": "pfsl", "way": 5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"shots": []}"#).is_err());
        assert!(RunConfig::from_json(r#"{"unknown_field": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"replicas": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mode": "fsl", "episodes": 0}"#).is_err());
        RunConfig::from_json(r#"{"mode": "fsl", "way": 5, "shots": [1, 5]}"#).unwrap();
    }
}
