//! Instance-based max-margin (IbM2) linear probing for few-shot recognition.
//!
//! The crate works on precomputed, frozen feature vectors. Every training
//! instance is surrounded by `R` virtual samples lying near a hyperspherical
//! (or ellipsoidal) shell of radius `eps`; a binary search finds the largest
//! `eps` whose virtual set is still fitted by a linear softmax probe, and the
//! final probe is trained on that virtual set.
//!
//! Module map:
//!
//! - [`feature_store`]: feature datasets, the binary/CSV formats, L2
//!   normalization and the synthetic Gaussian-mixture generator.
//! - [`noise`]: range vector and lazily generated virtual sets.
//! - [`linear_trainer`]: softmax probe, label-smoothed cross-entropy, Adam,
//!   cosine schedule.
//! - [`margin_search`]: binary search for the radius scale.
//! - [`episodes`]: many-way tasks, N-way K-shot episodes, pipelines and
//!   experiment orchestration.
//! - [`metrics`]: episode reliability statistics and per-class analysis.
//! - [`report`]: JSON report documents and their text/CSV views.

pub mod episodes;
pub mod error;
pub mod feature_store;
pub mod linear_trainer;
pub mod margin_search;
pub mod metrics;
pub mod noise;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
