//! Range vector and virtual sample sets.
//!
//! A virtual example is `z_i + eps * (s ⊙ delta_{i,r})` with the parent's
//! label, where `delta_{i,r}` is standard normal noise keyed by
//! `(seed, i, r)`. The noise does not depend on `eps`, so virtual sets at two
//! radii share directions and differ only by a radial scale.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::linear_trainer::ExampleSource;
use crate::seed::{self, mix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Isotropic noise, `s = 1`.
    Spherical,
    /// Noise scaled per dimension by the sample standard deviation.
    Ellipsoidal,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spherical" => Ok(SamplingMode::Spherical),
            "ellipsoidal" => Ok(SamplingMode::Ellipsoidal),
            other => Err(Error::config(format!("unknown sampling mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingMode::Spherical => "spherical",
            SamplingMode::Ellipsoidal => "ellipsoidal",
        })
    }
}

/// Per-dimension noise scale `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeVector {
    values: Vec<f64>,
    mode: SamplingMode,
    /// Set when ellipsoidal estimation degenerated and all-ones was used.
    fallback: bool,
}

impl RangeVector {
    pub fn ones(dim: usize) -> Self {
        RangeVector {
            values: vec![1.0; dim],
            mode: SamplingMode::Spherical,
            fallback: false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn is_fallback(&self) -> bool {
        self.fallback
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|s| s * s).sum()
    }
}

/// Range vector over all rows, ignoring labels.
///
/// Ellipsoidal mode uses the Bessel-corrected column standard deviation. With
/// a single row, or when every column is constant, it falls back to all-ones
/// and marks the fallback.
pub fn compute_range_vector(dataset: &FeatureDataset, mode: SamplingMode) -> RangeVector {
    let dim = dataset.dim();
    if mode == SamplingMode::Spherical {
        return RangeVector::ones(dim);
    }
    let fallback = RangeVector {
        values: vec![1.0; dim],
        mode,
        fallback: true,
    };
    let m = dataset.len();
    if m < 2 {
        return fallback;
    }
    let mut mean = vec![0.0; dim];
    for row in dataset.rows() {
        for (acc, x) in mean.iter_mut().zip(row) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut var = vec![0.0; dim];
    for row in dataset.rows() {
        for ((acc, x), mu) in var.iter_mut().zip(row).zip(&mean) {
            let dev = x - mu;
            *acc += dev * dev;
        }
    }
    let values: Vec<f64> = var.iter().map(|v| (v / (m - 1) as f64).sqrt()).collect();
    if values.iter().all(|&s| s == 0.0) {
        return fallback;
    }
    RangeVector {
        values,
        mode,
        fallback: false,
    }
}

/// Fills `out` with standard normal noise for the key `(seed, i, r)`.
pub fn fill_noise(seed: u64, i: usize, r: usize, out: &mut [f64]) {
    let key = mix64(mix64(seed, i as u64), r as u64);
    let mut rng = seed::rng(key);
    for v in out.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
}

/// Standard normal noise vector `delta_{i,r}` of length `dim`.
pub fn noise_vector(seed: u64, i: usize, r: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_noise(seed, i, r, &mut out);
    out
}

/// Largest noise table, in `f64` values, that [`NoiseTable::for_spec`] builds.
pub const NOISE_TABLE_LIMIT: usize = 1 << 25;

/// Precomputed `delta_{i,r}` for every instance and replica.
///
/// Holds exactly the values [`fill_noise`] produces, so a virtual set reads
/// the same examples with or without it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    seed: u64,
    rows: usize,
    replicas: usize,
    dim: usize,
    values: Vec<f64>,
}

impl NoiseTable {
    pub fn new(seed: u64, rows: usize, replicas: usize, dim: usize) -> Self {
        let mut values = vec![0.0; rows * replicas * dim];
        if dim > 0 {
            for (idx, out) in values.chunks_exact_mut(dim).enumerate() {
                fill_noise(seed, idx / replicas, idx % replicas, out);
            }
        }
        NoiseTable {
            seed,
            rows,
            replicas,
            dim,
            values,
        }
    }

    /// The table for `spec`, or `None` when it would exceed
    /// [`NOISE_TABLE_LIMIT`] values.
    pub fn for_spec(spec: &VirtualSetSpec<'_>) -> Option<Self> {
        let size = spec.len().checked_mul(spec.dim())?;
        (size <= NOISE_TABLE_LIMIT)
            .then(|| NoiseTable::new(spec.seed, spec.parent.len(), spec.replicas, spec.dim()))
    }

    fn row(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Lazy description of the `M * R` virtual examples around a parent set.
///
/// Virtual example `idx` has parent `idx / R` and replica `idx % R`.
#[derive(Debug, Clone, Copy)]
pub struct VirtualSetSpec<'a> {
    parent: &'a FeatureDataset,
    eps: f64,
    replicas: usize,
    range: &'a RangeVector,
    seed: u64,
    table: Option<&'a NoiseTable>,
}

impl<'a> VirtualSetSpec<'a> {
    pub fn new(
        parent: &'a FeatureDataset,
        eps: f64,
        replicas: usize,
        range: &'a RangeVector,
        seed: u64,
    ) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::config(format!("eps must be finite and >= 0, got {eps}")));
        }
        if replicas == 0 {
            return Err(Error::config("R must be at least 1"));
        }
        if range.dim() != parent.dim() {
            return Err(Error::DimensionMismatch {
                expected: parent.dim(),
                got: range.dim(),
            });
        }
        Ok(VirtualSetSpec {
            parent,
            eps,
            replicas,
            range,
            seed,
            table: None,
        })
    }

    /// Reads noise from `table` instead of regenerating it.
    pub fn with_table(mut self, table: &'a NoiseTable) -> Result<Self> {
        let fits = table.seed == self.seed
            && table.rows == self.parent.len()
            && table.replicas == self.replicas
            && table.dim == self.parent.dim();
        if !fits {
            return Err(Error::config("noise table does not match the virtual set"));
        }
        self.table = Some(table);
        Ok(self)
    }

    pub fn parent(&self) -> &FeatureDataset {
        self.parent
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn write(&self, i: usize, r: usize, out: &mut [f64]) -> usize {
        let z = self.parent.row(i);
        if self.eps == 0.0 {
            out.copy_from_slice(z);
        } else if let Some(table) = self.table {
            let delta = table.row(i * self.replicas + r);
            for (((o, zi), s), d) in out.iter_mut().zip(z).zip(self.range.values()).zip(delta) {
                *o = zi + self.eps * (s * d);
            }
        } else {
            fill_noise(self.seed, i, r, out);
            for ((o, zi), s) in out.iter_mut().zip(z).zip(self.range.values()) {
                *o = zi + self.eps * (s * *o);
            }
        }
        self.parent.label(i)
    }

    /// The virtual example for parent `i`, replica `r`.
    pub fn virtual_example(&self, i: usize, r: usize) -> Result<(Vec<f64>, usize)> {
        if i >= self.parent.len() {
            return Err(Error::IndexOutOfBounds {
                what: "instance",
                index: i,
                len: self.parent.len(),
            });
        }
        if r >= self.replicas {
            return Err(Error::IndexOutOfBounds {
                what: "replica",
                index: r,
                len: self.replicas,
            });
        }
        let mut out = vec![0.0; self.parent.dim()];
        let label = self.write(i, r, &mut out);
        Ok((out, label))
    }

    /// Iterates all `M * R` examples in index order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<f64>, usize)> + '_ {
        (0..self.len()).map(move |idx| {
            let mut out = vec![0.0; self.parent.dim()];
            let label = self.fill(idx, &mut out);
            (out, label)
        })
    }
}

impl ExampleSource for VirtualSetSpec<'_> {
    fn len(&self) -> usize {
        self.parent.len() * self.replicas
    }

    fn dim(&self) -> usize {
        self.parent.dim()
    }

    fn fill(&self, idx: usize, out: &mut [f64]) -> usize {
        self.write(idx / self.replicas, idx % self.replicas, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusStats {
    pub mean_radius: f64,
    /// Sample standard deviation of the radius (0 for a single draw).
    pub std_radius: f64,
    pub mean_squared_radius: f64,
    pub samples: usize,
}

/// Radius statistics of `‖virtual − parent‖` over `sample_count` pairs spread
/// evenly over the `M * R` index range (repeating pairs when the set is
/// smaller than `sample_count`).
pub fn annulus_stats(spec: &VirtualSetSpec<'_>, sample_count: usize) -> Result<AnnulusStats> {
    if sample_count == 0 {
        return Err(Error::Empty("annulus_stats needs at least one sample"));
    }
    let total = spec.len();
    let mut buf = vec![0.0; spec.dim()];
    let mut radii = Vec::with_capacity(sample_count);
    for j in 0..sample_count {
        let idx = if sample_count <= total {
            ((j as u128 * total as u128) / sample_count as u128) as usize
        } else {
            j % total
        };
        spec.fill(idx, &mut buf);
        let parent = spec.parent.row(idx / spec.replicas);
        let r2: f64 = buf.iter().zip(parent).map(|(a, b)| (a - b) * (a - b)).sum();
        radii.push(r2.sqrt());
    }
    let n = radii.len() as f64;
    let mean = radii.iter().sum::<f64>() / n;
    let mean_sq = radii.iter().map(|r| r * r).sum::<f64>() / n;
    let std = if radii.len() > 1 {
        (radii.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(AnnulusStats {
        mean_radius: mean,
        std_radius: std,
        mean_squared_radius: mean_sq,
        samples: radii.len(),
    })
}
