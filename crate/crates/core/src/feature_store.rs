//! Feature datasets and their on-disk formats.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "IBM2FEAT"
//! version    u32      1
//! flags      u32      bit 0 = normalized
//! d          u32
//! C          u32
//! M          u64
//! M records  label u32, d x f32
//! [names]    count u32, then per name: len u32, UTF-8 bytes   (optional)
//! ```
//!
//! Features are stored as `f32` on disk and held as `f64` in memory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const FEATURE_MAGIC: &[u8; 8] = b"IBM2FEAT";
pub const FEATURE_VERSION: u32 = 1;
const FLAG_NORMALIZED: u32 = 1;

/// Tolerance on row norms for datasets flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// An `M x d` matrix of feature vectors with class labels in `[0, C)`.
///
/// Immutable after construction; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    class_count: usize,
    class_names: Option<Vec<String>>,
    normalized: bool,
}

impl FeatureDataset {
    /// Builds a dataset from row-major features.
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        class_count: usize,
    ) -> Result<Self> {
        Self::from_parts(features, labels, dim, class_count, None, false)
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut features = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            features.extend_from_slice(row);
        }
        Self::new(features, labels, dim, class_count)
    }

    fn from_parts(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        class_count: usize,
        class_names: Option<Vec<String>>,
        normalized: bool,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset("dimension must be at least 1".into()));
        }
        if class_count == 0 {
            return Err(Error::InvalidDataset("class count must be at least 1".into()));
        }
        if labels.is_empty() {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::InvalidDataset(format!(
                "{} feature values for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                row,
                label: label as u64,
                classes: class_count,
            });
        }
        if let Some(names) = &class_names {
            if names.len() != class_count {
                return Err(Error::InvalidDataset(format!(
                    "{} class names for {class_count} classes",
                    names.len()
                )));
            }
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite feature at row {}",
                pos / dim
            )));
        }
        let dataset = FeatureDataset {
            features,
            labels,
            dim,
            class_count,
            class_names,
            normalized,
        };
        if normalized {
            for i in 0..dataset.len() {
                let norm = l2_norm(dataset.row(i));
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::InvalidDataset(format!(
                        "row {i} has norm {norm} but the dataset is flagged normalized"
                    )));
                }
            }
        }
        Ok(dataset)
    }

    pub fn with_class_names(self, names: Vec<String>) -> Result<Self> {
        Self::from_parts(
            self.features,
            self.labels,
            self.dim,
            self.class_count,
            Some(names),
            self.normalized,
        )
    }

    /// Number of rows `M`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Row count per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices grouped by class id, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Selects rows by index, keeping the class space.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        self.select(indices, Some, self.class_count, self.class_names.clone())
    }

    /// Selects rows and relabels them through `remap`; rows mapping to `None`
    /// are rejected.
    pub(crate) fn select(
        &self,
        indices: &[usize],
        remap: impl Fn(usize) -> Option<usize>,
        class_count: usize,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfBounds {
                    what: "row",
                    index: i,
                    len: self.len(),
                });
            }
            features.extend_from_slice(self.row(i));
            let label = remap(self.labels[i]).ok_or_else(|| {
                Error::InvalidDataset(format!("row {i} has a label outside the selection"))
            })?;
            labels.push(label);
        }
        Self::from_parts(
            features,
            labels,
            self.dim,
            class_count,
            class_names,
            self.normalized,
        )
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Divides every row by its Euclidean norm.
pub fn l2_normalize(dataset: &FeatureDataset) -> Result<FeatureDataset> {
    let mut features = Vec::with_capacity(dataset.features.len());
    for (i, row) in dataset.rows().enumerate() {
        let norm = l2_norm(row);
        if norm == 0.0 {
            return Err(Error::ZeroNormRow { row: i });
        }
        features.extend(row.iter().map(|x| x / norm));
    }
    FeatureDataset::from_parts(
        features,
        dataset.labels.clone(),
        dataset.dim,
        dataset.class_count,
        dataset.class_names.clone(),
        true,
    )
}

/// Serializes a dataset in the binary feature format.
pub fn encode_features(dataset: &FeatureDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + dataset.len() * (4 + 4 * dataset.dim));
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    let flags = if dataset.normalized { FLAG_NORMALIZED } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(dataset.dim as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.class_count as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for (row, &label) in dataset.rows().zip(&dataset.labels) {
        out.extend_from_slice(&(label as u32).to_le_bytes());
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(names) = &dataset.class_names {
        out.extend_from_slice(&(names.len() as u32).to_le_bytes());
        for name in names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::TruncatedPayload(format!(
                "{what} at byte {} needs {n} bytes, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses the binary feature format.
pub fn decode_features(bytes: &[u8]) -> Result<FeatureDataset> {
    if bytes.len() < FEATURE_MAGIC.len() || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            expected: "IBM2FEAT",
        });
    }
    let mut r = Reader { buf: bytes, pos: 8 };
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FEATURE_VERSION,
        });
    }
    let flags = r.u32("flags")?;
    let dim = r.u32("dimension")? as usize;
    let class_count = r.u32("class count")? as usize;
    let rows = r.u64("row count")?;

    let record_len = 4 + 4 * dim as u64;
    if rows.saturating_mul(record_len) > r.remaining() as u64 {
        return Err(Error::TruncatedPayload(format!(
            "header declares {rows} records of {record_len} bytes, {} bytes left",
            r.remaining()
        )));
    }
    let rows = rows as usize;
    let mut features = Vec::with_capacity(rows * dim);
    let mut labels = Vec::with_capacity(rows);
    for row in 0..rows {
        let label = r.u32("label")?;
        if label as usize >= class_count {
            return Err(Error::LabelOutOfRange {
                row,
                label: label as u64,
                classes: class_count,
            });
        }
        labels.push(label as usize);
        let payload = r.take(4 * dim, "features")?;
        features.extend(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64),
        );
    }

    let class_names = if r.remaining() == 0 {
        None
    } else {
        let count = r.u32("class name count")? as usize;
        let mut names = Vec::with_capacity(count.min(class_count));
        for _ in 0..count {
            let len = r.u32("class name length")? as usize;
            let raw = r.take(len, "class name")?;
            let name = std::str::from_utf8(raw)
                .map_err(|e| Error::InvalidDataset(format!("class name is not UTF-8: {e}")))?;
            names.push(name.to_owned());
        }
        if r.remaining() != 0 {
            return Err(Error::InvalidDataset(format!(
                "{} trailing bytes after class name table",
                r.remaining()
            )));
        }
        Some(names)
    };

    FeatureDataset::from_parts(
        features,
        labels,
        dim,
        class_count,
        class_names,
        flags & FLAG_NORMALIZED != 0,
    )
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_features(&bytes)
}

pub fn write_feature_file(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(dataset)).map_err(|e| Error::file(path, e))
}

/// Parses headerless `label,f1,...,fd` rows; arity comes from the first line.
pub fn parse_csv(text: &str) -> Result<FeatureDataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut arity = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = *arity.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(Error::RaggedRows {
                line: line_no,
                found: cells.len(),
                expected,
            });
        }
        let label: i64 = cells[0].parse().map_err(|_| Error::NonNumeric {
            line: line_no,
            cell: cells[0].to_owned(),
        })?;
        if label < 0 {
            return Err(Error::NegativeLabel {
                line: line_no,
                label,
            });
        }
        labels.push(label as usize);
        for cell in &cells[1..] {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                line: line_no,
                cell: (*cell).to_owned(),
            })?;
            features.push(v);
        }
    }
    let arity = arity.ok_or(Error::Empty("csv has no rows"))?;
    if arity < 2 {
        return Err(Error::InvalidDataset(
            "csv rows need a label and at least one feature".into(),
        ));
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    FeatureDataset::new(features, labels, arity - 1, class_count)
}

pub fn import_csv(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_csv(&text)
}

/// Writes `label,f1,...,fd` rows with round-trip float formatting.
pub fn export_csv(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for (row, label) in dataset.rows().zip(&dataset.labels) {
        write!(w, "{label}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Class-conditional Gaussian mixture with a shared diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dim: usize,
    pub class_count: usize,
    /// One mean vector per class.
    pub means: Vec<Vec<f64>>,
    /// Per-dimension standard deviation, shared by every class.
    pub std: Vec<f64>,
    /// Rows per class in the training split.
    pub train_shots: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

/// Named synthetic presets.
pub const PRESETS: &[&str] = &["iso-easy", "trend", "anisotropic", "fsl"];

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.class_count == 0 {
            return Err(Error::config("mixture needs dim >= 1 and class_count >= 1"));
        }
        if self.train_shots == 0 {
            return Err(Error::config("mixture needs train_shots >= 1"));
        }
        if self.means.len() != self.class_count {
            return Err(Error::config(format!(
                "{} means for {} classes",
                self.means.len(),
                self.class_count
            )));
        }
        if let Some(c) = self.means.iter().position(|m| m.len() != self.dim) {
            return Err(Error::config(format!("mean of class {c} has wrong dimension")));
        }
        if self.std.len() != self.dim {
            return Err(Error::config("std vector has wrong dimension"));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config("standard deviations must be finite and >= 0"));
        }
        Ok(())
    }

    /// Builds a named preset. Class means are fixed per preset; `seed` only
    /// drives the sampled rows.
    ///
    /// - `iso-easy`: d=16, C=4, means `2 e_c`, std 0.3.
    /// - `trend`: d=64, C=20, random means, isotropic std.
    /// - `anisotropic`: d=64, C=20, per-dimension std spanning 10x.
    /// - `fsl`: d=32, C=20 with 40 rows per class for episode sampling.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let spec = match name {
            "iso-easy" => {
                let (dim, classes) = (16, 4);
                let means = (0..classes)
                    .map(|c| (0..dim).map(|j| if j == c { 2.0 } else { 0.0 }).collect())
                    .collect();
                MixtureSpec {
                    dim,
                    class_count: classes,
                    means,
                    std: vec![0.3; dim],
                    train_shots: 32,
                    test_per_class: 100,
                    seed,
                }
            }
            "trend" => {
                let std = vec![1.0; 64];
                MixtureSpec {
                    dim: 64,
                    class_count: 20,
                    means: random_means(20, &std, TREND_MEAN_SCALE, 0x0074_7265_6e64),
                    std,
                    train_shots: 20,
                    test_per_class: 50,
                    seed,
                }
            }
            "anisotropic" => {
                let dim = 64;
                let std: Vec<f64> = (0..dim)
                    .map(|j| 0.1 * 10f64.powf(j as f64 / (dim - 1) as f64))
                    .collect();
                MixtureSpec {
                    dim,
                    class_count: 20,
                    means: random_means(20, &std, ANISO_MEAN_SCALE, 0x0061_6e69_736f),
                    std,
                    train_shots: 20,
                    test_per_class: 50,
                    seed,
                }
            }
            "fsl" => {
                let std = vec![1.0; 32];
                MixtureSpec {
                    dim: 32,
                    class_count: 20,
                    means: random_means(20, &std, FSL_MEAN_SCALE, 0x0066_736c),
                    std,
                    train_shots: 40,
                    test_per_class: 20,
                    seed,
                }
            }
            other => {
                return Err(Error::config(format!(
                    "unknown preset {other:?} (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(spec)
    }
}

const TREND_MEAN_SCALE: f64 = 0.35;
const ANISO_MEAN_SCALE: f64 = 0.35;
const FSL_MEAN_SCALE: f64 = 0.6;

/// Means drawn as `offset + scale * std ⊙ N(0, I)`; the constant offset keeps
/// the mixture away from the origin, as embedding features usually are.
fn random_means(classes: usize, std: &[f64], scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed);
    (0..classes)
        .map(|_| {
            std.iter()
                .map(|s| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * (1.0 + scale * z)
                })
                .collect()
        })
        .collect()
}

/// Draws the train and test splits of a mixture.
///
/// Rows are class-major: all rows of class 0, then class 1, and so on. Train
/// rows are drawn before test rows from one seeded stream.
pub fn synth_mixture(spec: &MixtureSpec) -> Result<(FeatureDataset, FeatureDataset)> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let mut draw = |per_class: usize| -> Result<FeatureDataset> {
        let mut features = Vec::with_capacity(per_class * spec.class_count * spec.dim);
        let mut labels = Vec::with_capacity(per_class * spec.class_count);
        for (c, mean) in spec.means.iter().enumerate() {
            for _ in 0..per_class {
                for (m, s) in mean.iter().zip(&spec.std) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features.push(m + s * z);
                }
                labels.push(c);
            }
        }
        FeatureDataset::new(features, labels, spec.dim, spec.class_count)
    };
    let train = draw(spec.train_shots)?;
    let test = if spec.test_per_class == 0 {
        // An empty test split is not a valid dataset; reuse the train rows.
        train.clone()
    } else {
        draw(spec.test_per_class)?
    };
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_row() -> FeatureDataset {
        FeatureDataset::new(vec![3.0, 4.0], vec![0], 2, 1).unwrap()
    }

    #[test]
    fn decode_single_record() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"IBM2FEAT");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&3.0f32.to_le_bytes());
        bytes.extend_from_slice(&4.0f32.to_le_bytes());
        let ds = decode_features(&bytes).unwrap();
        assert_eq!(ds, one_row());
        assert_eq!(encode_features(&ds), bytes);
    }

    #[test]
    fn truncated_mid_record() {
        let bytes = encode_features(&one_row());
        let err = decode_features(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload(_)), "{err}");
        assert!(err.to_string().starts_with("truncated payload"));
    }

    #[test]
    fn decode_errors_are_distinct() {
        let good = encode_features(&one_row());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_features(&bad_magic), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_features(b"IBM"), Err(Error::BadMagic { .. })));

        let mut bad_version = good.clone();
        bad_version[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_features(&bad_version),
            Err(Error::VersionMismatch { found: 2, .. })
        ));

        let mut bad_label = good.clone();
        bad_label[32..36].copy_from_slice(&1u32.to_le_bytes());
        assert!(matches!(
            decode_features(&bad_label),
            Err(Error::LabelOutOfRange { row: 0, label: 1, classes: 1 })
        ));

        assert!(matches!(
            decode_features(&good[..20]),
            Err(Error::TruncatedPayload(_))
        ));
    }

    #[test]
    fn class_names_and_flag_survive() {
        let ds = l2_normalize(&one_row())
            .unwrap()
            .with_class_names(vec!["goldfinch".into()])
            .unwrap();
        let back = decode_features(&encode_features(&ds)).unwrap();
        assert!(back.is_normalized());
        assert_eq!(back.class_names(), Some(&["goldfinch".to_string()][..]));
    }

    #[test]
    fn csv_basic_and_ragged() {
        let ds = parse_csv("0,1.0,0.0\n1,0.0,1.0").unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.class_count()), (2, 2, 2));
        assert!(matches!(
            parse_csv("0,1.0\n1,2.0,3.0"),
            Err(Error::RaggedRows { line: 2, found: 3, expected: 2 })
        ));
        assert!(matches!(
            parse_csv("0,abc"),
            Err(Error::NonNumeric { line: 1, .. })
        ));
        assert!(matches!(
            parse_csv("-1,0.5"),
            Err(Error::NegativeLabel { line: 1, label: -1 })
        ));
        assert!(matches!(parse_csv("1.5,0.5"), Err(Error::NonNumeric { .. })));
        assert!(matches!(parse_csv("\n"), Err(Error::Empty(_))));
    }

    #[test]
    fn normalize_examples() {
        let ds = l2_normalize(&one_row()).unwrap();
        assert_eq!(ds.row(0), &[0.6, 0.8]);
        assert!(ds.is_normalized());

        let zero = FeatureDataset::new(vec![1.0, 0.0, 0.0, 0.0], vec![0, 0], 2, 1).unwrap();
        assert!(matches!(l2_normalize(&zero), Err(Error::ZeroNormRow { row: 1 })));
    }

    #[test]
    fn normalize_is_idempotent() {
        let spec = MixtureSpec::preset("trend", 3).unwrap();
        let (train, _) = synth_mixture(&spec).unwrap();
        let once = l2_normalize(&train).unwrap();
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.features().iter().zip(twice.features()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for row in once.rows() {
            assert!((l2_norm(row) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_datasets_rejected() {
        assert!(FeatureDataset::new(vec![], vec![], 2, 1).is_err());
        assert!(FeatureDataset::new(vec![1.0], vec![0], 0, 1).is_err());
        assert!(matches!(
            FeatureDataset::new(vec![1.0], vec![3], 1, 2),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(FeatureDataset::new(vec![1.0, 2.0, 3.0], vec![0], 2, 1).is_err());
        assert!(FeatureDataset::new(vec![f64::NAN], vec![0], 1, 1).is_err());
    }

    fn constant_spec(seed: u64) -> MixtureSpec {
        MixtureSpec {
            dim: 3,
            class_count: 2,
            means: vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 0.5]],
            std: vec![0.0; 3],
            train_shots: 4,
            test_per_class: 2,
            seed,
        }
    }

    #[test]
    fn zero_std_reproduces_means() {
        let spec = constant_spec(1);
        let (train, test) = synth_mixture(&spec).unwrap();
        for ds in [&train, &test] {
            for (row, &label) in ds.rows().zip(ds.labels()) {
                assert_eq!(row, spec.means[label].as_slice());
            }
        }
        assert_eq!(train.class_counts(), vec![4, 4]);
    }

    #[test]
    fn mixture_is_deterministic_per_seed() {
        let spec = MixtureSpec::preset("iso-easy", 7).unwrap();
        assert_eq!(synth_mixture(&spec).unwrap(), synth_mixture(&spec).unwrap());
        let other = MixtureSpec::preset("iso-easy", 8).unwrap();
        assert_ne!(synth_mixture(&spec).unwrap().0, synth_mixture(&other).unwrap().0);
    }

    #[test]
    fn well_separated_mixture_nearest_mean() {
        let spec = MixtureSpec {
            dim: 2,
            class_count: 2,
            means: vec![vec![5.0, 0.0], vec![-5.0, 0.0]],
            std: vec![1.0, 1.0],
            train_shots: 1,
            test_per_class: 5000,
            seed: 11,
        };
        let (_, test) = synth_mixture(&spec).unwrap();
        let correct = test
            .rows()
            .zip(test.labels())
            .filter(|(row, &label)| {
                let dist = |m: &[f64]| -> f64 {
                    row.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum()
                };
                let pred = if dist(&spec.means[0]) <= dist(&spec.means[1]) { 0 } else { 1 };
                pred == label
            })
            .count();
        assert_eq!(test.len(), 10_000);
        assert!(correct as f64 / test.len() as f64 >= 0.999);
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(
            MixtureSpec::preset("nope", 0),
            Err(Error::InvalidConfig(_))
        ));
        for name in PRESETS {
            MixtureSpec::preset(name, 0).unwrap().validate().unwrap();
        }
    }
}
