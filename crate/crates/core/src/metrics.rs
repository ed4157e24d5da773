//! Episode reliability statistics and per-class analysis.

use serde::{Deserialize, Serialize};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::float::FloatCore;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub n: usize,
    pub acc_m: f64,
    /// Sample standard deviation (divisor `n − 1`; 0 when `n = 1`).
    pub sigma: f64,
    pub acc_1: f64,
    pub acc_10: f64,
    pub acc_100: f64,
    pub ci95: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// The values as integers over a shared denominator `2^shift`.
fn scaled(values: &[f64]) -> (Vec<BigInt>, usize) {
    let parts: Vec<(u64, i16, i8)> = values.iter().map(|v| v.integer_decode()).collect();
    let shift = parts
        .iter()
        .filter(|(m, _, _)| *m != 0)
        .map(|(_, e, _)| -i32::from(*e))
        .max()
        .unwrap_or(0)
        .max(0) as usize;
    let ints = parts
        .iter()
        .map(|&(m, e, sign)| {
            let v = BigInt::from(m) << (i32::from(e) + shift as i32) as usize;
            if sign < 0 {
                -v
            } else {
                v
            }
        })
        .collect();
    (ints, shift)
}

/// Nearest `f64` to `numer / (denom * 2^shift)`.
fn nearest(numer: BigInt, denom: usize, shift: usize) -> f64 {
    BigRational::new_raw(numer, BigInt::from(denom) << shift)
        .to_f64()
        .expect("ratio of integers converts")
}

/// Mean, spread and worst-case statistics of per-episode accuracies.
///
/// Sums are exact and every mean is rounded once to the nearest `f64`.
/// Rounding is monotone, so `ACC_1 <= ACC_10 <= ACC_100 <= ACC_m` holds
/// exactly, and the report does not depend on input order. `ACC_j` averages
/// the `j` smallest values with `j` clipped to `n`. `sigma` is the square
/// root of the nearest `f64` to the exact sample variance.
pub fn episode_metrics(acc_list: &[f64]) -> Result<EpisodeReport> {
    if acc_list.is_empty() {
        return Err(Error::Empty("accuracy list"));
    }
    if let Some(bad) = acc_list.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidDataset(format!("non-finite accuracy {bad}")));
    }
    let mut sorted = acc_list.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (ints, shift) = scaled(&sorted);
    let mut prefix = Vec::with_capacity(n);
    let mut sum = BigInt::zero();
    for v in &ints {
        sum += v;
        prefix.push(sum.clone());
    }
    let worst = |j: usize| {
        let j = j.min(n);
        nearest(prefix[j - 1].clone(), j, shift)
    };
    // n * sum(x^2) - (sum x)^2 = n * sum((x - mean)^2), exactly
    let sigma = if n < 2 {
        0.0
    } else {
        let squares: BigInt = ints.iter().map(|v| v * v).sum();
        let spread = BigInt::from(n) * squares - &sum * &sum;
        nearest(spread, n * (n - 1), 2 * shift).sqrt()
    };
    Ok(EpisodeReport {
        n,
        acc_m: worst(n),
        sigma,
        acc_1: worst(1),
        acc_10: worst(10),
        acc_100: worst(100),
        ci95: ci_from_sigma(sigma, n),
    })
}

/// `sigma = Z95 * sqrt(n) / 1.96`.
pub fn sigma_from_ci(z95: f64, n: usize) -> f64 {
    z95 * (n as f64).sqrt() / Z_95
}

/// `Z95 = 1.96 * sigma / sqrt(n)`.
pub fn ci_from_sigma(sigma: f64, n: usize) -> f64 {
    Z_95 * sigma / (n as f64).sqrt()
}

/// Recall per class; `None` for classes without test samples.
pub fn per_class_accuracy(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<Vec<Option<f64>>> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let mut total = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= classes {
            return Err(Error::IndexOutOfBounds {
                what: "label",
                index: l,
                len: classes,
            });
        }
        total[l] += 1;
        correct[l] += (p == l) as usize;
    }
    Ok(total
        .iter()
        .zip(&correct)
        .map(|(&t, &c)| (t > 0).then(|| c as f64 / t as f64))
        .collect())
}

/// Mean gain per bin, classes ordered by ascending baseline accuracy.
///
/// Classes are split into `bins` contiguous groups of `floor(C / bins)`, the
/// first `C mod bins` groups taking one extra class each. Ties in baseline
/// accuracy are ordered by class id.
pub fn gain_histogram(baseline: &[f64], method: &[f64], bins: usize) -> Result<Vec<f64>> {
    if baseline.len() != method.len() {
        return Err(Error::DimensionMismatch {
            expected: baseline.len(),
            got: method.len(),
        });
    }
    let classes = baseline.len();
    if bins == 0 || classes < bins {
        return Err(Error::config(format!(
            "gain histogram needs at least {bins} classes, got {classes}"
        )));
    }
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| baseline[a].total_cmp(&baseline[b]).then(a.cmp(&b)));
    let base = classes / bins;
    let extra = classes % bins;
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for b in 0..bins {
        let size = base + usize::from(b < extra);
        let group = &order[start..start + size];
        let total: f64 = group.iter().map(|&c| method[c] - baseline[c]).sum();
        out.push(total / size as f64);
        start += size;
    }
    Ok(out)
}
