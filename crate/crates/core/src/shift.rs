//! Label-space and descriptor-space shift between two record sets.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{CompoundRecord, Fingerprint};
use crate::error::{Error, Result};

/// Squared MMD values within this distance of zero are reported as zero.
pub const MMD_CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Preferred-class ratio of the first set minus that of the second.
    pub label_shift: f64,
    pub mmd_sq: f64,
    /// `mmd_sq / 2`, in [0, 1] for the Tanimoto kernel.
    pub mmd_norm: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mmd {
    pub mmd_sq: f64,
    pub mmd_norm: f64,
}

/// `|a & b| / |a | b|`, with two empty fingerprints counting as identical.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(tanimoto_words(a.words(), b.words()))
}

#[inline]
fn tanimoto_words(a: &[u64], b: &[u64]) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.iter().zip(b) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        1.0
    } else {
        f64::from(inter) / f64::from(union)
    }
}

/// Biased squared MMD with the Tanimoto kernel:
/// `mean k(x, x') + mean k(z, z') - 2 mean k(x, z)`, diagonals included.
///
/// Row sums are computed in parallel but always combined in row order, so
/// the result does not depend on the thread count. The argument order is
/// canonicalised first, which makes `mmd(x, z) == mmd(z, x)` bit for bit.
pub fn mmd(x: &[Fingerprint], z: &[Fingerprint]) -> Result<Mmd> {
    if x.is_empty() || z.is_empty() {
        return Err(Error::InsufficientData(
            "MMD needs two non-empty samples".into(),
        ));
    }
    let len = x[0].len();
    if let Some(bad) = x.iter().chain(z).find(|f| f.len() != len) {
        return Err(Error::Dimension {
            expected: len,
            actual: bad.len(),
        });
    }
    let (x, z) = match canonical_order(x, z) {
        Ordering::Greater => (z, x),
        _ => (x, z),
    };

    let m = x.len() as f64;
    let n = z.len() as f64;
    let kxx = within_sum(x);
    let kzz = within_sum(z);
    let kxz = cross_sum(x, z);
    let raw = kxx / (m * m) + kzz / (n * n) - 2.0 * kxz / (m * n);
    let mmd_sq = if raw < MMD_CLAMP_TOL { 0.0 } else { raw };
    Ok(Mmd {
        mmd_sq,
        mmd_norm: mmd_sq / 2.0,
    })
}

fn canonical_order(x: &[Fingerprint], z: &[Fingerprint]) -> Ordering {
    x.len().cmp(&z.len()).then_with(|| x.cmp(z))
}

/// `sum_{i,j} k(x_i, x_j)` as `M + 2 sum_{i<j}` (the kernel diagonal is 1).
fn within_sum(x: &[Fingerprint]) -> f64 {
    let rows: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let a = x[i].words();
            x[i + 1..]
                .iter()
                .map(|b| tanimoto_words(a, b.words()))
                .sum()
        })
        .collect();
    x.len() as f64 + 2.0 * rows.iter().sum::<f64>()
}

fn cross_sum(x: &[Fingerprint], z: &[Fingerprint]) -> f64 {
    let rows: Vec<f64> = x
        .par_iter()
        .map(|a| {
            z.iter()
                .map(|b| tanimoto_words(a.words(), b.words()))
                .sum()
        })
        .collect();
    rows.iter().sum()
}

pub fn pc_ratio(records: &[CompoundRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InsufficientData(
            "preferred-class ratio of an empty set".into(),
        ));
    }
    Ok(records.iter().filter(|r| r.label).count() as f64 / records.len() as f64)
}

/// Positive when the preferred class is depleted from `train` to `test`.
pub fn label_shift(train: &[CompoundRecord], test: &[CompoundRecord]) -> Result<f64> {
    Ok(pc_ratio(train)? - pc_ratio(test)?)
}

pub fn shift_report(train: &[CompoundRecord], test: &[CompoundRecord]) -> Result<ShiftReport> {
    let label_shift = label_shift(train, test)?;
    let x: Vec<Fingerprint> = train.iter().map(|r| r.fp.clone()).collect();
    let z: Vec<Fingerprint> = test.iter().map(|r| r.fp.clone()).collect();
    let Mmd { mmd_sq, mmd_norm } = mmd(&x, &z)?;
    Ok(ShiftReport {
        label_shift,
        mmd_sq,
        mmd_norm,
        n_train: train.len(),
        n_test: test.len(),
    })
}
