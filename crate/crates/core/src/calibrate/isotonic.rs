//! Weighted isotonic regression by pool-adjacent-violators.

use crate::error::{Error, Result};

/// A run of pooled points: total weight and weighted target sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Block {
    pub weight: f64,
    pub weighted_sum: f64,
    /// Number of input points (after tie merging) covered by the block.
    pub len: usize,
}

impl Block {
    pub fn new(weight: f64, target: f64) -> Self {
        Self {
            weight,
            weighted_sum: weight * target,
            len: 1,
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.weighted_sum / self.weight
    }

    #[inline]
    fn absorb(&mut self, other: &Block) {
        self.weight += other.weight;
        self.weighted_sum += other.weighted_sum;
        self.len += other.len;
    }
}

/// Left-to-right PAVA over already tie-merged blocks.
pub(crate) fn pool(blocks: impl IntoIterator<Item = Block>) -> Vec<Block> {
    let mut stack: Vec<Block> = Vec::new();
    for b in blocks {
        stack.push(b);
        while stack.len() >= 2 {
            let n = stack.len();
            if stack[n - 2].value() > stack[n - 1].value() {
                let top = stack.pop().expect("len >= 2");
                stack[n - 2].absorb(&top);
            } else {
                break;
            }
        }
    }
    stack
}

/// Non-decreasing step function fitted by [`pava`].
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicFit {
    /// Smallest input score of each block, ascending.
    starts: Vec<f64>,
    values: Vec<f64>,
    /// Fitted value for every input point, in input order.
    fitted: Vec<f64>,
}

impl IsotonicFit {
    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    pub fn block_values(&self) -> &[f64] {
        &self.values
    }

    /// Value of the last block starting at or below `score`; scores below
    /// the first block clamp to it.
    pub fn eval(&self, score: f64) -> f64 {
        let k = self.starts.partition_point(|&s| s <= score);
        self.values[k.saturating_sub(1)]
    }
}

/// Least-squares non-decreasing fit of `(score, target)` pairs sorted by
/// score. Equal scores are merged into one weighted point first.
pub fn pava(pairs: &[(f64, f64)], weights: &[f64]) -> Result<IsotonicFit> {
    if pairs.len() != weights.len() {
        return Err(Error::Dimension {
            expected: pairs.len(),
            actual: weights.len(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("isotonic fit of no points".into()));
    }
    if let Some(w) = pairs.windows(2).find(|w| !(w[0].0 <= w[1].0)) {
        return Err(Error::Contract(format!(
            "PAVA input not sorted by score ({} before {})",
            w[0].0, w[1].0
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Contract(format!("PAVA weight {w} is not positive")));
    }

    // tie merge: one block per distinct score, remembering point counts
    let mut tie_blocks: Vec<Block> = Vec::new();
    let mut tie_scores: Vec<f64> = Vec::new();
    let mut tie_sizes: Vec<usize> = Vec::new();
    for (&(s, y), &w) in pairs.iter().zip(weights) {
        match tie_scores.last() {
            Some(&last) if last == s => {
                let b = tie_blocks.last_mut().expect("parallel vecs");
                b.weight += w;
                b.weighted_sum += w * y;
                *tie_sizes.last_mut().expect("parallel vecs") += 1;
            }
            _ => {
                tie_blocks.push(Block::new(w, y));
                tie_scores.push(s);
                tie_sizes.push(1);
            }
        }
    }

    let pooled = pool(tie_blocks);
    let mut starts = Vec::with_capacity(pooled.len());
    let mut values = Vec::with_capacity(pooled.len());
    let mut fitted = Vec::with_capacity(pairs.len());
    let mut tie_idx = 0;
    for b in &pooled {
        starts.push(tie_scores[tie_idx]);
        values.push(b.value());
        for _ in 0..b.len {
            fitted.extend(std::iter::repeat_n(b.value(), tie_sizes[tie_idx]));
            tie_idx += 1;
        }
    }
    Ok(IsotonicFit {
        starts,
        values,
        fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(targets: &[f64]) -> IsotonicFit {
        let pairs: Vec<(f64, f64)> = targets.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect();
        pava(&pairs, &vec![1.0; targets.len()]).unwrap()
    }

    /// Exhaustive oracle: the monotone least-squares solution is constant on
    /// the blocks of some partition into consecutive runs, with each block
    /// at its weighted mean. Enumerate all 2^(n-1) partitions and keep the
    /// best monotone one.
    fn brute_isotonic(y: &[f64], w: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << (n - 1)) {
            let mut fit = vec![0.0; n];
            let mut start = 0;
            for end in 1..=n {
                if end == n || mask & (1 << (end - 1)) != 0 {
                    let sw: f64 = w[start..end].iter().sum();
                    let swy: f64 = (start..end).map(|i| w[i] * y[i]).sum();
                    fit[start..end].iter_mut().for_each(|f| *f = swy / sw);
                    start = end;
                }
            }
            if fit.windows(2).any(|p| p[0] > p[1] + 1e-15) {
                continue;
            }
            let sse: f64 = (0..n).map(|i| w[i] * (y[i] - fit[i]).powi(2)).sum();
            if best.as_ref().is_none_or(|(b, _)| sse < *b - 1e-15) {
                best = Some((sse, fit));
            }
        }
        best.expect("the single-block partition is monotone").1
    }

    #[test]
    fn monotone_targets_unchanged() {
        assert_eq!(unit(&[0.0, 0.2, 0.2, 0.9]).fitted(), [0.0, 0.2, 0.2, 0.9]);
    }

    #[test]
    fn alternating_targets() {
        assert_eq!(unit(&[0.0, 1.0, 0.0, 1.0]).fitted(), [0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn constant_targets() {
        let fit = unit(&[0.3; 5]);
        assert!(fit.fitted().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn ties_are_pre_merged() {
        let pairs = [(1.0, 1.0), (1.0, 0.0), (2.0, 0.0), (3.0, 1.0)];
        let fit = pava(&pairs, &[1.0; 4]).unwrap();
        // (1.0: mean 0.5) > (2.0: 0) pools to 1/3 across three points
        let third = 1.0 / 3.0;
        assert_eq!(fit.fitted(), [third, third, third, 1.0]);
    }

    #[test]
    fn eval_steps_and_clamps() {
        let pairs = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.0), (3.0, 1.0)];
        let fit = pava(&pairs, &[1.0; 4]).unwrap();
        assert_eq!(fit.eval(-5.0), 0.0);
        assert_eq!(fit.eval(0.5), 0.0);
        assert_eq!(fit.eval(1.0), 0.5);
        assert_eq!(fit.eval(2.9), 0.5);
        assert_eq!(fit.eval(3.0), 1.0);
        assert_eq!(fit.eval(99.0), 1.0);
    }

    #[test]
    fn contract_violations() {
        assert!(matches!(
            pava(&[(1.0, 0.0), (0.0, 1.0)], &[1.0, 1.0]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            pava(&[(0.0, 0.0), (1.0, 1.0)], &[1.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn exhaustive_grid_up_to_eight_points() {
        // every binary target pattern and a few weight patterns
        for n in 1..=8usize {
            for pattern in 0u32..(1 << n) {
                let y: Vec<f64> = (0..n).map(|i| f64::from((pattern >> i) & 1)).collect();
                for wseed in 0..3u32 {
                    let w: Vec<f64> = (0..n).map(|i| 1.0 + f64::from((i as u32 * 7 + wseed * 3) % 4)).collect();
                    let pairs: Vec<(f64, f64)> = y.iter().enumerate().map(|(i, &t)| (i as f64, t)).collect();
                    let fit = pava(&pairs, &w).unwrap();
                    let oracle = brute_isotonic(&y, &w);
                    for (a, b) in fit.fitted().iter().zip(&oracle) {
                        assert!((a - b).abs() < 1e-10, "y={y:?} w={w:?}: {:?} vs {oracle:?}", fit.fitted());
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn output_is_non_decreasing_and_matches_oracle(
            y in proptest::collection::vec(0.0f64..1.0, 1..=8),
            w in proptest::collection::vec(0.1f64..5.0, 8),
        ) {
            let w = &w[..y.len()];
            let pairs: Vec<(f64, f64)> = y.iter().enumerate().map(|(i, &t)| (i as f64, t)).collect();
            let fit = pava(&pairs, w).unwrap();
            prop_assert!(fit.fitted().windows(2).all(|p| p[0] <= p[1]));
            let oracle = brute_isotonic(&y, w);
            for (a, b) in fit.fitted().iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
