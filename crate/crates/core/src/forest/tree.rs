use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForestConfig;
use crate::dataio::Fingerprint;
use crate::error::{Error, Result};
use crate::nn::Samples;
use crate::rng::StreamRng;

/// Feature value marking a leaf.
pub const LEAF: u32 = u32::MAX;

/// Binary tree in parallel node arrays. Node 0 is the root; at an internal
/// node samples without the bit go `left` and samples with it go `right`.
/// `counts` holds the (negative, positive) training counts reaching each
/// node, bootstrap duplicates included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<u32>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub counts: Vec<[u32; 2]>,
}

impl Tree {
    fn push(&mut self, counts: [u32; 2]) -> usize {
        self.feature.push(LEAF);
        self.left.push(0);
        self.right.push(0);
        self.counts.push(counts);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf(&self, x: &Fingerprint) -> usize {
        let mut node = 0;
        while self.feature[node] != LEAF {
            node = if x.get(self.feature[node] as usize) {
                self.right[node]
            } else {
                self.left[node]
            } as usize;
        }
        node
    }

    /// Leaf majority is the preferred class; ties vote against it.
    pub fn votes_preferred(&self, x: &Fingerprint) -> bool {
        let [n0, n1] = self.counts[self.leaf(x)];
        n1 > n0
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((node, d)) = stack.pop() {
            max = max.max(d);
            if self.feature[node] != LEAF {
                stack.push((self.left[node] as usize, d + 1));
                stack.push((self.right[node] as usize, d + 1));
            }
        }
        max
    }

    pub(crate) fn check(&self, n_features: usize, max_depth: usize) -> Result<()> {
        let n = self.feature.len();
        if n == 0 || self.left.len() != n || self.right.len() != n || self.counts.len() != n {
            return Err(Error::Contract("tree node arrays have inconsistent lengths".into()));
        }
        for node in 0..n {
            let f = self.feature[node];
            if f == LEAF {
                continue;
            }
            let (l, r) = (self.left[node] as usize, self.right[node] as usize);
            if f as usize >= n_features || l <= node || r <= node || l >= n || r >= n {
                return Err(Error::Contract(format!("tree node {node} is malformed")));
            }
            let (cl, cr) = (self.counts[l], self.counts[r]);
            if [cl[0] + cr[0], cl[1] + cr[1]] != self.counts[node] {
                return Err(Error::Contract(format!("tree node {node} counts do not add up")));
            }
        }
        if self.depth() > max_depth {
            return Err(Error::Contract("tree deeper than max_depth".into()));
        }
        Ok(())
    }
}

/// A candidate split: class counts on the absent and present sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub feature: usize,
    pub absent: [u64; 2],
    pub present: [u64; 2],
}

impl Split {
    /// `sum over sides of (c0^2 + c1^2) / n_side` as a fraction; larger means
    /// lower weighted Gini impurity.
    fn purity(&self) -> (u128, u128) {
        let sq = |c: [u64; 2]| u128::from(c[0]) * u128::from(c[0]) + u128::from(c[1]) * u128::from(c[1]);
        let nl = u128::from(self.absent[0] + self.absent[1]);
        let nr = u128::from(self.present[0] + self.present[1]);
        (sq(self.absent) * nr + sq(self.present) * nl, nl * nr)
    }

    fn beats(&self, other: &Split) -> bool {
        let (x1, d1) = self.purity();
        let (x2, d2) = other.purity();
        let (a, b) = (x1 * d2, x2 * d1);
        a > b || (a == b && self.feature < other.feature)
    }

    /// Strictly positive decrease of weighted Gini impurity.
    fn has_gain(&self) -> bool {
        let c = [self.absent[0] + self.present[0], self.absent[1] + self.present[1]];
        let n = u128::from(c[0] + c[1]);
        let parent = u128::from(c[0]) * u128::from(c[0]) + u128::from(c[1]) * u128::from(c[1]);
        let (x, d) = self.purity();
        x * n > parent * d
    }
}

fn pick(candidates: impl Iterator<Item = Split>, min_samples_leaf: u64) -> Option<Split> {
    candidates
        .filter(|s| {
            s.absent[0] + s.absent[1] >= min_samples_leaf && s.present[0] + s.present[1] >= min_samples_leaf
        })
        .filter(Split::has_gain)
        .fold(None, |best: Option<Split>, s| match best {
            Some(b) if !s.beats(&b) => Some(b),
            _ => Some(s),
        })
}

/// Best Gini split of the samples `idx` (duplicates allowed) among
/// `features`, ties going to the lowest bit index. `None` when no split
/// lowers the impurity.
pub fn best_split(
    fps: &[&Fingerprint],
    labels: &[bool],
    idx: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<Split> {
    let mut total = [0u64; 2];
    for &i in idx {
        total[usize::from(labels[i])] += 1;
    }
    let candidates = features.iter().map(|&f| {
        let mut present = [0u64; 2];
        for &i in idx {
            if fps[i].get(f) {
                present[usize::from(labels[i])] += 1;
            }
        }
        Split {
            feature: f,
            absent: [total[0] - present[0], total[1] - present[1]],
            present,
        }
    });
    pick(candidates, min_samples_leaf as u64)
}

/// Grows one tree on a bootstrap resample of `train`.
pub fn grow_tree(train: &Samples<'_>, config: &ForestConfig, rng: &mut StreamRng) -> Tree {
    let n = train.len();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    grow_on(train, idx, config, rng)
}

/// Per-feature (present, present-positive) counts over a node's samples,
/// kept dense and cleared through the list of touched features.
struct Counter {
    present: Vec<u32>,
    positive: Vec<u32>,
    touched: Vec<usize>,
}

pub(crate) fn grow_on(train: &Samples<'_>, root_idx: Vec<usize>, config: &ForestConfig, rng: &mut StreamRng) -> Tree {
    let d = train.input_dim().unwrap_or(0);
    let k = config.max_features.resolve(d);
    let min_leaf = config.min_samples_leaf;
    let mut counter = Counter {
        present: vec![0; d],
        positive: vec![0; d],
        touched: Vec::new(),
    };
    let mut tree = Tree {
        feature: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
        counts: Vec::new(),
    };
    let class_counts = |idx: &[usize]| {
        let n1 = idx.iter().filter(|&&i| train.labels[i]).count() as u32;
        [idx.len() as u32 - n1, n1]
    };
    let root = tree.push(class_counts(&root_idx));
    let mut stack = vec![(root, root_idx, 0usize)];
    while let Some((node, idx, depth)) = stack.pop() {
        let [n0, n1] = tree.counts[node];
        if n0 == 0 || n1 == 0 || depth >= config.max_depth || idx.len() < 2 * min_leaf {
            continue;
        }
        for &i in &idx {
            let y = u32::from(train.labels[i]);
            for f in train.fps[i].ones() {
                if counter.present[f] == 0 {
                    counter.touched.push(f);
                }
                counter.present[f] += 1;
                counter.positive[f] += y;
            }
        }
        // a feature is non-constant when some but not all samples carry it;
        // drawing k of them in random order is equivalent to scanning a random
        // permutation of all features until k non-constant ones are seen
        counter.touched.sort_unstable();
        let n = idx.len() as u32;
        let mut open: Vec<usize> = counter
            .touched
            .iter()
            .copied()
            .filter(|&f| counter.present[f] < n)
            .collect();
        let take = k.min(open.len());
        for i in 0..take {
            let j = rng.random_range(i..open.len());
            open.swap(i, j);
        }
        let candidates = open[..take].iter().map(|&f| {
            let p = [
                u64::from(counter.present[f] - counter.positive[f]),
                u64::from(counter.positive[f]),
            ];
            Split {
                feature: f,
                absent: [u64::from(n0) - p[0], u64::from(n1) - p[1]],
                present: p,
            }
        });
        let split = pick(candidates, min_leaf as u64);
        for &f in &counter.touched {
            counter.present[f] = 0;
            counter.positive[f] = 0;
        }
        counter.touched.clear();
        let Some(split) = split else { continue };

        let (with, without): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| train.fps[i].get(split.feature));
        let l = tree.push([split.absent[0] as u32, split.absent[1] as u32]);
        let r = tree.push([split.present[0] as u32, split.present[1] as u32]);
        tree.feature[node] = split.feature as u32;
        tree.left[node] = l as u32;
        tree.right[node] = r as u32;
        stack.push((r, with, depth + 1));
        stack.push((l, without, depth + 1));
    }
    tree
}
