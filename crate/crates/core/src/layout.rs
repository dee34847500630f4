//! Index bookkeeping shared by both branches: unordered pair numbering,
//! per-type node groups and row normalization.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::DetectionGraph;

/// Index of the unordered pair `{a, b}`, `a != b`, among `n` nodes.
#[inline]
pub fn pair_index(n: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub n: usize,
    pub types: Vec<usize>,
    /// `(a, b)` with `a < b` for every pair index.
    pub pairs: Vec<(usize, usize)>,
    /// Nodes per slot, in node order, with the slot's joint type.
    pub slots: Vec<(usize, Vec<usize>)>,
}

impl Layout {
    pub fn new(graph: &DetectionGraph) -> Self {
        let n = graph.len();
        let types = graph.types();
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for a in 0..n {
            for b in a + 1..n {
                pairs.push((a, b));
            }
        }
        let mut by_type: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &t) in types.iter().enumerate() {
            by_type.entry(t).or_default().push(i);
        }
        let slots: Vec<(usize, Vec<usize>)> = by_type.into_iter().collect();
        Layout { n, types, pairs, slots }
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, a: usize, b: usize) -> usize {
        pair_index(self.n, a, b)
    }

    /// Row-wise, per-type L1 normalization of the symmetric pair values
    /// `prob`. Returns the dense `n x n` normalized matrix (diagonal zero)
    /// and the per-(row, slot) sums used.
    pub fn normalize(&self, prob: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let ns = self.slots.len();
        let mut sums = vec![0.0; n * ns];
        let mut norm = vec![0.0; n * n];
        for m in 0..n {
            for (s, (_, nodes)) in self.slots.iter().enumerate() {
                let mut sum = 0.0;
                for &k in nodes {
                    if k != m {
                        sum += prob[self.pair(m, k)];
                    }
                }
                sums[m * ns + s] = sum;
                if sum > 0.0 {
                    for &k in nodes {
                        if k != m {
                            norm[m * n + k] = prob[self.pair(m, k)] / sum;
                        }
                    }
                }
            }
        }
        (norm, sums)
    }

    /// Backward of [`Layout::normalize`]: given `dnorm` (dense `n x n`),
    /// accumulates the gradient with respect to each pair value into
    /// `dprob`.
    pub fn normalize_backward(&self, norm: &[f64], sums: &[f64], dnorm: &[f64], dprob: &mut [f64]) {
        let n = self.n;
        let ns = self.slots.len();
        for m in 0..n {
            for (s, (_, nodes)) in self.slots.iter().enumerate() {
                let sum = sums[m * ns + s];
                if sum <= 0.0 {
                    continue;
                }
                let mut dot = 0.0;
                for &k in nodes {
                    if k != m {
                        dot += dnorm[m * n + k] * norm[m * n + k];
                    }
                }
                for &k in nodes {
                    if k != m {
                        dprob[self.pair(m, k)] += (dnorm[m * n + k] - dot) / sum;
                    }
                }
            }
        }
    }
}
