//! From affinities to person instances.
//!
//! The fused affinity matrix is binarized, the number of clusters is read off
//! as the count of near-zero eigenvalues of the unnormalized Laplacian, and
//! k-means on the corresponding eigenvectors partitions the nodes. Each
//! cluster is then peeled into poses that hold at most one node per joint
//! type and in which no selected node could be swapped for a same-type node
//! with higher average affinity to the rest of the pose.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geonet::AffinityMatrix;
use crate::graph::DetectionGraph;

/// Symmetric 0/1 adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryAdjacency {
    n: usize,
    adj: Vec<bool>,
}

impl BinaryAdjacency {
    pub fn empty(n: usize) -> Self {
        BinaryAdjacency { n, adj: vec![false; n * n] }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut a = Self::empty(n);
        for (u, v) in edges {
            if u != v {
                a.adj[u * n + v] = true;
                a.adj[v * n + u] = true;
            }
        }
        a
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, m: usize, n: usize) -> bool {
        self.adj[m * self.n + n]
    }

    fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                (0..n).filter(|&k| self.get(i, k)).count() as f64
            } else if self.get(i, j) {
                -1.0
            } else {
                0.0
            }
        })
    }
}

/// Thresholds off-diagonal entries; values equal to `tau` count as edges.
pub fn binarize(a: &AffinityMatrix, tau: f64) -> BinaryAdjacency {
    let n = a.n;
    let mut out = BinaryAdjacency::empty(n);
    for m in 0..n {
        for k in 0..n {
            out.adj[m * n + k] = m != k && a.get(m, k) >= tau;
        }
    }
    out
}

/// Eigenvalues ascending, with eigenvectors as matching columns.
fn spectrum(adj: &BinaryAdjacency) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = adj.n;
    let eig = SymmetricEigen::try_new(adj.laplacian(), f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::numeric("Laplacian eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

fn count_small(values: &[f64], epsilon: f64) -> usize {
    let largest = values.iter().fold(0.0f64, |a, &b| a.max(b));
    let cut = epsilon * largest.max(1.0);
    values.iter().filter(|&&v| v < cut).count().max(1)
}

/// Number of Laplacian eigenvalues below `epsilon * max(1, largest)`.
pub fn estimate_cluster_count(adj: &BinaryAdjacency, epsilon: f64) -> Result<usize> {
    if adj.n == 0 {
        return Err(Error::EmptyInput("adjacency has no nodes".into()));
    }
    let (values, _) = spectrum(adj)?;
    Ok(count_small(&values, epsilon))
}

/// k-means settings for [`spectral_partition`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { restarts: 10, max_iterations: 300, seed: 0 }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means over `rows` points of dimension `dim`, with farthest-point
/// seeding from a random first center. The lowest-inertia restart wins.
/// Labels are renumbered by first occurrence.
pub fn kmeans(points: &[f64], dim: usize, k: usize, options: &KMeansOptions) -> Vec<usize> {
    let rows = if dim == 0 { 0 } else { points.len() / dim };
    if rows == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, rows);
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..options.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(r as u64));
        let mut centers: Vec<f64> = point(rng.random_range(0..rows)).to_vec();
        while centers.len() < k * dim {
            let c = centers.len() / dim;
            let far = (0..rows)
                .map(|i| {
                    let d = (0..c).map(|j| dist2(point(i), &centers[j * dim..(j + 1) * dim])).fold(f64::INFINITY, f64::min);
                    (d, i)
                })
                .fold((-1.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
            centers.extend_from_slice(point(far.1));
        }
        let mut labels = vec![usize::MAX; rows];
        for _ in 0..options.max_iterations {
            let mut changed = false;
            for i in 0..rows {
                let mut bl = 0;
                let mut bd = f64::INFINITY;
                for j in 0..k {
                    let d = dist2(point(i), &centers[j * dim..(j + 1) * dim]);
                    if d < bd {
                        bd = d;
                        bl = j;
                    }
                }
                if labels[i] != bl {
                    labels[i] = bl;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for i in 0..rows {
                counts[labels[i]] += 1;
                for (s, x) in sums[labels[i] * dim..(labels[i] + 1) * dim].iter_mut().zip(point(i)) {
                    *s += x;
                }
            }
            for j in 0..k {
                if counts[j] == 0 {
                    // reseed an empty cluster at the point worst served by its center
                    let far = (0..rows)
                        .map(|i| (dist2(point(i), &centers[labels[i] * dim..(labels[i] + 1) * dim]), i))
                        .fold((-1.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
                    centers[j * dim..(j + 1) * dim].copy_from_slice(point(far.1));
                } else {
                    for d in 0..dim {
                        centers[j * dim + d] = sums[j * dim + d] / counts[j] as f64;
                    }
                }
            }
        }
        let inertia: f64 = (0..rows).map(|i| dist2(point(i), &centers[labels[i] * dim..(labels[i] + 1) * dim])).sum();
        if best.as_ref().map(|(b, _)| inertia < *b).unwrap_or(true) {
            best = Some((inertia, labels));
        }
    }
    let labels = best.map(|(_, l)| l).unwrap_or_default();
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = remap.len();
            *remap.entry(*l).or_insert(next)
        })
        .collect()
}

/// Clusters nodes by k-means on the eigenvectors of the `k` smallest
/// Laplacian eigenvalues.
pub fn spectral_partition(adj: &BinaryAdjacency, k: usize, options: &KMeansOptions) -> Result<Vec<usize>> {
    let n = adj.n;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cluster count {k} outside [1, {n}]")));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let (_, vectors) = spectrum(adj)?;
    let mut points = Vec::with_capacity(n * k);
    for r in 0..n {
        for c in 0..k {
            points.push(vectors[(r, c)]);
        }
    }
    Ok(kmeans(&points, k, k, options))
}

/// One person instance: joint type to detection id.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoseInstance {
    pub joints: BTreeMap<usize, usize>,
    /// Mean affinity over selected pairs; zero for single-joint poses.
    pub score: f64,
    /// Cluster the pose was extracted from.
    pub cluster: usize,
}

impl PoseInstance {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

fn mean_affinity(a: &AffinityMatrix, node: usize, others: impl Iterator<Item = usize>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for o in others {
        if o != node {
            sum += a.get(node, o);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Selects one pose from `pool` (node indices): per type the node of highest
/// mean affinity to the pool, then swaps until no same-type node has a
/// strictly higher average affinity to the other selected nodes. Returns the
/// selected node per type.
pub fn select_pose(pool: &[usize], affinity: &AffinityMatrix, graph: &DetectionGraph) -> BTreeMap<usize, usize> {
    let mut by_type: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in pool {
        by_type.entry(graph.type_of(i)).or_default().push(i);
    }
    let mut selected: BTreeMap<usize, usize> = BTreeMap::new();
    for (&t, cands) in &by_type {
        let mut best = cands[0];
        let mut best_score = mean_affinity(affinity, best, pool.iter().copied());
        for &c in &cands[1..] {
            let s = mean_affinity(affinity, c, pool.iter().copied());
            if s > best_score {
                best = c;
                best_score = s;
            }
        }
        selected.insert(t, best);
    }
    loop {
        let mut changed = false;
        for (&t, cands) in &by_type {
            let incumbent = selected[&t];
            let others: Vec<usize> = selected.values().copied().filter(|&s| s != incumbent).collect();
            if others.is_empty() {
                continue;
            }
            let mut best = incumbent;
            let mut best_score = mean_affinity(affinity, incumbent, others.iter().copied());
            for &c in cands {
                if c == incumbent {
                    continue;
                }
                let s = mean_affinity(affinity, c, others.iter().copied());
                if s > best_score {
                    best = c;
                    best_score = s;
                }
            }
            if best != incumbent {
                selected.insert(t, best);
                changed = true;
            }
        }
        if !changed {
            return selected;
        }
    }
}

/// Peels a cluster into poses until every node is used. Poses are returned
/// in extraction order with `cluster` set to `cluster_id`.
pub fn extract_poses(cluster_nodes: &[usize], affinity: &AffinityMatrix, graph: &DetectionGraph, cluster_id: usize) -> Vec<PoseInstance> {
    let mut pool: Vec<usize> = cluster_nodes.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let mut poses = Vec::new();
    while !pool.is_empty() {
        let selected = select_pose(&pool, affinity, graph);
        let nodes: Vec<usize> = selected.values().copied().collect();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for (i, &a) in nodes.iter().enumerate() {
            for &b in &nodes[i + 1..] {
                sum += affinity.get(a, b);
                pairs += 1;
            }
        }
        let score = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
        pool.retain(|i| !nodes.contains(i));
        poses.push(PoseInstance {
            joints: selected.into_iter().map(|(t, i)| (t, graph.node(i).id)).collect(),
            score,
            cluster: cluster_id,
        });
    }
    poses
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupOptions {
    /// Binarization threshold.
    pub threshold: f64,
    /// Relative cut for near-zero Laplacian eigenvalues.
    pub epsilon: f64,
    pub kmeans: KMeansOptions,
}

impl Default for GroupOptions {
    fn default() -> Self {
        GroupOptions { threshold: 0.5, epsilon: 1e-8, kmeans: KMeansOptions::default() }
    }
}

/// Full grouping: binarize, count clusters, partition, extract poses. Every
/// node ends up in exactly one pose.
pub fn group(affinity: &AffinityMatrix, graph: &DetectionGraph, options: &GroupOptions) -> Result<Vec<PoseInstance>> {
    let n = graph.len();
    if affinity.n != n {
        return Err(Error::InvalidArgument(format!("affinity is {0}x{0}, graph has {n} nodes", affinity.n)));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let adj = binarize(affinity, options.threshold);
    let k = estimate_cluster_count(&adj, options.epsilon)?;
    let labels = spectral_partition(&adj, k, &options.kmeans)?;
    let mut poses = Vec::new();
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if !members.is_empty() {
            poses.extend(extract_poses(&members, affinity, graph, c));
        }
    }
    Ok(poses)
}

/// Drops poses with fewer than `min_joints` joints.
pub fn retain_min_joints(poses: &mut Vec<PoseInstance>, min_joints: usize) {
    poses.retain(|p| p.len() >= min_joints);
}
