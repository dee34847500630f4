#![allow(dead_code)]

use posegroup_core::geonet::AffinityMatrix;
use posegroup_core::{Branches, DetectionGraph, EdgeLabels, Keypoint, ModelConfig, ModelParams, SkeletonSpec, Target};
use posegroup_core::{Detection, DetectionSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn det(id: usize, x: f64, y: f64, t: usize, appearance: Vec<f64>) -> Detection {
    Detection { id, keypoint: Keypoint::new(x, y, t), confidence: 1.0, appearance }
}

/// Random detections with `n` nodes over `j` types, built in canonical order.
pub fn random_graph(n: usize, j: usize, dim: usize, seed: u64) -> DetectionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dets = (0..n)
        .map(|i| {
            let app = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            det(i, rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0..j), app)
        })
        .collect();
    posegroup_core::build_graph(&DetectionSet::new(dets, dim).unwrap()).unwrap()
}

/// Random labels: each edge is masked with probability 0.3, otherwise 0 or 1.
pub fn random_labels(n: usize, seed: u64) -> EdgeLabels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = EdgeLabels::new_masked(n);
    for m in 0..n {
        for k in m + 1..n {
            if rng.random_bool(0.3) {
                let t = if rng.random_bool(0.5) { Target::One } else { Target::Zero };
                labels.set(m, k, t, false);
            } else {
                let t = if rng.random_bool(0.5) { Target::One } else { Target::Zero };
                labels.set(m, k, t, true);
            }
        }
    }
    labels
}

pub fn small_model(j: usize, hidden: usize, branches: Branches, seed: u64) -> ModelParams {
    let spec = SkeletonSpec::generic(j, 0.8).unwrap();
    let config = ModelConfig { hidden, branches, ..ModelConfig::default() };
    ModelParams::init(config, &spec, seed).unwrap()
}

pub fn max_abs_diff(a: &AffinityMatrix, b: &AffinityMatrix) -> f64 {
    a.prob.iter().zip(&b.prob).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `out[i][k] = a[perm[i]][perm[k]]`.
pub fn permute(a: &AffinityMatrix, perm: &[usize]) -> AffinityMatrix {
    let n = a.n;
    let mut prob = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            prob[i * n + k] = a.get(perm[i], perm[k]);
        }
    }
    AffinityMatrix::from_probs(n, prob)
}

pub fn matrix(n: usize, f: impl Fn(usize, usize) -> f64) -> AffinityMatrix {
    let mut prob = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            if i != k {
                prob[i * n + k] = f(i, k);
            }
        }
    }
    AffinityMatrix::from_probs(n, prob)
}
