mod common;

use std::collections::BTreeMap;

use common::*;
use posegroup_core::metrics::*;
use posegroup_core::partition::PoseInstance;
use posegroup_core::synth::{render_detections, sample_scene, GenConfig, NoiseConfig};
use posegroup_core::{assign_detections, build_graph, label_edges, EdgeLabels, SkeletonSpec, Target};
use proptest::prelude::*;

#[test]
fn edge_accuracy_counts_unmasked_edges() {
    let mut labels = EdgeLabels::new_masked(3);
    labels.set(0, 1, Target::One, true);
    labels.set(0, 2, Target::Zero, true);
    labels.set(1, 2, Target::One, true);
    let exact = matrix(3, |i, k| if labels.target(i, k) == Target::One { 1.0 } else { 0.0 });
    assert_eq!(edge_accuracy(&exact, &labels, 0.5), Some(1.0));
    let two_right = matrix(3, |_, _| 0.9);
    assert!((edge_accuracy(&two_right, &labels, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(edge_accuracy(&exact, &EdgeLabels::new_masked(3), 0.5), None);

    let mut ones = EdgeLabels::new_masked(4);
    for m in 0..4 {
        for n in m + 1..4 {
            ones.set(m, n, Target::One, true);
        }
    }
    assert_eq!(edge_accuracy(&matrix(4, |_, _| 0.5 - 1e-9), &ones, 0.5), Some(0.0));
}

struct Fixture {
    scene: posegroup_core::Scene,
    graph: posegroup_core::DetectionGraph,
    labels: EdgeLabels,
    assignment: posegroup_core::Assignment,
}

fn fixture(persons: usize, seed: u64) -> Fixture {
    let spec = SkeletonSpec::coco17();
    let cfg = GenConfig { persons: (persons, persons), dropout: 0.0, outlier_rate: 0.0, ..GenConfig::default() };
    let scene = sample_scene(&cfg, &spec, seed).unwrap();
    let dets = render_detections(&scene, &NoiseConfig::noiseless(), seed).unwrap();
    let assignment = assign_detections(&dets, &scene, &spec, 0.5).unwrap();
    let graph = build_graph(&dets).unwrap();
    let labels = label_edges(&graph, &assignment, &scene).unwrap();
    Fixture { scene, graph, labels, assignment }
}

fn ground_truth_poses(f: &Fixture) -> Vec<PoseInstance> {
    (0..f.scene.persons.len())
        .map(|p| PoseInstance {
            joints: f.assignment.members(p).map(|id| (f.graph.node(f.graph.index_of_id(id).unwrap()).keypoint.type_index, id)).collect(),
            score: 1.0,
            cluster: p,
        })
        .collect()
}

#[test]
fn perfect_grouping_scores_one_everywhere() {
    let f = fixture(3, 5);
    let c = grouping_counts(&ground_truth_poses(&f), &f.graph, &f.labels, &f.assignment, &f.scene);
    assert_eq!(c.pair_precision(), Some(1.0));
    assert_eq!(c.pair_recall(), Some(1.0));
    assert_eq!(c.perfect_instance_rate(), Some(1.0));
    assert_eq!(c.persons, 3);
}

#[test]
fn merging_two_equal_persons_gives_intra_pair_precision() {
    let f = fixture(2, 6);
    // 17 + 17 detections: 2 * C(17, 2) = 272 same-person pairs out of C(34, 2) = 561
    assert_eq!(f.graph.len(), 34);
    // keyed by id so one pose can hold every node
    let all: Vec<PoseInstance> = vec![PoseInstance {
        joints: f.graph.nodes().iter().map(|d| (d.id + 1000, d.id)).collect(),
        score: 0.0,
        cluster: 0,
    }];
    let c = grouping_counts(&all, &f.graph, &f.labels, &f.assignment, &f.scene);
    assert_eq!(c.pair_recall(), Some(1.0));
    assert!((c.pair_precision().unwrap() - 272.0 / 561.0).abs() < 1e-15);
    assert_eq!(c.perfect_instances, 0);
}

#[test]
fn empty_pose_set_has_zero_recall_and_no_precision() {
    let f = fixture(2, 7);
    let c = grouping_counts(&[], &f.graph, &f.labels, &f.assignment, &f.scene);
    assert_eq!(c.pair_recall(), Some(0.0));
    assert_eq!(c.pair_precision(), None);
    assert_eq!(c.perfect_instance_rate(), Some(0.0));
}

proptest! {
    #[test]
    fn pair_counts_match_brute_force(seed in 0u64..10_000, cuts in proptest::collection::vec(0usize..4, 20)) {
        let spec = SkeletonSpec::coco17();
        let cfg = GenConfig { persons: (1, 2), ..GenConfig::default() };
        let scene = sample_scene(&cfg, &spec, seed).unwrap();
        let dets = render_detections(&scene, &NoiseConfig::default(), seed).unwrap();
        prop_assume!(!dets.is_empty());
        let asg = assign_detections(&dets, &scene, &spec, 0.5).unwrap();
        let mut g = build_graph(&dets).unwrap();
        if g.len() > 20 {
            let keep: Vec<_> = g.nodes()[..20].to_vec();
            g = posegroup_core::DetectionGraph::from_nodes(keep, g.appearance_dim()).unwrap();
        }
        let labels = label_edges(&g, &posegroup_core::Assignment {
            det_to_gt: asg.det_to_gt.iter().filter(|(id, _)| g.index_of_id(**id).is_some()).map(|(k, v)| (*k, *v)).collect(),
        }, &scene).unwrap();
        // arbitrary poses: node i goes to bucket cuts[i], at most one per type
        let mut buckets: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); 4];
        let mut extra = Vec::new();
        for (i, d) in g.nodes().iter().enumerate() {
            let b = &mut buckets[cuts[i]];
            if b.contains_key(&d.keypoint.type_index) {
                extra.push(BTreeMap::from([(d.keypoint.type_index, d.id)]));
            } else {
                b.insert(d.keypoint.type_index, d.id);
            }
        }
        let poses: Vec<PoseInstance> = buckets.into_iter().chain(extra).filter(|b| !b.is_empty())
            .enumerate().map(|(c, joints)| PoseInstance { joints, score: 0.0, cluster: c }).collect();
        let pose_of = |id: usize| poses.iter().position(|p| p.joints.values().any(|&x| x == id));

        let (mut tp, mut fp, mut fnn) = (0, 0, 0);
        for a in 0..g.len() {
            for b in 0..g.len() {
                if a >= b || !labels.mask(a, b) {
                    continue;
                }
                let pred = pose_of(g.node(a).id) == pose_of(g.node(b).id);
                let gt = labels.target(a, b) == Target::One;
                match (pred, gt) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fnn += 1,
                    _ => {}
                }
            }
        }
        let c = grouping_counts(&poses, &g, &labels, &asg, &scene);
        prop_assert_eq!((c.true_pairs, c.false_pairs, c.missed_pairs), (tp, fp, fnn));
    }
}
