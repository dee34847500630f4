//! Edge and grouping metrics.
//!
//! Per-scene results are plain counts so they can be summed across scenes;
//! rates are computed from the totals and are `None` when undefined.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::error::Result;
use crate::geonet::AffinityMatrix;
use crate::graph::{assign_detections, build_graph, label_edges, Assignment, DetectionGraph, EdgeLabels, Target};
use crate::model::ModelParams;
use crate::partition::{group, GroupOptions, PoseInstance};
use crate::skeleton::SkeletonSpec;
use crate::synth::{DetectionSet, Scene};

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Correct thresholded predictions over supervised edges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCounts {
    pub correct: usize,
    pub total: usize,
}

impl EdgeCounts {
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.correct, self.total)
    }

    pub fn add(&mut self, other: EdgeCounts) {
        self.correct += other.correct;
        self.total += other.total;
    }
}

pub fn edge_counts(a: &AffinityMatrix, labels: &EdgeLabels, tau: f64) -> EdgeCounts {
    let mut c = EdgeCounts::default();
    for (m, n, t) in labels.supervised() {
        let positive = a.get(m, n) >= tau;
        c.total += 1;
        if positive == (t == Target::One) {
            c.correct += 1;
        }
    }
    c
}

/// Fraction of supervised edges whose thresholded affinity matches the label.
pub fn edge_accuracy(a: &AffinityMatrix, labels: &EdgeLabels, tau: f64) -> Option<f64> {
    edge_counts(a, labels, tau).accuracy()
}

/// Pair-level and instance-level counts for one grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupingCounts {
    pub true_pairs: usize,
    pub false_pairs: usize,
    pub missed_pairs: usize,
    pub perfect_instances: usize,
    pub persons: usize,
}

impl GroupingCounts {
    pub fn add(&mut self, o: GroupingCounts) {
        self.true_pairs += o.true_pairs;
        self.false_pairs += o.false_pairs;
        self.missed_pairs += o.missed_pairs;
        self.perfect_instances += o.perfect_instances;
        self.persons += o.persons;
    }

    pub fn pair_precision(&self) -> Option<f64> {
        ratio(self.true_pairs, self.true_pairs + self.false_pairs)
    }

    pub fn pair_recall(&self) -> Option<f64> {
        ratio(self.true_pairs, self.true_pairs + self.missed_pairs)
    }

    pub fn perfect_instance_rate(&self) -> Option<f64> {
        ratio(self.perfect_instances, self.persons)
    }
}

/// Scores `poses` against ground truth. Pairs are the supervised edges of
/// `labels`; a pair is predicted together when both detections sit in the
/// same pose. Persons are matched to poses one-to-one by descending overlap
/// (then lower person index, then lower pose index), and a person counts as
/// perfect when its matched pose holds exactly its assigned detections.
pub fn grouping_counts(
    poses: &[PoseInstance],
    graph: &DetectionGraph,
    labels: &EdgeLabels,
    assignment: &Assignment,
    scene: &Scene,
) -> GroupingCounts {
    let mut pose_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (p, pose) in poses.iter().enumerate() {
        for &id in pose.joints.values() {
            pose_of.insert(id, p);
        }
    }
    let mut c = GroupingCounts::default();
    for (m, n, t) in labels.supervised() {
        let a = pose_of.get(&graph.node(m).id);
        let together = a.is_some() && a == pose_of.get(&graph.node(n).id);
        match (together, t == Target::One) {
            (true, true) => c.true_pairs += 1,
            (true, false) => c.false_pairs += 1,
            (false, true) => c.missed_pairs += 1,
            (false, false) => {}
        }
    }

    let present: BTreeSet<usize> = graph.nodes().iter().map(|d| d.id).collect();
    let members: Vec<BTreeSet<usize>> = (0..scene.persons.len())
        .map(|p| assignment.members(p).filter(|id| present.contains(id)).collect())
        .collect();
    let pose_sets: Vec<BTreeSet<usize>> = poses.iter().map(|p| p.joints.values().copied().collect()).collect();
    let mut candidates = Vec::new();
    for (p, ip) in members.iter().enumerate() {
        for (q, set) in pose_sets.iter().enumerate() {
            let overlap = ip.intersection(set).count();
            if overlap > 0 {
                candidates.push((core::cmp::Reverse(overlap), p, q));
            }
        }
    }
    candidates.sort();
    let mut person_used = alloc::vec![false; members.len()];
    let mut pose_used = alloc::vec![false; poses.len()];
    for (_, p, q) in candidates {
        if person_used[p] || pose_used[q] {
            continue;
        }
        person_used[p] = true;
        pose_used[q] = true;
        if members[p] == pose_sets[q] {
            c.perfect_instances += 1;
        }
    }
    c.persons = members.iter().filter(|m| !m.is_empty()).count();
    c
}

/// Aggregate evaluation over a scene set.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub scenes: usize,
    pub supervised_edges: usize,
    /// Share of supervised edges labeled same-person.
    pub positive_fraction: Option<f64>,
    /// Accuracy of the model's final affinity.
    pub edge_accuracy: Option<f64>,
    pub geo_accuracy: Option<f64>,
    pub app_accuracy: Option<f64>,
    pub fused_accuracy: Option<f64>,
    pub pair_precision: Option<f64>,
    pub pair_recall: Option<f64>,
    pub perfect_instance_rate: Option<f64>,
    /// Share of scenes with at least one person where every person is perfect.
    pub perfect_scene_rate: Option<f64>,
}

/// Running totals behind an [`EvalReport`].
#[derive(Debug, Clone, Default)]
pub struct Evaluator {
    scenes: usize,
    positives: usize,
    final_edges: EdgeCounts,
    geo: EdgeCounts,
    app: EdgeCounts,
    fused: EdgeCounts,
    grouping: GroupingCounts,
    scored_scenes: usize,
    perfect_scenes: usize,
}

/// Everything computed for one scene.
#[derive(Debug, Clone)]
pub struct SceneResult {
    pub graph: DetectionGraph,
    pub labels: EdgeLabels,
    pub affinity: AffinityMatrix,
    pub poses: Vec<PoseInstance>,
    pub grouping: GroupingCounts,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs the model and grouping on one scene and adds it to the totals.
    /// Returns `None` for scenes without detections.
    pub fn add_scene(
        &mut self,
        model: &ModelParams,
        scene: &Scene,
        dets: &DetectionSet,
        spec: &SkeletonSpec,
        assign_threshold: f64,
        options: &GroupOptions,
    ) -> Result<Option<SceneResult>> {
        self.scenes += 1;
        if dets.is_empty() {
            return Ok(None);
        }
        let assignment = assign_detections(dets, scene, spec, assign_threshold)?;
        let graph = build_graph(dets)?;
        let labels = label_edges(&graph, &assignment, scene)?;
        let out = model.forward(&graph)?;
        let tau = options.threshold;
        let affinity = out.final_affinity().cloned().unwrap_or_else(|| AffinityMatrix::ones(graph.len()));
        self.final_edges.add(edge_counts(&affinity, &labels, tau));
        if let Some(g) = out.geo.last() {
            self.geo.add(edge_counts(g, &labels, tau));
        }
        if let Some(a) = out.app.last() {
            self.app.add(edge_counts(a, &labels, tau));
        }
        if let Some(f) = &out.fused {
            self.fused.add(edge_counts(f, &labels, tau));
        }
        self.positives += labels.supervised().filter(|(_, _, t)| *t == Target::One).count();
        let poses = group(&affinity, &graph, options)?;
        let counts = grouping_counts(&poses, &graph, &labels, &assignment, scene);
        self.grouping.add(counts);
        if counts.persons > 0 {
            self.scored_scenes += 1;
            if counts.perfect_instances == counts.persons {
                self.perfect_scenes += 1;
            }
        }
        Ok(Some(SceneResult { graph, labels, affinity, poses, grouping: counts }))
    }

    pub fn report(&self) -> EvalReport {
        EvalReport {
            scenes: self.scenes,
            supervised_edges: self.final_edges.total,
            positive_fraction: ratio(self.positives, self.final_edges.total),
            edge_accuracy: self.final_edges.accuracy(),
            geo_accuracy: self.geo.accuracy(),
            app_accuracy: self.app.accuracy(),
            fused_accuracy: self.fused.accuracy(),
            pair_precision: self.grouping.pair_precision(),
            pair_recall: self.grouping.pair_recall(),
            perfect_instance_rate: self.grouping.perfect_instance_rate(),
            perfect_scene_rate: ratio(self.perfect_scenes, self.scored_scenes),
        }
    }
}
