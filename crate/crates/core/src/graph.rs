//! Detection graph construction and supervision labels.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::skeleton::{oks, SkeletonSpec};
use crate::synth::{Detection, DetectionSet, Scene};

/// Default similarity threshold for assigning a detection to ground truth.
pub const ASSIGN_THRESHOLD: f64 = 0.5;

/// Fully-connected graph over detections. Every unordered pair of distinct
/// nodes is an edge; self-pairs are not.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGraph {
    nodes: Vec<Detection>,
    per_type: BTreeMap<usize, usize>,
    appearance_dim: usize,
}

impl DetectionGraph {
    /// Keeps the given node order. [`build_graph`] is the usual entry point;
    /// this exists for callers that need a specific ordering.
    pub fn from_nodes(nodes: Vec<Detection>, appearance_dim: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyInput("detection set has no detections".into()));
        }
        let set = DetectionSet { detections: nodes, appearance_dim };
        set.validate()?;
        let nodes = set.detections;
        let mut per_type = BTreeMap::new();
        for d in &nodes {
            *per_type.entry(d.keypoint.type_index).or_insert(0) += 1;
        }
        Ok(DetectionGraph { nodes, per_type, appearance_dim })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Detection] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Detection {
        &self.nodes[i]
    }

    pub fn type_of(&self, i: usize) -> usize {
        self.nodes[i].keypoint.type_index
    }

    pub fn types(&self) -> Vec<usize> {
        self.nodes.iter().map(|d| d.keypoint.type_index).collect()
    }

    /// Node count per joint type, `N_j`.
    pub fn per_type(&self) -> &BTreeMap<usize, usize> {
        &self.per_type
    }

    pub fn appearance_dim(&self) -> usize {
        self.appearance_dim
    }

    pub fn num_edges(&self) -> usize {
        self.len() * (self.len().saturating_sub(1)) / 2
    }

    pub fn index_of_id(&self, id: usize) -> Option<usize> {
        self.nodes.iter().position(|d| d.id == id)
    }

    /// Canonical ordering key of a node: `(type, id)`.
    pub fn order_key(&self, i: usize) -> (usize, usize) {
        (self.nodes[i].keypoint.type_index, self.nodes[i].id)
    }

    /// Returns a copy with nodes reordered so that new node `i` is old node
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() || perm.iter().copied().collect::<BTreeSet<_>>().len() != self.len() {
            return Err(Error::InvalidArgument("not a permutation of the node indices".into()));
        }
        let nodes = perm.iter().map(|&p| self.nodes[p].clone()).collect();
        DetectionGraph::from_nodes(nodes, self.appearance_dim)
    }
}

/// Builds the graph with nodes ordered by `(type, id)`.
pub fn build_graph(dets: &DetectionSet) -> Result<DetectionGraph> {
    let mut nodes = dets.detections.clone();
    nodes.sort_by_key(|d| (d.keypoint.type_index, d.id));
    DetectionGraph::from_nodes(nodes, dets.appearance_dim)
}

/// Ground-truth match of one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtMatch {
    Joint { person: usize, type_index: usize },
    Outlier,
}

impl GtMatch {
    pub fn person(&self) -> Option<usize> {
        match *self {
            GtMatch::Joint { person, .. } => Some(person),
            GtMatch::Outlier => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub det_to_gt: BTreeMap<usize, GtMatch>,
}

impl Assignment {
    pub fn get(&self, id: usize) -> Option<GtMatch> {
        self.det_to_gt.get(&id).copied()
    }

    /// Detection ids assigned to `person`, `I_p`.
    pub fn members(&self, person: usize) -> impl Iterator<Item = usize> + '_ {
        self.det_to_gt.iter().filter(move |(_, m)| m.person() == Some(person)).map(|(&id, _)| id)
    }
}

/// Assigns every detection to the same-type ground-truth joint of highest
/// similarity, provided it reaches `threshold`. Ties go to the lower person
/// index.
pub fn assign_detections(dets: &DetectionSet, scene: &Scene, spec: &SkeletonSpec, threshold: f64) -> Result<Assignment> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("assignment threshold must lie in (0, 1), got {threshold}")));
    }
    let mut det_to_gt = BTreeMap::new();
    for d in &dets.detections {
        let t = d.keypoint.type_index;
        let mut best: Option<(f64, usize)> = None;
        for (p, person) in scene.persons.iter().enumerate() {
            if let Some(gt) = person.joints.get(&t) {
                let s = oks(&d.keypoint, gt, person.scale, spec)?;
                if best.map(|(b, _)| s > b).unwrap_or(true) {
                    best = Some((s, p));
                }
            }
        }
        let m = match best {
            Some((s, person)) if s >= threshold => GtMatch::Joint { person, type_index: t },
            _ => GtMatch::Outlier,
        };
        det_to_gt.insert(d.id, m);
    }
    Ok(Assignment { det_to_gt })
}

/// Ground-truth affinity of one edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Zero,
    One,
    Unlabeled,
}

impl Target {
    pub fn value(self) -> Option<f64> {
        match self {
            Target::Zero => Some(0.0),
            Target::One => Some(1.0),
            Target::Unlabeled => None,
        }
    }
}

/// Symmetric `N x N` targets and training mask, aligned with graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLabels {
    n: usize,
    target: Vec<Target>,
    mask: Vec<bool>,
}

impl EdgeLabels {
    pub fn new_masked(n: usize) -> Self {
        EdgeLabels { n, target: vec![Target::Unlabeled; n * n], mask: vec![false; n * n] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn target(&self, m: usize, n: usize) -> Target {
        self.target[m * self.n + n]
    }

    pub fn mask(&self, m: usize, n: usize) -> bool {
        self.mask[m * self.n + n]
    }

    /// Sets both directions of an off-diagonal edge.
    pub fn set(&mut self, m: usize, n: usize, target: Target, mask: bool) {
        assert_ne!(m, n, "self-pairs are not edges");
        for (a, b) in [(m, n), (n, m)] {
            self.target[a * self.n + b] = target;
            self.mask[a * self.n + b] = mask;
        }
    }

    /// Unmasked unordered pairs `(m, n)` with `m < n` and their targets.
    pub fn supervised(&self) -> impl Iterator<Item = (usize, usize, Target)> + '_ {
        (0..self.n).flat_map(move |m| {
            (m + 1..self.n).filter(move |&n| self.mask(m, n)).map(move |n| (m, n, self.target(m, n)))
        })
    }

    pub fn num_supervised(&self) -> usize {
        self.supervised().count()
    }

    /// Row-major dump entry: `1`, `0`, or `-1` for masked edges and the
    /// diagonal.
    pub fn dump_value(&self, m: usize, n: usize) -> i8 {
        if m == n || !self.mask(m, n) {
            return -1;
        }
        match self.target(m, n) {
            Target::One => 1,
            Target::Zero => 0,
            Target::Unlabeled => -1,
        }
    }
}

/// Labels every edge from the assignment:
///
/// * both ends on the same person: target 1;
/// * both ends on different persons: target 0;
/// * either end an outlier: masked;
/// * for each person `p`, edges between its detections and every other
///   detection whose type is labeled for `p` get target 0 and are unmasked,
///   overriding the previous rule.
pub fn label_edges(graph: &DetectionGraph, assignment: &Assignment, scene: &Scene) -> Result<EdgeLabels> {
    let n = graph.len();
    for &id in assignment.det_to_gt.keys() {
        if graph.index_of_id(id).is_none() {
            return Err(Error::InvalidArgument(format!("assignment references unknown detection id {id}")));
        }
    }
    let matches: Vec<GtMatch> = graph
        .nodes()
        .iter()
        .map(|d| {
            assignment
                .get(d.id)
                .ok_or_else(|| Error::InvalidArgument(format!("detection {} has no assignment", d.id)))
        })
        .collect::<Result<_>>()?;
    for m in &matches {
        if let Some(p) = m.person() {
            if p >= scene.persons.len() {
                return Err(Error::InvalidArgument(format!("assignment references unknown person {p}")));
            }
        }
    }

    let mut labels = EdgeLabels::new_masked(n);
    for a in 0..n {
        for b in a + 1..n {
            match (matches[a].person(), matches[b].person()) {
                (Some(pa), Some(pb)) => {
                    labels.set(a, b, if pa == pb { Target::One } else { Target::Zero }, true);
                }
                _ => labels.set(a, b, Target::Unlabeled, false),
            }
        }
    }
    for (p, person) in scene.persons.iter().enumerate() {
        let inside: Vec<usize> = (0..n).filter(|&i| matches[i].person() == Some(p)).collect();
        let others: Vec<usize> = (0..n)
            .filter(|&i| matches[i].person() != Some(p) && person.joints.contains_key(&graph.type_of(i)))
            .collect();
        for &i in &inside {
            for &o in &others {
                labels.set(i, o, Target::Zero, true);
            }
        }
    }
    Ok(labels)
}
