//! Graph figures: an SVG with detections colored by pose and predicted
//! edges drawn with opacity equal to their affinity, plus a JSON sidecar
//! with the same data.

use std::fmt::Write as _;

use posegroup_core::geonet::AffinityMatrix;
use posegroup_core::{DetectionGraph, PoseInstance, SkeletonSpec};
use serde::Serialize;

const SIZE: f64 = 800.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

#[derive(Debug, Serialize)]
pub struct VizNode {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    #[serde(rename = "type")]
    pub type_index: usize,
    pub name: String,
    pub pose: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct VizEdge {
    pub a: usize,
    pub b: usize,
    pub affinity: f64,
}

#[derive(Debug, Serialize)]
pub struct Figure {
    pub threshold: f64,
    pub nodes: Vec<VizNode>,
    pub edges: Vec<VizEdge>,
}

impl Figure {
    /// Keeps edges with affinity at or above `threshold`.
    pub fn new(graph: &DetectionGraph, affinity: &AffinityMatrix, poses: &[PoseInstance], spec: &SkeletonSpec, threshold: f64) -> Self {
        let nodes = graph
            .nodes()
            .iter()
            .map(|d| VizNode {
                id: d.id,
                x: d.keypoint.x,
                y: d.keypoint.y,
                type_index: d.keypoint.type_index,
                name: spec.type_names().get(d.keypoint.type_index).cloned().unwrap_or_default(),
                pose: poses.iter().position(|p| p.joints.values().any(|&id| id == d.id)),
            })
            .collect();
        let mut edges = Vec::new();
        for m in 0..graph.len() {
            for n in m + 1..graph.len() {
                let a = affinity.get(m, n);
                if a >= threshold {
                    edges.push(VizEdge { a: graph.node(m).id, b: graph.node(n).id, affinity: a });
                }
            }
        }
        Figure { threshold, nodes, edges }
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let pos: std::collections::BTreeMap<usize, (f64, f64)> =
            self.nodes.iter().map(|n| (n.id, (n.x * SIZE, n.y * SIZE))).collect();
        let _ = writeln!(s, r#"<g stroke="black" stroke-width="1.5">"#);
        for e in &self.edges {
            let (a, b) = (pos[&e.a], pos[&e.b]);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke-opacity="{:.3}"/>"#,
                a.0, a.1, b.0, b.1, e.affinity
            );
        }
        let _ = writeln!(s, "</g>");
        for n in &self.nodes {
            let color = n.pose.map(|p| PALETTE[p % PALETTE.len()]).unwrap_or("#000000");
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{color}"><title>{} #{}</title></circle>"#,
                n.x * SIZE,
                n.y * SIZE,
                escape(&n.name),
                n.id
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
