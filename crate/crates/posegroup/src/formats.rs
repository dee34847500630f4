//! File schemas.
//!
//! * scenes: JSON lines, one [`Scene`] per line;
//! * detections: JSON lines, `{"scene": i, "appearance_dim": d, "detections": [...]}`;
//! * poses: JSON lines, `{"scene": i, "poses": [{"person", "score", "joints"}]}`;
//! * labels: one whitespace-separated row of `1`/`0`/`-1` per graph node,
//!   in graph order, scenes separated by a `# scene i` header;
//! * loss history: CSV with header `step,total,geo,app,fuse`;
//! * eval report: pretty JSON, absent metrics as `null`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use posegroup_core::metrics::EvalReport;
use posegroup_core::train::StepRecord;
use posegroup_core::{DetectionGraph, DetectionSet, EdgeLabels, PoseInstance, Scene, SkeletonSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).with_context(|| format!("{}:{}: schema violation", path.display(), i + 1))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub scene: usize,
    #[serde(flatten)]
    pub set: DetectionSet,
}

/// Reads detection records and validates each set.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let records: Vec<DetectionRecord> = read_jsonl(path)?;
    for r in &records {
        r.set.validate().with_context(|| format!("{}: scene {}", path.display(), r.scene))?;
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    #[serde(rename = "type")]
    pub type_index: usize,
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub person: usize,
    pub score: f64,
    pub joints: Vec<JointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePoses {
    pub scene: usize,
    pub poses: Vec<PoseRecord>,
}

impl ScenePoses {
    pub fn new(scene: usize, poses: &[PoseInstance], graph: &DetectionGraph, spec: &SkeletonSpec) -> Result<Self> {
        let mut records = Vec::with_capacity(poses.len());
        for (person, pose) in poses.iter().enumerate() {
            let mut joints = Vec::with_capacity(pose.len());
            for (&t, &id) in &pose.joints {
                let i = graph.index_of_id(id).with_context(|| format!("pose references unknown detection {id}"))?;
                let kp = graph.node(i).keypoint;
                let name = spec.type_names().get(t).cloned().with_context(|| format!("joint type {t} not in skeleton"))?;
                joints.push(JointRecord { type_index: t, name, x: kp.x, y: kp.y, id });
            }
            records.push(PoseRecord { person, score: pose.score, joints });
        }
        Ok(ScenePoses { scene, poses: records })
    }
}

pub fn format_labels(scene: usize, labels: &EdgeLabels, out: &mut String) {
    let _ = writeln!(out, "# scene {scene}");
    for m in 0..labels.len() {
        let row: Vec<String> = (0..labels.len()).map(|n| labels.dump_value(m, n).to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Parses one matrix per `# scene` block.
pub fn parse_labels(text: &str) -> Result<Vec<(usize, Vec<Vec<i8>>)>> {
    let mut out: Vec<(usize, Vec<Vec<i8>>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("# scene ") {
            out.push((rest.trim().parse().with_context(|| format!("line {}: bad scene index", i + 1))?, Vec::new()));
        } else if !line.trim().is_empty() {
            let Some((_, rows)) = out.last_mut() else { bail!("line {}: row before any scene header", i + 1) };
            let row = line
                .split_whitespace()
                .map(|v| match v {
                    "1" => Ok(1),
                    "0" => Ok(0),
                    "-1" => Ok(-1),
                    _ => bail!("line {}: bad label `{v}`", i + 1),
                })
                .collect::<Result<Vec<i8>>>()?;
            rows.push(row);
        }
    }
    Ok(out)
}

pub const HISTORY_HEADER: &str = "step,total,geo,app,fuse";

pub fn history_line(r: &StepRecord) -> String {
    let l = &r.loss;
    format!("{},{:e},{:e},{:e},{:e}", r.step, l.total, l.geo, l.app, l.fuse)
}

pub fn write_history(path: &Path, history: &[StepRecord]) -> Result<()> {
    let mut text = String::with_capacity(32 * (history.len() + 1));
    text.push_str(HISTORY_HEADER);
    text.push('\n');
    for r in history {
        text.push_str(&history_line(r));
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `(step, [total, geo, app, fuse])` rows.
pub fn read_history(path: &Path) -> Result<Vec<(usize, [f64; 4])>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        bail!("{}: missing `{HISTORY_HEADER}` header", path.display());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                bail!("{}:{}: expected 5 fields", path.display(), i + 2);
            }
            let mut v = [0.0; 4];
            for (slot, s) in v.iter_mut().zip(&f[1..]) {
                *slot = s.parse()?;
            }
            Ok((f[0].parse()?, v))
        })
        .collect()
}

pub fn report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}
