//! Synthetic multi-person scenes and detector-like outputs.
//!
//! Persons are posed from an articulated 2D template: every template point
//! hangs off its parent at a fixed fraction of the person's height, in a
//! direction obtained by rotating the parent bone by a base angle plus a
//! uniformly sampled offset. Template points that are not joint types of the
//! skeleton (pelvis, neck) only shape the pose.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::skeleton::{Keypoint, SkeletonSpec};

/// Lower bound on the similarity scale of a person.
pub const MIN_PERSON_SCALE: f64 = 0.01;

/// Detection confidences are drawn at or above this keep threshold.
pub const MIN_CONFIDENCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TemplatePoint {
    pub name: String,
    /// Index of the parent point; `None` for the root. Parents precede
    /// children.
    pub parent: Option<usize>,
    /// Bone length as a fraction of person height.
    pub length: f64,
    /// Rotation from the parent bone direction, radians, positive turning
    /// towards image +x when the parent points up.
    pub angle: f64,
    /// Half-width of the uniform angle offset.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkeletonTemplate {
    pub points: Vec<TemplatePoint>,
}

impl SkeletonTemplate {
    /// Template for the default 17-joint skeleton, rooted at a virtual pelvis.
    ///
    /// | bone                  | length | base angle | jitter |
    /// |-----------------------|--------|------------|--------|
    /// | pelvis (root lean)    | -      | 0          | 0.25   |
    /// | pelvis -> neck        | 0.30   | 0          | 0.10   |
    /// | neck -> nose          | 0.10   | 0          | 0.30   |
    /// | nose -> eye           | 0.04   | +-0.9      | 0.10   |
    /// | eye -> ear            | 0.05   | +-1.2      | 0.20   |
    /// | neck -> shoulder      | 0.12   | +-1.75     | 0.10   |
    /// | shoulder -> elbow     | 0.17   | +-1.2      | 1.20   |
    /// | elbow -> wrist        | 0.15   | +-0.5      | 1.00   |
    /// | pelvis -> hip         | 0.08   | +-1.9      | 0.10   |
    /// | hip -> knee           | 0.23   | +-1.24     | 0.35   |
    /// | knee -> ankle         | 0.22   | 0          | 0.40   |
    ///
    /// Signs are `+` for left joints and `-` for right joints.
    pub fn coco17() -> Self {
        let mut points: Vec<TemplatePoint> = Vec::new();
        let add = |name: &str, parent: Option<&str>, length: f64, angle: f64, jitter: f64, pts: &mut Vec<TemplatePoint>| {
            let parent = parent.map(|p| pts.iter().position(|q| q.name == p).expect("parent defined first"));
            pts.push(TemplatePoint { name: name.to_string(), parent, length, angle, jitter });
        };
        add("pelvis", None, 0.0, 0.0, 0.25, &mut points);
        add("neck", Some("pelvis"), 0.30, 0.0, 0.10, &mut points);
        add("nose", Some("neck"), 0.10, 0.0, 0.30, &mut points);
        for (side, s) in [("left", 1.0), ("right", -1.0)] {
            let eye = format!("{side}_eye");
            let ear = format!("{side}_ear");
            let shoulder = format!("{side}_shoulder");
            let elbow = format!("{side}_elbow");
            let wrist = format!("{side}_wrist");
            let hip = format!("{side}_hip");
            let knee = format!("{side}_knee");
            let ankle = format!("{side}_ankle");
            add(&eye, Some("nose"), 0.04, s * 0.9, 0.10, &mut points);
            add(&ear, Some(&eye), 0.05, s * 1.2, 0.20, &mut points);
            add(&shoulder, Some("neck"), 0.12, s * 1.75, 0.10, &mut points);
            add(&elbow, Some(&shoulder), 0.17, s * 1.2, 1.20, &mut points);
            add(&wrist, Some(&elbow), 0.15, s * 0.5, 1.00, &mut points);
            add(&hip, Some("pelvis"), 0.08, s * 1.9, 0.10, &mut points);
            add(&knee, Some(&hip), 0.23, s * 1.24, 0.35, &mut points);
            add(&ankle, Some(&knee), 0.22, 0.0, 0.40, &mut points);
        }
        SkeletonTemplate { points }
    }

    /// Maps each skeleton type to its template point, failing if a joint type
    /// has no point or the tree is malformed.
    fn bind(&self, spec: &SkeletonSpec) -> Result<Vec<usize>> {
        for (i, p) in self.points.iter().enumerate() {
            match p.parent {
                None if i != 0 => return Err(Error::config(format!("template.{}", p.name), "only the first point may be the root")),
                Some(q) if q >= i => return Err(Error::config(format!("template.{}", p.name), "parent must precede child")),
                _ => {}
            }
        }
        if self.points.first().map(|p| p.parent.is_some()).unwrap_or(true) {
            return Err(Error::config("template", "first point must be the root"));
        }
        spec.type_names()
            .iter()
            .map(|name| {
                self.points
                    .iter()
                    .position(|p| &p.name == name)
                    .ok_or_else(|| Error::config("template", format!("no template point for joint `{name}`")))
            })
            .collect()
    }

    /// Poses the template: positions in units of height, y pointing down.
    fn pose<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(f64, f64)> {
        let mut pos = vec![(0.0, 0.0); self.points.len()];
        let mut dir = vec![0.0f64; self.points.len()];
        for (i, p) in self.points.iter().enumerate() {
            let offset = if p.jitter > 0.0 { rng.random_range(-p.jitter..=p.jitter) } else { 0.0 };
            match p.parent {
                None => {
                    dir[i] = p.angle + offset;
                }
                Some(q) => {
                    let a = dir[q] + p.angle + offset;
                    dir[i] = a;
                    // angle 0 is straight up (-y); positive turns towards +x.
                    let (px, py) = pos[q];
                    pos[i] = (px + p.length * math::sin(a), py - p.length * math::cos(a));
                }
            }
        }
        pos
    }
}

impl Default for SkeletonTemplate {
    fn default() -> Self {
        Self::coco17()
    }
}

/// Scene sampling knobs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GenConfig {
    /// Inclusive person-count range.
    pub persons: (usize, usize),
    /// Inclusive range of person heights, in image units.
    pub height: (f64, f64),
    /// Probability that a person is placed next to an earlier one instead of
    /// uniformly.
    pub overlap: f64,
    /// Horizontal center offset of a placed-nearby person, as a fraction of
    /// the earlier person's height; the vertical offset range is half of it.
    pub spread: f64,
    /// Per-joint probability of removing the joint from the labeled set.
    pub dropout: f64,
    /// Expected outlier keypoints per labeled joint.
    pub outlier_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { persons: (2, 6), height: (0.25, 0.5), overlap: 0.3, spread: 1.0, dropout: 0.1, outlier_rate: 0.05 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.persons.0 > self.persons.1 {
            return Err(Error::config(
                "persons",
                format!("empty range [{}, {}]", self.persons.0, self.persons.1),
            ));
        }
        if !(self.height.0 > 0.0 && self.height.0 <= self.height.1 && self.height.1.is_finite()) {
            return Err(Error::config("height", "need 0 < min <= max"));
        }
        for (field, v) in [("overlap", self.overlap), ("dropout", self.dropout)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("must be a probability, got {v}")));
            }
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::config("spread", format!("must be non-negative, got {}", self.spread)));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::config("outlier_rate", format!("must lie in [0, 1], got {}", self.outlier_rate)));
        }
        Ok(())
    }
}

/// One ground-truth person: the labeled joints and the similarity scale.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Person {
    pub joints: BTreeMap<usize, Keypoint>,
    pub scale: f64,
}

impl Person {
    /// Builds a person whose scale is the square root of the tight bounding
    /// box area over its joints, floored at [`MIN_PERSON_SCALE`].
    pub fn from_joints(joints: BTreeMap<usize, Keypoint>) -> Self {
        let scale = tight_scale(joints.values());
        Person { joints, scale }
    }
}

fn tight_scale<'a>(pts: impl Iterator<Item = &'a Keypoint>) -> f64 {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    if x1 < x0 {
        return MIN_PERSON_SCALE;
    }
    math::sqrt((x1 - x0) * (y1 - y0)).max(MIN_PERSON_SCALE)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scene {
    pub persons: Vec<Person>,
    pub outliers: Vec<Keypoint>,
    pub seed: u64,
}

pub fn sample_scene(config: &GenConfig, spec: &SkeletonSpec, seed: u64) -> Result<Scene> {
    sample_scene_with(config, spec, &SkeletonTemplate::coco17(), seed)
}

pub fn sample_scene_with(config: &GenConfig, spec: &SkeletonSpec, template: &SkeletonTemplate, seed: u64) -> Result<Scene> {
    config.validate()?;
    let binding = template.bind(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(config.persons.0..=config.persons.1);
    let mut placed: Vec<((f64, f64), f64)> = Vec::with_capacity(count);
    let mut persons = Vec::with_capacity(count);
    for i in 0..count {
        let height = if config.height.0 < config.height.1 {
            rng.random_range(config.height.0..=config.height.1)
        } else {
            config.height.0
        };
        let local = template.pose(&mut rng);
        let (mut lx0, mut ly0, mut lx1, mut ly1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &t in &binding {
            let (x, y) = local[t];
            lx0 = lx0.min(x);
            ly0 = ly0.min(y);
            lx1 = lx1.max(x);
            ly1 = ly1.max(y);
        }
        let (w, h) = ((lx1 - lx0) * height, (ly1 - ly0) * height);
        let near = i > 0 && rng.random::<f64>() < config.overlap;
        let mut center = if near {
            let ((cx, cy), ph) = placed[rng.random_range(0..placed.len())];
            let s = config.spread * ph;
            (cx + rng.random_range(-1.0..=1.0) * s, cy + rng.random_range(-0.5..=0.5) * s)
        } else {
            (rng.random::<f64>(), rng.random::<f64>())
        };
        center.0 = fit_center(center.0, w);
        center.1 = fit_center(center.1, h);
        placed.push((center, height));

        let (lcx, lcy) = ((lx0 + lx1) * 0.5, (ly0 + ly1) * 0.5);
        let all: Vec<Keypoint> = binding
            .iter()
            .enumerate()
            .map(|(t, &pi)| {
                let (x, y) = local[pi];
                Keypoint::new(
                    (center.0 + (x - lcx) * height).clamp(0.0, 1.0),
                    (center.1 + (y - lcy) * height).clamp(0.0, 1.0),
                    t,
                )
            })
            .collect();
        let keep: Vec<bool> = (0..all.len()).map(|_| rng.random::<f64>() >= config.dropout).collect();
        let mut joints: BTreeMap<usize, Keypoint> = BTreeMap::new();
        for (kp, &k) in all.iter().zip(&keep) {
            if k {
                joints.insert(kp.type_index, *kp);
            }
        }
        if joints.is_empty() {
            let t = rng.random_range(0..all.len());
            joints.insert(t, all[t]);
        }
        persons.push(Person::from_joints(joints));
    }

    let labeled: usize = persons.iter().map(|p| p.joints.len()).sum();
    let mut outliers = Vec::new();
    for _ in 0..labeled {
        if rng.random::<f64>() < config.outlier_rate {
            let t = rng.random_range(0..spec.num_types());
            outliers.push(Keypoint::new(rng.random(), rng.random(), t));
        }
    }
    Ok(Scene { persons, outliers, seed })
}

fn fit_center(c: f64, extent: f64) -> f64 {
    if extent >= 1.0 {
        0.5
    } else {
        c.clamp(extent * 0.5, 1.0 - extent * 0.5)
    }
}

/// How outlier detections obtain appearance vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OutlierAppearance {
    /// An independent random tag.
    #[default]
    Random,
    /// The tag of the person owning the nearest labeled joint.
    NearestPerson,
}

/// Detector emulation knobs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NoiseConfig {
    /// Standard deviation of the Gaussian coordinate jitter.
    pub jitter: f64,
    /// Probability of emitting a second, re-jittered copy of a joint.
    pub duplicate: f64,
    /// Probability of not detecting a labeled joint.
    pub miss: f64,
    pub appearance_dim: usize,
    /// Standard deviation of the per-element appearance noise.
    pub appearance_noise: f64,
    pub outlier_appearance: OutlierAppearance,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            jitter: 0.005,
            duplicate: 0.0,
            miss: 0.0,
            appearance_dim: 8,
            appearance_noise: 0.3,
            outlier_appearance: OutlierAppearance::Random,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig { jitter: 0.0, appearance_noise: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::config("jitter", format!("must be non-negative, got {}", self.jitter)));
        }
        if !(self.appearance_noise >= 0.0 && self.appearance_noise.is_finite()) {
            return Err(Error::config(
                "appearance_noise",
                format!("must be non-negative, got {}", self.appearance_noise),
            ));
        }
        for (field, v) in [("duplicate", self.duplicate), ("miss", self.miss)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("must be a probability, got {v}")));
            }
        }
        if self.appearance_dim == 0 {
            return Err(Error::config("appearance_dim", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub id: usize,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub keypoint: Keypoint,
    pub confidence: f64,
    pub appearance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    pub appearance_dim: usize,
}

impl DetectionSet {
    /// Validates shared appearance dimension, unique ids and coordinates.
    pub fn new(detections: Vec<Detection>, appearance_dim: usize) -> Result<Self> {
        let set = DetectionSet { detections, appearance_dim };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<usize> = self.detections.iter().map(|d| d.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate detection id".into()));
        }
        for d in &self.detections {
            if d.appearance.len() != self.appearance_dim {
                return Err(Error::InvalidArgument(format!(
                    "detection {} has appearance length {}, expected {}",
                    d.id,
                    d.appearance.len(),
                    self.appearance_dim
                )));
            }
            if !d.keypoint.in_unit_square() {
                return Err(Error::InvalidArgument(format!("detection {} lies outside the unit square", d.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

fn unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn noisy<R: Rng + ?Sized>(base: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    base.iter()
        .map(|&b| {
            if sigma > 0.0 {
                b + sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                b
            }
        })
        .collect()
}

fn jittered<R: Rng + ?Sized>(kp: &Keypoint, sigma: f64, rng: &mut R) -> Keypoint {
    if sigma == 0.0 {
        return *kp;
    }
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    Keypoint::new((kp.x + sigma * dx).clamp(0.0, 1.0), (kp.y + sigma * dy).clamp(0.0, 1.0), kp.type_index)
}

/// Emits detections for a scene: jittered ground-truth joints (possibly
/// missed or duplicated) followed by outliers. Ids are consecutive from 0.
pub fn render_detections(scene: &Scene, noise: &NoiseConfig, seed: u64) -> Result<DetectionSet> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = noise.appearance_dim;
    let bases: Vec<Vec<f64>> = scene.persons.iter().map(|_| unit_vector(dim, &mut rng)).collect();
    let mut detections = Vec::new();
    for (person, base) in scene.persons.iter().zip(&bases) {
        for kp in person.joints.values() {
            if rng.random::<f64>() < noise.miss {
                continue;
            }
            let copies = if rng.random::<f64>() < noise.duplicate { 2 } else { 1 };
            for _ in 0..copies {
                detections.push(Detection {
                    id: detections.len(),
                    keypoint: jittered(kp, noise.jitter, &mut rng),
                    confidence: rng.random_range(0.5..=1.0),
                    appearance: noisy(base, noise.appearance_noise, &mut rng),
                });
            }
        }
    }
    for kp in &scene.outliers {
        let base = match noise.outlier_appearance {
            OutlierAppearance::Random => unit_vector(dim, &mut rng),
            OutlierAppearance::NearestPerson => nearest_person(scene, kp)
                .map(|p| bases[p].clone())
                .unwrap_or_else(|| unit_vector(dim, &mut rng)),
        };
        detections.push(Detection {
            id: detections.len(),
            keypoint: Keypoint::new(kp.x.clamp(0.0, 1.0), kp.y.clamp(0.0, 1.0), kp.type_index),
            confidence: rng.random_range(MIN_CONFIDENCE..=0.5),
            appearance: noisy(&base, noise.appearance_noise, &mut rng),
        });
    }
    Ok(DetectionSet { detections, appearance_dim: dim })
}

fn nearest_person(scene: &Scene, kp: &Keypoint) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in scene.persons.iter().enumerate() {
        for j in p.joints.values() {
            let d = j.dist2(kp);
            if best.map(|(b, _)| d < b).unwrap_or(true) {
                best = Some((d, i));
            }
        }
    }
    best.map(|(_, i)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SkeletonSpec {
        SkeletonSpec::coco17()
    }

    #[test]
    fn no_dropout_single_person_has_all_joints() {
        let cfg = GenConfig { persons: (1, 1), dropout: 0.0, outlier_rate: 0.0, ..Default::default() };
        let scene = sample_scene(&cfg, &spec(), 5).unwrap();
        assert_eq!(scene.persons.len(), 1);
        assert_eq!(scene.persons[0].joints.len(), 17);
        assert!(scene.outliers.is_empty());
    }

    #[test]
    fn fixed_person_count() {
        let cfg = GenConfig { persons: (3, 3), ..Default::default() };
        for seed in 0..10 {
            assert_eq!(sample_scene(&cfg, &spec(), seed).unwrap().persons.len(), 3);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = GenConfig::default();
        let a = sample_scene(&cfg, &spec(), 42).unwrap();
        let b = sample_scene(&cfg, &spec(), 42).unwrap();
        assert_eq!(a, b);
        let da = render_detections(&a, &NoiseConfig::default(), 9).unwrap();
        let db = render_detections(&b, &NoiseConfig::default(), 9).unwrap();
        assert_eq!(da, db);
        assert_ne!(a, sample_scene(&cfg, &spec(), 43).unwrap());
    }

    #[test]
    fn empty_person_range_is_config_error() {
        let cfg = GenConfig { persons: (4, 2), ..Default::default() };
        assert!(matches!(sample_scene(&cfg, &spec(), 0), Err(Error::Config { .. })));
    }

    #[test]
    fn persons_always_keep_a_joint() {
        let cfg = GenConfig { dropout: 1.0, ..Default::default() };
        let scene = sample_scene(&cfg, &spec(), 1).unwrap();
        assert!(scene.persons.iter().all(|p| p.joints.len() == 1));
        assert!(scene.persons.iter().all(|p| p.scale == MIN_PERSON_SCALE));
    }

    #[test]
    fn noiseless_detections_sit_on_ground_truth() {
        let cfg = GenConfig { outlier_rate: 0.0, ..Default::default() };
        let scene = sample_scene(&cfg, &spec(), 2).unwrap();
        let dets = render_detections(&scene, &NoiseConfig::noiseless(), 3).unwrap();
        let gt: Vec<Keypoint> = scene.persons.iter().flat_map(|p| p.joints.values().copied()).collect();
        assert_eq!(dets.len(), gt.len());
        for (d, g) in dets.detections.iter().zip(&gt) {
            assert_eq!(d.keypoint, *g);
        }
        assert!(dets.detections.iter().enumerate().all(|(i, d)| d.id == i));
    }

    #[test]
    fn duplicate_probability_one_doubles() {
        let cfg = GenConfig { outlier_rate: 0.0, ..Default::default() };
        let scene = sample_scene(&cfg, &spec(), 4).unwrap();
        let noise = NoiseConfig { duplicate: 1.0, ..Default::default() };
        let dets = render_detections(&scene, &noise, 3).unwrap();
        let labeled: usize = scene.persons.iter().map(|p| p.joints.len()).sum();
        assert_eq!(dets.len(), 2 * labeled);
    }

    #[test]
    fn zero_appearance_noise_gives_identical_tags_per_person() {
        let cfg = GenConfig { persons: (2, 2), dropout: 0.0, outlier_rate: 0.0, ..Default::default() };
        let scene = sample_scene(&cfg, &spec(), 8).unwrap();
        let dets = render_detections(&scene, &NoiseConfig::noiseless(), 1).unwrap();
        let (a, b) = dets.detections.split_at(17);
        assert!(a.iter().all(|d| d.appearance == a[0].appearance));
        assert!(b.iter().all(|d| d.appearance == b[0].appearance));
        assert_ne!(a[0].appearance, b[0].appearance);
        let norm: f64 = a[0].appearance.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_jitter_rejected() {
        let scene = Scene { persons: vec![], outliers: vec![], seed: 0 };
        let noise = NoiseConfig { jitter: -0.1, ..Default::default() };
        assert!(matches!(render_detections(&scene, &noise, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn emitted_detections_stay_in_bounds_with_confidence() {
        let cfg = GenConfig { persons: (4, 6), height: (0.6, 0.9), outlier_rate: 0.3, ..Default::default() };
        let noise = NoiseConfig { jitter: 0.2, duplicate: 0.5, ..Default::default() };
        for seed in 0..20 {
            let scene = sample_scene(&cfg, &spec(), seed).unwrap();
            let dets = render_detections(&scene, &noise, seed).unwrap();
            dets.validate().unwrap();
            assert!(dets.detections.iter().all(|d| d.confidence >= MIN_CONFIDENCE && d.confidence <= 1.0));
        }
    }

    #[test]
    fn template_must_cover_skeleton() {
        let spec = SkeletonSpec::new(vec!["head".into()], vec![1.0]).unwrap();
        let err = sample_scene(&GenConfig::default(), &spec, 0).unwrap_err();
        assert!(format!("{err}").contains("no template point for joint `head`"));
    }
}
