//! Joint-type catalog and keypoint similarity.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math;

/// Joint names of the default 17-type skeleton, in index order.
pub const COCO_JOINTS: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Falloff constant used for every joint type of the default skeleton.
pub const DEFAULT_KAPPA: f64 = 0.8;

/// Joint-type catalog with per-type similarity falloff constants.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkeletonSpec {
    type_names: Vec<String>,
    kappa: Vec<f64>,
}

impl SkeletonSpec {
    /// Validates and builds a skeleton. Names must be unique and every kappa
    /// strictly positive and finite.
    pub fn new(type_names: Vec<String>, kappa: Vec<f64>) -> Result<Self> {
        if type_names.is_empty() {
            return Err(Error::config("types", "at least one joint type is required"));
        }
        if kappa.len() != type_names.len() {
            return Err(Error::config(
                "kappa",
                format!("expected {} values, found {}", type_names.len(), kappa.len()),
            ));
        }
        for (i, name) in type_names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::config(format!("types[{i}]"), "empty joint name"));
            }
            if type_names[..i].contains(name) {
                return Err(Error::config("types", format!("duplicate joint type `{name}`")));
            }
        }
        for (name, &k) in type_names.iter().zip(&kappa) {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::config(format!("kappa.{name}"), format!("must be positive, got {k}")));
            }
        }
        Ok(SkeletonSpec { type_names, kappa })
    }

    /// The 17-joint COCO-style skeleton with uniform kappa.
    pub fn coco17() -> Self {
        Self::coco17_with_kappa(DEFAULT_KAPPA)
    }

    pub fn coco17_with_kappa(kappa: f64) -> Self {
        SkeletonSpec::new(COCO_JOINTS.iter().map(|s| s.to_string()).collect(), alloc::vec![kappa; 17])
            .expect("built-in skeleton is valid")
    }

    /// A skeleton with `j` generically named types (`j0`, `j1`, ...).
    pub fn generic(j: usize, kappa: f64) -> Result<Self> {
        SkeletonSpec::new((0..j).map(|i| format!("j{i}")).collect(), alloc::vec![kappa; j])
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.type_names.iter().position(|n| n == name)
    }

    /// SHA-256 over the type count, names and kappa bit patterns.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.type_names.len() as u64).to_le_bytes());
        for (name, k) in self.type_names.iter().zip(&self.kappa) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update(k.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }
}

impl Default for SkeletonSpec {
    fn default() -> Self {
        Self::coco17()
    }
}

/// A joint location in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    #[cfg_attr(feature = "serde", serde(rename = "type"))]
    pub type_index: usize,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, type_index: usize) -> Self {
        Keypoint { x, y, type_index }
    }

    pub fn dist2(&self, other: &Keypoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }
}

/// Single-keypoint similarity `exp(-d^2 / (2 s^2 kappa^2))`.
pub fn oks(det: &Keypoint, gt: &Keypoint, object_scale: f64, spec: &SkeletonSpec) -> Result<f64> {
    if det.type_index != gt.type_index {
        return Err(Error::InvalidArgument(format!(
            "oks between different joint types {} and {}",
            det.type_index, gt.type_index
        )));
    }
    if !(object_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("object scale must be positive, got {object_scale}")));
    }
    let kappa = *spec
        .kappa
        .get(det.type_index)
        .ok_or_else(|| Error::InvalidArgument(format!("joint type {} outside skeleton", det.type_index)))?;
    let denom = 2.0 * object_scale * object_scale * kappa * kappa;
    Ok(math::exp(-det.dist2(gt) / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn unit(k: f64) -> SkeletonSpec {
        SkeletonSpec::generic(1, k).unwrap()
    }

    #[test]
    fn zero_distance_is_one() {
        let p = Keypoint::new(0.3, 0.4, 0);
        assert_eq!(oks(&p, &p, 0.07, &unit(0.8)).unwrap(), 1.0);
    }

    #[test]
    fn closed_form_values() {
        let spec = unit(1.0);
        let a = Keypoint::new(0.1, 0.1, 0);
        let b = Keypoint::new(0.3, 0.1, 0);
        let v = oks(&a, &b, 0.1, &spec).unwrap();
        assert!((v - 0.135_335_283_236_612_7).abs() < 1e-12);

        // d^2 = 2 s^2 k^2 with s = 0.5, k = 0.4
        let spec = unit(0.4);
        let d = (2.0f64 * 0.25 * 0.16).sqrt();
        let b = Keypoint::new(0.1 + d, 0.1, 0);
        let v = oks(&a, &b, 0.5, &spec).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn errors_on_type_mismatch_and_bad_scale() {
        let spec = SkeletonSpec::generic(2, 1.0).unwrap();
        let a = Keypoint::new(0.1, 0.1, 0);
        let b = Keypoint::new(0.1, 0.1, 1);
        assert!(matches!(oks(&a, &b, 1.0, &spec), Err(Error::InvalidArgument(_))));
        assert!(matches!(oks(&a, &a, 0.0, &spec), Err(Error::InvalidArgument(_))));
        assert!(matches!(oks(&a, &a, -1.0, &spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn validation_names_offending_field() {
        let err = SkeletonSpec::new(vec!["head".into(), "head".into()], vec![1.0, 1.0]).unwrap_err();
        assert!(format!("{err}").contains("duplicate joint type `head`"));
        let err = SkeletonSpec::new(vec!["head".into(), "wrist".into()], vec![1.0, 0.0]).unwrap_err();
        assert!(format!("{err}").contains("kappa.wrist"));
        let err = SkeletonSpec::new(vec![], vec![]).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        let err = SkeletonSpec::new(vec!["a".into()], vec![]).unwrap_err();
        assert!(format!("{err}").contains("kappa"));
    }

    #[test]
    fn default_is_coco17() {
        let s = SkeletonSpec::default();
        assert_eq!(s.num_types(), 17);
        assert!(s.kappa().iter().all(|&k| k == DEFAULT_KAPPA));
        assert_ne!(s.digest(), SkeletonSpec::coco17_with_kappa(0.5).digest());
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone(x in 0.0..1.0f64, y in 0.0..1.0f64, dx in 0.0..0.5f64, s in 0.01..1.0f64) {
            let spec = unit(0.8);
            let a = Keypoint::new(x, y, 0);
            let b = Keypoint::new(x + dx, y, 0);
            let c = Keypoint::new(x + dx * 1.5 + 1e-3, y, 0);
            let ab = oks(&a, &b, s, &spec).unwrap();
            prop_assert_eq!(ab, oks(&b, &a, s, &spec).unwrap());
            prop_assert!(ab <= 1.0 && ab > 0.0 || ab == 0.0);
            prop_assert!(oks(&a, &c, s, &spec).unwrap() <= ab);
        }
    }
}
