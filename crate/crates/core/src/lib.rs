//! Learned keypoint association and spectral grouping for bottom-up
//! multi-person pose estimation.
//!
//! The pipeline turns identity-free joint detections into person instances:
//!
//! 1. [`graph`] builds a fully-connected detection graph and, for training,
//!    derives edge labels and a supervision mask from ground truth.
//! 2. [`geonet`] estimates pairwise affinities from joint displacements and
//!    joint types alone, refining an all-ones prior over several iterations.
//! 3. [`appnet`] runs a message-passing branch over per-detection appearance
//!    vectors and fuses both branches into one affinity matrix.
//! 4. [`partition`] binarizes the fused affinities, counts clusters from the
//!    Laplacian spectrum, runs k-means on the eigenvectors and extracts poses
//!    with at most one joint per type.
//!
//! [`synth`] generates labeled scenes so everything trains and evaluates
//! without images. [`train`] optimizes all weights with exact reverse-mode
//! gradients, and [`metrics`] scores edges and groupings.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. All IO lives in the companion `posegroup` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod appnet;
pub mod error;
pub mod geonet;
pub mod gradcheck;
pub mod graph;
mod layout;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod partition;
pub mod skeleton;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use graph::{assign_detections, build_graph, label_edges, Assignment, DetectionGraph, EdgeLabels, Target};
pub use model::{Branches, ModelConfig, ModelParams};
pub use partition::{group, PoseInstance};
pub use skeleton::{oks, Keypoint, SkeletonSpec};
pub use synth::{render_detections, sample_scene, Detection, DetectionSet, GenConfig, NoiseConfig, Person, Scene};
