//! File formats, checkpoints and the command-line front end for
//! [`posegroup_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod formats;
pub mod viz;

/// Deterministic per-item seeds derived from one base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the combined input
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SCENE_STREAM: u64 = 1;
pub const RENDER_STREAM: u64 = 2;
