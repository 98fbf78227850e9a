//! Dynamic-scene reconstruction from monocular priors.
//!
//! The crate turns per-frame priors (video segments, optical flow, depth,
//! camera poses) into dynamic-object masks, refined depth and repaired 2-D
//! point tracks, lifts them onto a motion scaffold, and fits a cloud of
//! anisotropic Gaussians with a deterministic CPU splatting renderer.
//!
//! Every prior can be produced by the `synth` module, an analytic scene generator that
//! doubles as the ground-truth oracle for tests.

pub mod depth;
pub mod error;
pub mod geometry;
pub mod io;
pub mod masks;
pub mod pipeline;
pub mod recon;
pub mod render;
pub mod scaffold;
pub mod synth;
pub mod tracks;

pub use error::{Error, Result};

/// Long side (pixels) of the working resolution that pixel thresholds are
/// expressed in.
pub const WORKING_LONG_SIDE: usize = 512;
