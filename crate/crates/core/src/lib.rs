//! Surfel-based stereo dense reconstruction and camera relocalization.
//!
//! The pipeline turns rectified stereo pairs into per-frame depth
//! ([`stereo`]), tracks the camera by minimizing a joint point-to-plane and
//! photometric objective ([`tracking`]), fuses depth into a global surfel
//! model ([`fusion`]), and localizes novel views against the built map by
//! global-descriptor retrieval, covisibility clustering, and PnP + RANSAC
//! ([`localization`]). Trajectory and reconstruction metrics live in
//! [`eval`]; [`synth`] provides ray-cast synthetic scenes with exact ground
//! truth for end-to-end verification.
//!
//! Hot loops are data-parallel via rayon when the default `parallel`
//! feature is enabled and fall back to equivalent sequential code without
//! it; results are identical either way.

pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod localization;
pub mod parallel;
pub mod pipeline;
pub mod stereo;
pub mod synth;
pub mod tracking;

pub use geometry::{Intrinsics, Pixel, Point3, RigidPose, Vec3};
