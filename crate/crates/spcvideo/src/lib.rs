//! Simulation and reconstruction toolkit for single-pixel (spatial
//! multiplexing) camera video.
//!
//! The library covers the full acquisition-to-recovery chain:
//!
//! - [`sensing`]: dual-scale ±1 sensing matrices built on a permuted
//!   Hadamard core, and simulated single-pixel acquisition of time-varying
//!   scenes;
//! - [`preview`]: fast least-squares low-resolution previews from sliding
//!   measurement windows;
//! - [`flow`]: pyramidal optical flow between upsampled previews, with
//!   forward/backward consistency masking and subpixel brightness-constancy
//!   constraints;
//! - [`solver`]: full-resolution video recovery by flow-constrained 3D
//!   total-variation minimization, plus the no-flow and frame-wise baselines;
//! - [`scene`] and [`volume`]: synthetic benchmark scenes and file I/O;
//! - [`pipeline`] and [`config`]: end-to-end experiment orchestration behind
//!   the `spcvideo` command-line tool.
//!
//! See the crate examples for one runnable program per capability.

pub mod config;
pub mod error;
pub mod flow;
pub mod hadamard;
pub mod pipeline;
pub mod plan;
pub mod preview;
pub mod scene;
pub mod sensing;
pub mod solver;
pub mod volume;

pub use error::{Error, Result};
pub use plan::FramePlan;
pub use scene::{Scene, SceneKind, SceneSpec};
pub use sensing::{DssMatrix, MeasurementStream, NoiseModel, SceneSource};
pub use volume::VideoVolume;
