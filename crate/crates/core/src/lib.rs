//! Core library for the posefuse pipeline.
//!
//! The pipeline combines a frozen toy whole-body estimator with a frozen toy
//! hand estimator. A small trainable modulator (CHAM) injects hand features
//! into the body token stream so the frozen body model can recover wrist
//! orientations it was never able to learn from its own inputs, while finger
//! articulation and hand shape are transferred onto the body mesh by a
//! differentiable rigid alignment.
//!
//! Module map:
//!
//! - [`geom`] — rotations, rigid/similarity registration, grid resampling,
//!   positional encodings, Laplacian smoothing, gradient checking.
//! - [`model`] — parametric articulated mesh models (toy body / toy hand):
//!   shape blending, forward kinematics, skinning, projection.
//! - [`backbone`] — frozen token-stream body backbone with per-block fusion
//!   points, frozen hand backbone, body pretraining.
//! - [`cham`] — the conditional hands modulator (the only trainable part).
//! - [`transfer`] — canonical hand mesh, wrist+MCP rigid alignment, vertex
//!   replacement and seam smoothing, alignment Jacobians.
//! - [`train`] — losses, gradients, metrics, shape fitting, CHAM training.
//! - [`data`] — synthetic scene/dataset generation and the on-disk formats.
//! - [`pipeline`] — end-to-end inference, evaluation, baselines, timings.

pub mod backbone;
pub mod cham;
pub mod config;
pub mod data;
pub mod geom;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod train;
pub mod transfer;
