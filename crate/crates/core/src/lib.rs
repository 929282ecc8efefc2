//! Pseudo-labels for independently moving objects (IMOs) from optical flow
//! and depth: RANSAC egomotion, residual thresholding, event volumes,
//! metrics, a scene simulator and the file formats that tie them together.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod egomotion;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod labeler;
pub mod events;
pub mod metrics;
pub mod io;
pub mod pipeline;
pub mod simulator;
