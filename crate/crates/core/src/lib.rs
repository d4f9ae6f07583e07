//! Shading-based refinement of triangle meshes observed by a camera with a
//! nearby point light (an active IR projector or LED).
//!
//! The crate covers the whole chain: mesh preprocessing, projection and
//! visibility, the near-light shading model, radiometric calibration,
//! albedo estimation and grouping, the displacement optimizer, synthetic
//! scenes with evaluation metrics, and file formats.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod albedo;
pub mod calib;
pub mod camera;
pub mod eval;
pub mod io;
pub mod error;
pub mod mesh;
mod par;
pub mod refine;
pub mod shading;
pub mod synth;

pub use error::{Error, Result};
