//! Geometric core for class-level object pose and metric shape estimation
//! from a single RGB-D view.
//!
//! The crate covers the full loop of a depth-supervised pose pipeline
//! without any learned components:
//!
//! * [`geom`] — quaternions, camera intrinsics, viewpoint-dependent
//!   (allocentric) to camera-frame (egocentric) rotation transport, and
//!   depth back-projection.
//! * [`shapespace`] — latent shape codes, class embedding sets, and a
//!   linear-blend decoder from codes to canonical point clouds, plus the
//!   regularizer that keeps optimized codes near the embedding hull.
//! * [`losses`] — bidirectional Chamfer alignment, balanced mask
//!   cross-entropy, centroid-compensated geometry loss, and the combined
//!   supervised / self-supervised objectives with per-parameter attribution.
//! * [`render`] — a deterministic depth rasterizer producing the depth map
//!   and soft mask consumed by the self-supervision losses.
//! * [`mesh`] — grid triangulation, ball-pivoting hole filling, and
//!   Laplacian smoothing to turn decoded point clouds into meshes.
//! * [`metrics`] — ADD / ADI, oriented-box IoU, pose-threshold and
//!   projection metrics, and average precision over detection sets.
//! * [`refine`] — point-to-point ICP against the observed depth, and a
//!   render-and-compare optimizer that improves a prediction using only
//!   the observed mask and depth.
//! * [`harness`] — procedural shape banks, synthetic scene generation,
//!   dataset schemas, and file formats used by the command line tools.
//!
//! Conventions used throughout: right-handed camera frame with `+z` in
//! front of the camera, quaternions stored `[w, x, y, z]` and kept in the
//! canonical `w >= 0` hemisphere, metric units in meters, and pixel `(i, j)`
//! covering the unit square centered at `(i + 0.5, j + 0.5)`.

pub mod error;
pub mod geom;
pub mod harness;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod refine;
pub mod render;
pub mod shapespace;

#[cfg(doctest)]
mod book;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};

pub use nalgebra;

/// 3-vector used for points, directions, and translations.
pub type Vec3 = nalgebra::Vector3<f64>;

/// 3x3 matrix used for rotation matrices and covariance accumulators.
pub type Mat3 = nalgebra::Matrix3<f64>;
