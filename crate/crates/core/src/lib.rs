//! Curved-building reconstruction from airborne point clouds.
//!
//! The pipeline turns an unordered point cloud into a compact model made of
//! posed canonical primitives (hemisphere, cone, cylinder, polyhedron) plus a
//! per-primitive embedded-deformation graph:
//!
//! 1. [`contour`]: ground filtering, max-z gridding and marching-squares
//!    contour tracing at fixed elevation intervals.
//! 2. [`topology`]: inner-nested clustering of contours into buildings and
//!    point segmentation.
//! 3. [`procrustes`]: similarity (PA) and affine (MPA) Procrustes alignment of
//!    consecutive contours, used to cut a building into primitive units.
//! 4. [`primitives`]: canonical primitives, their discretisation, the
//!    volumetric distance field and the rigid fit against it.
//! 5. [`deform`]: embedded deformation graph, its energies and the
//!    Levenberg-Marquardt refinement.
//! 6. [`model`]: the compact model and accuracy evaluation.
//! 7. [`pipeline`]: the per-building steps tying 3-6 together.
//! 8. [`synth`]: synthetic scenes and the PA-vs-MPA Monte Carlo study.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command line live in the `primitect` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod contour;
pub mod deform;
mod error;
pub mod geometry;
pub mod kdtree;
pub mod lm;
pub mod model;
pub mod pipeline;
pub mod primitives;
pub mod procrustes;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
pub use geometry::{Mat2, Mat3, Point2, Point3, PointCloud, Polygon};
