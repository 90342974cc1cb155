//! Dual-domain 3D semantic segmentation on indoor-scale scenes.
//!
//! The library processes a colored triangular mesh in two coupled domains:
//! a *Euclidean* branch of sparse voxel convolutions arranged as a U-Net,
//! and a *geodesic* branch of attention operators running on a hierarchy of
//! simplified meshes. Decoder features are projected from voxels to mesh
//! vertices by trilinear interpolation, fused with the geodesic stream, and
//! refined along edge connectivity before per-vertex classification.
//!
//! Every differentiable operator ships with a hand-written backward pass;
//! `ops::gradcheck` verifies each one against central finite differences.

pub mod error;
pub mod rng;

pub mod mesh;

pub mod hierarchy;

pub mod voxel;

pub mod ops;

pub mod model;

pub mod train;

pub mod cli;

pub use error::{Error, Result};
