//! Trilinear voxel-to-vertex projection.
//!
//! The center of cell `c` sits at `(c + 0.5) / r`. Each vertex interpolates
//! over the eight lattice voxels surrounding its continuous position;
//! inactive neighbors contribute zero feature and the weights are not
//! renormalized, so two vertices sharing the same neighbor set still receive
//! distinct features whenever the neighborhood is non-constant.

use nalgebra::Vector3;
use ndarray::{Array2, ArrayView2};

use super::{Coord, VoxelSet};
use crate::ops::{lit, Scalar};

/// The eight surrounding lattice cells and their trilinear weights.
/// Weights are non-negative and sum to one.
pub fn trilinear_weights(p: &Vector3<f64>, resolution: f64) -> ([Coord; 8], [f64; 8]) {
    let x = p.x * resolution - 0.5;
    let y = p.y * resolution - 0.5;
    let z = p.z * resolution - 0.5;
    let base = [x.floor(), y.floor(), z.floor()];
    let frac = [x - base[0], y - base[1], z - base[2]];
    let base = [base[0] as i32, base[1] as i32, base[2] as i32];

    let mut coords = [[0i32; 3]; 8];
    let mut weights = [0f64; 8];
    for (k, item) in coords.iter_mut().enumerate() {
        let corner = [(k >> 2) & 1, (k >> 1) & 1, k & 1];
        let mut w = 1.0;
        for axis in 0..3 {
            item[axis] = base[axis] + corner[axis] as i32;
            w *= if corner[axis] == 1 {
                frac[axis]
            } else {
                1.0 - frac[axis]
            };
        }
        weights[k] = w;
    }
    (coords, weights)
}

/// Interpolate voxel features at continuous vertex positions.
pub fn project_to_vertices<S: Scalar>(
    set: &VoxelSet,
    feats: &ArrayView2<S>,
    positions: &[Vector3<f64>],
) -> Array2<S> {
    let c = feats.ncols();
    let mut out = Array2::zeros((positions.len(), c));
    for (i, p) in positions.iter().enumerate() {
        let (coords, weights) = trilinear_weights(p, set.resolution());
        let mut row = out.row_mut(i);
        for k in 0..8 {
            if let Some(r) = set.row_of(&coords[k]) {
                row.scaled_add(lit::<S>(weights[k]), &feats.row(r));
            }
        }
    }
    out
}

/// Scatter vertex gradients back into voxel rows with the same weights.
pub fn project_to_vertices_backward<S: Scalar>(
    set: &VoxelSet,
    positions: &[Vector3<f64>],
    channels: usize,
    grad_out: &ArrayView2<S>,
) -> Array2<S> {
    let mut g = Array2::zeros((set.len(), channels));
    for (i, p) in positions.iter().enumerate() {
        let (coords, weights) = trilinear_weights(p, set.resolution());
        for k in 0..8 {
            if let Some(r) = set.row_of(&coords[k]) {
                let mut row = g.row_mut(r);
                row.scaled_add(lit::<S>(weights[k]), &grad_out.row(i));
            }
        }
    }
    g
}
