//! Sparse voxel grids and voxelization.

mod conv;
mod project;

pub use conv::{sparse_conv_backward, sparse_conv_forward, ConvGrads, ConvKernel, ConvMode};
pub use project::{project_to_vertices, project_to_vertices_backward, trilinear_weights};

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use nalgebra::Vector3;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::ops::{lit, Scalar};

/// Integer voxel coordinate.
pub type Coord = [i32; 3];

/// Hasher applying a 64-bit bit mix to the packed coordinate bytes; the
/// standard library map on top of it is open-addressed.
#[derive(Default)]
pub struct CoordMixHasher(u64);

impl Hasher for CoordMixHasher {
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

type CoordMap = HashMap<Coord, u32, BuildHasherDefault<CoordMixHasher>>;

/// An active voxel set: sorted coordinates plus the coordinate-to-row index.
/// Iteration follows the sorted coordinate order, so every consumer is
/// deterministic.
#[derive(Debug, Clone)]
pub struct VoxelSet {
    resolution: f64,
    coords: Vec<Coord>,
    index: CoordMap,
}

impl VoxelSet {
    /// Build from arbitrary coordinates; sorts and deduplicates.
    pub fn from_coords(resolution: f64, mut coords: Vec<Coord>) -> Self {
        coords.sort_unstable();
        coords.dedup();
        let mut index = CoordMap::default();
        for (row, &c) in coords.iter().enumerate() {
            index.insert(c, row as u32);
        }
        VoxelSet {
            resolution,
            coords,
            index,
        }
    }

    /// Voxels per meter.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn row_of(&self, coord: &Coord) -> Option<usize> {
        self.index.get(coord).map(|&r| r as usize)
    }
}

/// Hash-indexed active voxel set with per-voxel features and member counts.
#[derive(Debug, Clone)]
pub struct SparseVoxelGrid<S> {
    pub set: VoxelSet,
    /// Rows aligned with `set.coords()`.
    pub features: Array2<S>,
    /// Number of vertices averaged into each voxel.
    pub counts: Vec<u32>,
}

impl<S: Scalar> SparseVoxelGrid<S> {
    pub fn active_count(&self) -> usize {
        self.set.len()
    }
}

/// Grid cell of a vertex at the given resolution.
pub fn voxel_cell(p: &Vector3<f64>, resolution: f64) -> Coord {
    [
        (p.x * resolution).floor() as i32,
        (p.y * resolution).floor() as i32,
        (p.z * resolution).floor() as i32,
    ]
}

/// Average per-vertex features into their voxel cells.
///
/// The voxel feature is the mean of the features of all vertices whose
/// coordinate falls into the cell; `vertex_to_voxel[i]` is the row of the
/// voxel containing vertex `i`.
pub fn voxelize_features<S: Scalar>(
    positions: &[Vector3<f64>],
    features: &ArrayView2<S>,
    resolution: f64,
) -> Result<(SparseVoxelGrid<S>, Vec<u32>)> {
    if positions.is_empty() {
        return Err(Error::validation("cannot voxelize an empty vertex set"));
    }
    if !(resolution > 0.0) {
        return Err(Error::validation(format!(
            "voxel resolution must be positive, got {resolution}"
        )));
    }
    if features.nrows() != positions.len() {
        return Err(Error::validation(format!(
            "voxelize: {} feature rows for {} vertices",
            features.nrows(),
            positions.len()
        )));
    }
    let cells: Vec<Coord> = positions.iter().map(|p| voxel_cell(p, resolution)).collect();
    let set = VoxelSet::from_coords(resolution, cells.clone());

    let c = features.ncols();
    let mut sums: Array2<S> = Array2::zeros((set.len(), c));
    let mut counts = vec![0u32; set.len()];
    let mut vertex_to_voxel = Vec::with_capacity(positions.len());
    for (i, cell) in cells.iter().enumerate() {
        let row = set.row_of(cell).expect("cell built from the same list");
        vertex_to_voxel.push(row as u32);
        counts[row] += 1;
        let mut s = sums.row_mut(row);
        s += &features.row(i);
    }
    for (row, &n) in counts.iter().enumerate() {
        let inv = S::one() / lit::<S>(n as f64);
        let mut s = sums.row_mut(row);
        s *= inv;
    }
    Ok((
        SparseVoxelGrid {
            set,
            features: sums,
            counts,
        },
        vertex_to_voxel,
    ))
}

/// Voxelize a mesh using its vertex colors as the features.
pub fn voxelize<S: Scalar>(
    mesh: &SurfaceMesh,
    resolution: f64,
) -> Result<(SparseVoxelGrid<S>, Vec<u32>)> {
    let colors = Array2::from_shape_fn((mesh.vertex_count(), 3), |(i, k)| {
        lit::<S>(mesh.colors()[i][k])
    });
    voxelize_features(mesh.positions(), &colors.view(), resolution)
}
