//! Property tests for the geometric and attention invariants.

use meshvox::hierarchy::vertex_clustering;
use meshvox::mesh::{SurfaceMesh, DEFAULT_COLOR};
use meshvox::voxel::trilinear_weights;
use nalgebra::Vector3;
use proptest::prelude::*;

fn arbitrary_cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(
        ((-2.0..2.0f64), (-2.0..2.0f64), (-2.0..2.0f64)),
        4..40,
    )
    .prop_map(|v| v.into_iter().map(|(x, y, z)| [x, y, z]).collect())
}

/// Fan triangulation over arbitrary points; degenerate faces filtered.
fn mesh_of(points: &[[f64; 3]]) -> Option<SurfaceMesh> {
    let positions: Vec<Vector3<f64>> = points
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]))
        .collect();
    let mut faces = Vec::new();
    for i in 1..positions.len().saturating_sub(1) {
        let (a, b, c) = (0u32, i as u32, (i + 1) as u32);
        faces.push([a, b, c]);
    }
    SurfaceMesh::new(positions, vec![DEFAULT_COLOR; points.len()], None, faces).ok()
}

proptest! {
    /// The eight trilinear weights are non-negative and sum to one.
    #[test]
    fn trilinear_weights_partition_unity(
        x in -5.0..5.0f64,
        y in -5.0..5.0f64,
        z in -5.0..5.0f64,
        r in 1.0..200.0f64,
    ) {
        let (_, w) = trilinear_weights(&Vector3::new(x, y, z), r);
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
    }

    /// Clustering twice at a fixed cell size reaches a vertex-count fixpoint.
    #[test]
    fn vertex_clustering_is_idempotent(points in arbitrary_cloud(), cell in 0.05..2.0f64) {
        if let Some(mesh) = mesh_of(&points) {
            let (once, trace) = vertex_clustering(&mesh, cell).unwrap();
            prop_assert_eq!(trace.fine_count(), mesh.vertex_count());
            let (twice, _) = vertex_clustering(&once, cell).unwrap();
            prop_assert_eq!(once.vertex_count(), twice.vertex_count());
        }
    }

    /// Clustered meshes keep a symmetric, self-loop-free adjacency.
    #[test]
    fn clustered_adjacency_is_symmetric(points in arbitrary_cloud(), cell in 0.1..1.0f64) {
        if let Some(mesh) = mesh_of(&points) {
            let (coarse, _) = vertex_clustering(&mesh, cell).unwrap();
            for i in 0..coarse.vertex_count() {
                let ring = coarse.one_ring(i).unwrap();
                prop_assert!(!ring.contains(&(i as u32)));
                for &j in ring {
                    prop_assert!(coarse.one_ring(j as usize).unwrap().contains(&(i as u32)));
                }
            }
        }
    }

    /// Voxel means stay inside the member feature range per channel.
    #[test]
    fn voxel_mean_bounded_by_members(points in arbitrary_cloud()) {
        let positions: Vec<Vector3<f64>> = points
            .iter()
            .map(|p| Vector3::new(p[0], p[1], p[2]))
            .collect();
        let feats = ndarray::Array2::from_shape_fn((positions.len(), 2), |(i, k)| {
            (points[i][k] * 10.0).sin()
        });
        let (grid, v2v) =
            meshvox::voxel::voxelize_features::<f64>(&positions, &feats.view(), 3.0).unwrap();
        for (i, &row) in v2v.iter().enumerate() {
            for k in 0..2 {
                let v = grid.features[[row as usize, k]];
                prop_assert!(v <= 1.0 + 1e-9 && v >= -1.0 - 1e-9);
                let _ = i;
            }
        }
    }
}
