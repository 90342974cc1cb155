//! Vertex clustering on a uniform grid.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::hierarchy::TraceMap;
use crate::mesh::SurfaceMesh;

/// Grid cell of a point; the grid is anchored at the coordinate origin.
pub(crate) fn cell_of(p: &Vector3<f64>, cell_size: f64) -> [i64; 3] {
    [
        (p.x / cell_size).floor() as i64,
        (p.y / cell_size).floor() as i64,
        (p.z / cell_size).floor() as i64,
    ]
}

/// Merge all vertices falling into the same cubical cell.
///
/// Each output vertex sits at the mean position/color of its members; faces
/// are re-indexed, faces collapsing to fewer than three distinct clusters are
/// dropped, and duplicates are removed. The returned trace records cluster
/// membership.
pub fn vertex_clustering(mesh: &SurfaceMesh, cell_size: f64) -> Result<(SurfaceMesh, TraceMap)> {
    cluster_with_attributes(mesh, mesh, &TraceMap::identity(mesh.vertex_count()), cell_size)
}

/// Variant used when attributes should be averaged over the raw input mesh
/// rather than over the already-simplified one: membership is decided by the
/// positions of `mesh`, attributes come from the preimages in `source`.
pub(crate) fn vertex_clustering_against(
    mesh: &SurfaceMesh,
    source: &SurfaceMesh,
    source_to_mesh: &TraceMap,
    cell_size: f64,
) -> Result<(SurfaceMesh, TraceMap)> {
    cluster_with_attributes(mesh, source, source_to_mesh, cell_size)
}

fn cluster_with_attributes(
    mesh: &SurfaceMesh,
    source: &SurfaceMesh,
    source_to_mesh: &TraceMap,
    cell_size: f64,
) -> Result<(SurfaceMesh, TraceMap)> {
    if mesh.vertex_count() == 0 {
        return Err(Error::validation("cannot cluster an empty mesh"));
    }
    if !(cell_size > 0.0) {
        return Err(Error::validation(format!(
            "cell size must be positive, got {cell_size}"
        )));
    }
    if source_to_mesh.fine_count() != source.vertex_count()
        || source_to_mesh.coarse_count() != mesh.vertex_count()
    {
        return Err(Error::validation("attribute trace does not match meshes"));
    }

    // Deterministic cluster ids: sorted cell order.
    let cells: Vec<[i64; 3]> = mesh
        .positions()
        .iter()
        .map(|p| cell_of(p, cell_size))
        .collect();
    let mut cell_ids: BTreeMap<[i64; 3], u32> = BTreeMap::new();
    for c in &cells {
        let next = cell_ids.len() as u32;
        cell_ids.entry(*c).or_insert(next);
    }
    // BTreeMap insertion above assigns ids in first-seen order; re-number by
    // sorted cell order for determinism independent of vertex order.
    for (rank, (_, id)) in cell_ids.iter_mut().enumerate() {
        *id = rank as u32;
    }
    let coarse_count = cell_ids.len();
    let fine_to_coarse: Vec<u32> = cells.iter().map(|c| cell_ids[c]).collect();

    // Attribute accumulation over the source preimages.
    let mut pos_sum = vec![Vector3::<f64>::zeros(); coarse_count];
    let mut color_sum = vec![[0.0f64; 3]; coarse_count];
    let mut counts = vec![0u64; coarse_count];
    let mut label_votes: Vec<BTreeMap<i32, u64>> = vec![BTreeMap::new(); coarse_count];
    for (i, &mid) in source_to_mesh.map().iter().enumerate() {
        let c = fine_to_coarse[mid as usize] as usize;
        pos_sum[c] += source.positions()[i];
        let col = source.colors()[i];
        for k in 0..3 {
            color_sum[c][k] += col[k];
        }
        counts[c] += 1;
        if let Some(labels) = source.labels() {
            *label_votes[c].entry(labels[i]).or_insert(0) += 1;
        }
    }
    let positions: Vec<Vector3<f64>> = pos_sum
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .collect();
    let colors: Vec<[f64; 3]> = color_sum
        .iter()
        .zip(&counts)
        .map(|(s, &n)| [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64])
        .collect();
    let labels = if source.labels().is_some() {
        Some(label_votes.iter().map(|votes| majority(votes)).collect())
    } else {
        None
    };

    let faces = remap_faces(mesh.faces(), &fine_to_coarse);
    let coarse = SurfaceMesh::new(positions, colors, labels, faces)?;
    let trace = TraceMap::new(fine_to_coarse, coarse_count)?;
    Ok((coarse, trace))
}

/// Most frequent label; ties resolve to the smallest id.
pub(crate) fn majority(votes: &BTreeMap<i32, u64>) -> i32 {
    let mut best = (i32::MAX, 0u64);
    for (&label, &count) in votes {
        if count > best.1 {
            best = (label, count);
        }
    }
    best.0
}

/// Re-index faces through a vertex mapping, dropping collapsed faces and
/// duplicates (first occurrence wins, keeping its winding).
pub(crate) fn remap_faces(faces: &[[u32; 3]], map: &[u32]) -> Vec<[u32; 3]> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for f in faces {
        let m = [map[f[0] as usize], map[f[1] as usize], map[f[2] as usize]];
        if m[0] == m[1] || m[1] == m[2] || m[0] == m[2] {
            continue;
        }
        let mut key = m;
        key.sort_unstable();
        if seen.insert(key) {
            out.push(m);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::DEFAULT_COLOR;

    fn unit_square(offset: f64) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
        let positions = vec![
            Vector3::new(offset, 0.0, 0.0),
            Vector3::new(offset + 1.0, 0.0, 0.0),
            Vector3::new(offset + 1.0, 1.0, 0.0),
            Vector3::new(offset, 1.0, 0.0),
        ];
        (positions, vec![[0, 1, 2], [0, 2, 3]])
    }

    #[test]
    fn all_in_one_cell() {
        let (positions, faces) = unit_square(0.0);
        let mesh = SurfaceMesh::new(positions, vec![DEFAULT_COLOR; 4], None, faces).unwrap();
        let (coarse, trace) = vertex_clustering(&mesh, 10.0).unwrap();
        assert_eq!(coarse.vertex_count(), 1);
        assert_eq!(coarse.face_count(), 0);
        assert_eq!(trace.map(), &[0, 0, 0, 0]);
    }

    #[test]
    fn tiny_cells_give_bijection() {
        let (positions, faces) = unit_square(0.0);
        let mesh =
            SurfaceMesh::new(positions.clone(), vec![DEFAULT_COLOR; 4], None, faces).unwrap();
        let (coarse, trace) = vertex_clustering(&mesh, 0.25).unwrap();
        assert_eq!(coarse.vertex_count(), 4);
        assert_eq!(coarse.face_count(), 2);
        let mut seen = trace.map().to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn two_squares_ten_meters_apart() {
        // Hand-computed: both squares fit single 2 m cells; means are the centroids.
        let (mut positions, mut faces) = unit_square(0.0);
        let (p2, f2) = unit_square(10.0);
        positions.extend(p2);
        faces.extend(f2.iter().map(|f| [f[0] + 4, f[1] + 4, f[2] + 4]));
        let mesh = SurfaceMesh::new(positions, vec![DEFAULT_COLOR; 8], None, faces).unwrap();
        let (coarse, trace) = vertex_clustering(&mesh, 2.0).unwrap();
        assert_eq!(coarse.vertex_count(), 2);
        assert_eq!(coarse.positions()[0], Vector3::new(0.5, 0.5, 0.0));
        assert_eq!(coarse.positions()[1], Vector3::new(10.5, 0.5, 0.0));
        assert_eq!(trace.map(), &[0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn clustering_is_idempotent_at_fixed_cell() {
        let (positions, faces) = unit_square(0.0);
        let mesh = SurfaceMesh::new(positions, vec![DEFAULT_COLOR; 4], None, faces).unwrap();
        let (once, _) = vertex_clustering(&mesh, 0.6).unwrap();
        let (twice, _) = vertex_clustering(&once, 0.6).unwrap();
        assert_eq!(once.vertex_count(), twice.vertex_count());
    }

    #[test]
    fn labels_pool_by_majority_smallest_tie() {
        let (positions, faces) = unit_square(0.0);
        let mesh = SurfaceMesh::new(
            positions,
            vec![DEFAULT_COLOR; 4],
            Some(vec![2, 2, 1, 1]),
            faces,
        )
        .unwrap();
        let (coarse, _) = vertex_clustering(&mesh, 10.0).unwrap();
        // Tie between 1 and 2: smallest id wins.
        assert_eq!(coarse.labels().unwrap(), &[1]);
    }

    #[test]
    fn empty_mesh_rejected() {
        let mesh = SurfaceMesh::new(vec![], vec![], None, vec![]).unwrap();
        assert!(vertex_clustering(&mesh, 1.0).is_err());
    }
}
