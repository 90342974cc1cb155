//! Triangular meshes: representation, adjacency queries, edge sampling, and
//! label projection between simplification levels.

mod io;

pub use io::{load_mesh, load_obj, load_ply, save_labeled_ply, save_ply, MeshFormat, LABEL_PALETTE};

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::hierarchy::TraceMap;
use crate::rng::rng_for;

/// Default color assigned when a file carries no color attribute.
pub const DEFAULT_COLOR: [f64; 3] = [0.5, 0.5, 0.5];

/// A triangular surface mesh with per-vertex attributes.
///
/// Immutable after construction; adjacency is derived from the faces once and
/// shared by all queries. Non-manifold connectivity and isolated vertices are
/// legal everywhere.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    positions: Vec<Vector3<f64>>,
    colors: Vec<[f64; 3]>,
    labels: Option<Vec<i32>>,
    faces: Vec<[u32; 3]>,
    adjacency: Vec<Vec<u32>>,
}

impl SurfaceMesh {
    /// Build a mesh and its one-ring adjacency.
    ///
    /// Faces must index existing vertices and have three distinct corners.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        colors: Vec<[f64; 3]>,
        labels: Option<Vec<i32>>,
        faces: Vec<[u32; 3]>,
    ) -> Result<Self> {
        let n = positions.len();
        if colors.len() != n {
            return Err(Error::validation(format!(
                "color count {} != vertex count {}",
                colors.len(),
                n
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::validation(format!(
                    "label count {} != vertex count {}",
                    l.len(),
                    n
                )));
            }
        }
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v as usize >= n {
                    return Err(Error::validation(format!(
                        "face {fi} references vertex {v} beyond vertex count {n}"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::validation(format!(
                    "face {fi} is degenerate: [{}, {}, {}]",
                    f[0], f[1], f[2]
                )));
            }
        }
        let adjacency = build_adjacency(n, &faces);
        Ok(SurfaceMesh {
            positions,
            colors,
            labels,
            faces,
            adjacency,
        })
    }

    /// Same topology, new geometry. Used by augmentation; skips re-deriving
    /// the adjacency since faces are untouched.
    pub fn with_geometry(&self, positions: Vec<Vector3<f64>>, colors: Vec<[f64; 3]>) -> Self {
        assert_eq!(positions.len(), self.vertex_count());
        assert_eq!(colors.len(), self.vertex_count());
        SurfaceMesh {
            positions,
            colors,
            labels: self.labels.clone(),
            faces: self.faces.clone(),
            adjacency: self.adjacency.clone(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn set_labels(&mut self, labels: Option<Vec<i32>>) -> Result<()> {
        if let Some(l) = &labels {
            if l.len() != self.vertex_count() {
                return Err(Error::validation("label count != vertex count"));
            }
        }
        self.labels = labels;
        Ok(())
    }

    /// Sorted, duplicate-free one-ring neighborhood of vertex `i`.
    /// Never contains `i` itself; empty for isolated vertices.
    pub fn one_ring(&self, i: usize) -> Result<&[u32]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::validation(format!(
                    "vertex index {i} out of range (vertex count {})",
                    self.vertex_count()
                ))
            })
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    /// All undirected edges as sorted `(min, max)` pairs in ascending order.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut edges = Vec::new();
        for (i, ring) in self.adjacency.iter().enumerate() {
            for &j in ring {
                if (i as u32) < j {
                    edges.push((i as u32, j));
                }
            }
        }
        edges
    }

    /// CSR neighborhood view of the full adjacency.
    pub fn neighborhoods(&self, self_in_ring: bool) -> Neighborhoods {
        Neighborhoods::from_adjacency(&self.adjacency, self_in_ring)
    }

    /// Retain each undirected edge independently with `keep_probability`.
    ///
    /// Deterministic for a fixed seed; the result is symmetric by
    /// construction since sampling happens on undirected pairs.
    pub fn sample_edges(&self, keep_probability: f64, seed: u64) -> Result<EdgeSet> {
        if !(keep_probability > 0.0 && keep_probability <= 1.0) {
            return Err(Error::validation(format!(
                "keep_probability {keep_probability} outside (0, 1]"
            )));
        }
        let mut rng = rng_for(seed, "edge-sampling", 0);
        let edges = self
            .edges()
            .into_iter()
            .filter(|_| rng.random::<f64>() < keep_probability)
            .collect();
        Ok(EdgeSet {
            edges,
            vertex_count: self.vertex_count(),
        })
    }
}

fn build_adjacency(n: usize, faces: &[[u32; 3]]) -> Vec<Vec<u32>> {
    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
    }
    for ring in &mut adjacency {
        ring.sort_unstable();
        ring.dedup();
    }
    adjacency
}

/// A subset of a mesh's undirected edges, e.g. from training-time sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    edges: Vec<(u32, u32)>,
    vertex_count: usize,
}

impl EdgeSet {
    pub fn new(edges: Vec<(u32, u32)>, vertex_count: usize) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for &(a, b) in &edges {
            if a >= b {
                return Err(Error::validation(format!("edge ({a}, {b}) not sorted")));
            }
            if b as usize >= vertex_count {
                return Err(Error::validation(format!("edge ({a}, {b}) out of range")));
            }
            if !seen.insert((a, b)) {
                return Err(Error::validation(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(EdgeSet {
            edges,
            vertex_count,
        })
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Adjacency view of the sampled edges.
    pub fn neighborhoods(&self, self_in_ring: bool) -> Neighborhoods {
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); self.vertex_count];
        for &(a, b) in &self.edges {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
        for ring in &mut adjacency {
            ring.sort_unstable();
        }
        Neighborhoods::from_adjacency(&adjacency, self_in_ring)
    }
}

/// Compressed (CSR) neighbor lists consumed by the graph operators.
///
/// Neighbors of each vertex are stored in ascending index order, which fixes
/// the accumulation order of all attention sums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Neighborhoods {
    pub fn from_adjacency(adjacency: &[Vec<u32>], self_in_ring: bool) -> Self {
        let mut offsets = Vec::with_capacity(adjacency.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for (i, ring) in adjacency.iter().enumerate() {
            if self_in_ring {
                // Keep ascending order with the center vertex included.
                let mut merged: Vec<u32> = ring.clone();
                match merged.binary_search(&(i as u32)) {
                    Ok(_) => {}
                    Err(pos) => merged.insert(pos, i as u32),
                }
                targets.extend_from_slice(&merged);
            } else {
                targets.extend_from_slice(ring);
            }
            offsets.push(targets.len());
        }
        Neighborhoods { offsets, targets }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn ring(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    /// Offset of vertex `i`'s first neighbor in edge-flattened buffers.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }
}

/// Transfer per-vertex class ids from a coarse mesh back to a fine mesh.
///
/// `mapping` must assign every fine vertex to a coarse one (a trace map or a
/// nearest-vertex map).
pub fn project_labels(
    fine: &SurfaceMesh,
    coarse_prediction: &[i32],
    mapping: &TraceMap,
) -> Result<Vec<i32>> {
    if mapping.fine_count() != fine.vertex_count() {
        return Err(Error::validation(format!(
            "mapping covers {} vertices, fine mesh has {}",
            mapping.fine_count(),
            fine.vertex_count()
        )));
    }
    if mapping.coarse_count() != coarse_prediction.len() {
        return Err(Error::validation(format!(
            "mapping expects {} coarse vertices, prediction has {}",
            mapping.coarse_count(),
            coarse_prediction.len()
        )));
    }
    Ok(mapping
        .map()
        .iter()
        .map(|&c| coarse_prediction[c as usize])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tetrahedron() -> SurfaceMesh {
        let positions = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, 3f64.sqrt() / 2.0, 0.0),
            Vector3::new(0.5, 3f64.sqrt() / 6.0, (2f64 / 3.0).sqrt()),
        ];
        let faces = vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]];
        SurfaceMesh::new(positions, vec![DEFAULT_COLOR; 4], None, faces).unwrap()
    }

    #[test]
    fn tetrahedron_rings_are_complete() {
        let mesh = tetrahedron();
        assert_eq!(mesh.one_ring(0).unwrap(), &[1, 2, 3]);
        for i in 0..4 {
            assert_eq!(mesh.one_ring(i).unwrap().len(), 3);
        }
    }

    #[test]
    fn one_ring_out_of_range_is_validation_error() {
        let mesh = tetrahedron();
        assert!(matches!(mesh.one_ring(4), Err(Error::Validation(_))));
    }

    #[test]
    fn isolated_vertex_has_empty_ring() {
        let positions = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(5.0, 5.0, 5.0),
        ];
        let mesh =
            SurfaceMesh::new(positions, vec![DEFAULT_COLOR; 4], None, vec![[0, 1, 2]]).unwrap();
        assert!(mesh.one_ring(3).unwrap().is_empty());
    }

    #[test]
    fn degenerate_face_rejected() {
        let positions = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let err = SurfaceMesh::new(positions, vec![DEFAULT_COLOR; 2], None, vec![[0, 1, 0]]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn face_index_out_of_range_rejected() {
        let positions = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let err = SurfaceMesh::new(positions, vec![DEFAULT_COLOR; 2], None, vec![[0, 1, 2]]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn one_ring_never_contains_center() {
        let mesh = tetrahedron();
        for i in 0..mesh.vertex_count() {
            assert!(!mesh.one_ring(i).unwrap().contains(&(i as u32)));
        }
    }

    #[test]
    fn adjacency_is_symmetric() {
        let mesh = tetrahedron();
        for i in 0..mesh.vertex_count() {
            for &j in mesh.one_ring(i).unwrap() {
                assert!(mesh.one_ring(j as usize).unwrap().contains(&(i as u32)));
            }
        }
    }

    /// Canonical icosahedron; every vertex has exactly five incident edges.
    #[test]
    fn icosahedron_rings_have_length_five() {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let positions: Vec<Vector3<f64>> = vec![
            Vector3::new(-1.0, phi, 0.0),
            Vector3::new(1.0, phi, 0.0),
            Vector3::new(-1.0, -phi, 0.0),
            Vector3::new(1.0, -phi, 0.0),
            Vector3::new(0.0, -1.0, phi),
            Vector3::new(0.0, 1.0, phi),
            Vector3::new(0.0, -1.0, -phi),
            Vector3::new(0.0, 1.0, -phi),
            Vector3::new(phi, 0.0, -1.0),
            Vector3::new(phi, 0.0, 1.0),
            Vector3::new(-phi, 0.0, -1.0),
            Vector3::new(-phi, 0.0, 1.0),
        ];
        let faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        // Independent oracle: count incident edges per vertex from the face list.
        let mut incident = vec![std::collections::BTreeSet::new(); 12];
        for f in &faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                incident[a as usize].insert(b);
                incident[b as usize].insert(a);
            }
        }
        let mesh = SurfaceMesh::new(positions, vec![DEFAULT_COLOR; 12], None, faces).unwrap();
        for i in 0..12 {
            assert_eq!(incident[i].len(), 5);
            assert_eq!(mesh.one_ring(i).unwrap().len(), 5);
        }
    }

    #[test]
    fn sample_edges_keep_all() {
        let mesh = tetrahedron();
        let set = mesh.sample_edges(1.0, 3).unwrap();
        assert_eq!(set.edges(), mesh.edges().as_slice());
    }

    #[test]
    fn sample_edges_deterministic() {
        let mesh = tetrahedron();
        assert_eq!(
            mesh.sample_edges(0.5, 11).unwrap(),
            mesh.sample_edges(0.5, 11).unwrap()
        );
    }

    #[test]
    fn sample_edges_binomial_bound() {
        // Grid with |E| = 2*(w-1)*h + (w-1)*(h-1) edges, around ten thousand.
        let (w, h) = (59usize, 59usize);
        let mut positions = Vec::new();
        for y in 0..h {
            for x in 0..w {
                positions.push(Vector3::new(x as f64, y as f64, 0.0));
            }
        }
        let mut faces = Vec::new();
        let id = |x: usize, y: usize| (y * w + x) as u32;
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                faces.push([id(x, y), id(x + 1, y), id(x + 1, y + 1)]);
                faces.push([id(x, y), id(x + 1, y + 1), id(x, y + 1)]);
            }
        }
        let mesh =
            SurfaceMesh::new(positions.clone(), vec![DEFAULT_COLOR; w * h], None, faces).unwrap();
        let total = mesh.edges().len() as f64;
        assert!(total > 9_000.0);
        let kept = mesh.sample_edges(0.5, 17).unwrap().len() as f64;
        let sigma = (total * 0.25).sqrt();
        assert!(
            (kept - total * 0.5).abs() < 3.0 * sigma,
            "kept {kept} of {total}"
        );
    }

    #[test]
    fn sample_edges_rejects_bad_probability() {
        let mesh = tetrahedron();
        assert!(mesh.sample_edges(0.0, 1).is_err());
        assert!(mesh.sample_edges(1.5, 1).is_err());
    }

    #[test]
    fn sampled_adjacency_is_symmetric() {
        let mesh = tetrahedron();
        let nbrs = mesh.sample_edges(0.6, 5).unwrap().neighborhoods(false);
        for i in 0..nbrs.vertex_count() {
            for &j in nbrs.ring(i) {
                assert!(nbrs.ring(j as usize).contains(&(i as u32)));
            }
        }
    }

    #[test]
    fn self_in_ring_inserts_center_once() {
        let mesh = tetrahedron();
        let nbrs = mesh.neighborhoods(true);
        for i in 0..4 {
            let ring = nbrs.ring(i);
            assert_eq!(ring.len(), 4);
            assert_eq!(ring.iter().filter(|&&j| j == i as u32).count(), 1);
            assert!(ring.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn project_labels_identity_and_constant() {
        let mesh = tetrahedron();
        let identity = TraceMap::identity(4);
        let pred = vec![3, 1, 2, 0];
        assert_eq!(project_labels(&mesh, &pred, &identity).unwrap(), pred);

        let all_to_one = TraceMap::new(vec![0, 0, 0, 0], 1).unwrap();
        assert_eq!(
            project_labels(&mesh, &[7], &all_to_one).unwrap(),
            vec![7, 7, 7, 7]
        );
    }

    #[test]
    fn project_labels_two_clusters() {
        let mesh = tetrahedron();
        let map = TraceMap::new(vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(
            project_labels(&mesh, &[4, 9], &map).unwrap(),
            vec![4, 9, 4, 9]
        );
    }

    #[test]
    fn project_labels_uncovered_vertex_fails() {
        let mesh = tetrahedron();
        let short = TraceMap::new(vec![0, 0, 0], 1).unwrap();
        assert!(project_labels(&mesh, &[1], &short).is_err());
    }
}
