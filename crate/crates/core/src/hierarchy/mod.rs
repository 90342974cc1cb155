//! Mesh simplification hierarchy: vertex clustering, quadric edge collapse,
//! trace maps, and the pooling/unpooling transfers they induce.

mod qem;
mod vc;

pub use qem::{qem_simplify, QemResult, Quadric};
pub use vc::vertex_clustering;

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{load_ply, save_ply, SurfaceMesh};
use crate::ops::{FeatureMatrix, Scalar};

/// Total, surjective assignment of fine vertices to coarse vertices recorded
/// during one simplification step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceMap {
    fine_to_coarse: Vec<u32>,
    coarse_count: usize,
}

impl TraceMap {
    /// Build and validate a trace: every entry in range, every coarse vertex
    /// with at least one preimage.
    pub fn new(fine_to_coarse: Vec<u32>, coarse_count: usize) -> Result<Self> {
        let mut hit = vec![false; coarse_count];
        for (i, &c) in fine_to_coarse.iter().enumerate() {
            let slot = hit.get_mut(c as usize).ok_or_else(|| {
                Error::validation(format!(
                    "trace entry {i} -> {c} outside coarse count {coarse_count}"
                ))
            })?;
            *slot = true;
        }
        if let Some(missing) = hit.iter().position(|h| !h) {
            return Err(Error::validation(format!(
                "coarse vertex {missing} has no fine preimage"
            )));
        }
        Ok(TraceMap {
            fine_to_coarse,
            coarse_count,
        })
    }

    pub fn identity(n: usize) -> Self {
        TraceMap {
            fine_to_coarse: (0..n as u32).collect(),
            coarse_count: n,
        }
    }

    pub fn fine_count(&self) -> usize {
        self.fine_to_coarse.len()
    }

    pub fn coarse_count(&self) -> usize {
        self.coarse_count
    }

    pub fn map(&self) -> &[u32] {
        &self.fine_to_coarse
    }

    /// `self` (A -> B) then `next` (B -> C), giving A -> C.
    pub fn compose(&self, next: &TraceMap) -> Result<TraceMap> {
        if self.coarse_count != next.fine_count() {
            return Err(Error::validation(format!(
                "cannot compose: {} coarse vs {} fine",
                self.coarse_count,
                next.fine_count()
            )));
        }
        TraceMap::new(
            self.fine_to_coarse
                .iter()
                .map(|&m| next.fine_to_coarse[m as usize])
                .collect(),
            next.coarse_count,
        )
    }

    /// Number of fine vertices mapping to each coarse vertex.
    pub fn preimage_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.coarse_count];
        for &c in &self.fine_to_coarse {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Map each fine position to its nearest coarse position (brute force).
    pub fn nearest(
        fine: &[nalgebra::Vector3<f64>],
        coarse: &[nalgebra::Vector3<f64>],
    ) -> Result<TraceMap> {
        if coarse.is_empty() {
            return Err(Error::validation("nearest map needs coarse vertices"));
        }
        let mut map = Vec::with_capacity(fine.len());
        for p in fine {
            let mut best = 0u32;
            let mut best_d = f64::INFINITY;
            for (j, q) in coarse.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = j as u32;
                }
            }
            map.push(best);
        }
        // A nearest map need not be surjective; tolerate unused coarse
        // vertices by keeping the raw assignment.
        Ok(TraceMap {
            fine_to_coarse: map,
            coarse_count: coarse.len(),
        })
    }

    /// Binary layout: `fine_count: u32 LE, coarse_count: u32 LE`, then
    /// `fine_count` little-endian 32-bit indices.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::with_capacity(8 + 4 * self.fine_to_coarse.len());
        out.extend_from_slice(&(self.fine_count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.coarse_count as u32).to_le_bytes());
        for &m in &self.fine_to_coarse {
            out.extend_from_slice(&m.to_le_bytes());
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<TraceMap> {
        let bytes = fs::read(path.as_ref())?;
        if bytes.len() < 8 {
            return Err(Error::validation("trace file too short"));
        }
        let fine = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let coarse = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() != 8 + 4 * fine {
            return Err(Error::validation(format!(
                "trace file length {} != expected {}",
                bytes.len(),
                8 + 4 * fine
            )));
        }
        let map = (0..fine)
            .map(|i| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()))
            .collect();
        TraceMap::new(map, coarse)
    }
}

/// Replicate coarse features onto fine vertices: fine row `i` is coarse row
/// `map[i]`. Backward scatter-adds fine gradients into coarse rows.
pub fn unpool<S: Scalar>(coarse: &FeatureMatrix<S>, trace: &TraceMap) -> Result<FeatureMatrix<S>> {
    if coarse.rows() != trace.coarse_count() {
        return Err(Error::validation(format!(
            "unpool: {} feature rows vs {} coarse vertices",
            coarse.rows(),
            trace.coarse_count()
        )));
    }
    let mut fine = Array2::zeros((trace.fine_count(), coarse.cols()));
    for (i, &c) in trace.map().iter().enumerate() {
        fine.row_mut(i).assign(&coarse.values.row(c as usize));
    }
    Ok(FeatureMatrix::new(fine))
}

/// Gradient of [`unpool`] with respect to the coarse features.
pub fn unpool_backward<S: Scalar>(fine_grad: &ArrayView2<S>, trace: &TraceMap) -> Array2<S> {
    let mut coarse = Array2::zeros((trace.coarse_count(), fine_grad.ncols()));
    for (i, &c) in trace.map().iter().enumerate() {
        let mut row = coarse.row_mut(c as usize);
        row += &fine_grad.row(i);
    }
    coarse
}

/// Preimage-mean pooling: coarse row `j` is the mean of the fine rows that
/// trace to `j`. Inverse of [`unpool`] on coarse features.
pub fn pool_mean<S: Scalar>(fine: &ArrayView2<S>, trace: &TraceMap) -> Result<Array2<S>> {
    if fine.nrows() != trace.fine_count() {
        return Err(Error::validation(format!(
            "pool: {} feature rows vs {} fine vertices",
            fine.nrows(),
            trace.fine_count()
        )));
    }
    let counts = trace.preimage_counts();
    let mut coarse: Array2<S> = Array2::zeros((trace.coarse_count(), fine.ncols()));
    for (i, &c) in trace.map().iter().enumerate() {
        let mut row = coarse.row_mut(c as usize);
        row += &fine.row(i);
    }
    for (j, &n) in counts.iter().enumerate() {
        let inv = S::one() / S::from_f64(n as f64);
        let mut row = coarse.row_mut(j);
        row *= inv;
    }
    Ok(coarse)
}

/// Gradient of [`pool_mean`] with respect to the fine features.
pub fn pool_mean_backward<S: Scalar>(coarse_grad: &ArrayView2<S>, trace: &TraceMap) -> Array2<S> {
    let counts = trace.preimage_counts();
    let mut fine = Array2::zeros((trace.fine_count(), coarse_grad.ncols()));
    for (i, &c) in trace.map().iter().enumerate() {
        let inv = S::one() / S::from_f64(counts[c as usize] as f64);
        let mut row = fine.row_mut(i);
        row.assign(&coarse_grad.row(c as usize));
        row *= inv;
    }
    fine
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimplifyMethod {
    Vc,
    Qem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimplifyScheme {
    /// Vertex clustering for the first two levels, quadric collapse after.
    VcQem,
    /// Vertex clustering at every level, cell size doubling per level.
    VcOnly,
    /// Quadric collapse at every level at the fixed vertex ratio.
    QemOnly,
}

/// How to build the level stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    /// Number of levels including the base level.
    pub levels: usize,
    pub scheme: SimplifyScheme,
    /// Clustering cell edge length for the base level, meters.
    pub base_cell: f64,
    /// Vertex ratio kept by each quadric-collapse level.
    pub qem_ratio: f64,
    /// Cluster later VC levels against the raw input instead of chaining.
    pub vc_from_original: bool,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        HierarchySpec {
            levels: 3,
            scheme: SimplifyScheme::VcQem,
            base_cell: 0.02,
            qem_ratio: 0.30,
            vc_from_original: false,
        }
    }
}

impl HierarchySpec {
    pub fn with_levels(levels: usize) -> Self {
        HierarchySpec {
            levels,
            ..Default::default()
        }
    }
}

/// The simplified level stack with the traces linking adjacent levels.
///
/// `levels[0]` is the base simplified mesh; `base_trace` links the raw input
/// mesh to it, and `traces[l-1]` links level `l-1` to level `l`.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    original: SurfaceMesh,
    base_trace: TraceMap,
    levels: Vec<SurfaceMesh>,
    traces: Vec<TraceMap>,
    tags: Vec<SimplifyMethod>,
}

impl MeshHierarchy {
    pub fn original(&self) -> &SurfaceMesh {
        &self.original
    }

    pub fn base_trace(&self) -> &TraceMap {
        &self.base_trace
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &SurfaceMesh {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[SurfaceMesh] {
        &self.levels
    }

    /// Trace from level `l-1` to level `l`, `1 <= l < depth`.
    pub fn trace(&self, l: usize) -> &TraceMap {
        &self.traces[l - 1]
    }

    pub fn traces(&self) -> &[TraceMap] {
        &self.traces
    }

    pub fn tags(&self) -> &[SimplifyMethod] {
        &self.tags
    }

    /// Trace from the raw input all the way to level `l`.
    pub fn trace_from_original(&self, l: usize) -> Result<TraceMap> {
        let mut acc = self.base_trace.clone();
        for t in &self.traces[..l] {
            acc = acc.compose(t)?;
        }
        Ok(acc)
    }

    /// Replace every level's geometry via one affine map and new base colors.
    /// Topology, traces and labels are untouched.
    pub fn transformed(
        &self,
        map_position: impl Fn(&nalgebra::Vector3<f64>) -> nalgebra::Vector3<f64>,
        mut map_color: impl FnMut(usize, &[f64; 3]) -> [f64; 3],
    ) -> MeshHierarchy {
        let mut remap = |mesh: &SurfaceMesh| {
            let positions = mesh.positions().iter().map(&map_position).collect();
            let colors = mesh
                .colors()
                .iter()
                .enumerate()
                .map(|(i, c)| map_color(i, c))
                .collect();
            mesh.with_geometry(positions, colors)
        };
        let original = remap(&self.original);
        let levels = self.levels.iter().map(&mut remap).collect();
        MeshHierarchy {
            original,
            base_trace: self.base_trace.clone(),
            levels,
            traces: self.traces.clone(),
            tags: self.tags.clone(),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_ply(&self.original, dir.join("original.ply"), false)?;
        self.base_trace.write_to(dir.join("trace_base.bin"))?;
        for (l, mesh) in self.levels.iter().enumerate() {
            save_ply(mesh, dir.join(format!("level_{l}.ply")), false)?;
        }
        for (l, trace) in self.traces.iter().enumerate() {
            trace.write_to(dir.join(format!("trace_{}.bin", l + 1)))?;
        }
        let meta = HierarchyMeta {
            levels: self
                .levels
                .iter()
                .zip(&self.tags)
                .map(|(m, &tag)| LevelMeta {
                    vertices: m.vertex_count(),
                    faces: m.face_count(),
                    method: tag,
                })
                .collect(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<MeshHierarchy> {
        let dir = dir.as_ref();
        let meta: HierarchyMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let original = load_ply(dir.join("original.ply"))?;
        let base_trace = TraceMap::read_from(dir.join("trace_base.bin"))?;
        let mut levels = Vec::new();
        let mut traces = Vec::new();
        for l in 0..meta.levels.len() {
            levels.push(load_ply(dir.join(format!("level_{l}.ply")))?);
            if l > 0 {
                traces.push(TraceMap::read_from(dir.join(format!("trace_{l}.bin")))?);
            }
        }
        Ok(MeshHierarchy {
            original,
            base_trace,
            levels,
            traces,
            tags: meta.levels.iter().map(|m| m.method).collect(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HierarchyMeta {
    pub levels: Vec<LevelMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LevelMeta {
    pub vertices: usize,
    pub faces: usize,
    pub method: SimplifyMethod,
}

/// Build the level stack from a raw input mesh.
pub fn build_hierarchy(mesh: &SurfaceMesh, spec: &HierarchySpec) -> Result<MeshHierarchy> {
    if spec.levels < 2 {
        return Err(Error::validation(format!(
            "hierarchy needs at least 2 levels, got {}",
            spec.levels
        )));
    }
    if !(spec.base_cell > 0.0) {
        return Err(Error::validation("base cell size must be positive"));
    }
    if !(spec.qem_ratio > 0.0 && spec.qem_ratio < 1.0) {
        return Err(Error::validation("qem ratio must lie in (0, 1)"));
    }

    let mut levels: Vec<SurfaceMesh> = Vec::with_capacity(spec.levels);
    let mut traces: Vec<TraceMap> = Vec::new();
    let mut tags: Vec<SimplifyMethod> = Vec::new();

    // Base level.
    let (base, base_trace, base_tag) = match spec.scheme {
        SimplifyScheme::VcQem | SimplifyScheme::VcOnly => {
            let (m, t) = vertex_clustering(mesh, spec.base_cell)?;
            (m, t, SimplifyMethod::Vc)
        }
        SimplifyScheme::QemOnly => {
            let target = qem_target(mesh.vertex_count(), spec.qem_ratio);
            let r = qem_simplify(mesh, target)?;
            (r.mesh, r.trace, SimplifyMethod::Qem)
        }
    };
    check_level_size(&base, 0)?;
    levels.push(base);
    tags.push(base_tag);

    for l in 1..spec.levels {
        let prev = &levels[l - 1];
        let use_vc = match spec.scheme {
            SimplifyScheme::VcOnly => true,
            SimplifyScheme::QemOnly => false,
            SimplifyScheme::VcQem => l == 1,
        };
        let (next, trace, tag) = if use_vc {
            let cell = spec.base_cell * (1u64 << l) as f64;
            let (m, t) = if spec.vc_from_original {
                vc::vertex_clustering_against(prev, mesh, &compose_to(&base_trace, &traces)?, cell)?
            } else {
                vertex_clustering(prev, cell)?
            };
            (m, t, SimplifyMethod::Vc)
        } else {
            let target = qem_target(prev.vertex_count(), spec.qem_ratio);
            let r = qem_simplify(prev, target)?;
            if r.mesh.vertex_count() >= prev.vertex_count() {
                return Err(Error::validation(format!(
                    "hierarchy level {l}: simplification made no progress ({} vertices)",
                    prev.vertex_count()
                )));
            }
            (r.mesh, r.trace, SimplifyMethod::Qem)
        };
        if next.vertex_count() >= prev.vertex_count() {
            return Err(Error::validation(format!(
                "hierarchy level {l}: vertex count did not decrease ({} -> {})",
                prev.vertex_count(),
                next.vertex_count()
            )));
        }
        check_level_size(&next, l)?;
        levels.push(next);
        traces.push(trace);
        tags.push(tag);
    }

    Ok(MeshHierarchy {
        original: mesh.clone(),
        base_trace,
        levels,
        traces,
        tags,
    })
}

fn qem_target(n: usize, ratio: f64) -> usize {
    ((n as f64) * ratio).ceil().max(1.0) as usize
}

fn check_level_size(mesh: &SurfaceMesh, level: usize) -> Result<()> {
    if mesh.vertex_count() < 4 {
        return Err(Error::validation(format!(
            "hierarchy truncated at level {level}: only {} vertices remain",
            mesh.vertex_count()
        )));
    }
    Ok(())
}

fn compose_to(base: &TraceMap, traces: &[TraceMap]) -> Result<TraceMap> {
    let mut acc = base.clone();
    for t in traces {
        acc = acc.compose(t)?;
    }
    Ok(acc)
}


#[cfg(test)]
mod scheme_tests {
    use super::*;
    use crate::mesh::DEFAULT_COLOR;
    use nalgebra::Vector3;

    #[test]
    fn qem_only_scheme_applies_ratio_from_the_base() {
        let mut positions = Vec::new();
        for y in 0..25 {
            for x in 0..25 {
                positions.push(Vector3::new(
                    x as f64 * 0.02,
                    y as f64 * 0.02,
                    0.01 * ((x + y) as f64 * 0.6).sin(),
                ));
            }
        }
        let id = |x: usize, y: usize| (y * 25 + x) as u32;
        let mut faces = Vec::new();
        for y in 0..24 {
            for x in 0..24 {
                faces.push([id(x, y), id(x + 1, y), id(x + 1, y + 1)]);
                faces.push([id(x, y), id(x + 1, y + 1), id(x, y + 1)]);
            }
        }
        let mesh = SurfaceMesh::new(positions, vec![DEFAULT_COLOR; 625], None, faces).unwrap();
        let spec = HierarchySpec {
            scheme: SimplifyScheme::QemOnly,
            ..Default::default()
        };
        let h = build_hierarchy(&mesh, &spec).unwrap();
        assert!(h.tags().iter().all(|&t| t == SimplifyMethod::Qem));
        assert_eq!(h.level(0).vertex_count(), 188); // ceil(0.3 * 625)
        assert_eq!(h.level(1).vertex_count(), 57); // ceil(0.3 * 188)
        assert_eq!(h.level(2).vertex_count(), 18); // ceil(0.3 * 57)
    }
}
