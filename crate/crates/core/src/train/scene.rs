//! Synthetic labeled scenes and training-time augmentation.
//!
//! Scenes are built from triangulated primitives: a floor plane, closed
//! boxes, cylinders, and thin slabs. With the geodesic-trap flag, slabs are
//! placed parallel to box faces within 1.5 voxel lengths but without any
//! shared edges, the configuration where purely Euclidean features blur the
//! two surfaces together. Per-class color distributions overlap heavily, so
//! color alone cannot separate the classes.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::MeshHierarchy;
use crate::mesh::SurfaceMesh;
use crate::rng::{rng_for, split_seed};

pub const CLASS_FLOOR: i32 = 0;
pub const CLASS_BOX: i32 = 1;
pub const CLASS_SLAB: i32 = 2;
pub const CLASS_CYLINDER: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Number of semantic classes (floor, box, slab, cylinder order).
    pub classes: usize,
    /// Scene side length in meters.
    pub extent: f64,
    pub boxes: usize,
    pub cylinders: usize,
    /// Free-standing slabs in addition to trap slabs.
    pub slabs: usize,
    /// Force Euclidean-close / geodesic-disconnected box-slab pairs.
    pub geodesic_trap: bool,
    pub trap_pairs: usize,
    /// Target edge length of the triangulations, meters.
    pub mesh_step: f64,
    /// Per-vertex positional jitter amplitude, meters.
    pub noise: f64,
    /// Voxel edge length the traps are calibrated against, meters.
    pub voxel_size: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            classes: 4,
            extent: 1.6,
            boxes: 2,
            cylinders: 1,
            slabs: 1,
            geodesic_trap: true,
            trap_pairs: 2,
            mesh_step: 0.03,
            noise: 0.0015,
            voxel_size: 0.02,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::validation("scene needs at least 2 classes"));
        }
        if !(self.extent > 0.3) {
            return Err(Error::validation("scene extent too small"));
        }
        if !(self.mesh_step > 0.0) || !(self.voxel_size > 0.0) {
            return Err(Error::validation("densities must be positive"));
        }
        Ok(())
    }
}

/// One Euclidean-close, surface-disconnected pair: the slab panel and the
/// facing patch of the box, as vertex indices into the generated mesh.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapPair {
    pub slab_vertices: Vec<u32>,
    pub box_patch_vertices: Vec<u32>,
    /// Plane-to-plane gap, meters.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub mesh: SurfaceMesh,
    pub traps: Vec<TrapPair>,
}

/// Welding mesh builder: vertices are deduplicated on a fine grid so shared
/// primitive edges stitch into closed surfaces.
struct MeshBuilder {
    positions: Vec<Vector3<f64>>,
    labels: Vec<i32>,
    object_ids: Vec<u32>,
    faces: Vec<[u32; 3]>,
    lookup: BTreeMap<(u32, i64, i64, i64), u32>,
    current_object: u32,
}

impl MeshBuilder {
    fn new() -> Self {
        MeshBuilder {
            positions: Vec::new(),
            labels: Vec::new(),
            object_ids: Vec::new(),
            faces: Vec::new(),
            lookup: BTreeMap::new(),
            current_object: 0,
        }
    }

    fn begin_object(&mut self) -> u32 {
        self.current_object += 1;
        self.current_object
    }

    fn vertex(&mut self, p: Vector3<f64>, label: i32) -> u32 {
        let key = (
            self.current_object,
            (p.x * 1e6).round() as i64,
            (p.y * 1e6).round() as i64,
            (p.z * 1e6).round() as i64,
        );
        if let Some(&id) = self.lookup.get(&key) {
            return id;
        }
        let id = self.positions.len() as u32;
        self.positions.push(p);
        self.labels.push(label);
        self.object_ids.push(self.current_object);
        self.lookup.insert(key, id);
        id
    }

    fn face(&mut self, a: u32, b: u32, c: u32) {
        if a != b && b != c && a != c {
            self.faces.push([a, b, c]);
        }
    }

    /// Triangulated parallelogram patch `origin + u*su + v*sv`.
    fn grid_patch(
        &mut self,
        origin: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        step: f64,
        label: i32,
    ) {
        let nu = ((u.norm() / step).ceil() as usize).max(1);
        let nv = ((v.norm() / step).ceil() as usize).max(1);
        let mut ids = vec![vec![0u32; nv + 1]; nu + 1];
        for (i, row) in ids.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                let p = origin + u * (i as f64 / nu as f64) + v * (j as f64 / nv as f64);
                *slot = self.vertex(p, label);
            }
        }
        for i in 0..nu {
            for j in 0..nv {
                let (a, b, c, d) = (ids[i][j], ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]);
                self.face(a, b, c);
                self.face(a, c, d);
            }
        }
    }

    /// Closed axis-aligned box `[min, min + size]`.
    fn boxed(&mut self, min: Vector3<f64>, size: Vector3<f64>, step: f64, label: i32) {
        let (sx, sy, sz) = (size.x, size.y, size.z);
        let ex = Vector3::new(sx, 0.0, 0.0);
        let ey = Vector3::new(0.0, sy, 0.0);
        let ez = Vector3::new(0.0, 0.0, sz);
        // Outward-facing winding on all six faces.
        self.grid_patch(min, ey, ex, step, label); // bottom (z-)
        self.grid_patch(min + ez, ex, ey, step, label); // top (z+)
        self.grid_patch(min, ex, ez, step, label); // y- side
        self.grid_patch(min + ey, ez, ex, step, label); // y+ side
        self.grid_patch(min, ez, ey, step, label); // x- side
        self.grid_patch(min + ex, ey, ez, step, label); // x+ side
    }

    /// Closed upright cylinder.
    fn cylinder(
        &mut self,
        center: Vector3<f64>,
        radius: f64,
        height: f64,
        step: f64,
        label: i32,
    ) {
        let segments = (((2.0 * std::f64::consts::PI * radius) / step).ceil() as usize).max(6);
        let rings = ((height / step).ceil() as usize).max(1);
        let mut ring_ids = vec![vec![0u32; segments]; rings + 1];
        for (r, ring) in ring_ids.iter_mut().enumerate() {
            let z = center.z + height * (r as f64 / rings as f64);
            for (s, slot) in ring.iter_mut().enumerate() {
                let a = 2.0 * std::f64::consts::PI * (s as f64 / segments as f64);
                let p = Vector3::new(
                    center.x + radius * a.cos(),
                    center.y + radius * a.sin(),
                    z,
                );
                *slot = self.vertex(p, label);
            }
        }
        for r in 0..rings {
            for s in 0..segments {
                let s2 = (s + 1) % segments;
                let (a, b, c, d) = (
                    ring_ids[r][s],
                    ring_ids[r][s2],
                    ring_ids[r + 1][s2],
                    ring_ids[r + 1][s],
                );
                self.face(a, b, c);
                self.face(a, c, d);
            }
        }
        // Cap fans.
        let bottom = self.vertex(center, label);
        let top = self.vertex(center + Vector3::new(0.0, 0.0, height), label);
        for s in 0..segments {
            let s2 = (s + 1) % segments;
            self.face(bottom, ring_ids[0][s2], ring_ids[0][s]);
            self.face(top, ring_ids[rings][s], ring_ids[rings][s2]);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: [f64; 2],
    max: [f64; 2],
}

impl Aabb {
    fn overlaps(&self, other: &Aabb, margin: f64) -> bool {
        !(self.max[0] + margin < other.min[0]
            || other.max[0] + margin < self.min[0]
            || self.max[1] + margin < other.min[1]
            || other.max[1] + margin < self.min[1])
    }
}

fn class_base_color(label: i32) -> [f64; 3] {
    match label {
        CLASS_FLOOR => [0.48, 0.48, 0.48],
        CLASS_BOX => [0.56, 0.49, 0.44],
        CLASS_SLAB => [0.44, 0.49, 0.56],
        _ => [0.49, 0.56, 0.45],
    }
}

/// Generate a labeled scene; deterministic for a fixed seed.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<GeneratedScene> {
    spec.validate()?;
    let mut rng = rng_for(seed, "scene", 0);
    let mut b = MeshBuilder::new();
    let mut placed: Vec<Aabb> = Vec::new();
    let e = spec.extent;

    // Floor: a coarser open plane spanning the scene.
    b.begin_object();
    b.grid_patch(
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(e, 0.0, 0.0),
        Vector3::new(0.0, e, 0.0),
        spec.mesh_step * 2.2,
        CLASS_FLOOR,
    );

    let place = |rng: &mut ChaCha8Rng,
                     placed: &mut Vec<Aabb>,
                     half_x: f64,
                     half_y: f64|
     -> Result<(f64, f64)> {
        for _ in 0..200 {
            let cx = half_x + 0.05 + rng.random::<f64>() * (e - 2.0 * (half_x + 0.05));
            let cy = half_y + 0.05 + rng.random::<f64>() * (e - 2.0 * (half_y + 0.05));
            let aabb = Aabb {
                min: [cx - half_x, cy - half_y],
                max: [cx + half_x, cy + half_y],
            };
            if placed.iter().all(|p| !aabb.overlaps(p, 0.04)) {
                placed.push(aabb);
                return Ok((cx, cy));
            }
        }
        Err(Error::Generation(
            "could not place an object without interpenetration".into(),
        ))
    };

    struct BoxInfo {
        min: Vector3<f64>,
        size: Vector3<f64>,
    }
    let mut boxes: Vec<BoxInfo> = Vec::new();
    for _ in 0..spec.boxes {
        let size = Vector3::new(
            0.34 + 0.12 * rng.random::<f64>(),
            0.16 + 0.08 * rng.random::<f64>(),
            0.20 + 0.10 * rng.random::<f64>(),
        );
        // Trap slabs sit beside a box; reserve space around it.
        let (cx, cy) = place(
            &mut rng,
            &mut placed,
            size.x / 2.0 + 0.08,
            size.y / 2.0 + 0.08,
        )?;
        let min = Vector3::new(cx - size.x / 2.0, cy - size.y / 2.0, 0.0);
        b.begin_object();
        b.boxed(min, size, spec.mesh_step, CLASS_BOX);
        boxes.push(BoxInfo { min, size });
    }

    if spec.classes > CLASS_CYLINDER as usize {
        for _ in 0..spec.cylinders {
            let radius = 0.07 + 0.04 * rng.random::<f64>();
            let height = 0.22 + 0.12 * rng.random::<f64>();
            let (cx, cy) = place(&mut rng, &mut placed, radius, radius)?;
            b.begin_object();
            b.cylinder(
                Vector3::new(cx, cy, 0.0),
                radius,
                height,
                spec.mesh_step,
                CLASS_CYLINDER,
            );
        }
    }

    let slab_thickness = 0.012;
    let mut traps = Vec::new();
    if spec.geodesic_trap {
        let pairs = spec.trap_pairs.min(boxes.len());
        for (pi, info) in boxes.iter().take(pairs).enumerate() {
            // Panel parallel to the box's y- face (the long side), standing
            // on the floor, one to one-and-a-half voxels away.
            let gap = spec.voxel_size * (1.0 + 0.4 * rng.random::<f64>());
            let width = info.size.x * (0.62 + 0.15 * rng.random::<f64>());
            let height = info.size.z * (0.7 + 0.2 * rng.random::<f64>());
            let x0 = info.min.x + (info.size.x - width) * rng.random::<f64>();
            let y0 = info.min.y - gap - slab_thickness;
            let slab_min = Vector3::new(x0, y0, 0.0);
            let slab_size = Vector3::new(width, slab_thickness, height);
            let first_vertex = b.positions.len() as u32;
            b.begin_object();
            b.boxed(slab_min, slab_size, spec.mesh_step, CLASS_SLAB);
            let slab_vertices: Vec<u32> = (first_vertex..b.positions.len() as u32).collect();

            // Facing patch: box vertices on the y- face within the slab's
            // footprint (inflated by one voxel).
            let infl = spec.voxel_size;
            let box_patch_vertices: Vec<u32> = (0..b.positions.len() as u32)
                .filter(|&i| {
                    let p = &b.positions[i as usize];
                    b.labels[i as usize] == CLASS_BOX
                        && (p.y - info.min.y).abs() < 1e-9
                        && p.x >= x0 - infl
                        && p.x <= x0 + width + infl
                        && p.z <= height + infl
                })
                .collect();
            if box_patch_vertices.is_empty() {
                return Err(Error::Generation(format!(
                    "trap pair {pi}: empty facing patch"
                )));
            }
            traps.push(TrapPair {
                slab_vertices,
                box_patch_vertices,
                gap,
            });
        }
    }

    if spec.classes > CLASS_SLAB as usize {
        for _ in 0..spec.slabs {
            let width = 0.26 + 0.14 * rng.random::<f64>();
            let height = 0.2 + 0.12 * rng.random::<f64>();
            let (cx, cy) = place(&mut rng, &mut placed, width / 2.0, slab_thickness)?;
            b.begin_object();
            b.boxed(
                Vector3::new(cx - width / 2.0, cy, 0.0),
                Vector3::new(width, slab_thickness, height),
                spec.mesh_step,
                CLASS_SLAB,
            );
        }
    }

    // Positional jitter (welded vertices move together) and overlapping
    // per-class colors with a per-object tint.
    let mut tints: BTreeMap<u32, [f64; 3]> = BTreeMap::new();
    let mut colors = Vec::with_capacity(b.positions.len());
    let mut positions = b.positions.clone();
    for i in 0..positions.len() {
        for k in 0..3 {
            positions[i][k] += (rng.random::<f64>() * 2.0 - 1.0) * spec.noise;
        }
        let obj = b.object_ids[i];
        let tint = *tints.entry(obj).or_insert_with(|| {
            [
                (rng.random::<f64>() * 2.0 - 1.0) * 0.04,
                (rng.random::<f64>() * 2.0 - 1.0) * 0.04,
                (rng.random::<f64>() * 2.0 - 1.0) * 0.04,
            ]
        });
        let base = class_base_color(b.labels[i].min(spec.classes as i32 - 1));
        let mut c = [0.0f64; 3];
        for k in 0..3 {
            let noise = (rng.random::<f64>() * 2.0 - 1.0) * 0.18;
            c[k] = (base[k] + tint[k] + noise).clamp(0.0, 1.0);
        }
        colors.push(c);
    }
    let labels = b
        .labels
        .iter()
        .map(|&l| l.min(spec.classes as i32 - 1))
        .collect();

    let mesh = SurfaceMesh::new(positions, colors, Some(labels), b.faces)?;
    Ok(GeneratedScene { mesh, traps })
}

/// Augmentation ranges; zero widths make the transform the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    /// Uniform scale in `[min, max]`.
    pub scale: (f64, f64),
    /// Rotation about +z in `[0, max_rotation)`.
    pub max_rotation: f64,
    /// Per-axis translation in `[-translation, translation]`.
    pub translation: f64,
    /// Additive per-channel color jitter in `[-color_jitter, color_jitter]`.
    pub color_jitter: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            scale: (0.9, 1.1),
            max_rotation: 2.0 * std::f64::consts::PI,
            translation: 0.5,
            color_jitter: 0.05,
        }
    }
}

impl AugmentRanges {
    pub fn none() -> Self {
        AugmentRanges {
            scale: (1.0, 1.0),
            max_rotation: 0.0,
            translation: 0.0,
            color_jitter: 0.0,
        }
    }
}

/// A sampled rigid+scale transform.
#[derive(Debug, Clone, Copy)]
pub struct AugmentTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: Vector3<f64>,
}

impl AugmentTransform {
    pub fn identity() -> Self {
        AugmentTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: Vector3::zeros(),
        }
    }

    pub fn sample(ranges: &AugmentRanges, rng: &mut ChaCha8Rng) -> Self {
        let scale = ranges.scale.0 + (ranges.scale.1 - ranges.scale.0) * rng.random::<f64>();
        let rotation = ranges.max_rotation * rng.random::<f64>();
        let t = ranges.translation;
        let translation = Vector3::new(
            (rng.random::<f64>() * 2.0 - 1.0) * t,
            (rng.random::<f64>() * 2.0 - 1.0) * t,
            (rng.random::<f64>() * 2.0 - 1.0) * t,
        );
        AugmentTransform {
            scale,
            rotation,
            translation,
        }
    }

    /// Scale, rotate about +z, then translate.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (sin, cos) = self.rotation.sin_cos();
        let s = p * self.scale;
        Vector3::new(
            cos * s.x - sin * s.y + self.translation.x,
            sin * s.x + cos * s.y + self.translation.y,
            s.z + self.translation.z,
        )
    }
}

fn jitter_colors(
    colors: &[[f64; 3]],
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 3]> {
    colors
        .iter()
        .map(|c| {
            let mut out = *c;
            for channel in &mut out {
                *channel = (*channel + (rng.random::<f64>() * 2.0 - 1.0) * amplitude)
                    .clamp(0.0, 1.0);
            }
            out
        })
        .collect()
}

/// Random scaling, rotation about the gravity axis, translation, and
/// chromatic jitter. Topology, labels, and adjacency are untouched.
pub fn augment(mesh: &SurfaceMesh, ranges: &AugmentRanges, seed: u64) -> SurfaceMesh {
    let mut rng = rng_for(seed, "augment", 0);
    let transform = AugmentTransform::sample(ranges, &mut rng);
    let positions = mesh.positions().iter().map(|p| transform.apply(p)).collect();
    let colors = jitter_colors(mesh.colors(), ranges.color_jitter, &mut rng);
    mesh.with_geometry(positions, colors)
}

/// Apply one sampled augmentation consistently to every hierarchy level.
/// Color jitter lands on each level independently; only the base level's
/// colors feed the network.
pub fn augment_hierarchy(
    hierarchy: &MeshHierarchy,
    ranges: &AugmentRanges,
    seed: u64,
) -> MeshHierarchy {
    let mut rng = rng_for(seed, "augment", 0);
    let transform = AugmentTransform::sample(ranges, &mut rng);
    let mut color_rng = rng_for(split_seed(seed, "augment-color", 0), "augment", 1);
    let amplitude = ranges.color_jitter;
    hierarchy.transformed(
        |p| transform.apply(p),
        move |_, c| {
            let mut out = *c;
            for channel in &mut out {
                *channel = (*channel + (color_rng.random::<f64>() * 2.0 - 1.0) * amplitude)
                    .clamp(0.0, 1.0);
            }
            out
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_and_box_scene_is_fully_labeled() {
        let spec = SceneSpec {
            classes: 2,
            boxes: 1,
            cylinders: 0,
            slabs: 0,
            geodesic_trap: false,
            trap_pairs: 0,
            ..Default::default()
        };
        let scene = generate_scene(&spec, 1).unwrap();
        let labels = scene.mesh.labels().unwrap();
        assert!(labels.iter().all(|&l| l == 0 || l == 1));
        assert!(labels.contains(&0) && labels.contains(&1));
    }

    #[test]
    fn scenes_are_deterministic_per_seed() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, 7).unwrap();
        let b = generate_scene(&spec, 7).unwrap();
        assert_eq!(a.mesh.positions(), b.mesh.positions());
        assert_eq!(a.mesh.colors(), b.mesh.colors());
        assert_eq!(a.mesh.faces(), b.mesh.faces());
        let c = generate_scene(&spec, 8).unwrap();
        assert_ne!(a.mesh.positions(), c.mesh.positions());
    }

    #[test]
    fn trap_pairs_are_close_but_disconnected() {
        let spec = SceneSpec::default();
        let scene = generate_scene(&spec, 3).unwrap();
        assert!(!scene.traps.is_empty());
        let mesh = &scene.mesh;
        for trap in &scene.traps {
            // Euclidean proximity: minimum gap below 1.5 voxel lengths.
            let mut min_gap = f64::INFINITY;
            for &a in &trap.slab_vertices {
                for &b in &trap.box_patch_vertices {
                    let d = (mesh.positions()[a as usize] - mesh.positions()[b as usize]).norm();
                    min_gap = min_gap.min(d);
                }
            }
            assert!(
                min_gap < 1.5 * spec.voxel_size,
                "trap not Euclidean-close: {min_gap}"
            );

            // BFS oracle: no surface path from slab to box patch.
            let mut visited = vec![false; mesh.vertex_count()];
            let mut queue: std::collections::VecDeque<u32> =
                trap.slab_vertices.iter().copied().collect();
            for &v in &trap.slab_vertices {
                visited[v as usize] = true;
            }
            while let Some(v) = queue.pop_front() {
                for &n in mesh.one_ring(v as usize).unwrap() {
                    if !visited[n as usize] {
                        visited[n as usize] = true;
                        queue.push_back(n);
                    }
                }
            }
            assert!(
                trap.box_patch_vertices.iter().all(|&v| !visited[v as usize]),
                "trap pair is surface-connected"
            );
        }
    }

    #[test]
    fn class_colors_overlap() {
        let scene = generate_scene(&SceneSpec::default(), 5).unwrap();
        let labels = scene.mesh.labels().unwrap();
        // Mean color distance between classes is small compared to the
        // within-class spread, so a color-threshold classifier cannot work.
        let mut by_class: BTreeMap<i32, Vec<[f64; 3]>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(scene.mesh.colors()[i]);
        }
        let means: Vec<[f64; 3]> = by_class
            .values()
            .map(|cs| {
                let mut m = [0.0; 3];
                for c in cs {
                    for k in 0..3 {
                        m[k] += c[k] / cs.len() as f64;
                    }
                }
                m
            })
            .collect();
        for a in 0..means.len() {
            for b in a + 1..means.len() {
                let d: f64 = (0..3)
                    .map(|k| (means[a][k] - means[b][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d < 0.25, "class means too far apart: {d}");
            }
        }
    }

    #[test]
    fn zero_ranges_are_identity() {
        let scene = generate_scene(&SceneSpec::default(), 2).unwrap();
        let out = augment(&scene.mesh, &AugmentRanges::none(), 9);
        assert_eq!(out.positions(), scene.mesh.positions());
        assert_eq!(out.colors(), scene.mesh.colors());
    }

    #[test]
    fn rotation_by_pi_flips_x() {
        let t = AugmentTransform {
            scale: 1.0,
            rotation: std::f64::consts::PI,
            translation: Vector3::zeros(),
        };
        let p = t.apply(&Vector3::new(1.0, 0.0, 0.0));
        assert!((p.x + 1.0).abs() < 1e-12);
        assert!(p.y.abs() < 1e-12);
        assert!(p.z.abs() < 1e-12);
    }

    #[test]
    fn augmentation_preserves_labels_and_adjacency() {
        let scene = generate_scene(&SceneSpec::default(), 4).unwrap();
        let out = augment(&scene.mesh, &AugmentRanges::default(), 11);
        assert_eq!(out.labels(), scene.mesh.labels());
        assert_eq!(out.faces(), scene.mesh.faces());
        for i in 0..scene.mesh.vertex_count() {
            assert_eq!(out.one_ring(i).unwrap(), scene.mesh.one_ring(i).unwrap());
        }
    }

    #[test]
    fn augment_is_deterministic() {
        let scene = generate_scene(&SceneSpec::default(), 4).unwrap();
        let a = augment(&scene.mesh, &AugmentRanges::default(), 11);
        let b = augment(&scene.mesh, &AugmentRanges::default(), 11);
        assert_eq!(a.positions(), b.positions());
        assert_eq!(a.colors(), b.colors());
    }
}
