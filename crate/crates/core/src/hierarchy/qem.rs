//! Greedy edge collapse driven by quadric error metrics.
//!
//! Plane quadrics accumulate per vertex (boundary edges contribute an extra
//! constraint plane), candidate collapses are kept in a lazy min-heap keyed
//! by `(cost, min id, max id)`, and a collapse is rejected when it would flip
//! any incident face normal by more than 90 degrees.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use nalgebra::{Matrix4, Vector3, Vector4};

use super::vc::{majority, remap_faces};
use crate::error::{Error, Result};
use crate::hierarchy::TraceMap;
use crate::mesh::SurfaceMesh;

const DET_TOLERANCE: f64 = 1e-10;
const AREA_TOLERANCE: f64 = 1e-12;

/// Accumulated symmetric 4x4 plane-distance quadric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadric(Matrix4<f64>);

impl Quadric {
    pub fn zero() -> Self {
        Quadric(Matrix4::zeros())
    }

    /// Quadric of the plane with unit normal `n` through point `p`.
    pub fn from_plane(n: &Vector3<f64>, p: &Vector3<f64>) -> Self {
        let d = -n.dot(p);
        let q = Vector4::new(n.x, n.y, n.z, d);
        Quadric(q * q.transpose())
    }

    pub fn accumulate(&mut self, other: &Quadric) {
        self.0 += other.0;
    }

    pub fn sum(&self, other: &Quadric) -> Quadric {
        Quadric(self.0 + other.0)
    }

    /// Squared plane-distance error of a point.
    pub fn evaluate(&self, p: &Vector3<f64>) -> f64 {
        let v = Vector4::new(p.x, p.y, p.z, 1.0);
        (v.transpose() * self.0 * v)[(0, 0)]
    }

    /// Minimizer of the error, unless the 3x3 system is singular.
    pub fn optimal_point(&self, det_tolerance: f64) -> Option<Vector3<f64>> {
        let a = self.0.fixed_view::<3, 3>(0, 0).into_owned();
        if a.determinant().abs() <= det_tolerance {
            return None;
        }
        let b = -self.0.fixed_view::<3, 1>(0, 3).into_owned();
        a.try_inverse().map(|inv| inv * b)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }
}

/// Outcome of [`qem_simplify`].
#[derive(Debug, Clone)]
pub struct QemResult {
    pub mesh: SurfaceMesh,
    pub trace: TraceMap,
    /// False when no legal collapse remained before reaching the target.
    pub reached_target: bool,
    /// Accepted collapse costs in execution order (each was the heap minimum
    /// among valid candidates at its step).
    pub collapse_costs: Vec<f64>,
}

struct Candidate {
    cost: f64,
    a: u32,
    b: u32,
    stamp_a: u64,
    stamp_b: u64,
    point: Vector3<f64>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // BinaryHeap is a max-heap; invert so the pop order is ascending
    // (cost, min id, max id).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

fn face_normal(p0: &Vector3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>) -> Option<Vector3<f64>> {
    let n = (p1 - p0).cross(&(p2 - p0));
    let len = n.norm();
    if len < AREA_TOLERANCE {
        None
    } else {
        Some(n / len)
    }
}

struct State {
    pos: Vec<Vector3<f64>>,
    quadric: Vec<Quadric>,
    alive: Vec<bool>,
    parent: Vec<u32>,
    stamp: Vec<u64>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vfaces: Vec<BTreeSet<u32>>,
    adj: Vec<BTreeSet<u32>>,
    heap: BinaryHeap<Candidate>,
}

impl State {
    fn candidate(&self, a: u32, b: u32) -> Option<Candidate> {
        let q = self.quadric[a as usize].sum(&self.quadric[b as usize]);
        let (pa, pb) = (self.pos[a as usize], self.pos[b as usize]);
        let (point, cost) = match q.optimal_point(DET_TOLERANCE) {
            Some(v) => (v, q.evaluate(&v)),
            None => {
                let mid = (pa + pb) * 0.5;
                let mut best = (mid, q.evaluate(&mid));
                for p in [pa, pb] {
                    let c = q.evaluate(&p);
                    if c < best.1 {
                        best = (p, c);
                    }
                }
                best
            }
        };
        if !cost.is_finite() {
            return None;
        }
        Some(Candidate {
            cost: cost.max(0.0),
            a,
            b,
            stamp_a: self.stamp[a as usize],
            stamp_b: self.stamp[b as usize],
            point,
        })
    }

    fn push_candidate(&mut self, x: u32, y: u32) {
        let (a, b) = (x.min(y), x.max(y));
        if let Some(c) = self.candidate(a, b) {
            self.heap.push(c);
        }
    }

    /// Would merging `a` and `b` at `point` flip a surviving face?
    fn collapse_is_legal(&self, a: u32, b: u32, point: &Vector3<f64>) -> bool {
        for &moved in &[a, b] {
            for &fid in &self.vfaces[moved as usize] {
                if !self.face_alive[fid as usize] {
                    continue;
                }
                let f = self.faces[fid as usize];
                if f.contains(&a) && f.contains(&b) {
                    continue; // removed by the collapse
                }
                let before = [
                    self.pos[f[0] as usize],
                    self.pos[f[1] as usize],
                    self.pos[f[2] as usize],
                ];
                let Some(n_before) = face_normal(&before[0], &before[1], &before[2]) else {
                    continue;
                };
                let after: Vec<Vector3<f64>> = f
                    .iter()
                    .map(|&v| if v == moved { *point } else { self.pos[v as usize] })
                    .collect();
                match face_normal(&after[0], &after[1], &after[2]) {
                    None => return false,
                    Some(n_after) => {
                        if n_before.dot(&n_after) < 0.0 {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    fn collapse(&mut self, a: u32, b: u32, point: Vector3<f64>) {
        let affected: Vec<u32> = {
            let mut s: BTreeSet<u32> = self.adj[a as usize]
                .iter()
                .chain(self.adj[b as usize].iter())
                .copied()
                .collect();
            s.insert(a);
            s.remove(&b);
            s.into_iter().collect()
        };

        for fid in self.vfaces[b as usize].clone() {
            if !self.face_alive[fid as usize] {
                continue;
            }
            let f = self.faces[fid as usize];
            if f.contains(&a) {
                self.face_alive[fid as usize] = false;
                for v in f {
                    self.vfaces[v as usize].remove(&fid);
                }
            } else {
                for v in &mut self.faces[fid as usize] {
                    if *v == b {
                        *v = a;
                    }
                }
                self.vfaces[a as usize].insert(fid);
            }
        }
        self.vfaces[b as usize].clear();

        self.pos[a as usize] = point;
        let qb = self.quadric[b as usize];
        self.quadric[a as usize].accumulate(&qb);
        self.alive[b as usize] = false;
        self.parent[b as usize] = a;
        self.stamp[a as usize] += 1;
        self.stamp[b as usize] += 1;

        for &v in &affected {
            let mut ring = BTreeSet::new();
            for &fid in &self.vfaces[v as usize] {
                if self.face_alive[fid as usize] {
                    for &w in &self.faces[fid as usize] {
                        if w != v {
                            ring.insert(w);
                        }
                    }
                }
            }
            self.adj[v as usize] = ring;
        }
        self.adj[b as usize].clear();
    }
}

/// Collapse minimum-cost edges until `target_vertex_count` vertices remain
/// or no legal collapse is left.
pub fn qem_simplify(mesh: &SurfaceMesh, target_vertex_count: usize) -> Result<QemResult> {
    let n = mesh.vertex_count();
    if target_vertex_count == 0 || target_vertex_count >= n {
        return Err(Error::validation(format!(
            "target vertex count {target_vertex_count} outside (0, {n})"
        )));
    }

    // Per-vertex plane quadrics.
    let mut quadric = vec![Quadric::zero(); n];
    let positions = mesh.positions();
    let mut face_normals: Vec<Option<Vector3<f64>>> = Vec::with_capacity(mesh.face_count());
    for f in mesh.faces() {
        let (p0, p1, p2) = (
            &positions[f[0] as usize],
            &positions[f[1] as usize],
            &positions[f[2] as usize],
        );
        let normal = face_normal(p0, p1, p2);
        if let Some(nrm) = normal {
            let k = Quadric::from_plane(&nrm, p0);
            for &v in f {
                quadric[v as usize].accumulate(&k);
            }
        }
        face_normals.push(normal);
    }

    // Boundary constraint planes, weight 1.0: perpendicular to the single
    // incident face, through the edge.
    let mut edge_faces: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    for (fid, f) in mesh.faces().iter().enumerate() {
        for (x, y) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edge_faces
                .entry((x.min(y), x.max(y)))
                .or_default()
                .push(fid as u32);
        }
    }
    for ((a, b), fids) in &edge_faces {
        if fids.len() != 1 {
            continue;
        }
        let Some(fnrm) = face_normals[fids[0] as usize] else {
            continue;
        };
        let (pa, pb) = (&positions[*a as usize], &positions[*b as usize]);
        let edge = pb - pa;
        let len = edge.norm();
        if len < AREA_TOLERANCE {
            continue;
        }
        let c = fnrm.cross(&(edge / len));
        let c_len = c.norm();
        if c_len < AREA_TOLERANCE {
            continue;
        }
        let k = Quadric::from_plane(&(c / c_len), pa);
        quadric[*a as usize].accumulate(&k);
        quadric[*b as usize].accumulate(&k);
    }

    let mut state = State {
        pos: positions.to_vec(),
        quadric,
        alive: vec![true; n],
        parent: (0..n as u32).collect(),
        stamp: vec![0; n],
        faces: mesh.faces().to_vec(),
        face_alive: vec![true; mesh.face_count()],
        vfaces: {
            let mut v = vec![BTreeSet::new(); n];
            for (fid, f) in mesh.faces().iter().enumerate() {
                for &x in f {
                    v[x as usize].insert(fid as u32);
                }
            }
            v
        },
        adj: mesh
            .adjacency()
            .iter()
            .map(|ring| ring.iter().copied().collect())
            .collect(),
        heap: BinaryHeap::new(),
    };

    for (a, b) in mesh.edges() {
        state.push_candidate(a, b);
    }

    let mut alive_count = n;
    let mut collapse_costs = Vec::new();
    while alive_count > target_vertex_count {
        let Some(c) = state.heap.pop() else {
            break;
        };
        let (a, b) = (c.a as usize, c.b as usize);
        if !state.alive[a]
            || !state.alive[b]
            || state.stamp[a] != c.stamp_a
            || state.stamp[b] != c.stamp_b
            || !state.adj[a].contains(&c.b)
        {
            continue;
        }
        if !state.collapse_is_legal(c.a, c.b, &c.point) {
            continue;
        }
        collapse_costs.push(c.cost);
        state.collapse(c.a, c.b, c.point);
        alive_count -= 1;
        for nb in state.adj[c.a as usize].clone() {
            state.push_candidate(c.a, nb);
        }
    }
    let reached_target = alive_count == target_vertex_count;

    // Compact surviving vertices in ascending original order.
    let mut compact = vec![u32::MAX; n];
    let mut coarse_count = 0u32;
    for i in 0..n {
        if state.alive[i] {
            compact[i] = coarse_count;
            coarse_count += 1;
        }
    }
    let find = |mut i: u32| -> u32 {
        while state.parent[i as usize] != i {
            i = state.parent[i as usize];
        }
        i
    };
    let fine_to_coarse: Vec<u32> = (0..n as u32).map(|i| compact[find(i) as usize]).collect();

    // Attributes over the fine preimages; positions from the collapse points.
    let cc = coarse_count as usize;
    let mut color_sum = vec![[0.0f64; 3]; cc];
    let mut counts = vec![0u64; cc];
    let mut votes: Vec<BTreeMap<i32, u64>> = vec![BTreeMap::new(); cc];
    for i in 0..n {
        let c = fine_to_coarse[i] as usize;
        for k in 0..3 {
            color_sum[c][k] += mesh.colors()[i][k];
        }
        counts[c] += 1;
        if let Some(labels) = mesh.labels() {
            *votes[c].entry(labels[i]).or_insert(0) += 1;
        }
    }
    let mut coarse_positions = vec![Vector3::zeros(); cc];
    for i in 0..n {
        if state.alive[i] {
            coarse_positions[compact[i] as usize] = state.pos[i];
        }
    }
    let colors: Vec<[f64; 3]> = color_sum
        .iter()
        .zip(&counts)
        .map(|(s, &m)| [s[0] / m as f64, s[1] / m as f64, s[2] / m as f64])
        .collect();
    let labels = mesh
        .labels()
        .map(|_| votes.iter().map(|v| majority(v)).collect());

    let live_faces: Vec<[u32; 3]> = state
        .faces
        .iter()
        .zip(&state.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| *f)
        .collect();
    let faces = remap_faces(&live_faces, &compact);

    let coarse = SurfaceMesh::new(coarse_positions, colors, labels, faces)?;
    let trace = TraceMap::new(fine_to_coarse, cc)?;
    Ok(QemResult {
        mesh: coarse,
        trace,
        reached_target,
        collapse_costs,
    })
}
