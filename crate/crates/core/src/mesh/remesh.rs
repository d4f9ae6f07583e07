//! Incremental isotropic remeshing: split long edges, collapse short ones,
//! flip towards valence 6, relax tangentially and project back onto the
//! input surface. Boundary vertices are never removed or moved.

use super::{SurfaceIndex, TriangleMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RemeshOptions {
    /// Remeshing passes per edge-length round.
    pub iterations: usize,
    /// Extra rounds that rescale the target edge length to hit the vertex
    /// count.
    pub max_rounds: usize,
    /// Relative tolerance on the final vertex count.
    pub count_tolerance: f64,
    /// Overrides the edge length derived from the target count.
    pub target_edge_length: Option<f64>,
}

impl Default for RemeshOptions {
    fn default() -> Self {
        RemeshOptions {
            iterations: 5,
            max_rounds: 6,
            count_tolerance: 0.05,
            target_edge_length: None,
        }
    }
}

/// Coefficient of variation (std / mean) of the mesh edge lengths.
pub fn edge_length_cv(mesh: &TriangleMesh) -> f64 {
    let l = mesh.edge_lengths();
    if l.is_empty() {
        return 0.0;
    }
    let mean = l.iter().sum::<f64>() / l.len() as f64;
    let var = l.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / l.len() as f64;
    var.sqrt() / mean
}

/// Remeshes `mesh` towards `target_vertex_count` uniformly sized triangles.
pub fn isotropic_remesh(
    mesh: &TriangleMesh,
    target_vertex_count: usize,
    options: &RemeshOptions,
) -> Result<TriangleMesh> {
    mesh.ensure_manifold()?;
    if mesh.is_empty() {
        return Err(Error::EmptyMesh("cannot remesh a mesh without faces".into()));
    }
    if target_vertex_count < 4 {
        return Err(Error::InvalidParameter("target vertex count must be at least 4".into()));
    }
    let index = SurfaceIndex::new(mesh);
    let area = mesh.total_area();
    let mut length = options
        .target_edge_length
        .unwrap_or_else(|| (2.0 * area / (3f64.sqrt() * target_vertex_count as f64)).sqrt());

    let mut work = Work::new(mesh);
    for round in 0..options.max_rounds.max(1) {
        for _ in 0..options.iterations {
            work.split_long_edges(4.0 / 3.0 * length);
            work.collapse_short_edges(4.0 / 5.0 * length, 4.0 / 3.0 * length);
            work.equalize_valences();
            work.relax_tangentially(&index);
        }
        if options.target_edge_length.is_some() {
            break;
        }
        let count = work.alive_vertex_count() as f64;
        let target = target_vertex_count as f64;
        if ((count - target) / target).abs() <= options.count_tolerance || round + 1 == options.max_rounds {
            break;
        }
        length *= (count / target).sqrt();
    }
    work.into_mesh()
}

struct Work {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_alive: Vec<bool>,
    boundary: Vec<bool>,
    vfaces: Vec<Vec<usize>>,
}

impl Work {
    fn new(mesh: &TriangleMesh) -> Self {
        let n = mesh.vertex_count();
        let mut vfaces = vec![Vec::new(); n];
        for (fi, f) in mesh.faces().iter().enumerate() {
            for &v in f {
                vfaces[v].push(fi);
            }
        }
        Work {
            pos: mesh.vertices().to_vec(),
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; mesh.face_count()],
            vert_alive: (0..n).map(|v| !vfaces[v].is_empty()).collect(),
            boundary: mesh.rings().iter().map(|r| r.boundary).collect(),
            vfaces,
        }
    }

    fn alive_vertex_count(&self) -> usize {
        self.vert_alive.iter().filter(|a| **a).count()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, a)| **a)
            .flat_map(|(f, _)| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    fn edge_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.vfaces[a]
            .iter()
            .copied()
            .filter(|&f| self.faces[f].contains(&b))
            .collect()
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self.vfaces[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn face_normal(&self, f: &[usize; 3], pos: &[Vec3]) -> Vec3 {
        (pos[f[1]] - pos[f[0]]).cross(&(pos[f[2]] - pos[f[0]]))
    }

    fn vertex_normal(&self, v: usize) -> Vec3 {
        let n = self.vfaces[v]
            .iter()
            .fold(Vec3::zeros(), |acc, &f| acc + self.face_normal(&self.faces[f], &self.pos));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    fn add_face(&mut self, f: [usize; 3]) -> usize {
        let id = self.faces.len();
        self.faces.push(f);
        self.face_alive.push(true);
        for &v in &f {
            self.vfaces[v].push(id);
        }
        id
    }

    fn kill_face(&mut self, fi: usize) {
        self.face_alive[fi] = false;
        for v in self.faces[fi] {
            self.vfaces[v].retain(|&g| g != fi);
        }
    }

    fn split_long_edges(&mut self, high: f64) {
        for (a, b) in self.edges() {
            if (self.pos[a] - self.pos[b]).norm() <= high {
                continue;
            }
            let incident = self.edge_faces(a, b);
            if incident.is_empty() {
                continue;
            }
            let m = self.pos.len();
            self.pos.push((self.pos[a] + self.pos[b]) * 0.5);
            self.vert_alive.push(true);
            self.boundary.push(incident.len() < 2);
            self.vfaces.push(Vec::new());
            for fi in incident {
                let f = self.faces[fi];
                // rotate so the split edge is (f[0], f[1]) in face order
                let r = (0..3)
                    .find(|&k| {
                        let (p, q) = (f[k], f[(k + 1) % 3]);
                        (p == a && q == b) || (p == b && q == a)
                    })
                    .expect("face contains edge");
                let (p, q, s) = (f[r], f[(r + 1) % 3], f[(r + 2) % 3]);
                self.kill_face(fi);
                self.add_face([p, m, s]);
                self.add_face([m, q, s]);
            }
        }
    }

    fn collapse_short_edges(&mut self, low: f64, high: f64) {
        for (a, b) in self.edges() {
            if !self.vert_alive[a] || !self.vert_alive[b] {
                continue;
            }
            // the edge may have disappeared through an earlier collapse
            let shared = self.edge_faces(a, b);
            if shared.is_empty() || (self.pos[a] - self.pos[b]).norm() >= low {
                continue;
            }
            // remove the interior endpoint, keep boundary vertices
            let (gone, keep) = match (self.boundary[a], self.boundary[b]) {
                (false, _) => (a, b),
                (true, false) => (b, a),
                (true, true) => continue,
            };
            let target = if self.boundary[keep] {
                self.pos[keep]
            } else {
                (self.pos[a] + self.pos[b]) * 0.5
            };
            if self.can_collapse(gone, keep, &shared, target, high) {
                self.collapse(gone, keep, &shared, target);
            }
        }
    }

    fn can_collapse(&self, gone: usize, keep: usize, shared: &[usize], target: Vec3, high: f64) -> bool {
        let ng = self.neighbors(gone);
        let nk = self.neighbors(keep);
        let opposite: Vec<usize> = shared
            .iter()
            .map(|&f| *self.faces[f].iter().find(|&&v| v != gone && v != keep).unwrap())
            .collect();
        // link condition
        let common = ng.iter().filter(|v| nk.contains(v)).count();
        if common != opposite.len() {
            return false;
        }
        if opposite.iter().any(|&o| self.neighbors(o).len() <= 3) {
            return false;
        }
        if ng.len() + nk.len() < 8 {
            return false;
        }
        if ng.iter().chain(&nk).any(|&v| v != gone && v != keep && (self.pos[v] - target).norm() > high) {
            return false;
        }
        let at = |v: usize| if v == gone || v == keep { target } else { self.pos[v] };
        for &fi in self.vfaces[gone].iter().chain(&self.vfaces[keep]) {
            if shared.contains(&fi) {
                continue;
            }
            let f = &self.faces[fi];
            let before = self.face_normal(f, &self.pos);
            let after = (at(f[1]) - at(f[0])).cross(&(at(f[2]) - at(f[0])));
            if after.norm() < 1e-12 * before.norm().max(1e-300) || before.dot(&after) <= 0.0 {
                return false;
            }
        }
        true
    }

    fn collapse(&mut self, gone: usize, keep: usize, shared: &[usize], target: Vec3) {
        for &fi in shared {
            self.kill_face(fi);
        }
        let moved: Vec<usize> = std::mem::take(&mut self.vfaces[gone]);
        for fi in moved {
            for v in self.faces[fi].iter_mut() {
                if *v == gone {
                    *v = keep;
                }
            }
            self.vfaces[keep].push(fi);
        }
        self.pos[keep] = target;
        self.vert_alive[gone] = false;
    }

    fn target_valence(&self, v: usize) -> i64 {
        if self.boundary[v] {
            4
        } else {
            6
        }
    }

    fn equalize_valences(&mut self) {
        for (a, b) in self.edges() {
            let shared = self.edge_faces(a, b);
            if shared.len() != 2 {
                continue;
            }
            let follows = |fi: usize| {
                let f = self.faces[fi];
                (0..3).any(|k| f[k] == a && f[(k + 1) % 3] == b)
            };
            // orient so that f1 = (a, b, c) and f2 = (b, a, d)
            let (f1, f2) = if follows(shared[0]) {
                (shared[0], shared[1])
            } else if follows(shared[1]) {
                (shared[1], shared[0])
            } else {
                continue;
            };
            let c = *self.faces[f1].iter().find(|&&v| v != a && v != b).unwrap();
            let d = *self.faces[f2].iter().find(|&&v| v != a && v != b).unwrap();
            if c == d || self.neighbors(c).contains(&d) {
                continue;
            }
            let val = |v: usize| self.neighbors(v).len() as i64;
            let (va, vb, vc, vd) = (val(a), val(b), val(c), val(d));
            if va <= 3 || vb <= 3 {
                continue;
            }
            let dev = |v: i64, t: i64| (v - t).pow(2);
            let before = dev(va, self.target_valence(a))
                + dev(vb, self.target_valence(b))
                + dev(vc, self.target_valence(c))
                + dev(vd, self.target_valence(d));
            let after = dev(va - 1, self.target_valence(a))
                + dev(vb - 1, self.target_valence(b))
                + dev(vc + 1, self.target_valence(c))
                + dev(vd + 1, self.target_valence(d));
            if after >= before {
                continue;
            }
            let n1 = [a, d, c];
            let n2 = [d, b, c];
            let old = self.face_normal(&self.faces[f1], &self.pos) + self.face_normal(&self.faces[f2], &self.pos);
            let m1 = self.face_normal(&n1, &self.pos);
            let m2 = self.face_normal(&n2, &self.pos);
            let tiny = 1e-10 * old.norm();
            if m1.dot(&old) <= tiny || m2.dot(&old) <= tiny {
                continue;
            }
            self.kill_face(f1);
            self.kill_face(f2);
            self.add_face(n1);
            self.add_face(n2);
        }
    }

    fn relax_tangentially(&mut self, index: &SurfaceIndex) {
        let n = self.pos.len();
        let updated: Vec<Vec3> = crate::par::map_range(n, |v| {
            if !self.vert_alive[v] || self.boundary[v] {
                return self.pos[v];
            }
            let nb = self.neighbors(v);
            if nb.is_empty() {
                return self.pos[v];
            }
            let centroid = nb.iter().fold(Vec3::zeros(), |acc, &u| acc + self.pos[u]) / nb.len() as f64;
            let normal = self.vertex_normal(v);
            let delta = centroid - self.pos[v];
            let moved = self.pos[v] + delta - normal * normal.dot(&delta);
            index.closest_point(&moved).map(|s| s.point).unwrap_or(moved)
        });
        // reject moves that would fold a face over
        let mut accepted = updated.clone();
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            let before = self.face_normal(f, &self.pos);
            let after = self.face_normal(f, &updated);
            if before.dot(&after) <= 0.0 {
                for &v in f {
                    accepted[v] = self.pos[v];
                }
            }
        }
        self.pos = accepted;
    }

    fn into_mesh(self) -> Result<TriangleMesh> {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut vertices = Vec::new();
        for (v, alive) in self.vert_alive.iter().enumerate() {
            if *alive && !self.vfaces[v].is_empty() {
                remap[v] = vertices.len();
                vertices.push(self.pos[v]);
            }
        }
        let faces = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, a)| **a)
            .map(|(f, _)| f.map(|v| remap[v]))
            .collect();
        TriangleMesh::new(vertices, faces)
    }
}
