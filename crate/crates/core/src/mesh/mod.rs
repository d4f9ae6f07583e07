//! Triangle mesh representation, connectivity and vertex normals.

mod depth;
mod query;
mod remesh;
mod shapes;

pub use depth::{depth_map_to_mesh, joint_bilateral_depth_filter, DepthKind, DepthMap, MeshingOptions};
pub use query::{closest_point_on_triangle, SurfaceIndex, SurfacePoint};
pub use remesh::{edge_length_cv, isotropic_remesh, RemeshOptions};
pub use shapes::{geodesic_sphere, grid_from_coords, grid_plane, icosphere};

use std::collections::HashMap;

use nalgebra::{Isometry3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Ordered one-ring of a vertex.
///
/// `wedges` holds `(a, b)` for every incident face `(v, a, b)` in
/// counter-clockwise order, so `(x_a - x_v) x (x_b - x_v)` points outward.
#[derive(Clone, Debug, Default)]
pub struct OneRing {
    pub neighbors: Vec<usize>,
    pub faces: Vec<usize>,
    pub wedges: Vec<(usize, usize)>,
    pub boundary: bool,
}

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    rings: Vec<OneRing>,
}

impl TriangleMesh {
    /// Builds a mesh, validating face indices and computing normals and
    /// one-rings.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex out of range ({f:?}, {n} vertices)"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate ({f:?})")));
            }
        }
        if let Some(v) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {v} is not finite")));
        }
        let rings = build_rings(n, &faces);
        let mut mesh = TriangleMesh {
            vertices,
            faces,
            normals: Vec::new(),
            rings,
        };
        mesh.recompute_normals();
        Ok(mesh)
    }

    pub fn empty() -> Self {
        TriangleMesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            normals: Vec::new(),
            rings: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn ring(&self, v: usize) -> &OneRing {
        &self.rings[v]
    }

    pub fn rings(&self) -> &[OneRing] {
        &self.rings
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Replaces vertex positions (topology unchanged) and recomputes normals.
    /// Returns vertices whose normal could not be computed.
    pub fn set_vertices(&mut self, vertices: Vec<Vec3>) -> Vec<usize> {
        assert_eq!(vertices.len(), self.vertices.len(), "vertex count changed");
        self.vertices = vertices;
        self.recompute_normals()
    }

    /// Overrides the normals, e.g. with analytic ones for a known shape.
    /// They are replaced again by the next position update.
    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<()> {
        if normals.len() != self.vertices.len() {
            return Err(Error::InvalidParameter(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidParameter(format!("normal {i} is not unit length")));
        }
        self.normals = normals;
        Ok(())
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Vec<[usize; 3]>) {
        (self.vertices, self.faces)
    }

    /// Recomputes area-weighted vertex normals in place; see
    /// [`compute_vertex_normals`].
    pub fn recompute_normals(&mut self) -> Vec<usize> {
        let (normals, flagged) = compute_vertex_normals(&self.vertices, &self.faces, &self.normals);
        self.normals = normals;
        flagged
    }

    /// Unnormalized face normal `(b - a) x (c - a)`; its length is twice the area.
    pub fn face_normal_raw(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_normal_raw(f).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges()
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .collect()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let lengths = self.edge_lengths();
        if lengths.is_empty() {
            return 0.0;
        }
        lengths.iter().sum::<f64>() / lengths.len() as f64
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Returns edges used by more than two faces or traversed twice in the
    /// same direction (inconsistent winding). Empty means manifold.
    pub fn non_manifold_edges(&self) -> Vec<(usize, usize)> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *directed.entry((a, b)).or_default() += 1;
                *undirected.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut bad: Vec<(usize, usize)> = undirected
            .iter()
            .filter(|(_, &c)| c > 2)
            .map(|(&e, _)| e)
            .chain(
                directed
                    .iter()
                    .filter(|(_, &c)| c > 1)
                    .map(|(&(a, b), _)| (a.min(b), a.max(b))),
            )
            .collect();
        bad.sort_unstable();
        bad.dedup();
        bad
    }

    pub fn ensure_manifold(&self) -> Result<()> {
        let edges = self.non_manifold_edges();
        if edges.is_empty() {
            Ok(())
        } else {
            Err(Error::NonManifold { edges })
        }
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> TriangleMesh {
        let vertices = self
            .vertices
            .iter()
            .map(|v| iso.transform_point(&(*v).into()).coords)
            .collect();
        let normals = self
            .normals
            .iter()
            .map(|n| iso.rotation.transform_vector(n))
            .collect();
        TriangleMesh {
            vertices,
            faces: self.faces.clone(),
            normals,
            rings: self.rings.clone(),
        }
    }

    /// Uniform-weight Laplacian smoothing. Boundary vertices stay fixed.
    pub fn laplacian_smoothed(&self, iterations: usize, step: f64) -> TriangleMesh {
        let mut positions = self.vertices.clone();
        for _ in 0..iterations {
            positions = self.umbrella_step(&positions, step);
        }
        let mut out = self.clone();
        out.set_vertices(positions);
        out
    }

    /// Taubin smoothing: each iteration is a Laplacian step with `lambda`
    /// followed by one with `mu < 0`. With `mu = -lambda` a sphere keeps its
    /// radius to second order while short wavelengths still decay.
    pub fn taubin_smoothed(&self, iterations: usize, lambda: f64, mu: f64) -> TriangleMesh {
        let mut positions = self.vertices.clone();
        for _ in 0..iterations {
            positions = self.umbrella_step(&positions, lambda);
            positions = self.umbrella_step(&positions, mu);
        }
        let mut out = self.clone();
        out.set_vertices(positions);
        out
    }

    fn umbrella_step(&self, positions: &[Vec3], step: f64) -> Vec<Vec3> {
        positions
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let ring = &self.rings[v];
                if ring.boundary || ring.neighbors.is_empty() {
                    return *p;
                }
                let centroid = ring.neighbors.iter().fold(Vec3::zeros(), |acc, &j| acc + positions[j])
                    / ring.neighbors.len() as f64;
                p + step * (centroid - p)
            })
            .collect()
    }
}

/// Area-weighted vertex normals: each vertex takes the normalized sum of the
/// unnormalized normals of its incident faces.
///
/// Vertices whose umbrella has zero total area (or no faces at all) are
/// returned in the flagged list; they keep `previous[v]` when that is a unit
/// vector and `+z` otherwise.
pub fn compute_vertex_normals(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    previous: &[Vec3],
) -> (Vec<Vec3>, Vec<usize>) {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
        for &v in f {
            acc[v] += n;
        }
    }
    let mut flagged = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(v, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                n / len
            } else {
                flagged.push(v);
                match previous.get(v) {
                    Some(p) if (p.norm() - 1.0).abs() < 1e-9 => *p,
                    _ => Vec3::z(),
                }
            }
        })
        .collect();
    (normals, flagged)
}

fn build_rings(n: usize, faces: &[[usize; 3]]) -> Vec<OneRing> {
    let mut wedges: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n];
    for (fi, f) in faces.iter().enumerate() {
        wedges[f[0]].push((f[1], f[2], fi));
        wedges[f[1]].push((f[2], f[0], fi));
        wedges[f[2]].push((f[0], f[1], fi));
    }
    wedges
        .into_iter()
        .map(|w| order_fan(w).unwrap_or_else(unordered_ring))
        .collect()
}

/// Chains wedges `(a, b)` into a fan where each `b` is the next `a`.
/// Fails (returning the input) when the vertex has several fans.
fn order_fan(
    mut wedges: Vec<(usize, usize, usize)>,
) -> std::result::Result<OneRing, Vec<(usize, usize, usize)>> {
    if wedges.is_empty() {
        return Ok(OneRing::default());
    }
    let m = wedges.len();
    // a boundary fan starts at a wedge whose `a` is nobody's `b`
    let start = (0..m)
        .find(|&i| !wedges.iter().any(|w| w.1 == wedges[i].0))
        .unwrap_or(0);
    let boundary = !wedges.iter().all(|w| wedges.iter().any(|u| u.1 == w.0));
    wedges.swap(0, start);
    for i in 1..m {
        let want = wedges[i - 1].1;
        match (i..m).find(|&j| wedges[j].0 == want) {
            Some(j) => wedges.swap(i, j),
            None => return Err(wedges),
        }
    }
    let mut neighbors: Vec<usize> = wedges.iter().map(|w| w.0).collect();
    if boundary {
        neighbors.push(wedges[m - 1].1);
    } else if wedges[m - 1].1 != wedges[0].0 {
        return Err(wedges);
    }
    Ok(OneRing {
        neighbors,
        faces: wedges.iter().map(|w| w.2).collect(),
        wedges: wedges.iter().map(|w| (w.0, w.1)).collect(),
        boundary,
    })
}

fn unordered_ring(wedges: Vec<(usize, usize, usize)>) -> OneRing {
    let mut neighbors: Vec<usize> = wedges.iter().flat_map(|w| [w.0, w.1]).collect();
    neighbors.sort_unstable();
    neighbors.dedup();
    OneRing {
        neighbors,
        faces: wedges.iter().map(|w| w.2).collect(),
        wedges: wedges.iter().map(|w| (w.0, w.1)).collect(),
        boundary: true,
    }
}
