use std::collections::HashMap;

use super::{TriangleMesh, Vec3};

const ICOSA_FACES: [[usize; 3]; 20] = [
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

fn icosahedron() -> Vec<Vec3> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect()
}

/// Geodesic sphere centered at the origin: every icosahedron face is split
/// into `frequency²` triangles and projected onto the sphere.
/// Vertex count is `10·frequency² + 2`.
pub fn geodesic_sphere(radius: f64, frequency: usize) -> TriangleMesh {
    let n = frequency.max(1);
    let corners = icosahedron();
    let mut index: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::with_capacity(20 * n * n);

    for f in ICOSA_FACES {
        let mut id = |i: usize, j: usize| -> usize {
            let k = n - i - j;
            let mut key: Vec<(usize, usize)> = [(f[0], k), (f[1], i), (f[2], j)]
                .into_iter()
                .filter(|&(_, w)| w > 0)
                .collect();
            key.sort_unstable();
            *index.entry(key).or_insert_with(|| {
                let p = (corners[f[0]] * k as f64 + corners[f[1]] * i as f64 + corners[f[2]] * j as f64)
                    / n as f64;
                vertices.push(p.normalize() * radius);
                vertices.len() - 1
            })
        };
        // (i, j) walks along the f[0]->f[1] and f[0]->f[2] edges
        for j in 0..n {
            for i in 0..(n - j) {
                let a = id(i, j);
                let b = id(i + 1, j);
                let c = id(i, j + 1);
                faces.push([a, b, c]);
                if i + j + 1 < n {
                    let d = id(i + 1, j + 1);
                    faces.push([b, d, c]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces).expect("geodesic sphere is valid")
}

/// Icosphere with `4^subdivisions` triangles per icosahedron face.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    geodesic_sphere(radius, 1 << subdivisions)
}

/// Regular grid of `nx × ny` vertices in the plane `z`, centered on the
/// origin, faces wound counter-clockwise seen from `+z`.
pub fn grid_plane(nx: usize, ny: usize, spacing: f64, z: f64) -> TriangleMesh {
    let xs: Vec<f64> = (0..nx)
        .map(|i| (i as f64 - (nx - 1) as f64 / 2.0) * spacing)
        .collect();
    let ys: Vec<f64> = (0..ny)
        .map(|j| (j as f64 - (ny - 1) as f64 / 2.0) * spacing)
        .collect();
    grid_from_coords(&xs, &ys, |_, _| z)
}

/// Grid over the tensor product of `xs` and `ys` with height `z(x, y)`.
/// Vertex `(i, j)` has index `j * xs.len() + i`.
pub fn grid_from_coords(xs: &[f64], ys: &[f64], z: impl Fn(f64, f64) -> f64) -> TriangleMesh {
    let nx = xs.len();
    let ny = ys.len();
    let mut vertices = Vec::with_capacity(nx * ny);
    for &y in ys {
        for &x in xs {
            vertices.push(Vec3::new(x, y, z(x, y)));
        }
    }
    let mut faces = Vec::with_capacity(2 * nx.saturating_sub(1) * ny.saturating_sub(1));
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let a = j * nx + i;
            let b = a + 1;
            let c = a + nx;
            let d = c + 1;
            // alternate the diagonal so the grid has no preferred direction
            if (i + j) % 2 == 0 {
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            } else {
                faces.push([a, b, c]);
                faces.push([b, d, c]);
            }
        }
    }
    TriangleMesh::new(vertices, faces).expect("grid is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geodesic_counts() {
        for n in [1, 2, 3, 7] {
            let s = geodesic_sphere(1.0, n);
            assert_eq!(s.vertex_count(), 10 * n * n + 2);
            assert_eq!(s.face_count(), 20 * n * n);
            assert!(s.non_manifold_edges().is_empty());
        }
    }

    #[test]
    fn sphere_faces_point_outward() {
        let s = geodesic_sphere(2.0, 5);
        for f in 0..s.face_count() {
            let c = s.faces()[f].iter().fold(Vec3::zeros(), |a, &v| a + s.vertices()[v]);
            assert!(s.face_normal_raw(f).dot(&c) > 0.0);
        }
    }

    #[test]
    fn grid_faces_point_up() {
        let g = grid_plane(5, 4, 1.0, 3.0);
        assert_eq!(g.vertex_count(), 20);
        for f in 0..g.face_count() {
            assert!(g.face_normal_raw(f).z > 0.0);
        }
    }
}
