use super::{TriangleMesh, Vec3};

/// Closest point to `p` on triangle `(a, b, c)` (Ericson, Real-Time
/// Collision Detection, 5.1.5). Returns the point and its barycentric
/// weights.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    pub point: Vec3,
    pub face: usize,
    pub barycentric: [f64; 3],
    pub distance: f64,
}

/// Uniform-grid acceleration structure for closest-point queries against
/// a triangle mesh. Faces are binned by their bounding boxes.
#[derive(Clone, Debug)]
pub struct SurfaceIndex {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<u32>,
    cell_faces: Vec<u32>,
}

impl SurfaceIndex {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let vertices = mesh.vertices().to_vec();
        let faces = mesh.faces().to_vec();
        if faces.is_empty() {
            return SurfaceIndex {
                vertices,
                faces,
                origin: Vec3::zeros(),
                cell: 1.0,
                dims: [1, 1, 1],
                cell_start: vec![0, 0],
                cell_faces: Vec::new(),
            };
        }
        let (lo, hi) = mesh.bounding_box();
        let extent = (hi - lo).map(|e| e.max(1e-9));
        // aim for a couple of faces per occupied cell
        let edge = mesh.mean_edge_length().max(1e-9);
        let max_dim = 256.0;
        let cell = (edge * 2.0).max(extent.max() / max_dim);
        let dims = [
            ((extent.x / cell).ceil() as usize).max(1),
            ((extent.y / cell).ceil() as usize).max(1),
            ((extent.z / cell).ceil() as usize).max(1),
        ];
        let ncells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; ncells + 1];
        let mut ranges = Vec::with_capacity(faces.len());
        for f in &faces {
            let (flo, fhi) = tri_bounds(&vertices, f);
            let a = cell_coords(&flo, &lo, cell, &dims);
            let b = cell_coords(&fhi, &lo, cell, &dims);
            ranges.push((a, b));
            for z in a[2]..=b[2] {
                for y in a[1]..=b[1] {
                    for x in a[0]..=b[0] {
                        counts[(z * dims[1] + y) * dims[0] + x + 1] += 1;
                    }
                }
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut cell_faces = vec![0u32; counts[ncells] as usize];
        for (fi, (a, b)) in ranges.iter().enumerate() {
            for z in a[2]..=b[2] {
                for y in a[1]..=b[1] {
                    for x in a[0]..=b[0] {
                        let c = (z * dims[1] + y) * dims[0] + x;
                        cell_faces[fill[c] as usize] = fi as u32;
                        fill[c] += 1;
                    }
                }
            }
        }
        SurfaceIndex {
            vertices,
            faces,
            origin: lo,
            cell,
            dims,
            cell_start: counts,
            cell_faces,
        }
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    /// Closest surface point to `p`. `None` only for an empty mesh.
    pub fn closest_point(&self, p: &Vec3) -> Option<SurfacePoint> {
        self.closest_point_within(p, f64::INFINITY)
    }

    /// Closest surface point within `max_distance`, if any.
    pub fn closest_point_within(&self, p: &Vec3, max_distance: f64) -> Option<SurfacePoint> {
        if self.faces.is_empty() {
            return None;
        }
        let dims = self.dims;
        // continuous cell coordinate of p, possibly outside the grid
        let rel = (p - self.origin) / self.cell;
        let center = [
            (rel.x.floor() as i64).clamp(0, dims[0] as i64 - 1),
            (rel.y.floor() as i64).clamp(0, dims[1] as i64 - 1),
            (rel.z.floor() as i64).clamp(0, dims[2] as i64 - 1),
        ];
        // distance from p to the grid box, so empty shells can be skipped
        let box_dist = {
            let hi = self.origin
                + Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * self.cell;
            let q = p.sup(&self.origin).inf(&hi);
            (p - q).norm()
        };
        let max_ring = dims.iter().copied().max().unwrap() as i64;
        let mut best: Option<SurfacePoint> = None;
        let mut best_d = max_distance;
        for ring in 0..=max_ring {
            // every point in cells beyond this ring is at least this far away
            let shell_min = box_dist.max((ring as f64 - 1.0) * self.cell);
            if shell_min > best_d {
                break;
            }
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let (x, y, z) = (center[0] + dx, center[1] + dy, center[2] + dz);
                        if x < 0
                            || y < 0
                            || z < 0
                            || x >= dims[0] as i64
                            || y >= dims[1] as i64
                            || z >= dims[2] as i64
                        {
                            continue;
                        }
                        let c = (z as usize * dims[1] + y as usize) * dims[0] + x as usize;
                        let (s, e) = (self.cell_start[c] as usize, self.cell_start[c + 1] as usize);
                        for &fi in &self.cell_faces[s..e] {
                            let [a, b, cc] = self.faces[fi as usize];
                            let (q, bary) = closest_point_on_triangle(
                                p,
                                &self.vertices[a],
                                &self.vertices[b],
                                &self.vertices[cc],
                            );
                            let d = (p - q).norm();
                            let better = match &best {
                                None => d <= best_d,
                                Some(bp) => d < bp.distance || (d == bp.distance && (fi as usize) < bp.face),
                            };
                            if better {
                                best_d = d;
                                best = Some(SurfacePoint {
                                    point: q,
                                    face: fi as usize,
                                    barycentric: bary,
                                    distance: d,
                                });
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

fn tri_bounds(vertices: &[Vec3], f: &[usize; 3]) -> (Vec3, Vec3) {
    let a = vertices[f[0]];
    let b = vertices[f[1]];
    let c = vertices[f[2]];
    (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
}

fn cell_coords(p: &Vec3, origin: &Vec3, cell: f64, dims: &[usize; 3]) -> [usize; 3] {
    let r = (p - origin) / cell;
    [
        (r.x.floor().max(0.0) as usize).min(dims[0] - 1),
        (r.y.floor().max(0.0) as usize).min(dims[1] - 1),
        (r.z.floor().max(0.0) as usize).min(dims[2] - 1),
    ]
}
