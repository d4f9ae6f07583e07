//! Pinhole camera, vertex projection, z-buffered rasterization and
//! per-vertex visibility.

use nalgebra::{Isometry3, Matrix3, Matrix3x4, Rotation3, Translation3, UnitQuaternion, Vector2};

use crate::error::{Error, Result};
use crate::mesh::{DepthKind, DepthMap, TriangleMesh, Vec3};
use crate::shading::ShadingImage;

/// Nearest camera-space z a triangle vertex may have to be rasterized.
const NEAR_PLANE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidParameter(format!("focal lengths must be positive ({fx}, {fy})")));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera-space direction `(x, y, 1)` through pixel coordinate `(u, v)`.
    /// Pixel centers sit at integer coordinates.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// World-to-camera rigid transform: `x_cam = rotation · x_world + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {ortho:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(CameraPose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        CameraPose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Pose of a camera at `eye` looking at `target`; image y follows
    /// `-up` so the picture is upright.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(up);
        if right.norm() < 1e-12 {
            return Err(Error::InvalidParameter("up vector is parallel to the view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        CameraPose::new(rotation, translation)
    }

    /// Row-major 3×4 extrinsic matrix `[R | t]`.
    pub fn matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn to_world(&self, x_cam: &Vec3) -> Vec3 {
        self.rotation.transpose() * (x_cam - self.translation)
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        Isometry3::from_parts(Translation3::from(self.translation), rot)
    }

    /// Pose of the same camera after the world is moved by `iso`.
    pub fn after_world_transform(&self, iso: &Isometry3<f64>) -> CameraPose {
        let inv = iso.inverse();
        let r_inv = inv.rotation.to_rotation_matrix().into_inner();
        CameraPose {
            rotation: self.rotation * r_inv,
            translation: self.rotation * inv.translation.vector + self.translation,
        }
    }
}

#[derive(Clone, Debug)]
pub struct View {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    /// Light position in the camera frame (mm).
    pub light_offset: Vec3,
    pub image: ShadingImage,
}

impl View {
    pub fn new(intrinsics: CameraIntrinsics, pose: CameraPose, light_offset: Vec3, image: ShadingImage) -> Result<Self> {
        if image.width() != intrinsics.width || image.height() != intrinsics.height {
            return Err(Error::InvalidParameter(format!(
                "image is {}x{} but intrinsics say {}x{}",
                image.width(),
                image.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        Ok(View {
            intrinsics,
            pose,
            light_offset,
            image,
        })
    }

    /// Light position in world coordinates.
    pub fn light_position(&self) -> Vec3 {
        self.pose.to_world(&self.light_offset)
    }

    pub fn camera_center(&self) -> Vec3 {
        self.pose.center()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    /// Euclidean distance from the camera center (mm).
    pub depth: f64,
    pub z: f64,
}

/// Projects a world point through `K·[R | t]`.
pub fn project_point(x: &Vec3, intrinsics: &CameraIntrinsics, pose: &CameraPose) -> Result<Projection> {
    let c = pose.to_camera(x);
    if c.z <= 0.0 {
        return Err(Error::BehindCamera { z: c.z });
    }
    Ok(Projection {
        pixel: Vector2::new(intrinsics.fx * c.x / c.z + intrinsics.cx, intrinsics.fy * c.y / c.z + intrinsics.cy),
        depth: c.norm(),
        z: c.z,
    })
}

pub fn project_vertex(x: &Vec3, view: &View) -> Result<Projection> {
    project_point(x, &view.intrinsics, &view.pose)
}

/// Inverse of [`project_point`] given pixel and Euclidean depth.
pub fn back_project(pixel: &Vector2<f64>, depth: f64, intrinsics: &CameraIntrinsics, pose: &CameraPose) -> Vec3 {
    let ray = intrinsics.pixel_ray(pixel.x, pixel.y).normalize();
    pose.to_world(&(ray * depth))
}

/// Z-buffer with enough per-pixel information to shade the surface.
#[derive(Clone, Debug)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Euclidean camera distance, `0` where nothing was drawn.
    pub depth: Vec<f64>,
    pub face: Vec<u32>,
    /// Perspective-correct barycentric weights of `face` at the pixel center.
    pub barycentric: Vec<[f64; 3]>,
}

impl Raster {
    pub const NO_FACE: u32 = u32::MAX;

    pub fn covered(&self, i: usize) -> bool {
        self.face[i] != Self::NO_FACE
    }

    pub fn depth_map(&self) -> DepthMap {
        DepthMap {
            width: self.width,
            height: self.height,
            depth: self.depth.clone(),
            kind: DepthKind::Radial,
        }
    }
}

/// Rasterizes every triangle with a z-test on camera distance. Triangles
/// with a vertex behind the near plane are skipped.
pub fn rasterize(mesh: &TriangleMesh, intrinsics: &CameraIntrinsics, pose: &CameraPose) -> Raster {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut raster = Raster {
        width: w,
        height: h,
        depth: vec![0.0; w * h],
        face: vec![Raster::NO_FACE; w * h],
        barycentric: vec![[0.0; 3]; w * h],
    };
    let cam: Vec<Vec3> = mesh.vertices().iter().map(|x| pose.to_camera(x)).collect();
    for (fi, f) in mesh.faces().iter().enumerate() {
        let p = [cam[f[0]], cam[f[1]], cam[f[2]]];
        if p.iter().any(|c| c.z <= NEAR_PLANE) {
            continue;
        }
        let s: [Vector2<f64>; 3] = p.map(|c| {
            Vector2::new(intrinsics.fx * c.x / c.z + intrinsics.cx, intrinsics.fy * c.y / c.z + intrinsics.cy)
        });
        let area = edge_fn(&s[0], &s[1], &s[2]);
        if area.abs() < 1e-14 {
            continue;
        }
        let min_x = s.iter().map(|v| v.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_x = s.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
        let min_y = s.iter().map(|v| v.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_y = s.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        for y in min_y as usize..=max_y as usize {
            for x in min_x as usize..=max_x as usize {
                let q = Vector2::new(x as f64, y as f64);
                let b0 = edge_fn(&s[1], &s[2], &q) / area;
                let b1 = edge_fn(&s[2], &s[0], &q) / area;
                let b2 = 1.0 - b0 - b1;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                // screen-space weights -> perspective-correct weights
                let w0 = b0 / p[0].z;
                let w1 = b1 / p[1].z;
                let w2 = b2 / p[2].z;
                let sum = w0 + w1 + w2;
                let bary = [w0 / sum, w1 / sum, w2 / sum];
                let point = p[0] * bary[0] + p[1] * bary[1] + p[2] * bary[2];
                let dist = point.norm();
                let i = y * w + x;
                let cur = raster.depth[i];
                if cur == 0.0 || dist < cur {
                    raster.depth[i] = dist;
                    raster.face[i] = fi as u32;
                    raster.barycentric[i] = bary;
                }
            }
        }
    }
    raster
}

#[inline]
fn edge_fn(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Depth buffer of the mesh seen from `view` (camera-ray distance).
pub fn rasterize_depth(mesh: &TriangleMesh, view: &View) -> DepthMap {
    rasterize(mesh, &view.intrinsics, &view.pose).depth_map()
}

/// Per-view, per-vertex visibility plus the depth buffers used to decide it.
#[derive(Clone, Debug)]
pub struct VisibilityMap {
    /// `visible[view][vertex]`
    pub visible: Vec<Vec<bool>>,
    pub buffers: Vec<DepthMap>,
}

impl VisibilityMap {
    pub fn is_visible(&self, view: usize, vertex: usize) -> bool {
        self.visible[view][vertex]
    }

    pub fn view_count(&self) -> usize {
        self.visible.len()
    }
}

/// Default occlusion bias: twice the mean edge length.
pub fn default_visibility_bias(mesh: &TriangleMesh) -> f64 {
    2.0 * mesh.mean_edge_length()
}

/// Visibility of every vertex in one view given its rasterized depth.
///
/// A vertex is visible when it projects inside the image, its normal faces
/// the camera and its distance is within `bias` of the depth buffer at the
/// nearest pixel.
pub fn vertex_visibility(mesh: &TriangleMesh, view: &View, buffer: &DepthMap, bias: f64) -> Vec<bool> {
    let center = view.camera_center();
    let (w, h) = (buffer.width as f64, buffer.height as f64);
    mesh.vertices()
        .iter()
        .zip(mesh.normals())
        .map(|(x, n)| {
            if n.dot(&(center - x)) <= 0.0 {
                return false;
            }
            let Ok(p) = project_vertex(x, view) else {
                return false;
            };
            let (u, v) = (p.pixel.x.round(), p.pixel.y.round());
            if u < 0.0 || v < 0.0 || u > w - 1.0 || v > h - 1.0 {
                return false;
            }
            let d = buffer.get(u as usize, v as usize);
            d > 0.0 && p.depth <= d + bias
        })
        .collect()
}

pub fn compute_visibility(mesh: &TriangleMesh, view: &View, bias: f64) -> (Vec<bool>, DepthMap) {
    let buffer = rasterize_depth(mesh, view);
    let visible = vertex_visibility(mesh, view, &buffer, bias);
    (visible, buffer)
}

/// Visibility over all views (views are processed in parallel).
pub fn compute_visibility_all(mesh: &TriangleMesh, views: &[View], bias: f64) -> VisibilityMap {
    let per_view = crate::par::map_slice(views, |v| compute_visibility(mesh, v, bias));
    let (visible, buffers) = per_view.into_iter().unzip();
    VisibilityMap { visible, buffers }
}
