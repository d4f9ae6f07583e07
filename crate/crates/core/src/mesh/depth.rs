//! Single-view depth maps: joint-bilateral smoothing guided by the shading
//! image, and conversion to a triangle mesh.

use super::{TriangleMesh, Vec3};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::shading::ShadingImage;
use serde::{Deserialize, Serialize};

/// What a depth value measures along a pixel ray.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthKind {
    /// Camera-space z, the usual sensor convention.
    #[default]
    Planar,
    /// Euclidean distance from the camera center along the pixel ray.
    Radial,
}

/// Per-pixel depth in millimeters; `0` marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub kind: DepthKind,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, kind: DepthKind) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "depth buffer has {} values for {width}x{height}",
                depth.len()
            )));
        }
        if let Some(i) = depth.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "depth pixel {i} is {} (must be finite and non-negative)",
                depth[i]
            )));
        }
        Ok(DepthMap {
            width,
            height,
            depth,
            kind,
        })
    }

    pub fn invalid(width: usize, height: usize, kind: DepthKind) -> Self {
        DepthMap {
            width,
            height,
            depth: vec![0.0; width * height],
            kind,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    /// Back-projects pixel `(x, y)` to camera space.
    pub fn back_project(&self, intrinsics: &CameraIntrinsics, x: usize, y: usize) -> Vec3 {
        let ray = intrinsics.pixel_ray(x as f64, y as f64);
        let d = self.get(x, y);
        match self.kind {
            DepthKind::Planar => ray * d,
            DepthKind::Radial => ray.normalize() * d,
        }
    }
}

/// Joint-bilateral filter of a depth map guided by a shading image.
///
/// Each valid output pixel is the normalized sum over valid neighbors within
/// `3·spatial_sigma` pixels, weighted by a spatial Gaussian, a Gaussian on
/// the guide-intensity difference (`range_sigma`) and a Gaussian on the depth
/// difference (`depth_sigma`). Infinite sigmas disable the corresponding
/// term. Invalid pixels stay invalid.
pub fn joint_bilateral_depth_filter(
    depth: &DepthMap,
    guide: &ShadingImage,
    spatial_sigma: f64,
    range_sigma: f64,
    depth_sigma: f64,
) -> Result<DepthMap> {
    if depth.width != guide.width() || depth.height != guide.height() {
        return Err(Error::InvalidParameter(format!(
            "depth {}x{} and guide {}x{} differ in size",
            depth.width,
            depth.height,
            guide.width(),
            guide.height()
        )));
    }
    if !(spatial_sigma > 0.0) || !(range_sigma > 0.0) || !(depth_sigma > 0.0) {
        return Err(Error::InvalidParameter("filter sigmas must be positive".into()));
    }
    let (w, h) = (depth.width, depth.height);
    let radius = (3.0 * spatial_sigma).ceil().min(w.max(h) as f64) as i64;
    let spatial: Vec<f64> = (-radius..=radius)
        .flat_map(|dy| {
            (-radius..=radius).map(move |dx| {
                (-((dx * dx + dy * dy) as f64) / (2.0 * spatial_sigma * spatial_sigma)).exp()
            })
        })
        .collect();
    let side = (2 * radius + 1) as usize;
    let inv_r = 1.0 / (2.0 * range_sigma * range_sigma);
    let inv_d = 1.0 / (2.0 * depth_sigma * depth_sigma);

    let rows = crate::par::map_range(h, |y| {
        let mut row = vec![0.0; w];
        for x in 0..w {
            let center = depth.get(x, y);
            if center <= 0.0 {
                continue;
            }
            let g0 = guide.get(x, y);
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in -radius..=radius {
                let yy = y as i64 + dy;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                for dx in -radius..=radius {
                    let xx = x as i64 + dx;
                    if xx < 0 || xx >= w as i64 {
                        continue;
                    }
                    let d = depth.get(xx as usize, yy as usize);
                    if d <= 0.0 {
                        continue;
                    }
                    let dg = guide.get(xx as usize, yy as usize) - g0;
                    let dd = d - center;
                    let ws = spatial[(dy + radius) as usize * side + (dx + radius) as usize];
                    let wgt = ws * (-dg * dg * inv_r).exp() * (-dd * dd * inv_d).exp();
                    num += wgt * d;
                    den += wgt;
                }
            }
            if den > 0.0 {
                row[x] = num / den;
            }
        }
        row
    });
    Ok(DepthMap {
        width: w,
        height: h,
        depth: rows.concat(),
        kind: depth.kind,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct MeshingOptions {
    /// Triangles whose vertex depths span more than this (mm) are dropped.
    pub max_discontinuity: f64,
}

impl Default for MeshingOptions {
    fn default() -> Self {
        MeshingOptions {
            max_discontinuity: 50.0,
        }
    }
}

/// Back-projects every valid pixel to a camera-space vertex and connects
/// 4-neighborhoods into triangles facing the camera.
pub fn depth_map_to_mesh(
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    options: &MeshingOptions,
) -> Result<TriangleMesh> {
    if depth.width != intrinsics.width || depth.height != intrinsics.height {
        return Err(Error::InvalidParameter(
            "depth map size does not match intrinsics".into(),
        ));
    }
    if depth.valid_count() < 3 {
        return Err(Error::EmptyMesh("fewer than 3 valid depth pixels".into()));
    }
    let (w, h) = (depth.width, depth.height);
    let mut index = vec![usize::MAX; w * h];
    let mut vertices = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if depth.is_valid(x, y) {
                index[y * w + x] = vertices.len();
                vertices.push(depth.back_project(intrinsics, x, y));
            }
        }
    }
    let mut faces = Vec::new();
    let mut push = |a: (usize, usize), b: (usize, usize), c: (usize, usize)| {
        let ids = [a, b, c].map(|(x, y)| index[y * w + x]);
        if ids.contains(&usize::MAX) {
            return;
        }
        let ds = [a, b, c].map(|(x, y)| depth.get(x, y));
        let span = ds.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - ds.iter().cloned().fold(f64::INFINITY, f64::min);
        if span <= options.max_discontinuity {
            faces.push(ids);
        }
    };
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            // image y points down, so (p00, p01, p10) faces the camera
            push((x, y), (x, y + 1), (x + 1, y));
            push((x + 1, y), (x, y + 1), (x + 1, y + 1));
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyMesh("no triangles survived the discontinuity test".into()));
    }
    TriangleMesh::new(vertices, faces)
}
