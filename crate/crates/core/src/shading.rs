//! Near point-light Lambertian image formation.
//!
//! Intensity at a surface point with normal `n`, unit direction `l` towards
//! the light and light distance `d` is
//! `I = ((c·ρ / d²) · max(n·l, 0) + ambient)^γ`.

use crate::albedo::AlbedoModel;
use crate::camera::{rasterize, Raster, View};
use crate::error::{Error, Result};
use crate::mesh::{TriangleMesh, Vec3};

/// Single-channel intensity image in `[0, 1]` with explicit gamma state.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadingImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    gamma_applied: bool,
    gamma: Option<f64>,
}

impl ShadingImage {
    /// Linear image; every value must be finite and within `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "image has {} values for {width}x{height}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "pixel {i} has intensity {} outside [0, 1]",
                data[i]
            )));
        }
        Ok(ShadingImage {
            width,
            height,
            data,
            gamma_applied: false,
            gamma: None,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        ShadingImage::new(width, height, vec![value; width * height]).expect("constant in range")
    }

    /// Marks the image as carrying a camera response `I_obs = I_lin^gamma`.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma_applied = true;
        self.gamma = Some(gamma);
        self
    }

    /// Marks the image as carrying an unknown camera response, the state of
    /// a raw capture.
    pub fn with_unknown_gamma(mut self) -> Self {
        self.gamma_applied = true;
        self.gamma = None;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable pixel access; callers must keep values inside `[0, 1]`.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn gamma_applied(&self) -> bool {
        self.gamma_applied
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at a continuous pixel coordinate (pixel centers at
    /// integers). `None` outside `[0, w-1] × [0, h-1]`.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f64> {
        bilinear(&self.data, self.width, self.height, u, v)
    }

    /// Integer pixels and weights used by [`Self::sample_bilinear`].
    pub fn bilinear_taps(&self, u: f64, v: f64) -> Option<[(usize, f64); 4]> {
        bilinear_taps(self.width, self.height, u, v)
    }

    /// Median over a rectangle `[x0, x1) × [y0, y1)`, clipped to the image.
    pub fn median_roi(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Option<f64> {
        let mut values: Vec<f64> = (y0..y1.min(self.height))
            .flat_map(|y| (x0..x1.min(self.width)).map(move |x| (x, y)))
            .map(|(x, y)| self.get(x, y))
            .collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        Some(if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        })
    }
}

pub(crate) fn bilinear_taps(w: usize, h: usize, u: f64, v: f64) -> Option<[(usize, f64); 4]> {
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let x0 = (u.floor() as usize).min(w.saturating_sub(2));
    let y0 = (v.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    Some([
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ])
}

pub(crate) fn bilinear(data: &[f64], w: usize, h: usize, u: f64, v: f64) -> Option<f64> {
    bilinear_taps(w, h, u, v).map(|taps| taps.iter().map(|&(i, wt)| data[i] * wt).sum())
}

/// Brightness, ambient term and camera response of the active light.
/// The light position comes from each [`View`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightModel {
    /// Global brightness `c`; albedo values are multiplied by it.
    pub brightness: f64,
    pub ambient: f64,
    pub gamma: f64,
}

impl Default for LightModel {
    fn default() -> Self {
        LightModel {
            brightness: 1.0,
            ambient: 0.0,
            gamma: 1.0,
        }
    }
}

impl LightModel {
    pub fn new(brightness: f64, ambient: f64, gamma: f64) -> Result<Self> {
        if !(brightness > 0.0) {
            return Err(Error::InvalidParameter(format!("brightness must be positive ({brightness})")));
        }
        if !(ambient >= 0.0) {
            return Err(Error::InvalidParameter(format!("ambient must be non-negative ({ambient})")));
        }
        if !(gamma > 0.0 && gamma <= 3.0) {
            return Err(Error::InvalidParameter(format!("gamma must lie in (0, 3] ({gamma})")));
        }
        Ok(LightModel {
            brightness,
            ambient,
            gamma,
        })
    }

    pub fn linear(&self) -> LightModel {
        LightModel { gamma: 1.0, ..*self }
    }
}

/// Shading model at one surface point. Back-facing light (`n·l < 0`)
/// contributes nothing. Not clamped to `[0, 1]`.
pub fn predict_intensity(normal: &Vec3, light_dir: &Vec3, distance: f64, albedo: f64, light: &LightModel) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!("light distance must be positive ({distance})")));
    }
    Ok(predict_unchecked(normal, light_dir, distance, albedo, light))
}

#[inline]
pub(crate) fn predict_unchecked(normal: &Vec3, light_dir: &Vec3, distance: f64, albedo: f64, light: &LightModel) -> f64 {
    let cos = normal.dot(light_dir).max(0.0);
    let linear = light.brightness * albedo / (distance * distance) * cos + light.ambient;
    if light.gamma == 1.0 {
        linear
    } else {
        linear.powf(light.gamma)
    }
}

/// Rendered view with the masks downstream steps need.
#[derive(Clone, Debug)]
pub struct Rendering {
    pub image: ShadingImage,
    pub covered: Vec<bool>,
    /// Pixels whose prediction exceeded 1 and were clamped.
    pub saturated: Vec<bool>,
    pub raster: Raster,
}

/// Renders the mesh from `view` with barycentric interpolation of position,
/// normal and albedo. Background pixels are 0. The output carries the
/// light's gamma.
pub fn render_view(mesh: &TriangleMesh, view: &View, albedo: &AlbedoModel, light: &LightModel) -> Rendering {
    let raster = rasterize(mesh, &view.intrinsics, &view.pose);
    let light_pos = view.light_position();
    let (w, h) = (raster.width, raster.height);
    let mut data = vec![0.0; w * h];
    let mut covered = vec![false; w * h];
    let mut saturated = vec![false; w * h];
    let verts = mesh.vertices();
    let normals = mesh.normals();
    for i in 0..w * h {
        if !raster.covered(i) {
            continue;
        }
        let f = mesh.faces()[raster.face[i] as usize];
        let b = raster.barycentric[i];
        let x = verts[f[0]] * b[0] + verts[f[1]] * b[1] + verts[f[2]] * b[2];
        let n = (normals[f[0]] * b[0] + normals[f[1]] * b[1] + normals[f[2]] * b[2]).normalize();
        let a = albedo.value(f[0]) * b[0] + albedo.value(f[1]) * b[1] + albedo.value(f[2]) * b[2];
        let to_light = light_pos - x;
        let d = to_light.norm();
        let mut value = if d > 0.0 {
            predict_unchecked(&n, &(to_light / d), d, a, light)
        } else {
            0.0
        };
        if value > 1.0 {
            value = 1.0;
            saturated[i] = true;
        }
        data[i] = value;
        covered[i] = true;
    }
    let image = ShadingImage {
        width: w,
        height: h,
        data,
        gamma_applied: true,
        gamma: Some(light.gamma),
    };
    Rendering {
        image,
        covered,
        saturated,
        raster,
    }
}

pub fn render_shading_image(mesh: &TriangleMesh, view: &View, albedo: &AlbedoModel, light: &LightModel) -> ShadingImage {
    render_view(mesh, view, albedo, light).image
}

/// Removes the camera response: `I_lin = I^(1/gamma)`.
pub fn linearize(image: &ShadingImage, gamma: f64) -> Result<ShadingImage> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive ({gamma})")));
    }
    if !image.gamma_applied {
        return Err(Error::InvalidParameter("image is already linear".into()));
    }
    let inv = 1.0 / gamma;
    Ok(ShadingImage {
        width: image.width,
        height: image.height,
        data: image.data.iter().map(|v| v.powf(inv)).collect(),
        gamma_applied: false,
        gamma: None,
    })
}

/// Applies a camera response to a linear image.
pub fn apply_gamma(image: &ShadingImage, gamma: f64) -> Result<ShadingImage> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive ({gamma})")));
    }
    if image.gamma_applied {
        return Err(Error::InvalidParameter("image already carries a gamma".into()));
    }
    Ok(ShadingImage {
        width: image.width,
        height: image.height,
        data: image.data.iter().map(|v| v.powf(gamma)).collect(),
        gamma_applied: true,
        gamma: Some(gamma),
    })
}

/// Returns a linear copy of the view images, using each image's recorded
/// gamma or `fallback_gamma` when none is recorded.
pub fn linearize_views(views: &[View], fallback_gamma: f64) -> Result<Vec<View>> {
    views
        .iter()
        .map(|v| {
            let image = if v.image.gamma_applied() {
                linearize(&v.image, v.image.gamma().unwrap_or(fallback_gamma))?
            } else {
                v.image.clone()
            };
            Ok(View { image, ..v.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose};
    use crate::mesh::{geodesic_sphere, grid_plane};
    use proptest::prelude::*;

    fn light(gamma: f64) -> LightModel {
        LightModel::new(1.0, 0.0, gamma).unwrap()
    }

    #[test]
    fn unit_configuration() {
        let n = Vec3::z();
        let v = predict_intensity(&n, &n, 1000.0, 1e6, &light(1.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let v = predict_intensity(&n, &Vec3::x(), 1000.0, 1e6, &light(0.8)).unwrap();
        assert_eq!(v, 0.0);
        let v = predict_intensity(&n, &n, 2000.0, 1e6, &light(0.8)).unwrap();
        // (1/4)^0.8
        assert!((v - 0.329_876_977_693_223_6).abs() < 1e-12);
        assert!((v - 0.3299).abs() < 1e-4);
    }

    #[test]
    fn nonpositive_distance_is_rejected() {
        let n = Vec3::z();
        assert!(matches!(predict_intensity(&n, &n, 0.0, 1.0, &light(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn linearize_examples() {
        let img = ShadingImage::constant(4, 3, 0.3299).with_gamma(0.8);
        let lin = linearize(&img, 0.8).unwrap();
        assert!(!lin.gamma_applied());
        // 0.3299^(1/0.8) is 0.25 up to the 4-digit rounding of 0.3299
        assert!(lin.data().iter().all(|v| (v - 0.3299f64.powf(1.25)).abs() < 1e-12));
        let exact = ShadingImage::constant(4, 3, 0.25f64.powf(0.8)).with_gamma(0.8);
        assert!(linearize(&exact, 0.8).unwrap().data().iter().all(|v| (v - 0.25).abs() < 1e-9));
        let id = ShadingImage::constant(2, 2, 0.6).with_gamma(1.0);
        assert_eq!(linearize(&id, 1.0).unwrap().data(), id.data());
        assert!(matches!(linearize(&id, 0.0), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn gamma_round_trip(values in proptest::collection::vec(0.0f64..=1.0, 12), gamma in 0.3f64..3.0) {
            let img = ShadingImage::new(4, 3, values).unwrap();
            let back = linearize(&apply_gamma(&img, gamma).unwrap(), gamma).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn inverse_square_and_scale(d in 10.0f64..5000.0, a in 1.0f64..1e7, s in 0.1f64..10.0, cos in 0.0f64..1.0) {
            let n = Vec3::z();
            let l = Vec3::new((1.0 - cos * cos).sqrt(), 0.0, cos);
            let i = predict_intensity(&n, &l, d, a, &light(1.0)).unwrap();
            let i2 = predict_intensity(&n, &l, 2.0 * d, a, &light(1.0)).unwrap();
            prop_assert!((i * d * d - i2 * 4.0 * d * d).abs() <= 1e-12 * (i * d * d).max(1e-300));
            let is = predict_intensity(&n, &l, d, a * s, &light(1.0)).unwrap();
            prop_assert!((is - s * i).abs() <= 1e-12 * is.abs().max(1e-300));
        }
    }

    fn view_at(eye: Vec3, light_offset: Vec3) -> View {
        let k = CameraIntrinsics::new(500.0, 500.0, 160.0, 120.0, 320, 240).unwrap();
        let pose = CameraPose::look_at(&eye, &Vec3::zeros(), &Vec3::y()).unwrap();
        View::new(k, pose, light_offset, ShadingImage::constant(320, 240, 0.0)).unwrap()
    }

    #[test]
    fn plane_center_pixel_matches_closed_form() {
        let plane = grid_plane(41, 41, 5.0, 0.0);
        let view = view_at(Vec3::new(0.0, 0.0, 800.0), Vec3::zeros());
        let albedo = AlbedoModel::Global(4e5);
        let img = render_shading_image(&plane, &view, &albedo, &light(1.0));
        let expect = predict_intensity(&Vec3::z(), &Vec3::z(), 800.0, 4e5, &light(1.0)).unwrap();
        assert!((img.get(160, 120) - expect).abs() < 1e-6);
    }

    fn analytic_sphere(frequency: usize) -> TriangleMesh {
        let mut sphere = geodesic_sphere(100.0, frequency);
        let radial = sphere.vertices().iter().map(|x| x.normalize()).collect();
        sphere.set_normals(radial).unwrap();
        sphere
    }

    #[test]
    fn sphere_render_matches_ray_trace() {
        let sphere = analytic_sphere(120);
        let view = view_at(Vec3::new(0.0, 0.0, 600.0), Vec3::zeros());
        let albedo = AlbedoModel::Global(2e5);
        let render = render_view(&sphere, &view, &albedo, &light(1.0));
        let eye = view.camera_center();
        let mut checked = 0;
        for y in 0..240 {
            for x in 0..320 {
                // stay two pixels clear of the silhouette
                let interior = (-2i64..=2).all(|dy| {
                    (-2i64..=2).all(|dx| {
                        let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                        xx >= 0 && yy >= 0 && xx < 320 && yy < 240 && render.covered[(yy * 320 + xx) as usize]
                    })
                });
                if !interior {
                    continue;
                }
                let dir = view.pose.rotation.transpose() * view.intrinsics.pixel_ray(x as f64, y as f64).normalize();
                let b = dir.dot(&(-eye));
                let disc = b * b - (eye.norm_squared() - 100.0 * 100.0);
                assert!(disc >= 0.0);
                let p = eye + dir * (b - disc.sqrt());
                let n = p / 100.0;
                let l = (eye - p).normalize();
                let expect = predict_intensity(&n, &l, (eye - p).norm(), 2e5, &light(1.0)).unwrap();
                assert!((render.image.get(x, y) - expect).abs() < 1e-4, "pixel ({x},{y})");
                checked += 1;
            }
        }
        assert!(checked > 5000);
    }

    #[test]
    fn gamma_commutes_with_rendering() {
        let sphere = geodesic_sphere(100.0, 12);
        let view = view_at(Vec3::new(100.0, 50.0, 500.0), Vec3::new(30.0, 0.0, 0.0));
        let albedo = AlbedoModel::Global(2.5e5);
        let lin = render_shading_image(&sphere, &view, &albedo, &light(1.0));
        let gam = render_shading_image(&sphere, &view, &albedo, &light(0.8));
        for (a, b) in lin.data().iter().zip(gam.data()) {
            assert!((a.powf(0.8) - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rendering_is_albedo_linear() {
        let sphere = geodesic_sphere(100.0, 10);
        let view = view_at(Vec3::new(0.0, 0.0, 700.0), Vec3::zeros());
        let n = sphere.vertex_count();
        let a1 = AlbedoModel::PerVertex((0..n).map(|i| 1e5 + i as f64 * 3.0).collect());
        let a2 = AlbedoModel::PerVertex((0..n).map(|i| 5e4 + (i % 7) as f64 * 1e3).collect());
        let sum = AlbedoModel::PerVertex((0..n).map(|i| a1.value(i) + a2.value(i)).collect());
        let r1 = render_shading_image(&sphere, &view, &a1, &light(1.0));
        let r2 = render_shading_image(&sphere, &view, &a2, &light(1.0));
        let rs = render_shading_image(&sphere, &view, &sum, &light(1.0));
        for i in 0..r1.data().len() {
            assert!((r1.data()[i] + r2.data()[i] - rs.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bright_pixels_saturate() {
        let plane = grid_plane(11, 11, 10.0, 0.0);
        let view = view_at(Vec3::new(0.0, 0.0, 300.0), Vec3::zeros());
        let r = render_view(&plane, &view, &AlbedoModel::Global(1e6), &light(1.0));
        let i = 120 * 320 + 160;
        assert!(r.saturated[i]);
        assert_eq!(r.image.data()[i], 1.0);
    }

    #[test]
    fn median_of_roi() {
        let img = ShadingImage::new(3, 2, vec![0.1, 0.5, 0.2, 0.9, 0.3, 0.4]).unwrap();
        assert_eq!(img.median_roi(0, 0, 3, 1), Some(0.2));
        assert_eq!(img.median_roi(0, 0, 2, 2), Some(0.4));
    }
}
