//! Browser bindings: render a sphere under the near-light model, fit the
//! camera gamma from a noisy synthetic capture, and step a refinement of a
//! smoothed relief plane.

use nearlight::albedo::AlbedoModel;
use nearlight::calib::{build_sphere_samples, fit_gamma_ransac, RansacOptions};
use nearlight::camera::{CameraIntrinsics, CameraPose, View};
use nearlight::eval::mesh_distance;
use nearlight::mesh::{geodesic_sphere, TriangleMesh, Vec3};
use nearlight::refine::{RefinementConfig, Refiner};
use nearlight::shading::{render_view, LightModel, ShadingImage};
use nearlight::synth::{generate_scene, SceneKind, SceneParams, SyntheticScene};
use wasm_bindgen::prelude::*;

fn js(e: nearlight::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Grayscale image as RGBA bytes for a canvas `ImageData`.
#[wasm_bindgen]
pub struct Frame {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Frame {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

impl From<&ShadingImage> for Frame {
    fn from(img: &ShadingImage) -> Self {
        let rgba = img
            .data()
            .iter()
            .flat_map(|v| {
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g, 255]
            })
            .collect();
        Frame {
            width: img.width(),
            height: img.height(),
            rgba,
        }
    }
}

/// A 100 mm sphere seen from `distance` mm with the light displaced by
/// (`light_x`, `light_y`) mm from the camera.
#[wasm_bindgen]
pub fn render_sphere(gamma: f64, albedo: f64, distance: f64, light_x: f64, light_y: f64) -> Result<Frame, JsError> {
    let mesh = geodesic_sphere(100.0, 24);
    let k = CameraIntrinsics::new(300.0, 300.0, 159.5, 119.5, 320, 240).map_err(js)?;
    let pose = CameraPose::look_at(&Vec3::new(0.0, 0.0, distance), &Vec3::zeros(), &Vec3::y()).map_err(js)?;
    let view = View::new(k, pose, Vec3::new(light_x, light_y, 0.0), ShadingImage::constant(320, 240, 0.0)).map_err(js)?;
    let light = LightModel::new(1.0, 0.0, gamma).map_err(js)?;
    Ok(Frame::from(&render_view(&mesh, &view, &AlbedoModel::Global(albedo), &light).image))
}

/// Renders a sphere with `gamma` and Gaussian noise, then recovers gamma
/// with RANSAC. Returns `[gamma, inlier_ratio, samples]`.
#[wasm_bindgen]
pub fn fit_gamma(gamma: f64, noise: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    let mut p = SceneParams::for_kind(SceneKind::Sphere);
    p.gamma = gamma;
    p.noise_sigma = noise;
    p.views = 4;
    p.frequency = 16;
    p.width = 160;
    p.height = 120;
    p.focal = 150.0;
    let scene = generate_scene(SceneKind::Sphere, &p, seed).map_err(js)?;
    let samples = build_sphere_samples(&scene.truth, &scene.views, &scene.light, p.albedo).map_err(js)?;
    let opts = RansacOptions {
        seed,
        ..RansacOptions::default()
    };
    let fit = fit_gamma_ransac(&samples, &opts).map_err(js)?;
    Ok(vec![fit.gamma, fit.inlier_ratio, samples.len() as f64])
}

/// Interactive refinement of a Laplacian-smoothed relief plane.
#[wasm_bindgen]
pub struct RefinementDemo {
    scene: SyntheticScene,
    refiner: Refiner,
}

#[wasm_bindgen]
impl RefinementDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, lambda1: f64, lambda2: f64) -> Result<RefinementDemo, JsError> {
        let mut p = SceneParams::for_kind(SceneKind::ReliefPlane);
        p.plane_size = 40.0;
        p.views = 3;
        p.width = 160;
        p.height = 120;
        p.focal = 220.0;
        p.smoothing_iterations = 20;
        let scene = generate_scene(SceneKind::ReliefPlane, &p, seed).map_err(js)?;
        let config = RefinementConfig {
            lambda1,
            lambda2,
            outer_iterations: 50,
            ..RefinementConfig::default()
        };
        config.validate().map_err(js)?;
        let linear = scene.linear_views().map_err(js)?;
        let refiner = Refiner::new(scene.degraded.clone(), linear, scene.albedo.clone(), scene.light, config).map_err(js)?;
        Ok(RefinementDemo { scene, refiner })
    }

    /// One outer iteration; returns false once converged.
    pub fn step(&mut self) -> Result<bool, JsError> {
        Ok(self.refiner.step().map_err(js)?.is_some())
    }

    pub fn iterations(&self) -> usize {
        self.refiner.diagnostics().len()
    }

    /// Mean distance (mm) from the current mesh to the true surface.
    pub fn error(&self) -> Result<f64, JsError> {
        Ok(mesh_distance(self.refiner.mesh(), &self.scene.truth).map_err(js)?.mean)
    }

    pub fn views(&self) -> usize {
        self.scene.views.len()
    }

    /// The captured image of `view`.
    pub fn observed(&self, view: usize) -> Result<Frame, JsError> {
        let v = self.scene.views.get(view).ok_or_else(|| JsError::new("no such view"))?;
        Ok(Frame::from(&v.image))
    }

    /// The current mesh rendered into `view`.
    pub fn rendered(&self, view: usize) -> Result<Frame, JsError> {
        let v = self.scene.views.get(view).ok_or_else(|| JsError::new("no such view"))?;
        Ok(Frame::from(&render_view(self.refiner.mesh(), v, &self.scene.albedo, &self.scene.light).image))
    }

    /// Height of the current surface along the middle row of the grid, for
    /// plotting against `truth_profile`.
    pub fn profile(&self) -> Vec<f64> {
        middle_row(self.refiner.mesh())
    }

    pub fn truth_profile(&self) -> Vec<f64> {
        middle_row(&self.scene.truth)
    }
}

fn middle_row(mesh: &TriangleMesh) -> Vec<f64> {
    let mut row: Vec<(f64, f64)> = mesh.vertices().iter().filter(|v| v.y.abs() < 0.5).map(|v| (v.x, v.z)).collect();
    row.sort_by(|a, b| a.0.total_cmp(&b.0));
    row.into_iter().map(|(_, z)| z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_frame_is_lit_in_the_middle() {
        let f = render_sphere(0.8, 1e5, 450.0, 40.0, 0.0).unwrap();
        assert_eq!(f.rgba.len(), 320 * 240 * 4);
        let center = 4 * (120 * 320 + 160);
        assert!(f.rgba[center] > 0);
        assert_eq!(f.rgba[0], 0);
        assert_eq!(f.rgba[3], 255);
    }

    #[test]
    fn gamma_is_recovered() {
        let r = fit_gamma(0.87, 0.005, 3).unwrap();
        assert!((r[0] - 0.87).abs() < 0.02, "{r:?}");
        assert!(r[1] > 0.75);
    }

    #[test]
    fn refinement_demo_reduces_error() {
        let mut demo = RefinementDemo::new(1, 1.0, 0.1).unwrap();
        let before = demo.error().unwrap();
        for _ in 0..5 {
            if !demo.step().unwrap() {
                break;
            }
        }
        assert!(demo.iterations() >= 1);
        assert!(demo.error().unwrap() < before);
        assert_eq!(demo.profile().len(), demo.truth_profile().len());
        assert_eq!(demo.rendered(0).unwrap().rgba.len(), demo.observed(0).unwrap().rgba.len());
    }
}
