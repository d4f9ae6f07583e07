//! Synthetic ground-truth scenes: a detailed mesh, a smoothed copy standing
//! in for a depth-fusion reconstruction, and rendered views of the detailed
//! mesh under the near-light model.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, UnitQuaternion, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::albedo::AlbedoModel;
use crate::camera::{CameraIntrinsics, CameraPose, View};
use crate::error::{Error, Result};
use crate::mesh::{geodesic_sphere, grid_from_coords, TriangleMesh, Vec3};
use crate::par;
use crate::shading::{linearize_views, render_shading_image, LightModel, ShadingImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Sphere,
    BumpySphere,
    ReliefPlane,
    TwoMaterialPlane,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [
        SceneKind::Sphere,
        SceneKind::BumpySphere,
        SceneKind::ReliefPlane,
        SceneKind::TwoMaterialPlane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Sphere => "sphere",
            SceneKind::BumpySphere => "bumpy_sphere",
            SceneKind::ReliefPlane => "relief_plane",
            SceneKind::TwoMaterialPlane => "two_material_plane",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scene kind '{s}'")))
    }
}

/// Scene parameters. Lengths are millimetres, angles degrees.
/// Fields that do not apply to a kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub radius: f64,
    /// Geodesic subdivision of the sphere (`10·f² + 2` vertices).
    pub frequency: usize,
    pub plane_size: f64,
    pub plane_spacing: f64,
    /// Peak bump height on the bumpy sphere.
    pub bump_amplitude: f64,
    pub bump_wavelength: f64,
    /// Peak-to-peak stripe depth on the relief plane.
    pub stripe_depth: f64,
    pub stripe_period: f64,
    /// `cρ` of the (darker) material.
    pub albedo: f64,
    /// Ratio of the second material's albedo to the first.
    pub albedo_ratio: f64,
    pub views: usize,
    /// Camera distance from the object center.
    pub view_distance: f64,
    /// Angular extent of the camera arc. 360 places a full ring.
    pub arc_degrees: f64,
    /// Camera elevation. On a full ring the sign alternates between views.
    pub elevation_degrees: f64,
    /// Light position in the camera frame.
    pub light_offset: [f64; 3],
    pub gamma: f64,
    pub ambient: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub smoothing_iterations: usize,
    pub smoothing_step: f64,
    /// Second (negative) Taubin step; zero gives plain Laplacian smoothing.
    pub smoothing_mu: f64,
    /// Gaussian intensity noise added to the recorded images.
    pub noise_sigma: f64,
    /// Standard deviation of the perturbation applied to the recorded poses.
    pub pose_jitter_degrees: f64,
    pub pose_jitter_mm: f64,
}

impl SceneParams {
    pub fn for_kind(kind: SceneKind) -> Self {
        let sphere = SceneParams {
            radius: 100.0,
            frequency: 45,
            plane_size: 200.0,
            plane_spacing: 2.0,
            bump_amplitude: 2.0,
            bump_wavelength: 25.0,
            stripe_depth: 0.8,
            stripe_period: 8.0,
            albedo: 1.0e5,
            albedo_ratio: 2.0,
            views: 12,
            view_distance: 450.0,
            arc_degrees: 360.0,
            elevation_degrees: 25.0,
            light_offset: [40.0, 0.0, 0.0],
            gamma: 0.8,
            ambient: 0.0,
            width: 640,
            height: 480,
            focal: 575.0,
            smoothing_iterations: 1500,
            smoothing_step: 0.5,
            smoothing_mu: -0.5,
            noise_sigma: 0.0,
            pose_jitter_degrees: 0.0,
            pose_jitter_mm: 0.0,
        };
        match kind {
            SceneKind::Sphere | SceneKind::BumpySphere => sphere,
            SceneKind::ReliefPlane => SceneParams {
                plane_size: 100.0,
                plane_spacing: 1.0,
                views: 5,
                view_distance: 350.0,
                arc_degrees: 60.0,
                elevation_degrees: 10.0,
                smoothing_iterations: 40,
                smoothing_mu: 0.0,
                ..sphere
            },
            SceneKind::TwoMaterialPlane => SceneParams {
                plane_size: 196.0,
                plane_spacing: 4.0,
                albedo: 6.0e4,
                views: 5,
                view_distance: 400.0,
                arc_degrees: 60.0,
                elevation_degrees: 10.0,
                smoothing_iterations: 10,
                smoothing_mu: 0.0,
                ..sphere
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("radius", self.radius),
            ("plane_size", self.plane_size),
            ("plane_spacing", self.plane_spacing),
            ("bump_wavelength", self.bump_wavelength),
            ("stripe_period", self.stripe_period),
            ("albedo", self.albedo),
            ("albedo_ratio", self.albedo_ratio),
            ("view_distance", self.view_distance),
            ("focal", self.focal),
            ("gamma", self.gamma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive ({v})")));
            }
        }
        let nonneg = [
            ("bump_amplitude", self.bump_amplitude),
            ("stripe_depth", self.stripe_depth),
            ("ambient", self.ambient),
            ("noise_sigma", self.noise_sigma),
            ("pose_jitter_degrees", self.pose_jitter_degrees),
            ("pose_jitter_mm", self.pose_jitter_mm),
            ("smoothing_step", self.smoothing_step),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative ({v})")));
            }
        }
        if self.views == 0 || self.width == 0 || self.height == 0 || self.frequency == 0 {
            return Err(Error::InvalidParameter("views, image size and frequency must be at least 1".into()));
        }
        if self.plane_size < 2.0 * self.plane_spacing {
            return Err(Error::InvalidParameter("plane needs at least two vertices per side".into()));
        }
        if !(self.smoothing_mu <= 0.0 && self.smoothing_mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("smoothing_mu must be zero or negative ({})", self.smoothing_mu)));
        }
        if self.radius >= self.view_distance {
            return Err(Error::InvalidParameter("cameras must be outside the sphere".into()));
        }
        LightModel::new(1.0, self.ambient, self.gamma)?;
        Ok(())
    }
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams::for_kind(SceneKind::BumpySphere)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub params: SceneParams,
    pub seed: u64,
    pub truth: TriangleMesh,
    /// Smoothed copy of `truth` with identical topology.
    pub degraded: TriangleMesh,
    /// Views with gamma-applied images of `truth`.
    pub views: Vec<View>,
    pub light: LightModel,
    pub albedo: AlbedoModel,
    /// Ground-truth material label per vertex.
    pub materials: Vec<usize>,
}

impl SyntheticScene {
    /// The views with linear images.
    pub fn linear_views(&self) -> Result<Vec<View>> {
        linearize_views(&self.views, self.light.gamma)
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let q = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q)).to_rotation_matrix()
}

/// Egg-crate height field on the sphere: the product of three cosines of
/// the rotated position. Its spectrum sits near one wavelength, so smoothing
/// can remove it without touching the sphere itself.
fn bumpy_sphere(p: &SceneParams, rng: &mut ChaCha8Rng) -> TriangleMesh {
    let base = geodesic_sphere(p.radius, p.frequency);
    let rot = random_rotation(rng);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let omega = std::f64::consts::TAU / p.bump_wavelength;
    let vertices = base
        .vertices()
        .iter()
        .map(|x| {
            let dir = x.normalize();
            let u = rot * (dir * p.radius);
            let h = p.bump_amplitude * (0..3).map(|k| (omega * u[k] + phase[k]).cos()).product::<f64>();
            dir * (p.radius + h)
        })
        .collect();
    let (_, faces) = base.into_parts();
    TriangleMesh::new(vertices, faces).expect("displaced sphere keeps its topology")
}

fn plane_coords(p: &SceneParams) -> Vec<f64> {
    let n = (p.plane_size / p.plane_spacing).round() as usize + 1;
    (0..n).map(|i| (i as f64 - (n - 1) as f64 / 2.0) * p.plane_spacing).collect()
}

/// Cameras on an arc (or ring) about the `y` axis, looking at the origin.
/// Planes face `+z`, so the arc is centered on that axis.
fn camera_eyes(p: &SceneParams) -> Vec<Vec3> {
    let n = p.views;
    let full = p.arc_degrees >= 360.0;
    (0..n)
        .map(|i| {
            let theta = if full {
                360.0 * i as f64 / n as f64
            } else if n == 1 {
                0.0
            } else {
                -p.arc_degrees / 2.0 + p.arc_degrees * i as f64 / (n - 1) as f64
            };
            let elev = if full && i % 2 == 1 { -p.elevation_degrees } else { p.elevation_degrees };
            let (t, e) = (theta.to_radians(), elev.to_radians());
            Vec3::new(t.sin() * e.cos(), e.sin(), t.cos() * e.cos()) * p.view_distance
        })
        .collect()
}

fn jitter_pose(pose: &CameraPose, p: &SceneParams, rng: &mut ChaCha8Rng) -> CameraPose {
    if p.pose_jitter_degrees == 0.0 && p.pose_jitter_mm == 0.0 {
        return *pose;
    }
    let angle = Normal::new(0.0, p.pose_jitter_degrees.to_radians()).expect("finite sigma");
    let shift = Normal::new(0.0, p.pose_jitter_mm).expect("finite sigma");
    let axis_angle = Vec3::from_fn(|_, _| angle.sample(rng));
    let dr = Rotation3::new(axis_angle);
    let dt = Vec3::from_fn(|_, _| shift.sample(rng));
    CameraPose::new(dr.matrix() * pose.rotation, dr * pose.translation + dt).expect("rotation stays orthonormal")
}

/// Builds a scene. Everything random is drawn from a ChaCha stream seeded
/// with `seed`, so equal inputs give bit-identical scenes.
pub fn generate_scene(kind: SceneKind, params: &SceneParams, seed: u64) -> Result<SyntheticScene> {
    params.validate()?;
    let p = params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = match kind {
        SceneKind::Sphere => geodesic_sphere(p.radius, p.frequency),
        SceneKind::BumpySphere => bumpy_sphere(p, &mut rng),
        SceneKind::ReliefPlane => {
            let xs = plane_coords(p);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / p.stripe_period;
            grid_from_coords(&xs, &xs, |x, _| 0.5 * p.stripe_depth * (k * x + phase).sin())
        }
        SceneKind::TwoMaterialPlane => {
            let xs = plane_coords(p);
            grid_from_coords(&xs, &xs, |_, _| 0.0)
        }
    };
    let materials: Vec<usize> = match kind {
        SceneKind::TwoMaterialPlane => truth.vertices().iter().map(|x| usize::from(x.x >= 0.0)).collect(),
        _ => vec![0; truth.vertex_count()],
    };
    let albedo = match kind {
        SceneKind::TwoMaterialPlane => AlbedoModel::Grouped {
            labels: materials.clone(),
            values: vec![p.albedo, p.albedo * p.albedo_ratio],
        },
        _ => AlbedoModel::Global(p.albedo),
    };
    let degraded = if p.smoothing_mu == 0.0 {
        truth.laplacian_smoothed(p.smoothing_iterations, p.smoothing_step)
    } else {
        truth.taubin_smoothed(p.smoothing_iterations, p.smoothing_step, p.smoothing_mu)
    };
    let light = LightModel::new(1.0, p.ambient, p.gamma)?;
    let intrinsics = CameraIntrinsics::new(
        p.focal,
        p.focal,
        (p.width as f64 - 1.0) / 2.0,
        (p.height as f64 - 1.0) / 2.0,
        p.width,
        p.height,
    )?;
    let offset = Vec3::from(p.light_offset);
    let true_views: Vec<View> = camera_eyes(p)
        .iter()
        .map(|eye| {
            let pose = CameraPose::look_at(eye, &Vec3::zeros(), &Vec3::y())?;
            View::new(intrinsics, pose, offset, ShadingImage::constant(p.width, p.height, 0.0))
        })
        .collect::<Result<_>>()?;
    let images = par::map_slice(&true_views, |v| render_shading_image(&truth, v, &albedo, &light));
    let noise = Normal::new(0.0, p.noise_sigma).expect("finite sigma");
    let mut views = Vec::with_capacity(true_views.len());
    for (view, mut image) in true_views.into_iter().zip(images) {
        if p.noise_sigma > 0.0 {
            for v in image.data_mut() {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        let pose = jitter_pose(&view.pose, p, &mut rng);
        views.push(View { pose, image, ..view });
    }
    Ok(SyntheticScene {
        kind,
        params: params.clone(),
        seed,
        truth,
        degraded,
        views,
        light,
        albedo,
        materials,
    })
}
