//! Image and geometry error metrics, the leave-one-out protocol and ICP
//! registration.

use nalgebra::{Isometry3, Matrix6, Translation3, UnitQuaternion, Vector6};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{SurfaceIndex, TriangleMesh, Vec3};
use crate::par;
use crate::refine::{refine, RefinementConfig};
use crate::shading::{linearize_views, render_view, ShadingImage};
use crate::synth::SyntheticScene;

fn check_pair(a: &ShadingImage, b: &ShadingImage, mask: &[bool]) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::InvalidParameter(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if mask.len() != a.data().len() {
        return Err(Error::InvalidParameter("mask size does not match the images".into()));
    }
    Ok(())
}

/// `sqrt(Σ (a − b)² / n)` over the masked pixels.
pub fn image_rmse(a: &ShadingImage, b: &ShadingImage, mask: &[bool]) -> Result<f64> {
    check_pair(a, b, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((x, y), m) in a.data().iter().zip(b.data()).zip(mask) {
        if *m {
            sum += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoObservations("image mask is empty".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Removes every pixel that has a neighbour (8-connected) outside the mask
/// or lies on the image border.
pub fn erode_mask(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 1..height.saturating_sub(1) {
        for x in 1..width.saturating_sub(1) {
            out[y * width + x] = (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| mask[yy * width + xx]));
        }
    }
    out
}

/// Forward-difference gradient magnitude; zero on the last row and column.
pub fn gradient_magnitude(image: &ShadingImage) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let d = image.data();
    let mut out = vec![0.0; d.len()];
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let i = y * w + x;
            let gx = d[i + 1] - d[i];
            let gy = d[i + w] - d[i];
            out[i] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// RMSE between the gradient magnitude images of `a` and `b` over the mask
/// eroded by one pixel.
pub fn gradient_rmse(a: &ShadingImage, b: &ShadingImage, mask: &[bool]) -> Result<f64> {
    check_pair(a, b, mask)?;
    let eroded = erode_mask(mask, a.width(), a.height());
    let (ga, gb) = (gradient_magnitude(a), gradient_magnitude(b));
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..eroded.len() {
        if eroded[i] {
            sum += (ga[i] - gb[i]).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoObservations("eroded gradient mask is empty".into()));
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub max: f64,
}

/// Distance from every source vertex to the nearest point of the target
/// surface.
pub fn mesh_distance(source: &TriangleMesh, target: &TriangleMesh) -> Result<DistanceStats> {
    if source.is_empty() || target.face_count() == 0 {
        return Err(Error::EmptyMesh("distance needs two non-empty meshes".into()));
    }
    let index = SurfaceIndex::new(target);
    let d = par::map_slice(source.vertices(), |x| index.closest_point(x).map_or(f64::INFINITY, |s| s.distance));
    Ok(DistanceStats {
        mean: d.iter().sum::<f64>() / d.len() as f64,
        max: d.iter().copied().fold(0.0, f64::max),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpOptions {
    pub max_iterations: usize,
    /// Correspondences farther than this are ignored.
    pub max_distance: f64,
    /// Stop when the RMS distance improves by less than this fraction.
    pub tolerance: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        IcpOptions {
            max_iterations: 50,
            max_distance: f64::INFINITY,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    /// Maps source coordinates onto the target.
    pub transform: Isometry3<f64>,
    /// RMS point-to-surface distance, starting with the initial alignment.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

struct Matches {
    rms: f64,
    pairs: Vec<(Vec3, Vec3, Vec3)>,
}

fn match_points(source: &[Vec3], index: &SurfaceIndex, t: &Isometry3<f64>, max_distance: f64) -> Matches {
    let found = par::map_slice(source, |x| {
        let p = t * nalgebra::Point3::from(*x);
        index
            .closest_point_within(&p.coords, max_distance)
            .map(|s| (p.coords, s.point, index.face_normal(s.face), s.distance))
    });
    let pairs: Vec<_> = found.into_iter().flatten().collect();
    let rms = if pairs.is_empty() {
        f64::INFINITY
    } else {
        (pairs.iter().map(|p| p.3 * p.3).sum::<f64>() / pairs.len() as f64).sqrt()
    };
    Matches {
        rms,
        pairs: pairs.into_iter().map(|(p, q, n, _)| (p, q, n)).collect(),
    }
}

/// Point-to-plane ICP from the identity. A step that would raise the RMS
/// distance is halved until it does not, so the residual sequence never
/// increases.
pub fn align_icp(source: &TriangleMesh, target: &TriangleMesh, opts: &IcpOptions) -> Result<IcpResult> {
    if source.is_empty() || target.face_count() == 0 {
        return Err(Error::EmptyMesh("registration needs two non-empty meshes".into()));
    }
    let index = SurfaceIndex::new(target);
    let mut t = Isometry3::identity();
    let mut current = match_points(source.vertices(), &index, &t, opts.max_distance);
    if current.pairs.len() < 6 {
        return Err(Error::Registration(format!(
            "{} correspondences within {} mm",
            current.pairs.len(),
            opts.max_distance
        )));
    }
    let mut residuals = vec![current.rms];
    let mut iterations = 0;
    while iterations < opts.max_iterations && current.rms > 0.0 {
        iterations += 1;
        let mut ata = Matrix6::<f64>::zeros();
        let mut atb = Vector6::<f64>::zeros();
        for (p, q, n) in &current.pairs {
            let c = p.cross(n);
            let row = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
            let r = (p - q).dot(n);
            ata += row * row.transpose();
            atb -= row * r;
        }
        let Some(x) = ata.cholesky().map(|c| c.solve(&atb)) else {
            break;
        };
        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..20 {
            let step = Isometry3::from_parts(
                Translation3::new(x[3] * scale, x[4] * scale, x[5] * scale),
                UnitQuaternion::from_scaled_axis(Vec3::new(x[0], x[1], x[2]) * scale),
            );
            let trial = step * t;
            let m = match_points(source.vertices(), &index, &trial, opts.max_distance);
            if m.pairs.len() >= 6 && m.rms <= current.rms {
                accepted = Some((trial, m));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, m)) = accepted else {
            break;
        };
        let improvement = current.rms - m.rms;
        let previous = current.rms;
        t = trial;
        current = m;
        residuals.push(current.rms);
        if improvement <= opts.tolerance * previous {
            break;
        }
    }
    Ok(IcpResult {
        transform: t,
        residuals,
        iterations,
    })
}

/// One fold of the leave-one-out protocol. RMSEs are measured in the
/// held-out image's own (camera response applied) domain over the pixels
/// covered by both renderings.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorReport {
    pub view: usize,
    pub image_rmse_input: f64,
    pub image_rmse_refined: f64,
    pub gradient_rmse_input: f64,
    pub gradient_rmse_refined: f64,
    /// Refined mesh against the ground truth.
    pub mean_distance: f64,
    pub max_distance: f64,
    /// Alignment applied before measuring distances.
    #[serde(skip)]
    pub alignment: Isometry3<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct LooOutcome {
    pub reports: Vec<ErrorReport>,
    /// Held-out views whose fold failed, with the reason.
    pub skipped: Vec<(usize, String)>,
}

fn run_fold(scene: &SyntheticScene, linear: &[crate::camera::View], held: usize, config: &RefinementConfig) -> Result<ErrorReport> {
    let train: Vec<_> = linear.iter().enumerate().filter(|(k, _)| *k != held).map(|(_, v)| v.clone()).collect();
    let refined = refine(&scene.degraded, &train, &scene.albedo, &scene.light, config)?.mesh;
    let view = &scene.views[held];
    let before = render_view(&scene.degraded, view, &scene.albedo, &scene.light);
    let after = render_view(&refined, view, &scene.albedo, &scene.light);
    let mask: Vec<bool> = before.covered.iter().zip(&after.covered).map(|(a, b)| *a && *b).collect();
    let dist = mesh_distance(&refined, &scene.truth)?;
    Ok(ErrorReport {
        view: held,
        image_rmse_input: image_rmse(&view.image, &before.image, &mask)?,
        image_rmse_refined: image_rmse(&view.image, &after.image, &mask)?,
        gradient_rmse_input: gradient_rmse(&view.image, &before.image, &mask)?,
        gradient_rmse_refined: gradient_rmse(&view.image, &after.image, &mask)?,
        mean_distance: dist.mean,
        max_distance: dist.max,
        alignment: Isometry3::identity(),
    })
}

/// Holds out each view in turn, refines the degraded mesh on the others and
/// compares renderings of the degraded and refined meshes with the held-out
/// image. Folds run in parallel.
pub fn leave_one_out_eval(scene: &SyntheticScene, config: &RefinementConfig) -> Result<LooOutcome> {
    if scene.views.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "leave-one-out needs at least 3 views, got {}",
            scene.views.len()
        )));
    }
    let linear = linearize_views(&scene.views, scene.light.gamma)?;
    let folds = par::map_range(scene.views.len(), |k| run_fold(scene, &linear, k, config));
    let mut out = LooOutcome::default();
    for (k, fold) in folds.into_iter().enumerate() {
        match fold {
            Ok(r) => out.reports.push(r),
            Err(e) => {
                log::warn!("held-out view {k} skipped: {e}");
                out.skipped.push((k, e.to_string()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{geodesic_sphere, grid_plane};
    use crate::synth::{generate_scene, SceneKind, SceneParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(w: usize, h: usize, data: Vec<f64>) -> ShadingImage {
        ShadingImage::new(w, h, data).unwrap()
    }

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ShadingImage {
        image(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect())
    }

    #[test]
    fn rmse_examples() {
        let a = ShadingImage::constant(4, 3, 0.2);
        let b = ShadingImage::constant(4, 3, 0.5);
        let mask = vec![true; 12];
        assert_eq!(image_rmse(&a, &a, &mask).unwrap(), 0.0);
        assert!((image_rmse(&a, &b, &mask).unwrap() - 0.3).abs() < 1e-15);
        assert!(image_rmse(&a, &b, &[false; 12]).is_err());
        assert!(image_rmse(&a, &ShadingImage::constant(3, 4, 0.2), &mask).is_err());
    }

    #[test]
    fn rmse_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (random_image(17, 11, &mut rng), random_image(17, 11, &mut rng));
        let mask: Vec<bool> = (0..17 * 11).map(|_| rng.random_bool(0.7)).collect();
        // first pass collects the differences, second pass averages
        let diffs: Vec<f64> = (0..mask.len()).filter(|&i| mask[i]).map(|i| a.data()[i] - b.data()[i]).collect();
        let mut acc = 0.0;
        for d in &diffs {
            acc += d * d;
        }
        let oracle = (acc / diffs.len() as f64).sqrt();
        assert!((image_rmse(&a, &b, &mask).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn gradient_rmse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_image(12, 9, &mut rng);
        let mask = vec![true; 108];
        assert_eq!(gradient_rmse(&a, &a, &mask).unwrap(), 0.0);
        let shifted = image(12, 9, a.data().iter().map(|v| v * 0.5 + 0.25).collect());
        let half = image(12, 9, a.data().iter().map(|v| v * 0.5).collect());
        assert!(gradient_rmse(&shifted, &half, &mask).unwrap() < 1e-15);
        assert!(gradient_rmse(&a, &a, &[false; 108]).is_err());
    }

    #[test]
    fn gradient_rmse_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (w, h) = (15, 10);
        let (a, b) = (random_image(w, h, &mut rng), random_image(w, h, &mut rng));
        let mask: Vec<bool> = (0..w * h).map(|i| (i % w) > 2 || rng.random_bool(0.5)).collect();
        let at = |img: &ShadingImage, x: usize, y: usize| img.data()[y * w + x];
        let grad = |img: &ShadingImage, x: usize, y: usize| {
            ((at(img, x + 1, y) - at(img, x, y)).powi(2) + (at(img, x, y + 1) - at(img, x, y)).powi(2)).sqrt()
        };
        let mut sum = 0.0;
        let mut n = 0;
        for y in 0..h {
            for x in 0..w {
                let inside = x >= 1 && y >= 1 && x + 1 < w && y + 1 < h;
                let keep = inside
                    && [(-1i64, -1i64), (0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
                        .iter()
                        .all(|(dx, dy)| mask[(y as i64 + dy) as usize * w + (x as i64 + dx) as usize]);
                if keep {
                    sum += (grad(&a, x, y) - grad(&b, x, y)).powi(2);
                    n += 1;
                }
            }
        }
        let oracle = (sum / n as f64).sqrt();
        assert!((gradient_rmse(&a, &b, &mask).unwrap() - oracle).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_image(9, 8, &mut rng), random_image(9, 8, &mut rng));
            let mask: Vec<bool> = (0..72).map(|_| rng.random_bool(0.9)).collect();
            prop_assert_eq!(image_rmse(&a, &b, &mask).unwrap(), image_rmse(&b, &a, &mask).unwrap());
            if let (Ok(x), Ok(y)) = (gradient_rmse(&a, &b, &mask), gradient_rmse(&b, &a, &mask)) {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn distance_examples() {
        let plane = grid_plane(11, 11, 1.0, 0.0);
        assert_eq!(mesh_distance(&plane, &plane).unwrap(), DistanceStats { mean: 0.0, max: 0.0 });
        let lifted = grid_plane(11, 11, 1.0, 1.0);
        let d = mesh_distance(&lifted, &plane).unwrap();
        assert!((d.mean - 1.0).abs() < 1e-12 && (d.max - 1.0).abs() < 1e-12);
    }

    /// Point-triangle distance through the plane projection and the three
    /// edge segments, checked against every triangle.
    fn brute_force_distance(p: &Vec3, mesh: &TriangleMesh) -> f64 {
        let seg = |a: &Vec3, b: &Vec3| {
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            (p - (a + ab * t)).norm()
        };
        let mut best = f64::INFINITY;
        for f in mesh.faces() {
            let [a, b, c] = f.map(|i| mesh.vertices()[i]);
            let n = (b - a).cross(&(c - a)).normalize();
            let q = p - n * (p - a).dot(&n);
            let inside = [(a, b), (b, c), (c, a)].iter().all(|(u, v)| (v - u).cross(&(q - u)).dot(&n) >= 0.0);
            let d = if inside {
                (p - q).norm()
            } else {
                seg(&a, &b).min(seg(&b, &c)).min(seg(&c, &a))
            };
            best = best.min(d);
        }
        best
    }

    #[test]
    fn smoothed_bumpy_sphere_distance_matches_brute_force() {
        let params = SceneParams {
            frequency: 12,
            bump_wavelength: 40.0,
            smoothing_iterations: 200,
            views: 1,
            width: 8,
            height: 8,
            ..SceneParams::for_kind(SceneKind::BumpySphere)
        };
        let s = generate_scene(SceneKind::BumpySphere, &params, 2).unwrap();
        let d = mesh_distance(&s.degraded, &s.truth).unwrap();
        let oracle: Vec<f64> = s.degraded.vertices().iter().map(|x| brute_force_distance(x, &s.truth)).collect();
        let mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
        let max = oracle.iter().copied().fold(0.0, f64::max);
        assert!(mean > 0.0);
        assert!((d.mean - mean).abs() <= 0.01 * mean);
        assert!((d.max - max).abs() <= 0.01 * max);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn distance_invariant_under_rigid_motion(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, t in -50.0f64..50.0) {
            let a = geodesic_sphere(30.0, 4);
            let b = grid_plane(9, 9, 5.0, 3.0);
            let iso = Isometry3::new(Vec3::new(t, -t, 0.5 * t), Vec3::new(ax, ay, az));
            let d0 = mesh_distance(&a, &b).unwrap();
            let d1 = mesh_distance(&a.transformed(&iso), &b.transformed(&iso)).unwrap();
            prop_assert!((d0.mean - d1.mean).abs() < 1e-9);
            prop_assert!((d0.max - d1.max).abs() < 1e-9);
        }
    }

    fn lumpy() -> TriangleMesh {
        let params = SceneParams {
            frequency: 20,
            bump_amplitude: 12.0,
            bump_wavelength: 70.0,
            views: 1,
            width: 8,
            height: 8,
            smoothing_iterations: 0,
            ..SceneParams::for_kind(SceneKind::BumpySphere)
        };
        generate_scene(SceneKind::BumpySphere, &params, 4).unwrap().truth
    }

    #[test]
    fn icp_identity() {
        let m = lumpy();
        let r = align_icp(&m, &m, &IcpOptions::default()).unwrap();
        assert!((r.transform.to_homogeneous() - nalgebra::Matrix4::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn icp_recovers_known_motion() {
        let m = lumpy();
        let motion = Isometry3::new(Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.3, 1.0, -0.2).normalize() * 5f64.to_radians());
        let moved = m.transformed(&motion);
        let r = align_icp(&moved, &m, &IcpOptions::default()).unwrap();
        let err = r.transform * motion;
        let angle = err.rotation.angle().to_degrees();
        let shift = err.translation.vector.norm();
        assert!(angle < 0.1, "{angle}");
        assert!(shift < 0.1, "{shift}");
        assert!(r.residuals.windows(2).all(|w| w[1] <= w[0]));
        assert!(*r.residuals.last().unwrap() < 1e-6);
    }

    #[test]
    fn icp_without_correspondences_fails() {
        let m = lumpy();
        let far = m.transformed(&Isometry3::translation(1000.0, 0.0, 0.0));
        let opts = IcpOptions { max_distance: 10.0, ..Default::default() };
        assert!(matches!(align_icp(&far, &m, &opts), Err(Error::Registration(_))));
    }

    fn small_scene(views: usize) -> SyntheticScene {
        let params = SceneParams {
            frequency: 14,
            bump_wavelength: 45.0,
            smoothing_iterations: 300,
            views,
            width: 160,
            height: 120,
            focal: 150.0,
            ..SceneParams::for_kind(SceneKind::BumpySphere)
        };
        generate_scene(SceneKind::BumpySphere, &params, 9).unwrap()
    }

    #[test]
    fn loo_on_ground_truth_changes_nothing() {
        let mut scene = small_scene(4);
        scene.degraded = scene.truth.clone();
        let out = leave_one_out_eval(&scene, &RefinementConfig { outer_iterations: 2, ..Default::default() }).unwrap();
        assert_eq!(out.reports.len(), 4);
        for r in &out.reports {
            assert!((r.image_rmse_input - r.image_rmse_refined).abs() < 1e-6);
        }
    }

    #[test]
    fn loo_needs_three_views() {
        let scene = small_scene(2);
        assert!(leave_one_out_eval(&scene, &RefinementConfig::default()).is_err());
    }
}
