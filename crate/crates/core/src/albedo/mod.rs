//! Albedo estimation by inverting the shading model, and grouping of
//! per-vertex albedos into a small number of materials.
//!
//! All albedo values are the product `c·ρ` divided by the light's
//! `brightness`, so with the default brightness of 1 they are `c·ρ`.

mod group;

pub use group::{
    albedo_features, estimate_grouped_albedo, group_values, kmeans_cluster, mrf_energy,
    select_group_count, smooth_labels_mrf, AlbedoFeatures, GroupedAlbedo, GroupingOptions,
    KMeans,
};

use crate::camera::{project_vertex, VisibilityMap, View};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::par;
use crate::shading::LightModel;

/// Reflectance consumed by the renderer and the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub enum AlbedoModel {
    Global(f64),
    Grouped { labels: Vec<usize>, values: Vec<f64> },
    /// Free per-vertex values; used for ground-truth rendering.
    PerVertex(Vec<f64>),
}

impl AlbedoModel {
    #[inline]
    pub fn value(&self, vertex: usize) -> f64 {
        match self {
            AlbedoModel::Global(v) => *v,
            AlbedoModel::Grouped { labels, values } => values[labels[vertex]],
            AlbedoModel::PerVertex(v) => v[vertex],
        }
    }

    pub fn group_count(&self) -> usize {
        match self {
            AlbedoModel::Global(_) => 1,
            AlbedoModel::Grouped { values, .. } => values.len(),
            AlbedoModel::PerVertex(v) => v.len(),
        }
    }

    /// Checks positivity and, for per-vertex data, the vertex count.
    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        let bad = |v: f64| !(v.is_finite() && v > 0.0);
        match self {
            AlbedoModel::Global(v) => {
                if bad(*v) {
                    return Err(Error::InvalidParameter(format!("albedo must be positive ({v})")));
                }
            }
            AlbedoModel::Grouped { labels, values } => {
                if labels.len() != vertex_count {
                    return Err(Error::InvalidParameter(format!(
                        "albedo has {} labels for {vertex_count} vertices",
                        labels.len()
                    )));
                }
                if let Some(l) = labels.iter().find(|&&l| l >= values.len()) {
                    return Err(Error::InvalidParameter(format!("label {l} has no group value")));
                }
                if let Some(v) = values.iter().find(|v| bad(**v)) {
                    return Err(Error::InvalidParameter(format!("group albedo must be positive ({v})")));
                }
            }
            AlbedoModel::PerVertex(values) => {
                if values.len() != vertex_count {
                    return Err(Error::InvalidParameter(format!(
                        "albedo has {} values for {vertex_count} vertices",
                        values.len()
                    )));
                }
                if let Some(v) = values.iter().find(|v| bad(**v)) {
                    return Err(Error::InvalidParameter(format!("vertex albedo must be positive ({v})")));
                }
            }
        }
        Ok(())
    }
}

/// Thresholds for discarding unreliable observations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlbedoOptions {
    /// Linear intensities below this are treated as shadowed.
    pub low: f64,
    /// Linear intensities above this are treated as saturated or specular.
    pub high: f64,
    /// Observations with `n·l` below this are dropped.
    pub nl_floor: f64,
}

impl Default for AlbedoOptions {
    fn default() -> Self {
        AlbedoOptions {
            low: 0.02,
            high: 0.98,
            nl_floor: 0.1,
        }
    }
}

/// Single-observation inversion of the shading model.
pub fn invert_intensity(intensity: f64, distance: f64, n_dot_l: f64, light: &LightModel) -> f64 {
    (intensity - light.ambient) * distance * distance / (n_dot_l * light.brightness)
}

/// Albedo sample of vertex `v` seen in `view`, if it passes the thresholds.
/// Images must be linear.
pub fn observe_vertex(mesh: &TriangleMesh, v: usize, view: &View, light: &LightModel, opts: &AlbedoOptions) -> Option<f64> {
    let x = mesh.vertices()[v];
    let proj = project_vertex(&x, view).ok()?;
    let taps = view.image.bilinear_taps(proj.pixel.x, proj.pixel.y)?;
    let data = view.image.data();
    // a dark tap means background or shadow leaks into the sample
    if taps.iter().any(|&(i, w)| w > 0.0 && data[i] < opts.low) {
        return None;
    }
    let intensity: f64 = taps.iter().map(|&(i, w)| data[i] * w).sum();
    if intensity > opts.high {
        return None;
    }
    let to_light = view.light_position() - x;
    let d = to_light.norm();
    if d <= 0.0 {
        return None;
    }
    let nl = mesh.normals()[v].dot(&(to_light / d));
    if nl < opts.nl_floor {
        return None;
    }
    Some(invert_intensity(intensity, d, nl, light))
}

fn check_linear(views: &[View]) -> Result<()> {
    if views.iter().any(|v| v.image.gamma_applied()) {
        return Err(Error::NotLinearized);
    }
    Ok(())
}

/// Mean albedo over every visible, unclipped vertex-view observation.
pub fn estimate_global_albedo(
    mesh: &TriangleMesh,
    views: &[View],
    visibility: &VisibilityMap,
    light: &LightModel,
    opts: &AlbedoOptions,
) -> Result<f64> {
    check_linear(views)?;
    let per_view: Vec<(f64, usize)> = par::map_range(views.len(), |k| {
        let mut sum = 0.0;
        let mut count = 0;
        for v in 0..mesh.vertex_count() {
            if !visibility.is_visible(k, v) {
                continue;
            }
            if let Some(a) = observe_vertex(mesh, v, &views[k], light, opts) {
                sum += a;
                count += 1;
            }
        }
        (sum, count)
    });
    let (sum, count) = per_view.iter().fold((0.0, 0), |(s, c), &(s2, c2)| (s + s2, c + c2));
    if count == 0 {
        return Err(Error::NoObservations("no visible observation passed the intensity thresholds".into()));
    }
    Ok(sum / count as f64)
}

/// Per-vertex albedo estimate. Vertices without a usable observation are
/// listed in `flagged` and filled with the median of their filled one-ring.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexAlbedo {
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
    pub flagged: Vec<usize>,
}

pub fn estimate_vertex_albedo(
    mesh: &TriangleMesh,
    views: &[View],
    visibility: &VisibilityMap,
    light: &LightModel,
    opts: &AlbedoOptions,
) -> Result<VertexAlbedo> {
    check_linear(views)?;
    let stats: Vec<(f64, usize)> = par::map_range(mesh.vertex_count(), |v| {
        let mut sum = 0.0;
        let mut count = 0;
        for (k, view) in views.iter().enumerate() {
            if !visibility.is_visible(k, v) {
                continue;
            }
            if let Some(a) = observe_vertex(mesh, v, view, light, opts) {
                sum += a;
                count += 1;
            }
        }
        (sum, count)
    });
    let counts: Vec<usize> = stats.iter().map(|s| s.1).collect();
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::NoObservations("no vertex has a usable observation".into()));
    }
    let mut values: Vec<Option<f64>> = stats
        .iter()
        .map(|&(s, c)| (c > 0).then(|| s / c as f64))
        .collect();
    let flagged: Vec<usize> = (0..values.len()).filter(|&v| values[v].is_none()).collect();
    // grow the filled region ring by ring
    let mut pending = flagged.clone();
    while !pending.is_empty() {
        let fills: Vec<(usize, Option<f64>)> = pending
            .iter()
            .map(|&v| {
                let mut nb: Vec<f64> = mesh.ring(v).neighbors.iter().filter_map(|&u| values[u]).collect();
                (v, median(&mut nb))
            })
            .collect();
        let before = pending.len();
        pending.clear();
        for (v, fill) in fills {
            match fill {
                Some(a) => values[v] = Some(a),
                None => pending.push(v),
            }
        }
        if pending.len() == before {
            // disconnected from every observed vertex
            let mut all: Vec<f64> = values.iter().flatten().copied().collect();
            let m = median(&mut all).expect("at least one observed vertex");
            for &v in &pending {
                values[v] = Some(m);
            }
            break;
        }
    }
    Ok(VertexAlbedo {
        values: values.into_iter().map(|v| v.expect("filled")).collect(),
        counts,
        flagged,
    })
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{compute_visibility_all, default_visibility_bias, CameraIntrinsics, CameraPose};
    use crate::mesh::{geodesic_sphere, grid_plane, Vec3};
    use crate::shading::{render_shading_image, ShadingImage};

    fn view(eye: Vec3, mesh: &TriangleMesh, albedo: &AlbedoModel) -> View {
        view_scaled(eye, mesh, albedo, 1)
    }

    fn view_scaled(eye: Vec3, mesh: &TriangleMesh, albedo: &AlbedoModel, scale: usize) -> View {
        let s = scale as f64;
        let (w, h) = (320 * scale, 240 * scale);
        let k = CameraIntrinsics::new(400.0 * s, 400.0 * s, 160.0 * s, 120.0 * s, w, h).unwrap();
        let pose = CameraPose::look_at(&eye, &Vec3::zeros(), &Vec3::y()).unwrap();
        let mut v = View::new(k, pose, Vec3::zeros(), ShadingImage::constant(w, h, 0.0)).unwrap();
        v.image = render_shading_image(mesh, &v, albedo, &LightModel::default());
        v.image = crate::shading::linearize(&v.image, 1.0).unwrap();
        v
    }

    #[test]
    fn single_vertex_inversion() {
        assert!((invert_intensity(0.5, 1000.0, 1.0, &LightModel::default()) - 5e5).abs() < 1e-9);
    }

    #[test]
    fn sphere_global_albedo_recovered() {
        let sphere = geodesic_sphere(100.0, 48);
        let truth = AlbedoModel::Global(1e6 / 4.0);
        let views: Vec<View> = [Vec3::new(0.0, 0.0, 600.0), Vec3::new(400.0, 0.0, 450.0)]
            .iter()
            .map(|e| view_scaled(*e, &sphere, &truth, 8))
            .collect();
        let vis = compute_visibility_all(&sphere, &views, default_visibility_bias(&sphere));
        // grazing observations see a wide surface footprint per pixel, so
        // the image must be fine relative to the mesh
        let est = estimate_global_albedo(&sphere, &views, &vis, &LightModel::default(), &AlbedoOptions::default()).unwrap();
        assert!((est / 2.5e5 - 1.0).abs() < 1e-3, "{est}");
    }

    #[test]
    fn high_intensity_is_clipped() {
        let plane = grid_plane(3, 3, 1.0, 0.0);
        let mut v = view(Vec3::new(0.0, 0.0, 100.0), &plane, &AlbedoModel::Global(1.0));
        v.image = ShadingImage::constant(320, 240, 0.99);
        let opts = AlbedoOptions::default();
        assert!(observe_vertex(&plane, 4, &v, &LightModel::default(), &opts).is_none());
        v.image = ShadingImage::constant(320, 240, 0.5);
        assert!(observe_vertex(&plane, 4, &v, &LightModel::default(), &opts).is_some());
    }

    #[test]
    fn gamma_images_are_refused() {
        let plane = grid_plane(3, 3, 1.0, 0.0);
        let mut v = view(Vec3::new(0.0, 0.0, 100.0), &plane, &AlbedoModel::Global(1.0));
        v.image = v.image.clone().with_gamma(0.8);
        let vis = compute_visibility_all(&plane, std::slice::from_ref(&v), 1.0);
        let r = estimate_global_albedo(&plane, &[v], &vis, &LightModel::default(), &AlbedoOptions::default());
        assert!(matches!(r, Err(Error::NotLinearized)));
    }

    #[test]
    fn global_is_invariant_to_duplicated_views() {
        let sphere = geodesic_sphere(100.0, 12);
        let truth = AlbedoModel::Global(2e5);
        let mut views = vec![view(Vec3::new(0.0, 100.0, 600.0), &sphere, &truth)];
        let bias = default_visibility_bias(&sphere);
        let vis = compute_visibility_all(&sphere, &views, bias);
        let opts = AlbedoOptions::default();
        let a = estimate_global_albedo(&sphere, &views, &vis, &LightModel::default(), &opts).unwrap();
        views.push(views[0].clone());
        let vis = compute_visibility_all(&sphere, &views, bias);
        let b = estimate_global_albedo(&sphere, &views, &vis, &LightModel::default(), &opts).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn single_view_vertex_equals_direct_inversion_and_fill() {
        let sphere = geodesic_sphere(100.0, 12);
        let truth = AlbedoModel::Global(2e5);
        let views = vec![view(Vec3::new(0.0, 0.0, 600.0), &sphere, &truth)];
        let vis = compute_visibility_all(&sphere, &views, default_visibility_bias(&sphere));
        let light = LightModel::default();
        let opts = AlbedoOptions::default();
        let va = estimate_vertex_albedo(&sphere, &views, &vis, &light, &opts).unwrap();
        let mut seen = 0;
        for v in 0..sphere.vertex_count() {
            if va.counts[v] == 1 {
                let direct = observe_vertex(&sphere, v, &views[0], &light, &opts).unwrap();
                assert_eq!(va.values[v], direct);
                seen += 1;
            }
        }
        assert!(seen > 100);
        // the back of the sphere is never observed and gets filled
        let back = (0..sphere.vertex_count())
            .find(|&v| sphere.vertices()[v].z < -99.0)
            .unwrap();
        assert!(va.flagged.contains(&back));
        assert!(va.values[back] > 0.0);
        let edge_fill = va
            .flagged
            .iter()
            .copied()
            .find(|&v| sphere.ring(v).neighbors.iter().any(|&u| va.counts[u] > 0))
            .unwrap();
        let mut nb: Vec<f64> = sphere
            .ring(edge_fill)
            .neighbors
            .iter()
            .filter(|&&u| va.counts[u] > 0)
            .map(|&u| va.values[u])
            .collect();
        assert_eq!(va.values[edge_fill], median(&mut nb).unwrap());
    }
}
