use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{estimate_vertex_albedo, median, AlbedoModel, AlbedoOptions, VertexAlbedo};
use crate::camera::{VisibilityMap, View};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::shading::LightModel;

/// Per-vertex `(κx, κy, κz, cρ)` feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AlbedoFeatures {
    pub values: Vec<[f64; 4]>,
    pub kappa: f64,
}

/// Builds grouping features. Without an explicit `kappa`, positions are
/// scaled so their pooled standard deviation matches that of the albedos.
pub fn albedo_features(mesh: &TriangleMesh, albedos: &[f64], kappa: Option<f64>) -> Result<AlbedoFeatures> {
    if albedos.len() != mesh.vertex_count() {
        return Err(Error::InvalidParameter(format!(
            "{} albedos for {} vertices",
            albedos.len(),
            mesh.vertex_count()
        )));
    }
    let kappa = match kappa {
        Some(k) if k > 0.0 && k.is_finite() => k,
        Some(k) => return Err(Error::InvalidParameter(format!("kappa must be positive ({k})"))),
        None => {
            let n = albedos.len().max(1) as f64;
            let mean_a = albedos.iter().sum::<f64>() / n;
            let var_a = albedos.iter().map(|a| (a - mean_a).powi(2)).sum::<f64>() / n;
            let verts = mesh.vertices();
            let mean_x = verts.iter().sum::<crate::mesh::Vec3>() / n;
            let pooled = verts.iter().map(|x| (x - mean_x).norm_squared()).sum::<f64>() / (3.0 * n);
            if var_a > 0.0 && pooled > 0.0 {
                (var_a / pooled).sqrt()
            } else {
                1.0
            }
        }
    };
    let values = mesh
        .vertices()
        .iter()
        .zip(albedos)
        .map(|(x, a)| [kappa * x.x, kappa * x.y, kappa * x.z, *a])
        .collect();
    Ok(AlbedoFeatures { values, kappa })
}

fn covariance(values: &[[f64; 4]]) -> Matrix4<f64> {
    let n = values.len() as f64;
    let mean = values.iter().map(|f| Vector4::from(*f)).sum::<Vector4<f64>>() / n;
    let mut cov = Matrix4::zeros();
    for f in values {
        let d = Vector4::from(*f) - mean;
        cov += d * d.transpose();
    }
    cov / n
}

/// Smallest number of principal components whose cumulative explained
/// variance reaches `variance_target`, clamped to `[1, 8]`.
pub fn select_group_count(features: &AlbedoFeatures, variance_target: f64) -> usize {
    if features.values.len() < 2 {
        return 1;
    }
    let eig = SymmetricEigen::new(covariance(&features.values));
    let mut ev: Vec<f64> = eig.eigenvalues.iter().map(|e| e.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = ev.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let mut cum = 0.0;
    for (i, e) in ev.iter().enumerate() {
        cum += e;
        if cum / total >= variance_target - 1e-12 {
            return (i + 1).clamp(1, 8);
        }
    }
    ev.len().clamp(1, 8)
}

fn dist2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    (0..4).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// K-means result: labels per vertex and one centroid per label. Labels are
/// numbered by ascending centroid albedo.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; 4]>,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ seeding. Points are processed in sorted
/// order so the partition does not depend on vertex numbering.
pub fn kmeans_cluster(features: &AlbedoFeatures, k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let n = features.values.len();
    if n == 0 {
        return Err(Error::InvalidParameter("no features to cluster".into()));
    }
    let k = k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (&features.values[a], &features.values[b]);
        (0..4)
            .map(|i| fa[i].total_cmp(&fb[i]))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let pts: Vec<[f64; 4]> = order.iter().map(|&i| features.values[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![pts[rng.random_range(0..n)]];
    let mut nearest: Vec<f64> = pts.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(pts[next]);
        for (i, p) in pts.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut labels = vec![0usize; n];
    let mut iterations = 0;
    for it in 0..100 {
        iterations = it + 1;
        for (i, p) in pts.iter().enumerate() {
            labels[i] = nearest_centroid(p, &centroids);
        }
        let mut sums = vec![[0.0; 4]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in pts.iter().zip(&labels) {
            counts[l] += 1;
            for d in 0..4 {
                sums[l][d] += p[d];
            }
        }
        let mut updated = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                updated[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed from the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&pts[a], &updated[labels[a]]).total_cmp(&dist2(&pts[b], &updated[labels[b]]))
                    })
                    .unwrap();
                updated[c] = pts[far];
                counts[c] = 1;
                counts[labels[far]] -= 1;
                labels[far] = c;
            }
        }
        let moved = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if moved < 1e-9 {
            break;
        }
    }
    for (i, p) in pts.iter().enumerate() {
        labels[i] = nearest_centroid(p, &centroids);
    }

    // rename labels by ascending centroid albedo
    let mut rank: Vec<usize> = (0..k).collect();
    rank.sort_by(|&a, &b| centroids[a][3].total_cmp(&centroids[b][3]).then(a.cmp(&b)));
    let mut rename = vec![0; k];
    for (new, &old) in rank.iter().enumerate() {
        rename[old] = new;
    }
    let mut out = vec![0usize; n];
    for (i, &orig) in order.iter().enumerate() {
        out[orig] = rename[labels[i]];
    }
    Ok(KMeans {
        labels: out,
        centroids: rank.iter().map(|&c| centroids[c]).collect(),
        iterations,
    })
}

fn nearest_centroid(p: &[f64; 4], centroids: &[[f64; 4]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, q) in centroids.iter().enumerate() {
        let d = dist2(p, q);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Potts energy: squared distance of each feature to its label centroid
/// plus `lambda` for every mesh edge joining different labels.
pub fn mrf_energy(mesh: &TriangleMesh, labels: &[usize], features: &AlbedoFeatures, centroids: &[[f64; 4]], lambda: f64) -> f64 {
    let data: f64 = features
        .values
        .iter()
        .zip(labels)
        .map(|(f, &l)| dist2(f, &centroids[l]))
        .sum();
    let cut = mesh.edges().iter().filter(|(a, b)| labels[*a] != labels[*b]).count();
    data + lambda * cut as f64
}

/// Iterated conditional modes on the Potts energy. Each sweep visits every
/// vertex once and never raises the energy.
pub fn smooth_labels_mrf(
    mesh: &TriangleMesh,
    labels: &[usize],
    features: &AlbedoFeatures,
    centroids: &[[f64; 4]],
    lambda: f64,
) -> Vec<usize> {
    let k = centroids.len();
    let mut labels = labels.to_vec();
    for _ in 0..100 {
        let mut changed = false;
        for v in 0..labels.len() {
            let f = &features.values[v];
            let ring = &mesh.ring(v).neighbors;
            let cost = |l: usize, labels: &[usize]| {
                dist2(f, &centroids[l]) + lambda * ring.iter().filter(|&&u| labels[u] != l).count() as f64
            };
            let current = labels[v];
            let mut best = current;
            let mut best_cost = cost(current, &labels);
            for l in 0..k {
                let c = cost(l, &labels);
                if c < best_cost {
                    best_cost = c;
                    best = l;
                }
            }
            if best != current {
                labels[v] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Median albedo per group. Empty groups are dropped and the remaining
/// labels renumbered in order; returns the new labels and values.
pub fn group_values(labels: &[usize], vertex_albedos: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    if labels.len() != vertex_albedos.len() {
        return Err(Error::InvalidParameter("labels and albedos differ in length".into()));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (&l, &a) in labels.iter().zip(vertex_albedos) {
        members[l].push(a);
    }
    let mut rename = vec![usize::MAX; k];
    let mut values = Vec::new();
    for (l, m) in members.iter_mut().enumerate() {
        if let Some(v) = median(m) {
            rename[l] = values.len();
            values.push(v);
        }
    }
    Ok((labels.iter().map(|&l| rename[l]).collect(), values))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupingOptions {
    pub variance_target: f64,
    /// Position scaling; `None` balances position and albedo spread.
    pub kappa: Option<f64>,
    /// Potts weight in units of the mean K-means data cost.
    pub pairwise_scale: f64,
    pub seed: u64,
}

impl Default for GroupingOptions {
    fn default() -> Self {
        GroupingOptions {
            variance_target: 0.95,
            kappa: None,
            pairwise_scale: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroupedAlbedo {
    pub model: AlbedoModel,
    pub vertex: VertexAlbedo,
    pub features: AlbedoFeatures,
    pub k: usize,
    pub kmeans_labels: Vec<usize>,
    pub lambda: f64,
}

/// Per-vertex estimate, PCA group count, K-means and Potts smoothing.
pub fn estimate_grouped_albedo(
    mesh: &TriangleMesh,
    views: &[View],
    visibility: &VisibilityMap,
    light: &LightModel,
    opts: &AlbedoOptions,
    grouping: &GroupingOptions,
) -> Result<GroupedAlbedo> {
    let vertex = estimate_vertex_albedo(mesh, views, visibility, light, opts)?;
    let features = albedo_features(mesh, &vertex.values, grouping.kappa)?;
    let k = select_group_count(&features, grouping.variance_target);
    let km = kmeans_cluster(&features, k, grouping.seed)?;
    let mean_data = features
        .values
        .iter()
        .zip(&km.labels)
        .map(|(f, &l)| dist2(f, &km.centroids[l]))
        .sum::<f64>()
        / features.values.len() as f64;
    let lambda = grouping.pairwise_scale * mean_data;
    let smoothed = smooth_labels_mrf(mesh, &km.labels, &features, &km.centroids, lambda);
    let (labels, values) = group_values(&smoothed, &vertex.values)?;
    Ok(GroupedAlbedo {
        model: AlbedoModel::Grouped { labels, values },
        vertex,
        features,
        k,
        kmeans_labels: km.labels,
        lambda,
    })
}
