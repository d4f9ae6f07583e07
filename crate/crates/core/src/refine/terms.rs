use smallvec::SmallVec;

use super::solver::LeastSquaresProblem;
use super::sparse::ResidualBlock;
use super::RefinementConfig;
use crate::albedo::AlbedoModel;
use crate::camera::{project_vertex, VisibilityMap, View};
use crate::mesh::{TriangleMesh, Vec3};
use crate::par;
use crate::shading::{LightModel, Rendering};

/// One vertex seen in one view, in depth-multiplied form: the residual is
/// `sqrt_weight · (target − coeff · n̂(δ)·l)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub vertex: usize,
    pub view: usize,
    pub light_dir: Vec3,
    /// Light distance, frozen for the outer iteration.
    pub distance: f64,
    /// `(I − ambient)·d²`
    pub target: f64,
    /// Brightness times albedo.
    pub coeff: f64,
    pub sqrt_weight: f64,
}

/// Frozen observations of one outer iteration plus vertices that could not
/// be constrained (fewer than two neighbours).
#[derive(Clone, Debug, Default)]
pub struct ObservationSet {
    pub observations: Vec<Observation>,
    pub excluded: Vec<usize>,
}

fn usable_ring(mesh: &TriangleMesh, v: usize) -> bool {
    let ring = mesh.ring(v);
    ring.neighbors.len() >= 2 && !ring.wedges.is_empty()
}

/// Samples every visible vertex in every view. With `renders` given, the
/// observation is corrected by the current mesh's own rendering at the
/// same image location: `I_obs(u) − I_ren(u) + I_model`, which removes the
/// sampling and tessellation bias of comparing a vertex prediction with a
/// bilinear image sample.
pub fn collect_observations(
    mesh: &TriangleMesh,
    views: &[View],
    visibility: &VisibilityMap,
    albedo: &AlbedoModel,
    light: &LightModel,
    config: &RefinementConfig,
    renders: Option<&[Rendering]>,
) -> ObservationSet {
    let excluded: Vec<usize> = (0..mesh.vertex_count()).filter(|&v| !usable_ring(mesh, v)).collect();
    let per_view = par::map_range(views.len(), |k| {
        let view = &views[k];
        let light_pos = view.light_position();
        let data = view.image.data();
        let mut out = Vec::new();
        for v in 0..mesh.vertex_count() {
            if !visibility.is_visible(k, v) || !usable_ring(mesh, v) {
                continue;
            }
            let x = mesh.vertices()[v];
            let Ok(proj) = project_vertex(&x, view) else {
                continue;
            };
            let Some(taps) = view.image.bilinear_taps(proj.pixel.x, proj.pixel.y) else {
                continue;
            };
            if taps.iter().any(|&(i, w)| w > 0.0 && data[i] < config.low) {
                continue;
            }
            let observed: f64 = taps.iter().map(|&(i, w)| data[i] * w).sum();
            if observed > config.high {
                continue;
            }
            let to_light = light_pos - x;
            let d = to_light.norm();
            if d <= 0.0 {
                continue;
            }
            let l = to_light / d;
            let nl = mesh.normals()[v].dot(&l);
            if nl <= 0.0 || nl < config.nl_floor {
                continue;
            }
            let coeff = light.brightness * albedo.value(v);
            let target = match renders {
                Some(renders) => {
                    let r = &renders[k];
                    if taps.iter().any(|&(i, w)| w > 0.0 && (!r.covered[i] || r.saturated[i])) {
                        continue;
                    }
                    let rendered: f64 = taps.iter().map(|&(i, w)| r.image.data()[i] * w).sum();
                    (observed - rendered) * d * d + coeff * nl
                }
                None => (observed - light.ambient) * d * d,
            };
            out.push(Observation {
                vertex: v,
                view: k,
                light_dir: l,
                distance: d,
                target,
                coeff,
                sqrt_weight: nl.sqrt(),
            });
        }
        out
    });
    ObservationSet {
        observations: per_view.into_iter().flatten().collect(),
        excluded,
    }
}

/// Unnormalized displaced normal `m(δ)` of vertex `v`: the sum over the
/// one-ring wedges `(a, b)` of `(P_a − P_v) × (P_b − P_v)` with
/// `P_j = x_j + δ_j n_j`. Also returns `∂m/∂δ_j` for `v` and each neighbour.
pub fn displaced_normal(mesh: &TriangleMesh, delta: &[f64], v: usize) -> (Vec3, SmallVec<[(usize, Vec3); 12]>) {
    let x = mesh.vertices();
    let n = mesh.normals();
    let p = |j: usize| x[j] + n[j] * delta[j];
    let ring = mesh.ring(v);
    let pv = p(v);
    let mut m = Vec3::zeros();
    let mut grads: SmallVec<[(usize, Vec3); 12]> = SmallVec::new();
    grads.push((v, Vec3::zeros()));
    for &u in &ring.neighbors {
        grads.push((u, Vec3::zeros()));
    }
    let slot = |grads: &SmallVec<[(usize, Vec3); 12]>, j: usize| grads.iter().position(|g| g.0 == j).expect("ring member");
    for &(a, b) in &ring.wedges {
        let ea = p(a) - pv;
        let eb = p(b) - pv;
        m += ea.cross(&eb);
        grads[0].1 += (-n[v]).cross(&eb) + ea.cross(&(-n[v]));
        let ia = slot(&grads, a);
        grads[ia].1 += n[a].cross(&eb);
        let ib = slot(&grads, b);
        grads[ib].1 += ea.cross(&n[b]);
    }
    (m, grads)
}

fn displaced_normal_only(mesh: &TriangleMesh, delta: &[f64], v: usize) -> Vec3 {
    let x = mesh.vertices();
    let n = mesh.normals();
    let p = |j: usize| x[j] + n[j] * delta[j];
    let pv = p(v);
    mesh.ring(v)
        .wedges
        .iter()
        .map(|&(a, b)| (p(a) - pv).cross(&(p(b) - pv)))
        .sum()
}

/// The stacked data, smoothness and regularization system of one outer
/// iteration. Unknowns are the per-vertex displacements along the frozen
/// normals of `mesh`.
pub struct DisplacementProblem<'a> {
    pub mesh: &'a TriangleMesh,
    pub observations: &'a [Observation],
    /// Effective smoothness and regularization weights.
    pub lambda1: f64,
    pub lambda2: f64,
    /// Box bound on every displacement.
    pub cap: f64,
    observed_vertices: Vec<usize>,
}

impl<'a> DisplacementProblem<'a> {
    pub fn new(mesh: &'a TriangleMesh, observations: &'a [Observation], lambda1: f64, lambda2: f64, cap: f64) -> Self {
        let mut observed_vertices: Vec<usize> = observations.iter().map(|o| o.vertex).collect();
        observed_vertices.sort_unstable();
        observed_vertices.dedup();
        DisplacementProblem {
            mesh,
            observations,
            lambda1,
            lambda2,
            cap,
            observed_vertices,
        }
    }

    pub fn data_block(&self, delta: &[f64]) -> ResidualBlock {
        let n = self.mesh.vertex_count();
        let locals = par::map_slice(&self.observed_vertices, |&v| displaced_normal(self.mesh, delta, v));
        let mut index = vec![usize::MAX; n];
        for (k, &v) in self.observed_vertices.iter().enumerate() {
            index[v] = k;
        }
        let mut block = ResidualBlock::new(n);
        for o in self.observations {
            let (m, grads) = &locals[index[o.vertex]];
            let len = m.norm();
            if len == 0.0 {
                block.push_row(o.sqrt_weight * o.target, []);
                continue;
            }
            let mhat = m / len;
            let ml = mhat.dot(&o.light_dir);
            let r = o.sqrt_weight * (o.target - o.coeff * ml);
            let g = (o.light_dir - mhat * ml) * (-o.sqrt_weight * o.coeff / len);
            block.push_row(r, grads.iter().map(|(j, dm)| (*j, g.dot(dm))));
        }
        block
    }

    fn data_residuals(&self, delta: &[f64]) -> Vec<f64> {
        let n = self.mesh.vertex_count();
        let ms = par::map_slice(&self.observed_vertices, |&v| displaced_normal_only(self.mesh, delta, v));
        let mut index = vec![usize::MAX; n];
        for (k, &v) in self.observed_vertices.iter().enumerate() {
            index[v] = k;
        }
        self.observations
            .iter()
            .map(|o| {
                let m = ms[index[o.vertex]];
                let len = m.norm();
                let ml = if len > 0.0 { m.dot(&o.light_dir) / len } else { 0.0 };
                o.sqrt_weight * (o.target - o.coeff * ml)
            })
            .collect()
    }

    /// `E_p`, `E_s` and `E_r` at `delta`.
    pub fn energies(&self, delta: &[f64]) -> (f64, f64, f64) {
        let ep = self.data_residuals(delta).iter().map(|r| r * r).sum();
        let es = smoothness_block(self.mesh, delta, self.lambda1).sum_squares();
        let er = regularization_block(delta, self.lambda2).sum_squares();
        (ep, es, er)
    }
}

/// `sqrt(λ1)·(δ_i − δ_j)` for every directed mesh edge.
pub fn smoothness_block(mesh: &TriangleMesh, delta: &[f64], lambda1: f64) -> ResidualBlock {
    let s = lambda1.sqrt();
    let mut block = ResidualBlock::new(mesh.vertex_count());
    for i in 0..mesh.vertex_count() {
        for &j in &mesh.ring(i).neighbors {
            block.push_row(s * (delta[i] - delta[j]), [(i, s), (j, -s)]);
        }
    }
    block
}

/// `sqrt(λ2)·δ_i` for every vertex.
pub fn regularization_block(delta: &[f64], lambda2: f64) -> ResidualBlock {
    let s = lambda2.sqrt();
    let mut block = ResidualBlock::new(delta.len());
    for (i, d) in delta.iter().enumerate() {
        block.push_row(s * d, [(i, s)]);
    }
    block
}

impl LeastSquaresProblem for DisplacementProblem<'_> {
    fn dim(&self) -> usize {
        self.mesh.vertex_count()
    }

    fn evaluate(&self, x: &[f64]) -> ResidualBlock {
        let mut block = self.data_block(x);
        block.append(&smoothness_block(self.mesh, x, self.lambda1));
        block.append(&regularization_block(x, self.lambda2));
        block
    }

    fn cost(&self, x: &[f64]) -> f64 {
        let (ep, es, er) = self.energies(x);
        ep + es + er
    }

    fn clamp(&self, x: &mut [f64]) {
        for v in x {
            *v = v.clamp(-self.cap, self.cap);
        }
    }
}
