//! Shading-based refinement: one displacement per vertex along its normal,
//! fitted to all views at once by damped Gauss-Newton.
//!
//! Every outer iteration freezes normals, light distances and visibility,
//! solves for the displacements `δ` and moves each vertex by `δ_i·n_i`.

mod solver;
mod sparse;
mod terms;

pub use solver::{levenberg_marquardt, LeastSquaresProblem, LmOptions, LmReport};
pub use sparse::ResidualBlock;
pub use terms::{
    collect_observations, displaced_normal, regularization_block, smoothness_block, DisplacementProblem, Observation,
    ObservationSet,
};

use serde::{Deserialize, Serialize};

use crate::albedo::AlbedoModel;
use crate::camera::{compute_visibility_all, default_visibility_bias, VisibilityMap, View};
use crate::error::{Error, Result};
use crate::mesh::{TriangleMesh, Vec3};
use crate::par;
use crate::shading::{render_view, LightModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    /// Smoothness weight.
    pub lambda1: f64,
    /// Regularization weight.
    pub lambda2: f64,
    /// Scale both weights by the mean diagonal of the data term's normal
    /// matrix at the start, making them insensitive to image and mesh units.
    pub normalize_lambdas: bool,
    pub outer_iterations: usize,
    pub lm_initial_damping: f64,
    pub lm_max_inner: usize,
    /// Observations with `n·l` below this are dropped.
    pub nl_floor: f64,
    /// Linear intensities outside `[low, high]` are not used.
    pub low: f64,
    pub high: f64,
    /// Stop when the largest displacement falls below this (mm). Defaults
    /// to 1e-3 of the mean edge length.
    pub convergence_tol: Option<f64>,
    /// Bound on any single displacement (mm). Defaults to 5 mean edge lengths.
    pub displacement_cap: Option<f64>,
    /// Depth-test tolerance (mm). Defaults to two mean edge lengths.
    pub visibility_bias: Option<f64>,
    /// Compare observations against the current mesh's own rendering.
    pub render_correction: bool,
    pub max_flip_halvings: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            lambda1: 1.0,
            lambda2: 0.1,
            normalize_lambdas: true,
            outer_iterations: 10,
            lm_initial_damping: 1e-3,
            lm_max_inner: 20,
            nl_floor: 0.1,
            low: 0.02,
            high: 0.98,
            convergence_tol: None,
            displacement_cap: None,
            visibility_bias: None,
            render_correction: true,
            max_flip_halvings: 8,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be non-negative ({v})")))
            }
        };
        nonneg("lambda1", self.lambda1)?;
        nonneg("lambda2", self.lambda2)?;
        nonneg("lm_initial_damping", self.lm_initial_damping)?;
        nonneg("nl_floor", self.nl_floor)?;
        if self.outer_iterations == 0 || self.lm_max_inner == 0 {
            return Err(Error::InvalidParameter("iteration counts must be at least 1".into()));
        }
        if !(self.low < self.high) {
            return Err(Error::InvalidParameter("intensity window is empty".into()));
        }
        for (name, v) in [
            ("convergence_tol", self.convergence_tol),
            ("displacement_cap", self.displacement_cap),
            ("visibility_bias", self.visibility_bias),
        ] {
            if let Some(v) = v {
                nonneg(name, v)?;
            }
        }
        Ok(())
    }
}

/// Per-outer-iteration record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub observations: usize,
    /// Energies at the accepted displacements.
    pub e_p: f64,
    pub e_s: f64,
    pub e_r: f64,
    pub initial_cost: f64,
    pub cost_history: Vec<f64>,
    pub max_delta: f64,
    pub lm_iterations: usize,
    pub flip_halvings: usize,
    /// No step could be accepted; displacements stayed zero.
    pub stalled: bool,
}

/// Displacement state of the current outer iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefinementState {
    pub delta: Vec<f64>,
    pub frozen_normals: Vec<Vec3>,
    pub frozen_distances: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RefinementResult {
    pub mesh: TriangleMesh,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Vertices left unconstrained by the data term (fewer than two neighbours).
    pub excluded: Vec<usize>,
    pub converged: bool,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Outer-loop driver; each [`Refiner::step`] runs one outer iteration.
pub struct Refiner {
    mesh: TriangleMesh,
    views: Vec<View>,
    albedo: AlbedoModel,
    light: LightModel,
    config: RefinementConfig,
    bias: f64,
    cap: f64,
    tol: f64,
    lambdas: Option<(f64, f64)>,
    diagnostics: Vec<IterationDiagnostics>,
    excluded: Vec<usize>,
    state: RefinementState,
    converged: bool,
}

impl Refiner {
    /// Views must carry linear images. The albedo must be global or grouped.
    pub fn new(mesh: TriangleMesh, views: Vec<View>, albedo: AlbedoModel, light: LightModel, config: RefinementConfig) -> Result<Self> {
        config.validate()?;
        if mesh.is_empty() {
            return Err(Error::EmptyMesh("nothing to refine".into()));
        }
        if views.is_empty() {
            return Err(Error::NoObservations("refinement needs at least one view".into()));
        }
        if views.iter().any(|v| v.image.gamma_applied()) {
            return Err(Error::NotLinearized);
        }
        if matches!(albedo, AlbedoModel::PerVertex(_)) {
            return Err(Error::InvalidParameter("refinement takes a global or grouped albedo".into()));
        }
        albedo.validate(mesh.vertex_count())?;
        let edge = mesh.mean_edge_length();
        Ok(Refiner {
            bias: config.visibility_bias.unwrap_or_else(|| default_visibility_bias(&mesh)),
            cap: config.displacement_cap.unwrap_or(5.0 * edge),
            tol: config.convergence_tol.unwrap_or(1e-3 * edge),
            mesh,
            views,
            albedo,
            light: light.linear(),
            config,
            lambdas: None,
            diagnostics: Vec::new(),
            excluded: Vec::new(),
            state: RefinementState::default(),
            converged: false,
        })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn diagnostics(&self) -> &[IterationDiagnostics] {
        &self.diagnostics
    }

    pub fn state(&self) -> &RefinementState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.converged || self.diagnostics.len() >= self.config.outer_iterations
    }

    /// Effective `(λ1, λ2)`, known after the first step.
    pub fn lambdas(&self) -> Option<(f64, f64)> {
        self.lambdas
    }

    pub fn visibility(&self) -> VisibilityMap {
        compute_visibility_all(&self.mesh, &self.views, self.bias)
    }

    /// Collects the observations of the current mesh.
    pub fn observations(&self) -> ObservationSet {
        let visibility = self.visibility();
        let renders = self.config.render_correction.then(|| {
            par::map_slice(&self.views, |v| render_view(&self.mesh, v, &self.albedo, &self.light))
        });
        collect_observations(
            &self.mesh,
            &self.views,
            &visibility,
            &self.albedo,
            &self.light,
            &self.config,
            renders.as_deref(),
        )
    }

    /// One outer iteration. Returns `None` once finished.
    pub fn step(&mut self) -> Result<Option<&IterationDiagnostics>> {
        if self.is_done() {
            return Ok(None);
        }
        let set = self.observations();
        self.excluded = set.excluded;
        let observations = set.observations;
        let (lambda1, lambda2) = *self.lambdas.get_or_insert_with(|| {
            let scale = if self.config.normalize_lambdas {
                let zero = vec![0.0; self.mesh.vertex_count()];
                let probe = DisplacementProblem::new(&self.mesh, &observations, 0.0, 0.0, f64::INFINITY);
                let diag = probe.data_block(&zero).normal_diagonal();
                let nonzero: Vec<f64> = diag.into_iter().filter(|d| *d > 0.0).collect();
                if nonzero.is_empty() {
                    1.0
                } else {
                    nonzero.iter().sum::<f64>() / nonzero.len() as f64
                }
            } else {
                1.0
            };
            (self.config.lambda1 * scale, self.config.lambda2 * scale)
        });
        let problem = DisplacementProblem::new(&self.mesh, &observations, lambda1, lambda2, self.cap);
        let n = self.mesh.vertex_count();
        let lm = levenberg_marquardt(
            &problem,
            &vec![0.0; n],
            &LmOptions {
                initial_damping: self.config.lm_initial_damping,
                max_iterations: self.config.lm_max_inner,
                ..LmOptions::default()
            },
        );
        let (e_p, e_s, e_r) = problem.energies(&lm.x);
        let mut delta = lm.x.clone();
        let frozen_normals = self.mesh.normals().to_vec();
        let frozen_distances = observations.iter().map(|o| o.distance).collect();
        let halvings = self.apply(&mut delta)?;
        let max_delta = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        self.state = RefinementState {
            delta,
            frozen_normals,
            frozen_distances,
        };
        if max_delta < self.tol {
            self.converged = true;
        }
        log::info!(
            "outer iteration {}: E_p {e_p:.4e} E_s {e_s:.4e} E_r {e_r:.4e} max|delta| {max_delta:.3e} mm",
            self.diagnostics.len()
        );
        self.diagnostics.push(IterationDiagnostics {
            iteration: self.diagnostics.len(),
            observations: observations.len(),
            e_p,
            e_s,
            e_r,
            initial_cost: lm.initial_cost,
            cost_history: lm.cost_history,
            max_delta,
            lm_iterations: lm.iterations,
            flip_halvings: halvings,
            stalled: lm.stalled,
        });
        Ok(self.diagnostics.last())
    }

    /// Moves vertices along their frozen normals, halving the displacement
    /// of any vertex whose incident faces would flip.
    fn apply(&mut self, delta: &mut [f64]) -> Result<usize> {
        let base = self.mesh.vertices().to_vec();
        let normals = self.mesh.normals().to_vec();
        let faces = self.mesh.faces().to_vec();
        let before: Vec<Vec3> = (0..faces.len()).map(|f| self.mesh.face_normal_raw(f)).collect();
        let mut halvings = 0;
        loop {
            let moved: Vec<Vec3> = base.iter().zip(&normals).zip(delta.iter()).map(|((x, n), d)| x + n * *d).collect();
            let mut offending: Vec<usize> = Vec::new();
            for (f, face) in faces.iter().enumerate() {
                let [a, b, c] = *face;
                let after = (moved[b] - moved[a]).cross(&(moved[c] - moved[a]));
                if after.dot(&before[f]) <= 0.0 && before[f].norm_squared() > 0.0 {
                    offending.extend_from_slice(face);
                }
            }
            if offending.is_empty() {
                self.mesh.set_vertices(moved);
                return Ok(halvings);
            }
            offending.sort_unstable();
            offending.dedup();
            if halvings >= self.config.max_flip_halvings {
                return Err(Error::PersistentFlip { vertices: offending });
            }
            for &v in &offending {
                delta[v] *= 0.5;
            }
            halvings += 1;
        }
    }

    /// Runs outer iterations until convergence or the iteration limit.
    pub fn run(mut self) -> Result<RefinementResult> {
        while self.step()?.is_some() {}
        let (lambda1, lambda2) = self.lambdas.unwrap_or((0.0, 0.0));
        Ok(RefinementResult {
            mesh: self.mesh,
            diagnostics: self.diagnostics,
            excluded: self.excluded,
            converged: self.converged,
            lambda1,
            lambda2,
        })
    }
}

/// Refines `mesh` against linear `views`; see [`Refiner`].
pub fn refine(
    mesh: &TriangleMesh,
    views: &[View],
    albedo: &AlbedoModel,
    light: &LightModel,
    config: &RefinementConfig,
) -> Result<RefinementResult> {
    Refiner::new(mesh.clone(), views.to_vec(), albedo.clone(), *light, config.clone())?.run()
}

/// Data residuals and Jacobian of the current mesh at `state.delta`.
pub fn build_data_residuals(
    mesh: &TriangleMesh,
    views: &[View],
    visibility: &VisibilityMap,
    albedo: &AlbedoModel,
    light: &LightModel,
    config: &RefinementConfig,
    delta: &[f64],
) -> ResidualBlock {
    let renders = config
        .render_correction
        .then(|| par::map_slice(views, |v| render_view(mesh, v, albedo, &light.linear())));
    let set = collect_observations(mesh, views, visibility, albedo, light, config, renders.as_deref());
    DisplacementProblem::new(mesh, &set.observations, 0.0, 0.0, f64::INFINITY).data_block(delta)
}

/// Smoothness residuals `sqrt(λ1)(δ_i − δ_j)` over directed edges.
pub fn build_smoothness_residuals(mesh: &TriangleMesh, delta: &[f64], lambda1: f64) -> ResidualBlock {
    smoothness_block(mesh, delta, lambda1)
}

/// Regularization residuals `sqrt(λ2)·δ_i`.
pub fn build_regularization_residuals(delta: &[f64], lambda2: f64) -> ResidualBlock {
    regularization_block(delta, lambda2)
}

/// Minimizes a stacked displacement system from `δ = 0`.
pub fn solve_displacements<P: LeastSquaresProblem>(problem: &P, config: &RefinementConfig) -> LmReport {
    levenberg_marquardt(
        problem,
        &vec![0.0; problem.dim()],
        &LmOptions {
            initial_damping: config.lm_initial_damping,
            max_iterations: config.lm_max_inner,
            ..LmOptions::default()
        },
    )
}
