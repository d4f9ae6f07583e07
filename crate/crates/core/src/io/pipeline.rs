//! The end-to-end run: load → preprocess → calibrate → linearize → albedo →
//! refine → eval. Every artifact lands in the output directory and is
//! listed with its SHA-256 in `manifest.toml`, which is written even when a
//! stage fails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::albedo::{load_albedo, save_albedo};
use super::config::{AlbedoMode, CalibrationConfig, ProjectConfig};
use super::image::{load_depth_map, ImageFormat};
use super::mesh::{load_mesh, save_mesh};
use super::views::{load_views, save_views};
use crate::albedo::{estimate_global_albedo, estimate_grouped_albedo, AlbedoModel};
use crate::calib::{build_sphere_samples, fit_gamma_ransac, GammaFit};
use crate::camera::{compute_visibility_all, default_visibility_bias, View};
use crate::error::{Error, Result};
use crate::eval::{align_icp, gradient_rmse, image_rmse, mesh_distance, DistanceStats, ErrorReport, IcpOptions};
use crate::mesh::{depth_map_to_mesh, isotropic_remesh, joint_bilateral_depth_filter, MeshingOptions, RemeshOptions, TriangleMesh, Vec3};
use crate::refine::{IterationDiagnostics, RefinementResult, Refiner};
use crate::shading::{linearize, render_view, LightModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSource {
    /// `light.gamma` in the configuration.
    Config,
    /// Fitted from the calibration sphere.
    Calibration,
    /// Recorded in the image sidecars.
    Recorded,
    /// Images are already linear.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaResolution {
    pub gamma: f64,
    pub source: GammaSource,
    pub fit: Option<GammaFit>,
}

/// Fits gamma to renders of the known calibration sphere.
pub fn calibrate_gamma(cal: &CalibrationConfig, brightness: f64, ambient: f64, seed: u64) -> Result<GammaFit> {
    let mesh = load_mesh(&cal.sphere)?;
    let views = load_views(&cal.views)?;
    let light = LightModel::new(brightness, ambient, 1.0)?;
    let samples = build_sphere_samples(&mesh, &views, &light, cal.albedo)?;
    fit_gamma_ransac(&samples, &cal.ransac(seed))
}

/// Picks the camera gamma: configured value, then calibration, then the
/// gamma recorded with the images.
pub fn resolve_gamma(cfg: &ProjectConfig, views: &[View]) -> Result<GammaResolution> {
    if let Some(gamma) = cfg.light.gamma {
        return Ok(GammaResolution {
            gamma,
            source: GammaSource::Config,
            fit: None,
        });
    }
    if let Some(cal) = &cfg.calibration {
        let fit = calibrate_gamma(cal, cfg.light.brightness, cfg.light.ambient, cfg.seed)?;
        return Ok(GammaResolution {
            gamma: fit.gamma,
            source: GammaSource::Calibration,
            fit: Some(fit),
        });
    }
    if views.iter().all(|v| !v.image.gamma_applied()) {
        return Ok(GammaResolution {
            gamma: 1.0,
            source: GammaSource::Linear,
            fit: None,
        });
    }
    let recorded: Vec<Option<f64>> = views.iter().filter(|v| v.image.gamma_applied()).map(|v| v.image.gamma()).collect();
    if let Some(Some(g)) = recorded.first() {
        if recorded.iter().all(|r| *r == Some(*g)) {
            return Ok(GammaResolution {
                gamma: *g,
                source: GammaSource::Recorded,
                fit: None,
            });
        }
    }
    Err(Error::InvalidParameter(
        "the camera gamma is unknown: run `nearlight calibrate gamma` on a sphere capture and set light.gamma, \
         or add a [calibration] section to the config"
            .into(),
    ))
}

/// Linear copies of the view images, undoing `gamma` on every image that
/// carries a camera response.
pub fn linearize_with(views: &[View], gamma: f64) -> Result<Vec<View>> {
    views
        .iter()
        .map(|v| {
            let image = if v.image.gamma_applied() {
                linearize(&v.image, gamma)?
            } else {
                v.image.clone()
            };
            Ok(View { image, ..v.clone() })
        })
        .collect()
}

/// Views from `paths.views` with the configured light offset applied.
pub fn load_project_views(cfg: &ProjectConfig) -> Result<Vec<View>> {
    let mut views = load_views(&cfg.paths.views)?;
    if let Some(o) = cfg.light.light_offset {
        for v in &mut views {
            v.light_offset = Vec3::new(o[0], o[1], o[2]);
        }
    }
    Ok(views)
}

/// Initial mesh in world coordinates: the configured mesh, or the filtered
/// depth map of one view, optionally remeshed.
pub fn prepare_mesh(cfg: &ProjectConfig, views: &[View]) -> Result<TriangleMesh> {
    let pp = &cfg.preprocess;
    let mesh = match (&cfg.paths.mesh, &cfg.paths.depth) {
        (Some(path), _) => load_mesh(path)?,
        (None, Some(path)) => {
            let view = views.get(pp.depth_view).ok_or_else(|| {
                Error::InvalidParameter(format!("preprocess.depth_view {} but only {} views", pp.depth_view, views.len()))
            })?;
            let depth = load_depth_map(path, pp.depth_scale, pp.depth_kind)?;
            let filtered = joint_bilateral_depth_filter(&depth, &view.image, pp.spatial_sigma, pp.range_sigma, pp.depth_sigma)?;
            let opts = MeshingOptions {
                max_discontinuity: pp.max_discontinuity,
            };
            depth_map_to_mesh(&filtered, &view.intrinsics, &opts)?.transformed(&view.pose.isometry().inverse())
        }
        (None, None) => return Err(Error::InvalidParameter("paths.mesh or paths.depth is required".into())),
    };
    match pp.target_vertex_count {
        Some(n) => isotropic_remesh(&mesh, n, &RemeshOptions::default()),
        None => Ok(mesh),
    }
}

/// Albedo from `paths.albedo`, `light.albedo`, or estimated from the linear
/// views in the configured mode.
pub fn albedo_stage(cfg: &ProjectConfig, mesh: &TriangleMesh, linear: &[View], light: &LightModel) -> Result<AlbedoModel> {
    if let Some(path) = &cfg.paths.albedo {
        let model = load_albedo(path)?;
        model.validate(mesh.vertex_count())?;
        return Ok(model);
    }
    if let Some(a) = cfg.light.albedo {
        return Ok(AlbedoModel::Global(a));
    }
    let bias = cfg.refinement.visibility_bias.unwrap_or_else(|| default_visibility_bias(mesh));
    let vis = compute_visibility_all(mesh, linear, bias);
    let opts = cfg.albedo.options();
    Ok(match cfg.albedo.mode {
        AlbedoMode::Global => AlbedoModel::Global(estimate_global_albedo(mesh, linear, &vis, light, &opts)?),
        AlbedoMode::Grouped => {
            estimate_grouped_albedo(mesh, linear, &vis, light, &opts, &cfg.albedo.grouping(cfg.seed))?.model
        }
    })
}

pub fn format_diagnostics_csv(diags: &[IterationDiagnostics]) -> String {
    let mut s = String::from("iteration,e_p,e_s,e_r,max_delta,observations,lm_iterations,flip_halvings\n");
    for d in diags {
        writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{},{},{}",
            d.iteration, d.e_p, d.e_s, d.e_r, d.max_delta, d.observations, d.lm_iterations, d.flip_halvings
        )
        .expect("write to string");
    }
    s
}

pub fn format_report_csv(reports: &[ErrorReport]) -> String {
    let mut s = String::from(
        "view,image_rmse_input,image_rmse_refined,gradient_rmse_input,gradient_rmse_refined,mean_distance,max_distance\n",
    );
    for r in reports {
        writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.view,
            r.image_rmse_input,
            r.image_rmse_refined,
            r.gradient_rmse_input,
            r.gradient_rmse_refined,
            r.mean_distance,
            r.max_distance
        )
        .expect("write to string");
    }
    s
}

/// In-sample fit of one view: linear renders of the input and refined meshes
/// against the linear image.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewFit {
    pub view: usize,
    pub image_rmse_input: f64,
    pub image_rmse_refined: f64,
    pub gradient_rmse_input: f64,
    pub gradient_rmse_refined: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub views: Vec<ViewFit>,
    /// Input and refined meshes against `paths.truth`.
    pub distance_input: Option<DistanceStats>,
    pub distance_refined: Option<DistanceStats>,
}

fn format_fit_csv(fits: &[ViewFit]) -> String {
    let mut s = String::from("view,image_rmse_input,image_rmse_refined,gradient_rmse_input,gradient_rmse_refined\n");
    for f in fits {
        writeln!(
            s,
            "{},{:e},{:e},{:e},{:e}",
            f.view, f.image_rmse_input, f.image_rmse_refined, f.gradient_rmse_input, f.gradient_rmse_refined
        )
        .expect("write to string");
    }
    s
}

/// Distance from `mesh` to `truth`, after point-to-plane ICP when `icp` is
/// set.
pub fn distance_to_truth(mesh: &TriangleMesh, truth: &TriangleMesh, icp: Option<usize>) -> Result<DistanceStats> {
    match icp {
        Some(max_iterations) => {
            let opts = IcpOptions {
                max_iterations,
                ..Default::default()
            };
            let fit = align_icp(mesh, truth, &opts)?;
            mesh_distance(&mesh.transformed(&fit.transform), truth)
        }
        None => mesh_distance(mesh, truth),
    }
}

pub fn evaluate(
    cfg: &ProjectConfig,
    input: &TriangleMesh,
    refined: &TriangleMesh,
    linear: &[View],
    albedo: &AlbedoModel,
    light: &LightModel,
) -> Result<Evaluation> {
    let mut out = Evaluation::default();
    if cfg.eval.render {
        let lin = light.linear();
        for (k, view) in linear.iter().enumerate() {
            let before = render_view(input, view, albedo, &lin);
            let after = render_view(refined, view, albedo, &lin);
            let mask: Vec<bool> = before.covered.iter().zip(&after.covered).map(|(a, b)| *a && *b).collect();
            // views that see nothing of the mesh are left out of the report
            let (Ok(ri), Ok(rr)) = (image_rmse(&view.image, &before.image, &mask), image_rmse(&view.image, &after.image, &mask)) else {
                continue;
            };
            let (gi, gr) = match (gradient_rmse(&view.image, &before.image, &mask), gradient_rmse(&view.image, &after.image, &mask)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => (f64::NAN, f64::NAN),
            };
            out.views.push(ViewFit {
                view: k,
                image_rmse_input: ri,
                image_rmse_refined: rr,
                gradient_rmse_input: gi,
                gradient_rmse_refined: gr,
            });
        }
    }
    if let Some(path) = &cfg.paths.truth {
        let truth = load_mesh(path)?;
        let icp = cfg.eval.icp.then_some(cfg.eval.icp_iterations);
        out.distance_input = Some(distance_to_truth(input, &truth, icp)?);
        out.distance_refined = Some(distance_to_truth(refined, &truth, icp)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub stage: String,
    /// Relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST_NAME: &str = "manifest.toml";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(&path, e.message().to_string()))
    }

    /// Recomputes every checksum under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = dir.join(&a.path);
            let sum = sha256_file(&path)?;
            if sum != a.sha256 {
                return Err(Error::format(&path, format!("checksum {sum} does not match manifest {}", a.sha256)));
            }
        }
        Ok(())
    }
}

struct Recorder {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Recorder {
    fn add(&mut self, stage: &str, path: &Path) -> Result<()> {
        let bytes = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        self.artifacts.push(Artifact {
            stage: stage.to_string(),
            path: path.strip_prefix(&self.dir).unwrap_or(path).to_path_buf(),
            sha256: sha256_file(path)?,
            bytes,
        });
        Ok(())
    }

    fn text(&mut self, stage: &str, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.add(stage, &path)
    }

    fn mesh(&mut self, stage: &str, name: &str, mesh: &TriangleMesh) -> Result<()> {
        let path = self.dir.join(name);
        save_mesh(&path, mesh)?;
        self.add(stage, &path)
    }
}

pub struct PipelineOutput {
    pub input: TriangleMesh,
    pub gamma: GammaResolution,
    pub albedo: AlbedoModel,
    pub refinement: RefinementResult,
    pub evaluation: Evaluation,
    pub manifest: Manifest,
}

#[derive(Serialize)]
struct GammaRecord {
    gamma: f64,
    source: GammaSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    inlier_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rms: Option<f64>,
}

#[derive(Serialize)]
struct DistanceRecord {
    input: DistanceStats,
    refined: DistanceStats,
}

fn stages(cfg: &ProjectConfig, rec: &mut Recorder) -> Result<PipelineOutput> {
    let stage = |name: &'static str| move |e: Error| e.in_stage(name);

    rec.text("load", "config.toml", &cfg.to_toml()).map_err(stage("load"))?;
    let views = load_project_views(cfg).map_err(stage("load"))?;

    let input = prepare_mesh(cfg, &views).map_err(stage("preprocess"))?;
    rec.mesh("preprocess", "input.ply", &input).map_err(stage("preprocess"))?;

    let gamma = resolve_gamma(cfg, &views).map_err(stage("calibrate"))?;
    let record = GammaRecord {
        gamma: gamma.gamma,
        source: gamma.source,
        inlier_ratio: gamma.fit.map(|f| f.inlier_ratio),
        rms: gamma.fit.map(|f| f.rms),
    };
    rec.text("calibrate", "gamma.toml", &toml::to_string(&record).expect("gamma record serializes"))
        .map_err(stage("calibrate"))?;

    let light = LightModel::new(cfg.light.brightness, cfg.light.ambient, gamma.gamma).map_err(stage("linearize"))?;
    let linear = linearize_with(&views, gamma.gamma).map_err(stage("linearize"))?;
    let lin_dir = rec.dir.join("linear");
    fs::create_dir_all(&lin_dir).map_err(|e| Error::io(&lin_dir, e).in_stage("linearize"))?;
    let views_file = lin_dir.join("views.txt");
    let images = save_views(&views_file, &linear, ImageFormat::Pfm).map_err(stage("linearize"))?;
    for p in images.iter().flat_map(|p| [p.clone(), super::image::sidecar_path(p)]).chain([views_file]) {
        rec.add("linearize", &p).map_err(stage("linearize"))?;
    }

    let albedo = albedo_stage(cfg, &input, &linear, &light).map_err(stage("albedo"))?;
    let path = rec.dir.join("albedo.txt");
    save_albedo(&path, &albedo).and_then(|_| rec.add("albedo", &path)).map_err(stage("albedo"))?;

    let refiner = Refiner::new(input.clone(), linear.clone(), albedo.clone(), light, cfg.refinement.clone());
    let result = refiner.and_then(Refiner::run).map_err(stage("refine"))?;
    rec.mesh("refine", "refined.ply", &result.mesh).map_err(stage("refine"))?;
    rec.text("refine", "diagnostics.csv", &format_diagnostics_csv(&result.diagnostics))
        .map_err(stage("refine"))?;

    let evaluation = evaluate(cfg, &input, &result.mesh, &linear, &albedo, &light).map_err(stage("eval"))?;
    if cfg.eval.render {
        rec.text("eval", "report.csv", &format_fit_csv(&evaluation.views)).map_err(stage("eval"))?;
    }
    if let (Some(input), Some(refined)) = (evaluation.distance_input, evaluation.distance_refined) {
        let text = toml::to_string(&DistanceRecord { input, refined }).expect("distances serialize");
        rec.text("eval", "distance.toml", &text).map_err(stage("eval"))?;
    }

    Ok(PipelineOutput {
        input,
        gamma,
        albedo,
        refinement: result,
        evaluation,
        manifest: Manifest {
            status: RunStatus::Complete,
            seed: cfg.seed,
            error: None,
            artifacts: Vec::new(),
        },
    })
}

/// Runs every stage. On failure the manifest records the error and the
/// artifacts written so far, and the stage-tagged error is returned.
pub fn run_pipeline(cfg: &ProjectConfig) -> Result<PipelineOutput> {
    let dir = cfg.paths.output.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e).in_stage("load"))?;
    let mut rec = Recorder {
        dir: dir.clone(),
        artifacts: Vec::new(),
    };
    let result = stages(cfg, &mut rec);
    let manifest = Manifest {
        status: if result.is_ok() { RunStatus::Complete } else { RunStatus::Failed },
        seed: cfg.seed,
        error: result.as_ref().err().map(|e| e.to_string()),
        artifacts: rec.artifacts,
    };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, toml::to_string_pretty(&manifest).expect("manifest serializes")).map_err(|e| Error::io(&path, e))?;
    let mut out = result?;
    out.manifest = manifest;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::scene::save_scene;
    use crate::synth::{generate_scene, SceneKind, SceneParams};

    fn small_scene_dir(dir: &Path) -> PathBuf {
        let mut p = SceneParams::for_kind(SceneKind::ReliefPlane);
        p.plane_size = 30.0;
        p.width = 80;
        p.height = 60;
        p.focal = 140.0;
        p.views = 3;
        p.smoothing_iterations = 10;
        let scene = generate_scene(SceneKind::ReliefPlane, &p, 11).unwrap();
        save_scene(&scene, dir).unwrap();
        dir.join("project.toml")
    }

    fn quick(cfg: &mut ProjectConfig) {
        cfg.refinement.outer_iterations = 2;
    }

    #[test]
    fn smoke_run_writes_verified_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ProjectConfig::load(&small_scene_dir(dir.path())).unwrap();
        quick(&mut cfg);
        let out = run_pipeline(&cfg).unwrap();
        let manifest = Manifest::load(&cfg.paths.output).unwrap();
        assert_eq!(manifest, out.manifest);
        assert_eq!(manifest.status, RunStatus::Complete);
        manifest.verify(&cfg.paths.output).unwrap();
        let stages: std::collections::BTreeSet<&str> = manifest.artifacts.iter().map(|a| a.stage.as_str()).collect();
        for s in ["load", "preprocess", "calibrate", "linearize", "albedo", "refine", "eval"] {
            assert!(stages.contains(s), "{s}");
        }
        // 3 images, 3 sidecars and the views file
        assert_eq!(manifest.artifacts.iter().filter(|a| a.stage == "linearize").count(), 7);
        assert!(out.evaluation.distance_refined.is_some());
        assert_eq!(out.gamma.source, GammaSource::Config);
        let diag = fs::read_to_string(cfg.paths.output.join("diagnostics.csv")).unwrap();
        assert!(diag.starts_with("iteration,e_p,e_s,e_r,max_delta"));
        assert_eq!(diag.lines().count(), 1 + out.refinement.diagnostics.len());
    }

    #[test]
    fn tampered_artifact_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ProjectConfig::load(&small_scene_dir(dir.path())).unwrap();
        quick(&mut cfg);
        run_pipeline(&cfg).unwrap();
        fs::write(cfg.paths.output.join("albedo.txt"), "global 1\n").unwrap();
        assert!(Manifest::load(&cfg.paths.output).unwrap().verify(&cfg.paths.output).is_err());
    }

    #[test]
    fn rerun_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ProjectConfig::load(&small_scene_dir(dir.path())).unwrap();
        quick(&mut cfg);
        let a = run_pipeline(&cfg).unwrap();
        let first = fs::read(cfg.paths.output.join("refined.ply")).unwrap();
        let b = run_pipeline(&cfg).unwrap();
        assert_eq!(fs::read(cfg.paths.output.join("refined.ply")).unwrap(), first);
        assert_eq!(a.refinement.mesh.vertices(), b.refinement.mesh.vertices());
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn unknown_gamma_is_a_calibrate_stage_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ProjectConfig::load(&small_scene_dir(dir.path())).unwrap();
        cfg.light.gamma = None;
        // images without sidecars carry no gamma
        for entry in fs::read_dir(dir.path()).unwrap() {
            let p = entry.unwrap().path();
            if p.to_string_lossy().ends_with(".meta.toml") {
                fs::remove_file(p).unwrap();
            }
        }
        let err = run_pipeline(&cfg).err().unwrap();
        match &err {
            Error::Stage { stage, .. } => assert_eq!(*stage, "calibrate"),
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("calibrate gamma"), "{err}");
        let manifest = Manifest::load(&cfg.paths.output).unwrap();
        assert_eq!(manifest.status, RunStatus::Failed);
        assert!(manifest.error.as_deref().unwrap().contains("calibrate gamma"));
        // partial outputs are kept and listed
        assert!(manifest.artifacts.iter().any(|a| a.path == Path::new("input.ply")));
        manifest.verify(&cfg.paths.output).unwrap();
    }

    #[test]
    fn recorded_gamma_is_used_when_config_has_none() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = small_scene_dir(dir.path());
        let mut cfg = ProjectConfig::load(&cfg_path).unwrap();
        cfg.light.gamma = None;
        let views = load_project_views(&cfg).unwrap();
        let g = resolve_gamma(&cfg, &views).unwrap();
        assert_eq!(g.source, GammaSource::Recorded);
        assert_eq!(g.gamma, 0.8);
    }
}
