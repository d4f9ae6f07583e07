//! Synthetic scenes on disk.
//!
//! A scene directory holds `scene.toml` (kind, seed, parameters, light),
//! `truth.ply`, `degraded.ply`, `views.txt` with one PFM image per view,
//! `albedo.txt`, `materials.txt` and a ready-to-run `project.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::albedo::{load_albedo, save_albedo};
use super::config::{AlbedoMode, PathsConfig, ProjectConfig};
use super::image::ImageFormat;
use super::mesh::{load_mesh, save_mesh};
use super::views::{load_views, save_views};
use crate::error::{Error, Result};
use crate::shading::LightModel;
use crate::synth::{SceneKind, SceneParams, SyntheticScene};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneLight {
    brightness: f64,
    ambient: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    kind: SceneKind,
    seed: u64,
    light: SceneLight,
    params: SceneParams,
}

/// Project configuration that refines the degraded mesh of a saved scene.
pub fn scene_project(scene: &SyntheticScene) -> ProjectConfig {
    let mut cfg = ProjectConfig {
        seed: scene.seed,
        paths: PathsConfig {
            mesh: Some("degraded.ply".into()),
            views: "views.txt".into(),
            truth: Some("truth.ply".into()),
            output: "out".into(),
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.light.brightness = scene.light.brightness;
    cfg.light.ambient = scene.light.ambient;
    cfg.light.gamma = Some(scene.light.gamma);
    if scene.kind == SceneKind::TwoMaterialPlane {
        cfg.albedo.mode = AlbedoMode::Grouped;
    }
    cfg
}

/// Writes every scene file into `dir` (created if needed) and returns the
/// paths written.
pub fn save_scene(scene: &SyntheticScene, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    let meta = SceneFile {
        kind: scene.kind,
        seed: scene.seed,
        light: SceneLight {
            brightness: scene.light.brightness,
            ambient: scene.light.ambient,
            gamma: scene.light.gamma,
        },
        params: scene.params.clone(),
    };
    put("scene.toml", toml::to_string_pretty(&meta).expect("scene serializes"))?;
    let mut labels = String::from("# material label per vertex of truth.ply\n");
    for m in &scene.materials {
        labels.push_str(&format!("{m}\n"));
    }
    put("materials.txt", labels)?;
    put("project.toml", scene_project(scene).to_toml())?;
    for (name, mesh) in [("truth.ply", &scene.truth), ("degraded.ply", &scene.degraded)] {
        save_mesh(&dir.join(name), mesh)?;
        written.push(dir.join(name));
    }
    save_albedo(&dir.join("albedo.txt"), &scene.albedo)?;
    written.push(dir.join("albedo.txt"));
    written.extend(save_views(&dir.join("views.txt"), &scene.views, ImageFormat::Pfm)?);
    written.push(dir.join("views.txt"));
    Ok(written)
}

fn load_materials(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse()
                .map_err(|_| Error::parse(path, k + 1, format!("material label is not an integer: '{line}'")))?,
        );
    }
    Ok(out)
}

/// Reads a directory written by [`save_scene`]. Images come back at the
/// stored (single) precision.
pub fn load_scene(dir: &Path) -> Result<SyntheticScene> {
    let meta_path = dir.join("scene.toml");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SceneFile = toml::from_str(&text).map_err(|e| Error::format(&meta_path, e.message().to_string()))?;
    let light = LightModel::new(meta.light.brightness, meta.light.ambient, meta.light.gamma)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let truth = load_mesh(&dir.join("truth.ply"))?;
    let degraded = load_mesh(&dir.join("degraded.ply"))?;
    let materials_path = dir.join("materials.txt");
    let materials = load_materials(&materials_path)?;
    if materials.len() != truth.vertex_count() {
        return Err(Error::format(
            &materials_path,
            format!("{} labels for {} vertices", materials.len(), truth.vertex_count()),
        ));
    }
    Ok(SyntheticScene {
        kind: meta.kind,
        params: meta.params,
        seed: meta.seed,
        truth,
        degraded,
        views: load_views(&dir.join("views.txt"))?,
        light,
        albedo: load_albedo(&dir.join("albedo.txt"))?,
        materials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_scene;

    #[test]
    fn scene_roundtrip() {
        let mut params = SceneParams::for_kind(SceneKind::TwoMaterialPlane);
        params.width = 64;
        params.height = 48;
        params.focal = 60.0;
        params.plane_size = 40.0;
        let scene = generate_scene(SceneKind::TwoMaterialPlane, &params, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = save_scene(&scene, dir.path()).unwrap();
        assert!(written.iter().all(|p| p.exists()));
        let back = load_scene(dir.path()).unwrap();
        assert_eq!(back.kind, scene.kind);
        assert_eq!(back.params, scene.params);
        assert_eq!(back.seed, 4);
        assert_eq!(back.light, scene.light);
        assert_eq!(back.albedo, scene.albedo);
        assert_eq!(back.materials, scene.materials);
        assert_eq!(back.truth.faces(), scene.truth.faces());
        assert_eq!(back.degraded.vertex_count(), scene.degraded.vertex_count());
        assert_eq!(back.views.len(), scene.views.len());
        for (a, b) in scene.views.iter().zip(&back.views) {
            assert_eq!(b.image.gamma(), a.image.gamma());
            assert!(a.image.data().iter().zip(b.image.data()).all(|(x, y)| (x - y).abs() < 1e-6));
        }
        let cfg = ProjectConfig::load(&dir.path().join("project.toml")).unwrap();
        assert_eq!(cfg.albedo.mode, AlbedoMode::Grouped);
        assert_eq!(cfg.light.gamma, Some(scene.light.gamma));
        assert_eq!(cfg.paths.truth.as_deref(), Some(dir.path().join("truth.ply").as_path()));
    }
}
