//! TOML project configuration for the full pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::albedo::{AlbedoOptions, GroupingOptions};
use crate::calib::RansacOptions;
use crate::error::{Error, Result};
use crate::mesh::DepthKind;
use crate::refine::RefinementConfig;
use crate::shading::LightModel;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Input mesh (`.ply` / `.obj`). Either this or `depth` is required.
    pub mesh: Option<PathBuf>,
    /// Depth map (`.png` / `.pfm`) meshed in the frame of `preprocess.depth_view`.
    pub depth: Option<PathBuf>,
    pub views: PathBuf,
    /// Precomputed albedo file; estimated from the views when absent.
    pub albedo: Option<PathBuf>,
    /// Ground-truth mesh for distance evaluation.
    pub truth: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightConfig {
    pub brightness: f64,
    pub ambient: f64,
    /// Camera response; falls back to calibration, then to the gamma
    /// recorded with the images.
    pub gamma: Option<f64>,
    /// Fixed global `cρ`; skips albedo estimation.
    pub albedo: Option<f64>,
    /// Replaces the light offset of every view.
    pub light_offset: Option<[f64; 3]>,
}

impl Default for LightConfig {
    fn default() -> Self {
        LightConfig {
            brightness: 1.0,
            ambient: 0.0,
            gamma: None,
            albedo: None,
            light_offset: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlbedoMode {
    #[default]
    Global,
    Grouped,
}

impl std::str::FromStr for AlbedoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(AlbedoMode::Global),
            "grouped" => Ok(AlbedoMode::Grouped),
            _ => Err(Error::InvalidParameter(format!("albedo mode must be global or grouped, got '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlbedoConfig {
    pub mode: AlbedoMode,
    pub low: f64,
    pub high: f64,
    pub nl_floor: f64,
    pub variance_target: f64,
    pub kappa: Option<f64>,
    pub pairwise_scale: f64,
}

impl Default for AlbedoConfig {
    fn default() -> Self {
        let o = AlbedoOptions::default();
        let g = GroupingOptions::default();
        AlbedoConfig {
            mode: AlbedoMode::Global,
            low: o.low,
            high: o.high,
            nl_floor: o.nl_floor,
            variance_target: g.variance_target,
            kappa: g.kappa,
            pairwise_scale: g.pairwise_scale,
        }
    }
}

impl AlbedoConfig {
    pub fn options(&self) -> AlbedoOptions {
        AlbedoOptions {
            low: self.low,
            high: self.high,
            nl_floor: self.nl_floor,
        }
    }

    pub fn grouping(&self, seed: u64) -> GroupingOptions {
        GroupingOptions {
            variance_target: self.variance_target,
            kappa: self.kappa,
            pairwise_scale: self.pairwise_scale,
            seed,
        }
    }
}

/// Gamma calibration from views of a sphere of known albedo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub sphere: PathBuf,
    pub views: PathBuf,
    pub albedo: f64,
    #[serde(default = "default_n")]
    pub n_samples: usize,
    #[serde(default = "default_n")]
    pub n_iterations: usize,
    #[serde(default = "default_threshold")]
    pub inlier_threshold: f64,
}

fn default_n() -> usize {
    1000
}

fn default_threshold() -> f64 {
    0.05
}

impl CalibrationConfig {
    pub fn ransac(&self, seed: u64) -> RansacOptions {
        RansacOptions {
            n_samples: self.n_samples,
            n_iterations: self.n_iterations,
            inlier_threshold: self.inlier_threshold,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Isotropic remeshing target; the mesh is used as is when unset.
    pub target_vertex_count: Option<usize>,
    /// View whose camera captured `paths.depth`.
    pub depth_view: usize,
    pub depth_kind: DepthKind,
    /// Millimetres per stored unit of a PNG depth map.
    pub depth_scale: f64,
    pub spatial_sigma: f64,
    pub range_sigma: f64,
    pub depth_sigma: f64,
    pub max_discontinuity: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_vertex_count: None,
            depth_view: 0,
            depth_kind: DepthKind::Planar,
            depth_scale: 1.0,
            spatial_sigma: 2.0,
            range_sigma: 0.05,
            depth_sigma: 20.0,
            max_discontinuity: 50.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Compare renders of the input and refined meshes with every view.
    pub render: bool,
    /// Register the meshes to `paths.truth` before measuring distances.
    pub icp: bool,
    pub icp_iterations: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            render: true,
            icp: false,
            icp_iterations: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    /// Seed for every randomized step.
    pub seed: u64,
    pub paths: PathsConfig,
    pub light: LightConfig,
    pub albedo: AlbedoConfig,
    pub calibration: Option<CalibrationConfig>,
    pub preprocess: PreprocessConfig,
    pub refinement: RefinementConfig,
    pub eval: EvalConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ProjectConfig {
    /// Parses the file, resolves paths against its directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::read(path)?;
        cfg.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(cfg)
    }

    /// [`ProjectConfig::load`] without validation, for callers that apply
    /// overrides first.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ProjectConfig = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(path, line, e.message())
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for x in [&mut p.mesh, &mut p.depth, &mut p.albedo, &mut p.truth].into_iter().flatten() {
            resolve(base, x);
        }
        resolve(base, &mut p.views);
        resolve(base, &mut p.output);
        if let Some(c) = &mut self.calibration {
            resolve(base, &mut c.sphere);
            resolve(base, &mut c.views);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that inputs exist and numbers are in range.
    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        match (&p.mesh, &p.depth) {
            (None, None) => return Err(Error::InvalidParameter("paths.mesh or paths.depth is required".into())),
            (Some(_), Some(_)) => return Err(Error::InvalidParameter("give only one of paths.mesh and paths.depth".into())),
            _ => {}
        }
        if p.output.as_os_str().is_empty() {
            return Err(Error::InvalidParameter("paths.output is required".into()));
        }
        let mut inputs: Vec<(&str, &PathBuf)> = vec![("views", &p.views)];
        for (name, opt) in [("mesh", &p.mesh), ("depth", &p.depth), ("albedo", &p.albedo), ("truth", &p.truth)] {
            if let Some(x) = opt {
                inputs.push((name, x));
            }
        }
        if let Some(c) = &self.calibration {
            inputs.push(("calibration.sphere", &c.sphere));
            inputs.push(("calibration.views", &c.views));
        }
        for (name, path) in inputs {
            if !path.exists() {
                return Err(Error::InvalidParameter(format!("{name} file {} does not exist", path.display())));
            }
        }
        let l = &self.light;
        LightModel::new(l.brightness, l.ambient, l.gamma.unwrap_or(1.0))?;
        if let Some(a) = l.albedo {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidParameter(format!("light.albedo must be positive ({a})")));
            }
        }
        let a = &self.albedo;
        if !(0.0 <= a.low && a.low < a.high && a.high <= 1.0) {
            return Err(Error::InvalidParameter("albedo thresholds need 0 <= low < high <= 1".into()));
        }
        if !(a.variance_target > 0.0 && a.variance_target <= 1.0) {
            return Err(Error::InvalidParameter("albedo.variance_target must lie in (0, 1]".into()));
        }
        if !(a.pairwise_scale >= 0.0) {
            return Err(Error::InvalidParameter("albedo.pairwise_scale must be non-negative".into()));
        }
        let pp = &self.preprocess;
        if pp.target_vertex_count == Some(0) {
            return Err(Error::InvalidParameter("preprocess.target_vertex_count must be positive".into()));
        }
        for (name, v) in [
            ("depth_scale", pp.depth_scale),
            ("spatial_sigma", pp.spatial_sigma),
            ("range_sigma", pp.range_sigma),
            ("depth_sigma", pp.depth_sigma),
            ("max_discontinuity", pp.max_discontinuity),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("preprocess.{name} must be positive ({v})")));
            }
        }
        if let Some(c) = &self.calibration {
            if !(c.albedo > 0.0) {
                return Err(Error::InvalidParameter("calibration.albedo must be positive".into()));
            }
        }
        self.refinement.validate()
    }
}
