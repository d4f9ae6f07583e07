//! File formats and the end-to-end pipeline.

mod albedo;
mod config;
mod image;
mod mesh;
mod pipeline;
mod samples;
mod scene;
mod views;

pub use albedo::{format_albedo, load_albedo, save_albedo};
pub use config::{
    AlbedoConfig, AlbedoMode, CalibrationConfig, EvalConfig, LightConfig, PathsConfig, PreprocessConfig, ProjectConfig,
};
pub use image::{
    load_depth_map, load_shading_image, read_pfm, read_png16, save_shading_image, sidecar_path, write_pfm, write_png16,
    ImageFormat, RawImage,
};
pub use mesh::{load_mesh, read_obj, read_ply, save_mesh, write_obj, write_ply, PlyEncoding};
pub use views::{format_record, load_views, parse_views_file, save_views, ViewRecord};
pub use pipeline::{
    albedo_stage, calibrate_gamma, distance_to_truth, evaluate, format_diagnostics_csv, format_report_csv, linearize_with,
    load_project_views, prepare_mesh, resolve_gamma, run_pipeline, sha256_file, Artifact, Evaluation, GammaResolution,
    GammaSource, Manifest, PipelineOutput, RunStatus, ViewFit, MANIFEST_NAME,
};
pub use scene::{load_scene, save_scene, scene_project};
pub use samples::load_falloff_samples;
