use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nearlight::albedo::AlbedoModel;
use nearlight::calib::fit_falloff_exponent;
use nearlight::camera::View;
use nearlight::eval::leave_one_out_eval;
use nearlight::io::{
    albedo_stage, calibrate_gamma, distance_to_truth, format_diagnostics_csv, format_report_csv, linearize_with,
    load_falloff_samples, load_mesh, load_project_views, load_scene, prepare_mesh, resolve_gamma, run_pipeline,
    save_albedo, save_mesh, save_scene, save_views, AlbedoMode, CalibrationConfig, ImageFormat, ProjectConfig,
};
use nearlight::refine::Refiner;
use nearlight::shading::{render_view, LightModel};
use nearlight::synth::{generate_scene, SceneKind, SceneParams};
use nearlight::{Error, Result};

#[derive(Parser)]
#[command(name = "nearlight", version, about = "Mesh refinement from near-light IR shading images")]
struct Cli {
    /// Seed randomized steps from the clock instead of the configured seed.
    #[arg(long, global = true)]
    random_seed: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Camera response and falloff calibration.
    #[command(subcommand)]
    Calibrate(Calibrate),
    /// Estimate the albedo model and write it to a file.
    Albedo {
        #[command(flatten)]
        project: ProjectArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine a mesh against shading images.
    Refine {
        #[command(flatten)]
        project: ProjectArgs,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration CSV: iteration, E_p, E_s, E_r, max|delta|, ...
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Render shading images of a mesh for every view of a views file.
    Render {
        #[command(flatten)]
        project: ProjectArgs,
        /// Directory for the images and their views file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Pfm)]
        format: Format,
    },
    /// Generate a synthetic scene directory.
    Synth {
        #[arg(long)]
        kind: SceneKind,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML file of scene parameters; flags override it.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluation.
    #[command(subcommand)]
    Eval(Eval),
    /// Full pipeline with artifacts and a manifest in the output directory.
    Run {
        #[command(flatten)]
        project: ProjectArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Calibrate {
    /// Fit gamma from views of a sphere of known albedo.
    Gamma {
        #[arg(long)]
        sphere: PathBuf,
        #[arg(long)]
        views: PathBuf,
        /// `c·rho` of the sphere.
        #[arg(long)]
        albedo: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long, default_value_t = 1.0)]
        brightness: f64,
        #[arg(long, default_value_t = 0.0)]
        ambient: f64,
        /// Project config whose `light.gamma` receives the fit.
        #[arg(long)]
        write_config: Option<PathBuf>,
    },
    /// Fit the distance falloff exponent from `distance,intensity` rows.
    Falloff {
        #[arg(long)]
        samples: PathBuf,
    },
}

#[derive(Subcommand)]
enum Eval {
    /// Leave-one-out image RMSE on a synthetic scene directory.
    Loo {
        #[arg(long)]
        scene: PathBuf,
        /// Project config whose [refinement] section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        /// CSV report; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean and max distance from a mesh to a reference surface.
    Dist {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Register with point-to-plane ICP first.
        #[arg(long)]
        icp: bool,
        #[arg(long, default_value_t = 50)]
        icp_iterations: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Pfm,
    Png,
}

/// A project config file and flags that override it.
#[derive(Args)]
struct ProjectArgs {
    /// Project config (TOML); the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input mesh (.ply or .obj).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Views file.
    #[arg(long)]
    views: Option<PathBuf>,
    /// Albedo file to use instead of estimating one.
    #[arg(long)]
    albedo: Option<PathBuf>,
    /// Global `c·rho` to use instead of estimating one.
    #[arg(long)]
    albedo_value: Option<f64>,
    /// Albedo estimation mode: global or grouped.
    #[arg(long)]
    mode: Option<AlbedoMode>,
    /// Camera response exponent of the images.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    brightness: Option<f64>,
    #[arg(long)]
    ambient: Option<f64>,
    /// Ground-truth mesh for distance evaluation.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Outer refinement iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Remesh the input to about this many vertices.
    #[arg(long)]
    target_vertices: Option<usize>,
}

fn clock_seed() -> u64 {
    let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let seed = t.as_secs() ^ u64::from(t.subsec_nanos()).rotate_left(32);
    eprintln!("random seed: {seed}");
    seed
}

impl ProjectArgs {
    fn build(&self, random_seed: bool, output: Option<&Path>) -> Result<ProjectConfig> {
        let mut cfg = match &self.config {
            Some(path) => ProjectConfig::read(path)?,
            None => ProjectConfig::default(),
        };
        if let Some(m) = &self.mesh {
            cfg.paths.mesh = Some(m.clone());
            cfg.paths.depth = None;
        }
        if let Some(v) = &self.views {
            cfg.paths.views = v.clone();
        }
        if let Some(a) = &self.albedo {
            cfg.paths.albedo = Some(a.clone());
        }
        if let Some(t) = &self.truth {
            cfg.paths.truth = Some(t.clone());
        }
        if let Some(o) = output {
            cfg.paths.output = o.to_path_buf();
        }
        if cfg.paths.output.as_os_str().is_empty() {
            cfg.paths.output = PathBuf::from("nearlight-out");
        }
        let l = &mut cfg.light;
        l.albedo = self.albedo_value.or(l.albedo);
        l.gamma = self.gamma.or(l.gamma);
        l.brightness = self.brightness.unwrap_or(l.brightness);
        l.ambient = self.ambient.unwrap_or(l.ambient);
        cfg.albedo.mode = self.mode.unwrap_or(cfg.albedo.mode);
        let r = &mut cfg.refinement;
        r.lambda1 = self.lambda1.unwrap_or(r.lambda1);
        r.lambda2 = self.lambda2.unwrap_or(r.lambda2);
        r.outer_iterations = self.iters.unwrap_or(r.outer_iterations);
        if self.target_vertices.is_some() {
            cfg.preprocess.target_vertex_count = self.target_vertices;
        }
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        if random_seed {
            cfg.seed = clock_seed();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Prepared {
    cfg: ProjectConfig,
    mesh: nearlight::mesh::TriangleMesh,
    linear: Vec<View>,
    light: LightModel,
}

fn prepare(project: &ProjectArgs, random_seed: bool) -> Result<Prepared> {
    let cfg = project.build(random_seed, None)?;
    let views = load_project_views(&cfg)?;
    let mesh = prepare_mesh(&cfg, &views)?;
    let gamma = resolve_gamma(&cfg, &views)?;
    let light = LightModel::new(cfg.light.brightness, cfg.light.ambient, gamma.gamma)?;
    let linear = linearize_with(&views, gamma.gamma)?;
    Ok(Prepared { cfg, mesh, linear, light })
}

fn describe(model: &AlbedoModel) -> String {
    match model {
        AlbedoModel::Global(v) => format!("global albedo {v:.6e}"),
        AlbedoModel::Grouped { values, .. } => {
            let list: Vec<String> = values.iter().map(|v| format!("{v:.6e}")).collect();
            format!("{} groups: {}", values.len(), list.join(", "))
        }
        AlbedoModel::PerVertex(v) => format!("{} per-vertex values", v.len()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Sets `light.gamma` in a project config, keeping everything else.
fn store_gamma(path: &Path, gamma: f64) -> Result<()> {
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?
    } else {
        String::new()
    };
    let mut doc: toml::Table = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let light = doc
        .entry("light")
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: "light is not a table".into(),
        })?;
    light.insert("gamma".into(), toml::Value::Float(gamma));
    write_text(path, &toml::to_string_pretty(&doc).expect("table serializes"))
}

fn run(cli: Cli) -> Result<()> {
    let random = cli.random_seed;
    match cli.command {
        Command::Calibrate(Calibrate::Gamma {
            sphere,
            views,
            albedo,
            seed,
            samples,
            iterations,
            threshold,
            brightness,
            ambient,
            write_config,
        }) => {
            let cal = CalibrationConfig {
                sphere,
                views,
                albedo,
                n_samples: samples,
                n_iterations: iterations,
                inlier_threshold: threshold,
            };
            let seed = if random { clock_seed() } else { seed };
            let fit = calibrate_gamma(&cal, brightness, ambient, seed)?;
            println!("gamma {:.6}", fit.gamma);
            println!("inlier_ratio {:.4} ({} inliers)", fit.inlier_ratio, fit.inliers);
            println!("rms {:.6}", fit.rms);
            if let Some(path) = write_config {
                store_gamma(&path, fit.gamma)?;
                println!("wrote light.gamma to {}", path.display());
            }
        }
        Command::Calibrate(Calibrate::Falloff { samples }) => {
            let fit = fit_falloff_exponent(&load_falloff_samples(&samples)?)?;
            println!("exponent {:.6}", fit.exponent);
            println!("scale {:.6e}", fit.scale);
            println!("samples {}", fit.used);
        }
        Command::Albedo { project, out } => {
            let p = prepare(&project, random)?;
            let model = albedo_stage(&p.cfg, &p.mesh, &p.linear, &p.light)?;
            save_albedo(&out, &model)?;
            println!("{}", describe(&model));
        }
        Command::Refine {
            project,
            out,
            diagnostics,
        } => {
            let p = prepare(&project, random)?;
            let albedo = albedo_stage(&p.cfg, &p.mesh, &p.linear, &p.light)?;
            let result = Refiner::new(p.mesh, p.linear, albedo, p.light, p.cfg.refinement.clone())?.run()?;
            save_mesh(&out, &result.mesh)?;
            if let Some(path) = diagnostics {
                write_text(&path, &format_diagnostics_csv(&result.diagnostics))?;
            }
            let last = result.diagnostics.last().map_or(0.0, |d| d.max_delta);
            println!(
                "{} outer iterations, {}, last max|delta| {last:.3e} mm",
                result.diagnostics.len(),
                if result.converged { "converged" } else { "iteration limit" }
            );
        }
        Command::Render { project, out, format } => {
            let cfg = project.build(random, None)?;
            let views = load_project_views(&cfg)?;
            let mesh = prepare_mesh(&cfg, &views)?;
            let albedo = match (&cfg.paths.albedo, cfg.light.albedo) {
                (Some(path), _) => nearlight::io::load_albedo(path)?,
                (None, Some(v)) => AlbedoModel::Global(v),
                (None, None) => return Err(Error::InvalidParameter("render needs --albedo or --albedo-value".into())),
            };
            let light = LightModel::new(cfg.light.brightness, cfg.light.ambient, cfg.light.gamma.unwrap_or(1.0))?;
            let rendered: Vec<View> = views
                .iter()
                .map(|v| View {
                    image: render_view(&mesh, v, &albedo, &light).image,
                    ..v.clone()
                })
                .collect();
            fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let format = match format {
                Format::Pfm => ImageFormat::Pfm,
                Format::Png => ImageFormat::Png16,
            };
            let written = save_views(&out.join("views.txt"), &rendered, format)?;
            println!("rendered {} views into {}", written.len(), out.display());
        }
        Command::Synth {
            kind,
            views,
            seed,
            params,
            width,
            height,
            noise,
            out,
        } => {
            let mut p = match params {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    toml::from_str(&text).map_err(|e| Error::Format {
                        path,
                        message: e.to_string(),
                    })?
                }
                None => SceneParams::for_kind(kind),
            };
            p.views = views.unwrap_or(p.views);
            p.width = width.unwrap_or(p.width);
            p.height = height.unwrap_or(p.height);
            p.noise_sigma = noise.unwrap_or(p.noise_sigma);
            let seed = if random { clock_seed() } else { seed };
            let scene = generate_scene(kind, &p, seed)?;
            save_scene(&scene, &out)?;
            println!(
                "{} scene: {} vertices, {} views in {}",
                kind,
                scene.truth.vertex_count(),
                scene.views.len(),
                out.display()
            );
        }
        Command::Eval(Eval::Loo {
            scene,
            config,
            iters,
            lambda1,
            lambda2,
            out,
        }) => {
            let scene = load_scene(&scene)?;
            let mut refinement = match config {
                Some(path) => ProjectConfig::read(&path)?.refinement,
                None => Default::default(),
            };
            refinement.outer_iterations = iters.unwrap_or(refinement.outer_iterations);
            refinement.lambda1 = lambda1.unwrap_or(refinement.lambda1);
            refinement.lambda2 = lambda2.unwrap_or(refinement.lambda2);
            refinement.validate()?;
            let outcome = leave_one_out_eval(&scene, &refinement)?;
            let csv = format_report_csv(&outcome.reports);
            match out {
                Some(path) => write_text(&path, &csv)?,
                None => print!("{csv}"),
            }
            for (view, reason) in &outcome.skipped {
                eprintln!("view {view} skipped: {reason}");
            }
            let improved = outcome.reports.iter().filter(|r| r.image_rmse_refined < r.image_rmse_input).count();
            eprintln!("image RMSE lower on {improved} of {} folds", outcome.reports.len());
            if outcome.reports.is_empty() {
                return Err(Error::NoObservations("every leave-one-out fold failed".into()));
            }
        }
        Command::Eval(Eval::Dist {
            mesh,
            truth,
            icp,
            icp_iterations,
        }) => {
            let d = distance_to_truth(&load_mesh(&mesh)?, &load_mesh(&truth)?, icp.then_some(icp_iterations))?;
            println!("mean {:.6} mm", d.mean);
            println!("max {:.6} mm", d.max);
        }
        Command::Run { project, output } => {
            let cfg = project.build(random, output.as_deref())?;
            let out = run_pipeline(&cfg)?;
            let r = &out.refinement;
            println!(
                "gamma {:.4} ({:?}), {}, {} outer iterations{}",
                out.gamma.gamma,
                out.gamma.source,
                describe(&out.albedo),
                r.diagnostics.len(),
                if r.converged { ", converged" } else { "" }
            );
            if let (Some(a), Some(b)) = (out.evaluation.distance_input, out.evaluation.distance_refined) {
                println!("mean distance to truth {:.4} mm -> {:.4} mm", a.mean, b.mean);
            }
            println!("{} artifacts in {}", out.manifest.artifacts.len(), cfg.paths.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
