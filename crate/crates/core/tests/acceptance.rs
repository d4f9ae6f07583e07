//! Acceptance suite. Every check prints one `PASS`/`FAIL` line to stderr
//! (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nearlight::albedo::{estimate_global_albedo, estimate_grouped_albedo, estimate_vertex_albedo, AlbedoOptions, GroupingOptions};
use nearlight::calib::{build_sphere_samples, fit_falloff_exponent, fit_gamma_ransac, CalibrationSamples, FalloffSamples, RansacOptions};
use nearlight::camera::{
    compute_visibility_all, default_visibility_bias, rasterize_depth, vertex_visibility, CameraIntrinsics, CameraPose, View,
    VisibilityMap,
};
use nearlight::eval::{leave_one_out_eval, mesh_distance};
use nearlight::io::{run_pipeline, save_scene, ProjectConfig};
use nearlight::mesh::{grid_from_coords, TriangleMesh, Vec3};
use nearlight::refine::{collect_observations, DisplacementProblem, LeastSquaresProblem, RefinementConfig, RefinementResult, Refiner};
use nearlight::shading::{render_shading_image, LightModel, ShadingImage};
use nearlight::synth::{generate_scene, SceneKind, SceneParams, SyntheticScene};
use nearlight::albedo::AlbedoModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SCENE_SEED: u64 = 7;
/// Outer iterations for the round-trip runs; the library default of 10
/// stops before the bumps are fully restored.
const ROUND_TRIP_ITERATIONS: usize = 30;

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{name}: {detail}");
}

fn bumpy_scene() -> &'static SyntheticScene {
    static SCENE: OnceLock<SyntheticScene> = OnceLock::new();
    SCENE.get_or_init(|| {
        let p = SceneParams::for_kind(SceneKind::BumpySphere);
        generate_scene(SceneKind::BumpySphere, &p, SCENE_SEED).unwrap()
    })
}

fn round_trip_config() -> RefinementConfig {
    RefinementConfig {
        outer_iterations: ROUND_TRIP_ITERATIONS,
        ..RefinementConfig::default()
    }
}

fn refine_views(scene: &SyntheticScene, views: &[usize]) -> (RefinementResult, Duration) {
    let start = Instant::now();
    let linear = scene.linear_views().unwrap();
    let chosen: Vec<View> = views.iter().map(|&k| linear[k].clone()).collect();
    let result = Refiner::new(scene.degraded.clone(), chosen, scene.albedo.clone(), scene.light, round_trip_config())
        .unwrap()
        .run()
        .unwrap();
    (result, start.elapsed())
}

/// Twelve-view refinement of the degraded bumpy sphere, shared by the
/// round-trip and view-count checks.
fn twelve_view_run() -> &'static (RefinementResult, Duration) {
    static RUN: OnceLock<(RefinementResult, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let scene = bumpy_scene();
        refine_views(scene, &(0..scene.views.len()).collect::<Vec<_>>())
    })
}

fn sphere_gamma_samples(gamma: f64, seed: u64) -> CalibrationSamples {
    let mut p = SceneParams::for_kind(SceneKind::Sphere);
    p.gamma = gamma;
    p.noise_sigma = 0.01;
    p.views = 4;
    p.frequency = 24;
    p.width = 320;
    p.height = 240;
    p.focal = 290.0;
    let scene = generate_scene(SceneKind::Sphere, &p, seed).unwrap();
    let clean = build_sphere_samples(&scene.truth, &scene.views, &scene.light, p.albedo).unwrap();
    // replace 10% of the observations by uniform junk
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let observed = clean
        .observed
        .iter()
        .map(|&o| if rng.random_bool(0.1) { rng.random::<f64>() } else { o })
        .collect();
    CalibrationSamples::new(clean.rendered, observed).unwrap()
}

#[test]
fn gamma_recovery() {
    for (k, gamma) in [0.8, 0.87].into_iter().enumerate() {
        let start = Instant::now();
        let samples = sphere_gamma_samples(gamma, 100 + k as u64);
        let fit = fit_gamma_ransac(&samples, &RansacOptions { inlier_threshold: 0.05, ..RansacOptions::default() }).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let pass = (fit.gamma - gamma).abs() <= 0.02 && fit.inlier_ratio >= 0.75 && secs < 10.0;
        verdict(
            &format!("gamma recovery (gamma {gamma})"),
            pass,
            format!(
                "fitted {:.4} (|err| {:.4} <= 0.02), inlier ratio {:.3} >= 0.75 over {} samples, {secs:.1} s < 10 s",
                fit.gamma,
                (fit.gamma - gamma).abs(),
                fit.inlier_ratio,
                samples.len()
            ),
        );
    }
}

#[test]
fn inverse_square_falloff() {
    let start = Instant::now();
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut within = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let d: Vec<f64> = (0..10).map(|i| 500.0 + 2500.0 * i as f64 / 9.0).collect();
        let intensity = d.iter().map(|d| 0.9 * (500.0 / d).powi(2) * (1.0 + noise.sample(&mut rng))).collect();
        let p = fit_falloff_exponent(&FalloffSamples::new(d, intensity).unwrap()).unwrap().exponent;
        if (-2.1..=-1.9).contains(&p) {
            within += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "inverse-square falloff",
        within >= 95 && secs < 5.0,
        format!("{within}/100 trials with exponent in [-2.1, -1.9] (need 95), {secs:.2} s < 5 s"),
    );
}

/// A random height field of 15 x 14 = 210 vertices and three views.
fn jacobian_problem() -> (TriangleMesh, Vec<View>) {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let xs: Vec<f64> = (0..15).map(|i| (i as f64 - 7.0) * 4.0).collect();
    let ys: Vec<f64> = (0..14).map(|i| (i as f64 - 6.5) * 4.0).collect();
    let heights: Vec<f64> = (0..15 * 14).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mesh = grid_from_coords(&xs, &ys, |x, y| {
        let (i, j) = (((x / 4.0) + 7.0).round() as usize, ((y / 4.0) + 6.5).round() as usize);
        heights[j * 15 + i] + 0.5 * (0.2 * x).sin()
    });
    let k = CameraIntrinsics::new(300.0, 300.0, 80.0, 60.0, 160, 120).unwrap();
    let truth = AlbedoModel::Global(4.5e4);
    let views = [Vec3::new(0.0, 0.0, 300.0), Vec3::new(120.0, 30.0, 280.0), Vec3::new(-90.0, -80.0, 270.0)]
        .iter()
        .map(|eye| {
            let pose = CameraPose::look_at(eye, &Vec3::zeros(), &Vec3::y()).unwrap();
            let mut v = View::new(k, pose, Vec3::new(25.0, 0.0, 0.0), ShadingImage::constant(160, 120, 0.0)).unwrap();
            v.image = render_shading_image(&mesh, &v, &truth, &LightModel::default());
            v
        })
        .collect();
    (mesh, views)
}

#[test]
fn jacobian_matches_central_differences() {
    let start = Instant::now();
    let (mesh, views) = jacobian_problem();
    let vis = compute_visibility_all(&mesh, &views, default_visibility_bias(&mesh));
    // a different albedo than the renders leaves nonzero residuals
    let obs = collect_observations(
        &mesh,
        &views,
        &vis,
        &AlbedoModel::Global(4e4),
        &LightModel::default(),
        &RefinementConfig::default(),
        None,
    )
    .observations;
    let problem = DisplacementProblem::new(&mesh, &obs, 0.7, 0.2, f64::INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let delta: Vec<f64> = (0..mesh.vertex_count()).map(|_| rng.random_range(-0.3..0.3)).collect();
    let analytic = problem.evaluate(&delta).to_dense();
    let h = 1e-4;
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for j in 0..mesh.vertex_count() {
        let (mut plus, mut minus) = (delta.clone(), delta.clone());
        plus[j] += h;
        minus[j] -= h;
        let (rp, rm) = (problem.evaluate(&plus).residuals, problem.evaluate(&minus).residuals);
        for i in 0..rp.len() {
            let a = analytic[(i, j)];
            if a.abs() > 1e-8 {
                worst = worst.max(((rp[i] - rm[i]) / (2.0 * h) - a).abs() / a.abs());
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "jacobian vs central differences",
        worst < 1e-5 && secs < 30.0 && mesh.vertex_count() >= 200,
        format!(
            "{} vertices, {} views, {} rows, {checked} entries, max relative error {worst:.2e} < 1e-5, {secs:.1} s < 30 s",
            mesh.vertex_count(),
            views.len(),
            analytic.nrows()
        ),
    );
}

#[test]
fn round_trip_refinement() {
    let scene = bumpy_scene();
    let before = mesh_distance(&scene.degraded, &scene.truth).unwrap().mean;
    let (result, elapsed) = twelve_view_run();
    let after = mesh_distance(&result.mesh, &scene.truth).unwrap().mean;
    let reduction = 1.0 - after / before;
    let monotone = result.diagnostics.iter().all(|d| d.cost_history.windows(2).all(|w| w[1] <= w[0]));
    let secs = elapsed.as_secs_f64();
    verdict(
        "round-trip refinement",
        reduction >= 0.6 && monotone && secs < 300.0,
        format!(
            "{} vertices, 12 views, mean distance {before:.4} -> {after:.4} mm ({:.1}% reduction >= 60%), \
             cost non-increasing over accepted steps: {monotone}, {} outer iterations in {secs:.0} s < 300 s",
            scene.truth.vertex_count(),
            100.0 * reduction,
            result.diagnostics.len()
        ),
    );
}

#[test]
fn multi_view_beats_single_view() {
    let scene = bumpy_scene();
    let (many, t_many) = twelve_view_run();
    let (one, t_one) = refine_views(scene, &[0]);
    let e_many = mesh_distance(&many.mesh, &scene.truth).unwrap().mean;
    let e_one = mesh_distance(&one.mesh, &scene.truth).unwrap().mean;
    let secs = (*t_many + t_one).as_secs_f64();
    verdict(
        "multi-view beats single-view",
        e_many < e_one && secs < 600.0,
        format!("mean distance 12 views {e_many:.4} mm < 1 view {e_one:.4} mm, {secs:.0} s < 600 s combined"),
    );
}

#[test]
fn leave_one_out_rmse() {
    let scene = bumpy_scene();
    let start = Instant::now();
    let outcome = leave_one_out_eval(scene, &RefinementConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let folds = outcome.reports.len();
    let image_better = outcome.reports.iter().filter(|r| r.image_rmse_refined < r.image_rmse_input).count();
    let grad_better = outcome.reports.iter().filter(|r| r.gradient_rmse_refined < r.gradient_rmse_input).count();
    let worst = outcome
        .reports
        .iter()
        .map(|r| r.image_rmse_refined / r.image_rmse_input)
        .fold(0.0f64, f64::max);
    let pass = outcome.skipped.is_empty()
        && folds == scene.views.len()
        && image_better == folds
        && grad_better as f64 >= 0.9 * folds as f64
        && secs < 900.0;
    verdict(
        "leave-one-out RMSE",
        pass,
        format!(
            "image RMSE lower on {image_better}/{folds} folds (worst refined/input {worst:.3}), gradient RMSE lower on \
             {grad_better}/{folds} (need 90%), {} skipped, {secs:.0} s < 900 s",
            outcome.skipped.len()
        ),
    );
}

#[test]
fn albedo_pipeline() {
    let start = Instant::now();
    let p = SceneParams::for_kind(SceneKind::TwoMaterialPlane);
    let scene = generate_scene(SceneKind::TwoMaterialPlane, &p, 3).unwrap();
    assert_eq!(scene.views.len(), 5);
    assert_eq!(p.albedo_ratio, 2.0);
    let (lo, hi) = (p.albedo, p.albedo * p.albedo_ratio);
    let linear = scene.linear_views().unwrap();
    let mesh = &scene.truth;
    let vis = compute_visibility_all(mesh, &linear, default_visibility_bias(mesh));
    let opts = AlbedoOptions::default();
    let global = estimate_global_albedo(mesh, &linear, &vis, &scene.light, &opts).unwrap();
    let grouped = estimate_grouped_albedo(mesh, &linear, &vis, &scene.light, &opts, &GroupingOptions::default()).unwrap();
    let AlbedoModel::Grouped { labels, values } = &grouped.model else {
        panic!("grouped estimate returned {:?}", grouped.model);
    };
    // labels are arbitrary; match them to materials through the group values
    let (acc, value_err) = if values.len() == 2 {
        let flip = values[0] > values[1];
        let truth_of = |l: usize| if (l == 1) != flip { hi } else { lo };
        let correct = labels.iter().zip(&scene.materials).filter(|(l, m)| usize::from(truth_of(**l) == hi) == **m).count();
        let err = (0..2).map(|l| (values[l] - truth_of(l)).abs() / truth_of(l)).fold(0.0, f64::max);
        (correct as f64 / labels.len() as f64, err)
    } else {
        (0.0, f64::INFINITY)
    };
    let secs = start.elapsed().as_secs_f64();
    let pass = lo < global && global < hi && grouped.k == 2 && values.len() == 2 && acc >= 0.95 && value_err <= 0.05 && secs < 120.0;
    verdict(
        "albedo pipeline",
        pass,
        format!(
            "global {global:.4e} in ({lo:.1e}, {hi:.1e}), K = {} (PCA picked {}), label accuracy {:.2}% >= 95%, \
             group values {values:?} within {:.2}% <= 5%, {secs:.1} s < 120 s",
            values.len(),
            grouped.k,
            100.0 * acc,
            100.0 * value_err
        ),
    );
}

#[test]
fn global_albedo_is_mean_of_vertex_albedos() {
    // a gently curved patch seen by three cameras; the images come from a
    // wider copy of the surface so that every patch vertex, border included,
    // samples lit pixels in every view
    let surface = |x: f64, y: f64| 0.3 * (0.2 * x).sin() * (0.15 * y).cos();
    let coords = |n: i32| -> Vec<f64> { (-n..=n).map(|i| i as f64 * 2.0).collect() };
    let mesh = grid_from_coords(&coords(10), &coords(10), surface);
    let backdrop = grid_from_coords(&coords(16), &coords(16), surface);
    let k = CameraIntrinsics::new(400.0, 400.0, 100.0, 100.0, 200, 200).unwrap();
    let truth = AlbedoModel::Global(5e4);
    let light = LightModel::new(1.0, 0.0, 1.0).unwrap();
    let views: Vec<View> = [Vec3::new(0.0, 0.0, 300.0), Vec3::new(40.0, 0.0, 300.0), Vec3::new(0.0, -40.0, 300.0)]
        .iter()
        .map(|eye| {
            let pose = CameraPose::look_at(eye, &Vec3::zeros(), &Vec3::y()).unwrap();
            let mut v = View::new(k, pose, Vec3::new(20.0, 10.0, 0.0), ShadingImage::constant(200, 200, 0.0)).unwrap();
            v.image = render_shading_image(&backdrop, &v, &truth, &light);
            v.image = nearlight::shading::linearize(&v.image, 1.0).unwrap();
            v
        })
        .collect();
    // occlusion is decided against the wider surface that made the images
    let bias = default_visibility_bias(&mesh);
    let buffers: Vec<_> = views.iter().map(|v| rasterize_depth(&backdrop, v)).collect();
    let visible = views.iter().zip(&buffers).map(|(v, b)| vertex_visibility(&mesh, v, b, bias)).collect();
    let vis = VisibilityMap { visible, buffers };
    let opts = AlbedoOptions::default();
    let per_vertex = estimate_vertex_albedo(&mesh, &views, &vis, &light, &opts).unwrap();
    let equal_counts = per_vertex.counts.iter().all(|&c| c == views.len());
    assert!(equal_counts, "precondition: every vertex observed in every view, counts {:?}", per_vertex.counts);
    let global = estimate_global_albedo(&mesh, &views, &vis, &light, &opts).unwrap();
    let mean = per_vertex.values.iter().sum::<f64>() / per_vertex.values.len() as f64;
    let rel = (global - mean).abs() / mean;
    verdict(
        "global albedo equals mean vertex albedo",
        equal_counts && rel <= 1e-12,
        format!("{} vertices x {} observations each, global {global:.15e} vs mean {mean:.15e}, relative gap {rel:.1e} <= 1e-12", mesh.vertex_count(), views.len()),
    );
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let scene = bumpy_scene();
    let linear = scene.linear_views().unwrap();
    let result = Refiner::new(scene.truth.clone(), linear, scene.albedo.clone(), scene.light, RefinementConfig::default())
        .unwrap()
        .run()
        .unwrap();
    let moved = scene
        .truth
        .vertices()
        .iter()
        .zip(result.mesh.vertices())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0f64, f64::max);
    verdict(
        "ground truth is a fixed point",
        moved <= 1e-6,
        format!("max vertex movement {moved:.2e} mm <= 1e-6 mm after {} outer iterations", result.diagnostics.len()),
    );
}

#[test]
fn identical_runs_are_bit_identical() {
    let scene = generate_scene(SceneKind::TwoMaterialPlane, &SceneParams::for_kind(SceneKind::TwoMaterialPlane), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene(&scene, dir.path()).unwrap();
    let cfg = ProjectConfig::load(&dir.path().join("project.toml")).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let mut c = cfg.clone();
        c.paths.output = dir.path().join(run);
        run_pipeline(&c).unwrap();
        outputs.push(std::fs::read(c.paths.output.join("refined.ply")).unwrap());
    }
    let same = outputs[0] == outputs[1];
    verdict(
        "identical runs are bit-identical",
        same,
        format!("two pipeline runs (grouped albedo, seed {}) wrote {} and {} byte meshes, identical: {same}", cfg.seed, outputs[0].len(), outputs[1].len()),
    );
}

