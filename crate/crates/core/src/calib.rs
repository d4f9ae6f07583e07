//! Radiometric calibration: camera gamma from a known Lambertian sphere,
//! and the distance falloff exponent from flat-wall captures.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::albedo::AlbedoModel;
use crate::camera::View;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::par;
use crate::shading::{render_view, LightModel, ShadingImage};

/// Paired (rendered, observed) intensities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationSamples {
    pub rendered: Vec<f64>,
    pub observed: Vec<f64>,
}

impl CalibrationSamples {
    pub fn new(rendered: Vec<f64>, observed: Vec<f64>) -> Result<Self> {
        if rendered.len() != observed.len() {
            return Err(Error::InvalidParameter(format!(
                "{} rendered vs {} observed intensities",
                rendered.len(),
                observed.len()
            )));
        }
        let ok = |v: &f64| v.is_finite() && (0.0..=1.0).contains(v);
        if !rendered.iter().all(ok) || !observed.iter().all(ok) {
            return Err(Error::InvalidParameter("calibration intensities must lie in [0, 1]".into()));
        }
        Ok(CalibrationSamples { rendered, observed })
    }

    pub fn len(&self) -> usize {
        self.rendered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rendered.is_empty()
    }
}

/// Observed intensities above this are treated as saturated.
pub const SATURATION_LEVEL: f64 = 0.98;

/// Pairs every covered, lit, unsaturated pixel of each view with the
/// linear intensity predicted from the known sphere and albedo.
pub fn build_sphere_samples(mesh: &TriangleMesh, views: &[View], light: &LightModel, albedo: f64) -> Result<CalibrationSamples> {
    let model = AlbedoModel::Global(albedo);
    model.validate(mesh.vertex_count())?;
    let linear = light.linear();
    let per_view = par::map_slice(views, |view| {
        let r = render_view(mesh, view, &model, &linear);
        let mut pairs = Vec::new();
        for i in 0..r.covered.len() {
            let ren = r.image.data()[i];
            let obs = view.image.data()[i];
            if !r.covered[i] || r.saturated[i] || ren <= 0.0 || obs > SATURATION_LEVEL {
                continue;
            }
            pairs.push((ren, obs));
        }
        pairs
    });
    let (rendered, observed): (Vec<f64>, Vec<f64>) = per_view.into_iter().flatten().unzip();
    if rendered.is_empty() {
        return Err(Error::NoObservations("the calibration sphere covers no usable pixel".into()));
    }
    CalibrationSamples::new(rendered, observed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaFit {
    pub gamma: f64,
    pub inlier_ratio: f64,
    pub inliers: usize,
    /// Root mean square of `I_obs - I_ren^gamma` over the inliers.
    pub rms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacOptions {
    /// Points scored per hypothesis (a fixed random subset).
    pub n_samples: usize,
    pub n_iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            n_samples: 1000,
            n_iterations: 1000,
            inlier_threshold: 0.05,
            seed: 0,
        }
    }
}

const MIN_CALIBRATION_SAMPLES: usize = 100;
const USABLE: std::ops::Range<f64> = 0.02..0.98;

/// Robust fit of `I_obs = I_ren^gamma`. Each hypothesis averages the closed
/// form `log I_obs / log I_ren` of two points; the best hypothesis (most
/// inliers on the scoring subset, lower gamma on ties) is refined by least
/// squares over its inliers in the full sample set.
pub fn fit_gamma_ransac(samples: &CalibrationSamples, opts: &RansacOptions) -> Result<GammaFit> {
    let n = samples.len();
    if n < MIN_CALIBRATION_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "gamma fitting needs at least {MIN_CALIBRATION_SAMPLES} samples, got {n}"
        )));
    }
    if opts.n_samples == 0 || opts.n_samples > n {
        return Err(Error::InvalidParameter(format!(
            "n_samples must lie in [1, {n}] ({})",
            opts.n_samples
        )));
    }
    if opts.n_iterations == 0 || !(opts.inlier_threshold > 0.0) {
        return Err(Error::InvalidParameter("need at least one iteration and a positive threshold".into()));
    }
    let usable: Vec<usize> = (0..n)
        .filter(|&i| USABLE.contains(&samples.rendered[i]) && samples.observed[i] > 0.0)
        .collect();
    let distinct = usable
        .iter()
        .any(|&i| samples.rendered[i] != samples.rendered[usable[0]]);
    if usable.len() < 2 || !distinct {
        return Err(Error::Unidentifiable("rendered intensities do not vary inside (0.02, 0.98)".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let subset: Vec<usize> = sample(&mut rng, n, opts.n_samples).into_vec();
    let closed_form = |i: usize| samples.observed[i].ln() / samples.rendered[i].ln();
    let hypotheses: Vec<f64> = (0..opts.n_iterations)
        .map(|_| {
            let a = usable[rng.random_range(0..usable.len())];
            let mut b = usable[rng.random_range(0..usable.len())];
            while b == a {
                b = usable[rng.random_range(0..usable.len())];
            }
            0.5 * (closed_form(a) + closed_form(b))
        })
        .collect();
    let scores = par::map_slice(&hypotheses, |&g| {
        if !(g.is_finite() && g > 0.0) {
            return 0;
        }
        subset
            .iter()
            .filter(|&&i| (samples.observed[i] - samples.rendered[i].powf(g)).abs() < opts.inlier_threshold)
            .count()
    });
    let mut best = 0;
    for i in 1..hypotheses.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && hypotheses[i] < hypotheses[best]) {
            best = i;
        }
    }
    if scores[best] == 0 {
        return Err(Error::Unidentifiable("no gamma hypothesis has inliers".into()));
    }

    let inliers_of = |g: f64| -> Vec<usize> {
        (0..n)
            .filter(|&i| (samples.observed[i] - samples.rendered[i].powf(g)).abs() < opts.inlier_threshold)
            .collect()
    };
    let mut gamma = hypotheses[best];
    let mut inliers = inliers_of(gamma);
    for _ in 0..5 {
        let refined = refine_gamma(samples, &inliers, gamma);
        let next = inliers_of(refined);
        let settled = next == inliers && (refined - gamma).abs() < 1e-15;
        gamma = refined;
        inliers = next;
        if settled {
            break;
        }
    }
    let rms = if inliers.is_empty() {
        0.0
    } else {
        (inliers
            .iter()
            .map(|&i| (samples.observed[i] - samples.rendered[i].powf(gamma)).powi(2))
            .sum::<f64>()
            / inliers.len() as f64)
            .sqrt()
    };
    Ok(GammaFit {
        gamma,
        inlier_ratio: inliers.len() as f64 / n as f64,
        inliers: inliers.len(),
        rms,
    })
}

/// Gauss-Newton on `sum (I_obs - I_ren^g)^2` over `idx`.
fn refine_gamma(samples: &CalibrationSamples, idx: &[usize], start: f64) -> f64 {
    let mut g = start;
    let cost = |g: f64| -> f64 {
        idx.iter()
            .map(|&i| (samples.observed[i] - samples.rendered[i].powf(g)).powi(2))
            .sum()
    };
    let mut c = cost(g);
    for _ in 0..50 {
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for &i in idx {
            let r = samples.rendered[i];
            if r <= 0.0 {
                continue;
            }
            let p = r.powf(g);
            let j = p * r.ln();
            jtj += j * j;
            jtr += j * (samples.observed[i] - p);
        }
        if jtj <= 0.0 {
            break;
        }
        let mut step = jtr / jtj;
        let mut accepted = false;
        for _ in 0..20 {
            let cand = g + step;
            if cand > 0.0 {
                let cc = cost(cand);
                if cc <= c {
                    g = cand;
                    c = cc;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted || step.abs() < 1e-15 {
            break;
        }
    }
    g
}

/// (distance in mm, representative intensity) pairs from wall captures.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FalloffSamples {
    pub distances: Vec<f64>,
    pub intensities: Vec<f64>,
}

impl FalloffSamples {
    pub fn new(distances: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        if distances.len() != intensities.len() {
            return Err(Error::InvalidParameter("distance and intensity counts differ".into()));
        }
        if distances.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidParameter("distances must be positive".into()));
        }
        let mut sorted = distances.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("distances must be distinct".into()));
        }
        if intensities.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("intensities must be finite".into()));
        }
        Ok(FalloffSamples {
            distances,
            intensities,
        })
    }

    /// One sample per image: the median of a rectangular region.
    pub fn from_images(captures: &[(f64, ShadingImage)], roi: [usize; 4]) -> Result<Self> {
        let [x0, y0, x1, y1] = roi;
        let mut d = Vec::new();
        let mut v = Vec::new();
        for (distance, img) in captures {
            let m = img
                .median_roi(x0, y0, x1, y1)
                .ok_or_else(|| Error::InvalidParameter("region of interest is empty".into()))?;
            d.push(*distance);
            v.push(m);
        }
        FalloffSamples::new(d, v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FalloffFit {
    /// `p` in `I = a·d^p`; the inverse-square law gives -2.
    pub exponent: f64,
    pub scale: f64,
    pub used: usize,
}

/// Least-squares line through `(log d, log I)`.
pub fn fit_falloff_exponent(samples: &FalloffSamples) -> Result<FalloffFit> {
    let pts: Vec<(f64, f64)> = samples
        .distances
        .iter()
        .zip(&samples.intensities)
        .filter(|(_, i)| **i > 0.0)
        .map(|(d, i)| (d.ln(), i.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "falloff fit needs 3 positive samples, {} remain",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let exponent = sxy / sxx;
    Ok(FalloffFit {
        exponent,
        scale: (my - exponent * mx).exp(),
        used: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::camera::{CameraIntrinsics, CameraPose};
    use crate::mesh::{geodesic_sphere, Vec3};
    use crate::shading::render_shading_image;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn curve_samples(gamma: f64, n: usize) -> CalibrationSamples {
        let rendered: Vec<f64> = (0..n).map(|i| 0.03 + 0.94 * i as f64 / (n - 1) as f64).collect();
        let observed = rendered.iter().map(|r| r.powf(gamma)).collect();
        CalibrationSamples::new(rendered, observed).unwrap()
    }

    #[test]
    fn noiseless_gamma_is_exact() {
        let fit = fit_gamma_ransac(&curve_samples(0.8, 500), &RansacOptions { n_samples: 400, ..Default::default() }).unwrap();
        assert!((fit.gamma - 0.8).abs() < 1e-6);
        assert_eq!(fit.inlier_ratio, 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn noiseless_fit_has_zero_residual(gamma in 0.5f64..1.5) {
            let fit = fit_gamma_ransac(&curve_samples(gamma, 200), &RansacOptions { n_samples: 200, n_iterations: 50, ..Default::default() }).unwrap();
            prop_assert!((fit.gamma - gamma).abs() < 1e-9);
            prop_assert!(fit.rms < 1e-12);
        }

        #[test]
        fn falloff_scale_invariance(s in 0.01f64..100.0) {
            let d: Vec<f64> = (0..10).map(|i| 500.0 + 250.0 * i as f64).collect();
            let i: Vec<f64> = d.iter().map(|d| 3e5 / d.powf(1.7)).collect();
            let a = fit_falloff_exponent(&FalloffSamples::new(d.clone(), i.clone()).unwrap()).unwrap();
            let b = fit_falloff_exponent(&FalloffSamples::new(d, i.iter().map(|v| v * s).collect()).unwrap()).unwrap();
            prop_assert!((a.exponent - b.exponent).abs() < 1e-9);
            prop_assert!((b.scale / a.scale - s).abs() < 1e-6 * s);
        }
    }

    fn noisy_samples(gamma: f64, seed: u64) -> CalibrationSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut rendered = Vec::new();
        let mut observed = Vec::new();
        for _ in 0..5000 {
            let r: f64 = rng.random_range(0.03..0.97);
            let o = if rng.random::<f64>() < 0.1 {
                rng.random::<f64>()
            } else {
                (r.powf(gamma) + noise.sample(&mut rng)).clamp(0.0, 1.0)
            };
            rendered.push(r);
            observed.push(o);
        }
        CalibrationSamples::new(rendered, observed).unwrap()
    }

    #[test]
    fn outliers_and_noise() {
        let fit = fit_gamma_ransac(&noisy_samples(0.87, 3), &RansacOptions::default()).unwrap();
        assert!((fit.gamma - 0.87).abs() < 0.02, "{}", fit.gamma);
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let s = noisy_samples(0.8, 4);
        let opts = RansacOptions { seed: 42, ..Default::default() };
        assert_eq!(fit_gamma_ransac(&s, &opts).unwrap(), fit_gamma_ransac(&s, &opts).unwrap());
    }

    #[test]
    fn constant_rendering_is_unidentifiable() {
        let s = CalibrationSamples::new(vec![0.5; 200], vec![0.6; 200]).unwrap();
        assert!(matches!(
            fit_gamma_ransac(&s, &RansacOptions { n_samples: 100, ..Default::default() }),
            Err(Error::Unidentifiable(_))
        ));
    }

    fn sphere_views(gamma: f64) -> (TriangleMesh, Vec<View>) {
        let sphere = geodesic_sphere(100.0, 30);
        let k = CameraIntrinsics::new(300.0, 300.0, 80.0, 60.0, 160, 120).unwrap();
        let eye = Vec3::new(0.0, 0.0, 500.0);
        let pose = CameraPose::look_at(&eye, &Vec3::zeros(), &Vec3::y()).unwrap();
        let mut view = View::new(k, pose, Vec3::new(40.0, 0.0, 0.0), ShadingImage::constant(160, 120, 0.0)).unwrap();
        let light = LightModel::new(1.0, 0.0, gamma).unwrap();
        view.image = render_shading_image(&sphere, &view, &AlbedoModel::Global(2e5), &light);
        (sphere, vec![view])
    }

    #[test]
    fn sphere_samples_follow_the_response() {
        for gamma in [1.0, 0.8] {
            let (sphere, views) = sphere_views(gamma);
            let s = build_sphere_samples(&sphere, &views, &LightModel::default(), 2e5).unwrap();
            assert!(s.len() > 1000);
            for (r, o) in s.rendered.iter().zip(&s.observed) {
                let tol = if gamma == 1.0 { 1e-9 } else { 1e-4 };
                assert!((o - r.powf(gamma)).abs() < tol);
            }
        }
    }

    #[test]
    fn saturated_observations_are_excluded() {
        let (sphere, mut views) = sphere_views(1.0);
        for v in views[0].image.data_mut() {
            if *v > 0.0 {
                *v = 0.99;
            }
        }
        let r = build_sphere_samples(&sphere, &views, &LightModel::default(), 2e5);
        assert!(matches!(r, Err(Error::NoObservations(_))));
    }

    #[test]
    fn exact_inverse_square() {
        let d: Vec<f64> = (0..10).map(|i| 500.0 + 277.0 * i as f64).collect();
        let i = d.iter().map(|d| 4e5 / (d * d)).collect();
        let fit = fit_falloff_exponent(&FalloffSamples::new(d, i).unwrap()).unwrap();
        assert!((fit.exponent + 2.0).abs() < 1e-9);
        assert!((fit.scale / 4e5 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_intensity_has_no_falloff() {
        let d: Vec<f64> = (1..6).map(|i| i as f64 * 100.0).collect();
        let fit = fit_falloff_exponent(&FalloffSamples::new(d, vec![0.4; 5]).unwrap()).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
    }

    #[test]
    fn nonpositive_intensities_are_dropped() {
        let d = vec![100.0, 200.0, 300.0, 400.0];
        let fit = fit_falloff_exponent(&FalloffSamples::new(d.clone(), vec![1.0, 0.25, 0.0, 0.0625]).unwrap()).unwrap();
        assert_eq!(fit.used, 3);
        assert!((fit.exponent + 2.0).abs() < 1e-12);
        assert!(fit_falloff_exponent(&FalloffSamples::new(d, vec![1.0, 0.0, -1.0, 0.5]).unwrap()).is_err());
    }

    #[test]
    fn noisy_falloff_monte_carlo() {
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut good = 0;
        for _ in 0..100 {
            let d: Vec<f64> = (0..10).map(|i| 500.0 + 2500.0 * i as f64 / 9.0).collect();
            let i = d.iter().map(|d| 1e6 / (d * d) * (1.0 + noise.sample(&mut rng))).collect();
            let p = fit_falloff_exponent(&FalloffSamples::new(d, i).unwrap()).unwrap().exponent;
            if (-2.1..=-1.9).contains(&p) {
                good += 1;
            }
        }
        assert!(good >= 95);
    }

    #[test]
    fn roi_medians_feed_the_fit() {
        let caps: Vec<(f64, ShadingImage)> = (1..=4)
            .map(|i| {
                let d = 500.0 * i as f64;
                (d, ShadingImage::constant(8, 8, (2.5e5 / (d * d)).min(1.0)))
            })
            .collect();
        let s = FalloffSamples::from_images(&caps, [2, 2, 6, 6]).unwrap();
        assert!((fit_falloff_exponent(&s).unwrap().exponent + 2.0).abs() < 1e-9);
    }
}
