//! Finite-difference verification of every analytic gradient in the crate.
//!
//! Each suite draws random instances, differentiates numerically with central
//! differences and reports the worst relative error. Piecewise-smooth functions
//! (bilinear sampling, nearest-neighbour assignment, image-bound culling) are
//! only compared where central differences at two step sizes agree; instances straddling
//! a kink are redrawn and counted separately.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::geometry::{
    exp_so3, exp_so3_jacobian, project, project_composed, project_composed_with_jacobians, project_with_jacobians,
    CameraIntrinsics, PixelCoord, PoseTwist, DEFAULT_Z_MIN,
};
use crate::imaging::{sample_bilinear, Frame, ImageRGB, SilhouetteMask};
use crate::losses::{chamfer_2d, LossWeights, Params, Problem, SilhouetteVisibility, Visibility};
use crate::shape_prior::{fit_pca, LinearShapePrior, MlpShapePrior, PointCloud, ShapePrior, StyleVector};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    /// Instances redrawn because a kink lay within the difference stencil.
    pub redrawn: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_rel_err < self.tolerance
    }
}

/// Relative error of an analytic gradient against a numerical one.
///
/// Components are compared against `max(|a|, |n|, 1e-3·‖n‖∞)` so entries that
/// are tiny relative to the rest of the gradient do not dominate.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of a scalar function, or `None` when a kink lies
/// within the stencil: the estimates at step `h` and `h/2` must agree to
/// `kink_tol` relative to each component (or to `1e-3·‖fd‖∞` for tiny ones).
pub fn central_differences(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64, kink_tol: f64) -> Option<Vec<f64>> {
    let mut xp = x.to_vec();
    let mut at = |i: usize, step: f64, xp: &mut Vec<f64>| {
        xp[i] = x[i] + step;
        let fp = f(xp);
        xp[i] = x[i] - step;
        let fm = f(xp);
        xp[i] = x[i];
        (fp - fm) / (2.0 * step)
    };
    let mut out = Vec::with_capacity(x.len());
    let mut half = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        out.push(at(i, h, &mut xp));
        half.push(at(i, 0.5 * h, &mut xp));
    }
    let floor = 1e-3 * out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let kinked = out.iter().zip(&half).any(|(a, b)| (a - b).abs() > kink_tol * a.abs().max(floor));
    (!kinked).then_some(out)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng)) * scale
}

fn run_suite(name: &str, n: usize, tol: f64, seed: u64, mut instance: impl FnMut(&mut ChaCha8Rng) -> Option<f64>) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    let mut redrawn = 0;
    let mut worst = 0.0f64;
    while done < n {
        match instance(&mut rng) {
            Some(e) => {
                worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
                done += 1;
            }
            None => {
                redrawn += 1;
                if redrawn > 10 * n + 100 {
                    break;
                }
            }
        }
    }
    SuiteReport { name: name.into(), instances: done, redrawn, max_rel_err: worst, tolerance: tol, seconds: start.elapsed().as_secs_f64() }
}

pub fn suite_exp_so3(n: usize, seed: u64) -> SuiteReport {
    run_suite("exp_so3 * x", n, 1e-5, seed, |rng| {
        let mut omega = random_vec3(rng, 1.0);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        omega *= theta / omega.norm();
        let x = random_vec3(rng, 1.0);
        let j = exp_so3_jacobian(&omega, &x);
        let mut errs = 0.0f64;
        for c in 0..3 {
            let mut f = |w: &[f64]| exp_so3(&Vector3::new(w[0], w[1], w[2])).apply(&x)[c];
            let fd = central_differences(&mut f, omega.as_slice(), 1e-6, 1e-2)?;
            let a: Vec<f64> = (0..3).map(|k| j[(c, k)]).collect();
            errs = errs.max(relative_error(&a, &fd));
        }
        Some(errs)
    })
}

fn random_camera(rng: &mut ChaCha8Rng) -> CameraIntrinsics<f64> {
    CameraIntrinsics::new(rng.random_range(50.0..150.0), rng.random_range(50.0..150.0), rng.random_range(20.0..80.0), rng.random_range(20.0..80.0))
}

fn random_pose(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> PoseTwist<f64> {
    PoseTwist::new(random_vec3(rng, rot), random_vec3(rng, trans))
}

pub fn suite_project(n: usize, seed: u64) -> SuiteReport {
    run_suite("project", n, 1e-5, seed, |rng| {
        let k = random_camera(rng);
        let pose = random_pose(rng, 0.8, 0.3);
        let y = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..4.0));
        // place x so that its camera-frame point is y, keeping it away from z_min
        let tf = pose.transform().inverse();
        let x = tf.apply(&y);
        let jac = project_with_jacobians(&x, &pose, &k, DEFAULT_Z_MIN).ok()?;
        let mut worst = 0.0f64;
        for c in 0..2 {
            let pick = |u: PixelCoord<f64>| if c == 0 { u.u } else { u.v };
            let mut fp = |v: &[f64]| pick(project(&x, &PoseTwist::from_slice(v), &k).unwrap());
            let fd = central_differences(&mut fp, &pose.to_array(), 1e-6, 1e-2)?;
            let a: Vec<f64> = (0..3).map(|j| jac.d_omega[(c, j)]).chain((0..3).map(|j| jac.d_trans[(c, j)])).collect();
            worst = worst.max(relative_error(&a, &fd));
            let mut fx = |v: &[f64]| pick(project(&Vector3::new(v[0], v[1], v[2]), &pose, &k).unwrap());
            let fd = central_differences(&mut fx, x.as_slice(), 1e-6, 1e-2)?;
            let a: Vec<f64> = (0..3).map(|j| jac.d_point[(c, j)]).collect();
            worst = worst.max(relative_error(&a, &fd));
        }
        Some(worst)
    })
}

pub fn suite_project_composed(n: usize, seed: u64) -> SuiteReport {
    run_suite("project_composed", n, 1e-5, seed, |rng| {
        let k = random_camera(rng);
        let p0 = random_pose(rng, 0.8, 0.3);
        let dp = random_pose(rng, 0.3, 0.1);
        let y = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..4.0));
        let x = p0.transform().then(&dp.transform()).inverse().apply(&y);
        let jac = project_composed_with_jacobians(&x, &p0, &dp, &k, DEFAULT_Z_MIN).ok()?;
        let mut worst = 0.0f64;
        let base: Vec<f64> = p0.to_array().into_iter().chain(dp.to_array()).chain(x.iter().copied()).collect();
        for c in 0..2 {
            let mut f = |v: &[f64]| {
                let u = project_composed(&Vector3::new(v[12], v[13], v[14]), &PoseTwist::from_slice(&v[..6]), &PoseTwist::from_slice(&v[6..12]), &k).unwrap();
                if c == 0 {
                    u.u
                } else {
                    u.v
                }
            };
            let fd = central_differences(&mut f, &base, 1e-6, 1e-2)?;
            let a: Vec<f64> = [jac.d_omega0, jac.d_trans0, jac.d_domega, jac.d_dtrans, jac.d_point]
                .iter()
                .flat_map(|m| (0..3).map(move |j| m[(c, j)]))
                .collect();
            worst = worst.max(relative_error(&a, &fd));
        }
        Some(worst)
    })
}

pub fn suite_sample_bilinear(n: usize, seed: u64) -> SuiteReport {
    let mut image: Option<ImageRGB<f64>> = None;
    run_suite("sample_bilinear", n, 1e-6, seed, |rng| {
        if image.is_none() || rng.random_bool(0.02) {
            image = Some(ImageRGB::from_fn(12, 17, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap());
        }
        let img = image.as_ref().unwrap();
        // cell interiors only: the blend is not differentiable across cell edges
        let u = rng.random_range(0..16) as f64 + rng.random_range(0.01..0.99);
        let v = rng.random_range(0..11) as f64 + rng.random_range(0.01..0.99);
        let (_, g) = sample_bilinear(img, &PixelCoord::new(u, v)).ok()?;
        let mut worst = 0.0f64;
        for c in 0..3 {
            let mut f = |w: &[f64]| sample_bilinear(img, &PixelCoord::new(w[0], w[1])).unwrap().0[c];
            let fd = central_differences(&mut f, &[u, v], 1e-4, 1e-3)?;
            worst = worst.max(relative_error(&[g[(c, 0)], g[(c, 1)]], &fd));
        }
        Some(worst)
    })
}

/// Random linear prior (`d = 3`) around a jittered ellipsoid of `n` points.
pub fn random_linear_prior(rng: &mut ChaCha8Rng, n: usize) -> LinearShapePrior<f64> {
    let base: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            let v = random_vec3(rng, 1.0).normalize();
            Vector3::new(0.5 * v.x, 0.35 * v.y, 0.6 * v.z)
        })
        .collect();
    let shapes: Vec<PointCloud<f64>> =
        (0..8).map(|_| PointCloud::new(base.iter().map(|p| p + random_vec3(rng, 0.04)).collect())).collect();
    fit_pca(&shapes, 3).expect("valid training set")
}

pub fn suite_generate(n: usize, seed: u64) -> SuiteReport {
    let mut rng0 = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let linear = random_linear_prior(&mut rng0, 40);
    let mlp = MlpShapePrior::random(3, 12, &linear.mean_cloud(), seed);
    run_suite("generate", n, 1e-4, seed, |rng| {
        let s: Vec<f64> = (0..3).map(|_| normal(rng)).collect();
        let grad: Vec<Vector3<f64>> = (0..40).map(|_| random_vec3(rng, 1.0)).collect();
        let active: Option<Vec<usize>> = rng.random_bool(0.5).then(|| (0..40).filter(|_| rng.random_bool(0.5)).collect());
        let mut worst = 0.0f64;
        let priors: [&dyn ShapePrior<f64>; 2] = [&linear, &mlp];
        for prior in priors {
            let a = prior.generate_backward(&StyleVector(s.clone()), &grad, active.as_deref()).ok()?;
            let mut f = |v: &[f64]| {
                let x = prior.generate(&StyleVector(v.to_vec())).unwrap();
                match &active {
                    Some(idx) => idx.iter().map(|&i| grad[i].dot(&x.points[i])).sum(),
                    None => x.points.iter().zip(&grad).map(|(p, g)| p.dot(g)).sum(),
                }
            };
            let fd = central_differences(&mut f, &s, 1e-5, 1e-3)?;
            worst = worst.max(relative_error(&a, &fd));
        }
        Some(worst)
    })
}

pub fn suite_chamfer_2d(n: usize, seed: u64) -> SuiteReport {
    run_suite("chamfer_2d", n, 1e-4, seed, |rng| {
        let na = rng.random_range(1..60);
        let nb = rng.random_range(1..60);
        let a: Vec<PixelCoord<f64>> = (0..na).map(|_| PixelCoord::new(rng.random_range(0.0..32.0), rng.random_range(0.0..32.0))).collect();
        let b: Vec<f64> = (0..2 * nb).map(|_| rng.random_range(-4.0..36.0)).collect();
        let to_coords = |v: &[f64]| -> Vec<PixelCoord<f64>> { v.chunks(2).map(|c| PixelCoord::new(c[0], c[1])).collect() };
        let (_, g) = chamfer_2d(&a, &to_coords(&b)).ok()?;
        let analytic: Vec<f64> = g.iter().flat_map(|v| [v.x, v.y]).collect();
        let mut f = |v: &[f64]| chamfer_2d(&a, &to_coords(v)).unwrap().0;
        let fd = central_differences(&mut f, &b, 1e-5, 1e-3)?;
        Some(relative_error(&analytic, &fd))
    })
}

/// Small random loss scene: `L` frames of smooth random textures with elliptic
/// masks, a random linear prior over `n_points` points and random parameters.
pub struct LossScene {
    pub frames: Vec<Frame<f64>>,
    pub prior: LinearShapePrior<f64>,
    pub params: Params<f64>,
    pub k: CameraIntrinsics<f64>,
}

pub fn random_loss_scene(rng: &mut ChaCha8Rng, n_points: usize, l: usize, size: usize) -> LossScene {
    let prior = random_linear_prior(rng, n_points);
    let half = (size as f64 - 1.0) / 2.0;
    let k = CameraIntrinsics::new(1.6 * size as f64, 1.6 * size as f64, half, half);
    let frames = (0..l)
        .map(|index| {
            let waves: Vec<[f64; 4]> = (0..9).map(|_| [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(0.0..6.3), rng.random_range(0.02..0.05)]).collect();
            let image = ImageRGB::from_fn(size, size, |u, v| {
                std::array::from_fn(|c| {
                    let mut x = 0.5;
                    for w in &waves[3 * c..3 * c + 3] {
                        x += 3.0 * w[3] * (w[0] * u as f64 + w[1] * v as f64 + w[2]).sin();
                    }
                    x.clamp(0.0, 1.0)
                })
            })
            .unwrap();
            let (cu, cv) = (half + rng.random_range(-2.0..2.0), half + rng.random_range(-2.0..2.0));
            let (ru, rv) = (rng.random_range(0.15..0.35) * size as f64, rng.random_range(0.15..0.35) * size as f64);
            let mask = SilhouetteMask::new(
                size,
                size,
                (0..size * size)
                    .map(|i| {
                        let (u, v) = ((i % size) as f64, (i / size) as f64);
                        ((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2) <= 1.0
                    })
                    .collect(),
            )
            .unwrap();
            Frame::new(index, image, mask, None).unwrap()
        })
        .collect();
    let p0 = PoseTwist::new(random_vec3(rng, 0.5), Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 3.0));
    let dps = (1..l).map(|_| random_pose(rng, 0.04, 0.04)).collect();
    let s = StyleVector((0..prior.d).map(|k| normal(rng) * prior.scales[k]).collect());
    LossScene { frames, prior, params: Params { p0, dps, s }, k }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Photometric,
    Silhouette,
    Combined,
}

fn loss_suite(kind: LossKind, n: usize, seed: u64) -> SuiteReport {
    let name = match kind {
        LossKind::Photometric => "photometric_loss",
        LossKind::Silhouette => "silhouette_loss",
        LossKind::Combined => "combined_loss",
    };
    run_suite(name, n, 1e-4, seed, |rng| {
        let scene = random_loss_scene(rng, 64, 3, 24);
        let (w_ph, w_cd) = match kind {
            LossKind::Photometric => (1.0, 0.0),
            LossKind::Silhouette => (0.0, 1.0),
            LossKind::Combined => (1.0, 0.01),
        };
        loss_gradient_error(&scene, w_ph, w_cd, 2.0)
    })
}

/// Worst relative error of the `w_ph·L_ph + w_cd·L_CD` gradient on one scene
/// under frozen visibility, or `None` near a kink.
pub fn loss_gradient_error(scene: &LossScene, w_ph: f64, w_cd: f64, upscale: f64) -> Option<f64> {
    let problem = Problem::new(&scene.frames, scene.k, upscale, LossWeights { lambda: w_cd }, SilhouetteVisibility::PerTarget).ok()?;
    let cloud = scene.prior.generate(&scene.params.s).ok()?;
    let vis = problem.visibility(&cloud, &scene.params.p0, &scene.params.dps).ok()?;
    if vis.reference.is_empty() {
        return None;
    }
    let n_dps = scene.params.dps.len();
    let value = |flat: &[f64], vis: &Visibility| -> f64 {
        let p = Params::from_flat(flat, n_dps);
        let (b, _) = problem.evaluate(&scene.prior, &p, vis, false).unwrap();
        w_ph * b.l_ph + w_cd * b.l_cd
    };
    let (_, g) = problem.evaluate(&scene.prior, &scene.params, &vis, true).ok()?;
    let mut analytic = g?.flatten();
    if w_ph == 0.0 {
        // evaluate() weights the photometric term by one; remove it
        let ph_only = Problem::new(&scene.frames, scene.k, upscale, LossWeights { lambda: 0.0 }, SilhouetteVisibility::PerTarget).ok()?;
        let (_, gp) = ph_only.evaluate(&scene.prior, &scene.params, &vis, true).ok()?;
        analytic.iter_mut().zip(gp?.flatten()).for_each(|(a, b)| *a -= b);
    }
    let mut f = |v: &[f64]| value(v, &vis);
    let fd = central_differences(&mut f, &scene.params.flatten(), 1e-5, 1e-5)?;
    Some(relative_error(&analytic, &fd))
}

pub fn suite_photometric(n: usize, seed: u64) -> SuiteReport {
    loss_suite(LossKind::Photometric, n, seed)
}

pub fn suite_silhouette(n: usize, seed: u64) -> SuiteReport {
    loss_suite(LossKind::Silhouette, n, seed)
}

pub fn suite_combined(n: usize, seed: u64) -> SuiteReport {
    loss_suite(LossKind::Combined, n, seed)
}

/// Every suite with `n` instances each.
pub fn run_all(n: usize, seed: u64) -> Vec<SuiteReport> {
    vec![
        suite_exp_so3(n, seed),
        suite_project(n, seed + 1),
        suite_project_composed(n, seed + 2),
        suite_sample_bilinear(n, seed + 3),
        suite_generate(n, seed + 4),
        suite_chamfer_2d(n, seed + 5),
        suite_photometric(n, seed + 6),
        suite_silhouette(n, seed + 7),
        suite_combined(n, seed + 8),
    ]
}
