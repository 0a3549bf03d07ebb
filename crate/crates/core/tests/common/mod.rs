//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shapeba::error::Result;
use shapeba::geometry::{CameraIntrinsics, PixelCoord, PoseTwist};
use shapeba::optimizer::LbfgsOptions;
use shapeba::shape_prior::PointCloud;

pub fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> (PointCloud<f64>, PoseTwist<f64>) {
    let cloud = PointCloud::new(
        (0..n).map(|_| Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6))).collect(),
    );
    let omega = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let pose = PoseTwist::new(omega, Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(1.2..2.0)));
    (cloud, pose)
}

/// Per-cell argmin over a dense grid, visiting cells in the outer loop.
pub fn z_buffer_oracle(cloud: &PointCloud<f64>, pose: &PoseTwist<f64>, k: &CameraIntrinsics<f64>, h: usize, w: usize, u: usize) -> Vec<usize> {
    let rot = Rotation3::new(pose.omega);
    let proj: Vec<Option<(f64, usize, usize)>> = cloud
        .points
        .iter()
        .map(|x| {
            let y = rot * x + pose.trans;
            if y.z <= 1e-4 {
                return None;
            }
            let (pu, pv) = (k.fx * y.x / y.z + k.cx, k.fy * y.y / y.z + k.cy);
            if pu < 0.0 || pv < 0.0 || pu >= w as f64 || pv >= h as f64 {
                return None;
            }
            Some((y.z, (pu * u as f64).floor() as usize, (pv * u as f64).floor() as usize))
        })
        .collect();
    let mut out = Vec::new();
    for cv in 0..h * u {
        for cu in 0..w * u {
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in proj.iter().enumerate() {
                if let Some((z, a, b)) = *p {
                    if a == cu && b == cv && best.is_none_or(|(bz, _)| z < bz) {
                        best = Some((z, i));
                    }
                }
            }
            if let Some((_, i)) = best {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    out
}

fn min_dist2<const D: usize>(set: &[[f64; D]], q: &[f64; D]) -> f64 {
    let mut best = f64::INFINITY;
    for p in set {
        let d: f64 = (0..D).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum();
        if d < best {
            best = d;
        }
    }
    best
}

/// Two-sided squared Chamfer sum by exhaustive search.
pub fn chamfer_oracle<const D: usize>(a: &[[f64; D]], b: &[[f64; D]]) -> f64 {
    let forward: f64 = a.iter().fold(0.0, |s, q| s + min_dist2(b, q));
    let backward: f64 = b.iter().fold(0.0, |s, q| s + min_dist2(a, q));
    forward + backward
}

pub fn pixels(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<PixelCoord<f64>> {
    (0..n).map(|_| PixelCoord::new(rng.random_range(0.0..span), rng.random_range(0.0..span))).collect()
}

/// `A = QᵀDQ` with eigenvalues spread over `[1, cond]`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, cond: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = m.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| if n == 1 { 1.0 } else { cond.powf(i as f64 / (n - 1) as f64) }));
    let a = q.transpose() * d * q;
    (&a + a.transpose()) * 0.5
}

pub fn quadratic(a: &DMatrix<f64>, b: &DVector<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
    let (a, b) = (a.clone(), b.clone());
    move |x: &[f64]| {
        let x = DVector::from_column_slice(x);
        let ax = &a * &x;
        Ok((0.5 * x.dot(&ax) - b.dot(&x), (ax - &b).as_slice().to_vec()))
    }
}

pub fn quad_opts() -> LbfgsOptions {
    LbfgsOptions { history: 40, max_iters: 200, grad_tol: 1e-8, wolfe_c2: 1e-3, ..Default::default() }
}

pub fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (a, b) = (x[0], x[1]);
    let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
    Ok((v, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
}
