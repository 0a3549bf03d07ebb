use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, InitNoise};
use super::ply::write_ply;
use super::scene::{half_normal, perturb_about, random_axis, SceneBundle};
use crate::error::{Error, Result};
use crate::evaluation::{run_trial, TrialOutput, TrialSpec};
use crate::geometry::{compose, PoseTwist};
use crate::optimizer::{OptimizationState, TraceRow};
use crate::persist::{write_atomic, write_json};
use crate::shape_prior::{LinearShapePrior, StyleVector};

/// The random perturbation applied to the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitDraw {
    pub rotation_deg: f64,
    pub axis: [f64; 3],
    pub translation: [f64; 3],
    /// Added style offsets, in style units.
    pub style_offset: Vec<f64>,
}

/// Perturbed ground-truth initialization: `p0` is rotated by `|N(0, σ_rot)|`
/// about a random axis through the object centroid and shifted by `N(0, σ_t)`
/// per axis, the style gets `N(0, σ_s·scale_k)` per mode, and every relative
/// motion starts at identity.
pub fn initialize(
    scene: &SceneBundle,
    prior: &LinearShapePrior<f64>,
    noise: &InitNoise,
    seed: u64,
) -> (OptimizationState<f64>, InitDraw) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene.meta.id as u64);
    let angle = half_normal(noise.rotation_deg, &mut rng);
    let axis = random_axis(&mut rng);
    let sigma_t = noise.translation_frac * scene.meta.distance;
    let mut gauss = |sigma: f64| if sigma > 0.0 { Normal::new(0.0, sigma).expect("positive sigma").sample(&mut rng) } else { 0.0 };
    let shift = Vector3::new(gauss(sigma_t), gauss(sigma_t), gauss(sigma_t));
    let style_offset: Vec<f64> = prior.scales.iter().map(|&s| gauss(noise.style_frac * s)).collect();
    let gt_p0 = scene.gt_p0();
    let pivot = gt_p0.apply(&scene.gt_cloud.centroid());
    let p0 = perturb_about(&gt_p0, &pivot, &(axis * angle.to_radians()), &shift);
    let s = StyleVector(scene.meta.style.iter().zip(&style_offset).map(|(a, b)| a + b).collect());
    let draw = InitDraw { rotation_deg: angle, axis: axis.into(), translation: shift.into(), style_offset };
    (OptimizationState::new(p0, s, scene.num_frames()), draw)
}

/// Directory of one trial's artifacts.
pub fn trial_dir(root: &Path, spec: &TrialSpec, id: usize) -> PathBuf {
    root.join(spec.label()).join(format!("trial_{id:04}"))
}

/// `round,block,l_ph,l_cd,l_total,n_point_pairs,n_dropped_oob,n_empty_silhouette,grad_norm,steps`
pub fn trace_csv(history: &[TraceRow]) -> String {
    let mut out = String::from("round,block,l_ph,l_cd,l_total,n_point_pairs,n_dropped_oob,n_empty_silhouette,grad_norm,steps\n");
    for r in history {
        let g = r.grad_norm.map(|g| format!("{g:?}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:?},{:?},{:?},{},{},{},{},{}\n",
            r.round, r.block, r.loss.l_ph, r.loss.l_cd, r.loss.l_total, r.loss.n_point_pairs, r.loss.n_dropped_oob, r.loss.n_empty_silhouette, g, r.steps
        ));
    }
    out
}

#[derive(Serialize)]
struct PosesFile<'a> {
    p0: &'a PoseTwist<f64>,
    dps: &'a [PoseTwist<f64>],
    /// Absolute pose of every frame.
    poses: Vec<PoseTwist<f64>>,
}

#[derive(Serialize)]
struct StateFile<'a> {
    spec: &'a TrialSpec,
    p0: &'a PoseTwist<f64>,
    dps: &'a [PoseTwist<f64>],
    style: &'a Option<StyleVector<f64>>,
    status: crate::optimizer::Termination,
    rounds: usize,
}

/// Writes `result.json`, `state.json`, `trace.csv`, `cloud.ply` and `poses.json`.
pub fn persist_trial(dir: &Path, spec: &TrialSpec, out: &TrialOutput, force: bool) -> Result<()> {
    let result_path = dir.join("result.json");
    if result_path.exists() && !force {
        return Err(Error::AlreadyExists(result_path));
    }
    let poses = std::iter::once(out.p0).chain(out.dps.iter().map(|dp| compose(&out.p0, dp))).collect();
    write_json(&dir.join("poses.json"), &PosesFile { p0: &out.p0, dps: &out.dps, poses })?;
    write_json(
        &dir.join("state.json"),
        &StateFile { spec, p0: &out.p0, dps: &out.dps, style: &out.style, status: out.result.status, rounds: out.result.rounds },
    )?;
    write_atomic(&dir.join("trace.csv"), trace_csv(&out.history).as_bytes())?;
    write_ply(&dir.join("cloud.ply"), &out.cloud, None)?;
    write_json(&result_path, &out.result)
}

/// Initializes, optimizes, scores and (when `out_dir` is given) persists one trial.
pub fn run_pipeline(
    scene: &SceneBundle,
    prior: &LinearShapePrior<f64>,
    cfg: &ExperimentConfig,
    spec: &TrialSpec,
    out_dir: Option<&Path>,
    force: bool,
) -> Result<TrialOutput> {
    if let Some(root) = out_dir {
        let path = trial_dir(root, spec, scene.meta.id).join("result.json");
        if path.exists() && !force {
            return Err(Error::AlreadyExists(path));
        }
    }
    let out = run_trial(scene, prior, cfg, spec)?;
    if let Some(root) = out_dir {
        persist_trial(&trial_dir(root, spec, scene.meta.id), spec, &out, force)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_rotation_error;
    use crate::harness::prior::fit_prior;
    use crate::harness::scene::synth_scene;

    fn small() -> (ExperimentConfig, LinearShapePrior<f64>, SceneBundle) {
        let mut cfg = ExperimentConfig::default();
        cfg.prior.training_shapes = 24;
        cfg.prior.num_points = 256;
        cfg.prior.dim = 4;
        cfg.scene.height = 64;
        cfg.scene.width = 64;
        cfg.scene.focal = 60.0;
        cfg.scene.num_frames = 5;
        let prior = fit_prior(&cfg).unwrap();
        let scene = synth_scene(&cfg, &prior, 0).unwrap();
        (cfg, prior, scene)
    }

    #[test]
    fn zero_noise_is_ground_truth() {
        let (_, prior, scene) = small();
        let (state, draw) = initialize(&scene, &prior, &InitNoise::none(), 5);
        assert_eq!(draw.rotation_deg, 0.0);
        assert!((state.p0.transform().trans - scene.gt_p0().transform().trans).norm() < 1e-12);
        assert!(geodesic_rotation_error(&state.p0.rotation(), &scene.gt_p0().rotation()) < 1e-5);
        assert_eq!(state.s.0, scene.meta.style);
        assert!(state.dps.iter().all(|d| *d == PoseTwist::identity()));
        assert_eq!(state.dps.len(), 4);
    }

    #[test]
    fn rotation_noise_is_half_normal() {
        let (_, prior, mut scene) = small();
        let noise = InitNoise { rotation_deg: 10.0, translation_frac: 0.0, style_frac: 0.0 };
        let errors: Vec<f64> = (0..1000)
            .map(|i| {
                scene.meta.id = i;
                let (state, _) = initialize(&scene, &prior, &noise, 11);
                geodesic_rotation_error(&state.p0.rotation(), &scene.gt_p0().rotation())
            })
            .collect();
        let m = errors.iter().sum::<f64>() / 1000.0;
        let sd = (errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / 999.0).sqrt();
        let expected = 10.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((m - expected).abs() < 3.0 * sd / 1000f64.sqrt(), "{m} vs {expected}");
    }

    #[test]
    fn refuses_to_overwrite_without_force() {
        let (cfg, prior, scene) = small();
        let dir = tempfile::tempdir().unwrap();
        let spec = TrialSpec::prior(0.01, 5);
        let mut quick = cfg.clone();
        quick.optimizer.max_outer_rounds = 1;
        run_pipeline(&scene, &prior, &quick, &spec, Some(dir.path()), false).unwrap();
        let err = run_pipeline(&scene, &prior, &quick, &spec, Some(dir.path()), false).unwrap_err();
        assert!(matches!(err, Error::AlreadyExists(_)));
        let first = std::fs::read(trial_dir(dir.path(), &spec, 0).join("result.json")).unwrap();
        run_pipeline(&scene, &prior, &quick, &spec, Some(dir.path()), true).unwrap();
        let second = std::fs::read(trial_dir(dir.path(), &spec, 0).join("result.json")).unwrap();
        assert_eq!(first, second);
        for f in ["state.json", "trace.csv", "cloud.ply", "poses.json"] {
            assert!(trial_dir(dir.path(), &spec, 0).join(f).exists(), "{f}");
        }
    }
}
