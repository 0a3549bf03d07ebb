use serde::{Deserialize, Serialize};

use super::metrics::{mean, median};
use super::trial::{run_trial, TrialOutput, TrialResult, TrialSpec};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::scene::SceneBundle;
use crate::shape_prior::LinearShapePrior;

/// Runs every `(scene, spec)` pair on a pool of `jobs` workers; results come
/// back in scene-major order regardless of scheduling.
pub fn run_grid(
    scenes: &[SceneBundle],
    prior: &LinearShapePrior<f64>,
    cfg: &ExperimentConfig,
    specs: &[TrialSpec],
    jobs: usize,
) -> Result<Vec<TrialOutput>> {
    let tasks: Vec<(&SceneBundle, &TrialSpec)> = scenes.iter().flat_map(|s| specs.iter().map(move |p| (s, p))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        use rayon::prelude::*;
        tasks.par_iter().map(|(scene, spec)| run_trial(scene, prior, cfg, spec)).collect()
    })
}

/// Median and mean errors of one view count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub views: usize,
    pub trials: usize,
    pub median_rotation_deg: f64,
    pub mean_rotation_deg: f64,
    pub median_translation: f64,
    pub median_style_error: f64,
    pub mean_style_error: f64,
}

/// Summarizes the trials run with `views` frames.
pub fn ablation_row(views: usize, results: &[&TrialResult]) -> AblationRow {
    let rot: Vec<f64> = results.iter().map(|r| r.fin.mean_rotation()).collect();
    let trans: Vec<f64> = results.iter().map(|r| r.fin.mean_translation()).collect();
    let style: Vec<f64> = results.iter().map(|r| r.fin.style_error).collect();
    AblationRow {
        views,
        trials: results.len(),
        median_rotation_deg: median(&rot),
        mean_rotation_deg: mean(&rot),
        median_translation: median(&trans),
        median_style_error: median(&style),
        mean_style_error: mean(&style),
    }
}

/// The same scenes truncated to each view count, all other settings shared.
pub fn views_ablation(
    scenes: &[SceneBundle],
    prior: &LinearShapePrior<f64>,
    cfg: &ExperimentConfig,
    view_counts: &[usize],
    lambda: f64,
    jobs: usize,
) -> Result<(Vec<AblationRow>, Vec<TrialResult>)> {
    if scenes.is_empty() {
        return Err(Error::EmptySet("views_ablation needs at least one scene"));
    }
    if let Some(&l) = view_counts.iter().find(|&&l| scenes.iter().any(|s| l < 2 || l > s.num_frames())) {
        return Err(Error::InvalidInput(format!("view count {l} is outside [2, frames]")));
    }
    let specs: Vec<TrialSpec> = view_counts.iter().map(|&l| TrialSpec::prior(lambda, l)).collect();
    let results: Vec<TrialResult> = run_grid(scenes, prior, cfg, &specs, jobs)?.into_iter().map(|o| o.result).collect();
    let rows = view_counts
        .iter()
        .map(|&l| ablation_row(l, &results.iter().filter(|r| r.spec.views == l).collect::<Vec<_>>()))
        .collect();
    Ok((rows, results))
}

/// Trials of two variants on the same scenes and initializations.
#[derive(Clone, Debug, PartialEq)]
pub struct Paired {
    pub a: Vec<TrialResult>,
    pub b: Vec<TrialResult>,
}

impl Paired {
    fn split(results: Vec<TrialResult>, a: &TrialSpec) -> Self {
        let (a, b) = results.into_iter().partition(|r| &r.spec == a);
        Paired { a, b }
    }

    /// Fraction of pairs where `pred(a, b)` holds.
    pub fn fraction(&self, pred: impl Fn(&TrialResult, &TrialResult) -> bool) -> f64 {
        let n = self.a.len().min(self.b.len());
        if n == 0 {
            return f64::NAN;
        }
        self.a.iter().zip(&self.b).filter(|(a, b)| pred(a, b)).count() as f64 / n as f64
    }
}

/// Combined loss (`a`) against photometric only (`b`).
pub fn compare_loss_options(
    scenes: &[SceneBundle],
    prior: &LinearShapePrior<f64>,
    cfg: &ExperimentConfig,
    lambda: f64,
    jobs: usize,
) -> Result<Paired> {
    let views = cfg.scene.num_frames;
    let combined = TrialSpec::prior(lambda, views);
    let results = run_grid(scenes, prior, cfg, &[combined.clone(), TrialSpec::prior(0.0, views)], jobs)?;
    Ok(Paired::split(results.into_iter().map(|o| o.result).collect(), &combined))
}

/// Photometric-only outcome that lost most of its point pairs or whose
/// silhouette distance ended far above the combined run's.
pub fn is_degenerate(photometric: &TrialResult, combined: &TrialResult) -> bool {
    let collapsed = (photometric.fin.loss.n_point_pairs as f64) < 0.5 * photometric.init.loss.n_point_pairs as f64;
    collapsed || photometric.fin.loss.l_cd > 10.0 * combined.fin.loss.l_cd
}

/// One scene optimized under every `λ` in `lambdas`.
pub fn lambda_sweep(
    scene: &SceneBundle,
    prior: &LinearShapePrior<f64>,
    cfg: &ExperimentConfig,
    lambdas: &[f64],
    jobs: usize,
) -> Result<Vec<TrialResult>> {
    let specs: Vec<TrialSpec> = lambdas.iter().map(|&l| TrialSpec::prior(l, scene.num_frames())).collect();
    Ok(run_grid(std::slice::from_ref(scene), prior, cfg, &specs, jobs)?.into_iter().map(|o| o.result).collect())
}

/// Style through the prior (`a`) against direct point optimization (`b`).
pub fn compare_prior_vs_direct(
    scenes: &[SceneBundle],
    prior: &LinearShapePrior<f64>,
    cfg: &ExperimentConfig,
    lambda: f64,
    jobs: usize,
) -> Result<Paired> {
    let views = cfg.scene.num_frames;
    let p = TrialSpec::prior(lambda, views);
    let results = run_grid(scenes, prior, cfg, &[p.clone(), TrialSpec::direct(lambda, views)], jobs)?;
    Ok(Paired::split(results.into_iter().map(|o| o.result).collect(), &p))
}
