use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{error_set, ErrorSet};
use crate::error::Result;
use crate::geometry::PoseTwist;
use crate::harness::config::ExperimentConfig;
use crate::harness::pipeline::{initialize, InitDraw};
use crate::harness::scene::SceneBundle;
use crate::losses::{LossWeights, Problem};
use crate::optimizer::{alternate_optimize, optimize_direct_points, Termination, TraceRow};
use crate::shape_prior::{LinearShapePrior, PointCloud, ShapePrior, StyleVector};

/// Shape parameterization being optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Style vector through the shape prior.
    Prior,
    /// Coordinates of the initially visible points.
    Direct,
}

/// What one trial runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub method: Method,
    pub lambda: f64,
    /// Number of leading frames used.
    pub views: usize,
}

impl TrialSpec {
    pub fn prior(lambda: f64, views: usize) -> Self {
        TrialSpec { method: Method::Prior, lambda, views }
    }

    pub fn direct(lambda: f64, views: usize) -> Self {
        TrialSpec { method: Method::Direct, lambda, views }
    }

    /// Short name used for directories and CSV rows, e.g. `prior_l0.01_v15`.
    pub fn label(&self) -> String {
        let m = match self.method {
            Method::Prior => "prior",
            Method::Direct => "direct",
        };
        format!("{m}_l{}_v{}", self.lambda, self.views)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub scene_seed: u64,
    pub init_seed: u64,
    pub spec: TrialSpec,
    pub init_draw: InitDraw,
    pub init: ErrorSet,
    #[serde(rename = "final")]
    pub fin: ErrorSet,
    pub status: Termination,
    pub rounds: usize,
    pub variables: usize,
    pub evaluations: usize,
    /// Wall-clock seconds; not written to `result.json`.
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// A trial's result plus the recovered quantities.
#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub result: TrialResult,
    pub p0: PoseTwist<f64>,
    pub dps: Vec<PoseTwist<f64>>,
    /// `None` for direct point optimization.
    pub style: Option<StyleVector<f64>>,
    pub cloud: PointCloud<f64>,
    pub history: Vec<TraceRow>,
}

/// Runs one trial on the first `spec.views` frames of `scene`.
pub fn run_trial(scene: &SceneBundle, prior: &LinearShapePrior<f64>, cfg: &ExperimentConfig, spec: &TrialSpec) -> Result<TrialOutput> {
    let start = Instant::now();
    let scene = if spec.views == scene.num_frames() { scene.clone() } else { scene.truncated(spec.views)? };
    let problem = Problem::new(
        &scene.frames,
        scene.intrinsics(),
        cfg.upscale,
        LossWeights { lambda: spec.lambda },
        cfg.silhouette_visibility,
    )?;
    let (state, draw) = initialize(&scene, prior, &cfg.init, cfg.seeds.init);
    let init_cloud = prior.generate(&state.s)?;
    let init = error_set(&problem, &scene.meta.poses, &scene.gt_cloud, &init_cloud, &state.p0, &state.dps)?;
    let (p0, dps, style, cloud, history, status, rounds, variables, evaluations) = match spec.method {
        Method::Prior => {
            let out = alternate_optimize(&problem, prior, state, &cfg.optimizer)?;
            let cloud = prior.generate(&out.state.s)?;
            let st = out.state;
            (st.p0, st.dps, Some(st.s), cloud, st.history, out.status, st.round, out.variables, out.evaluations)
        }
        Method::Direct => {
            let out = optimize_direct_points(&problem, &init_cloud, state.p0, state.dps, &cfg.optimizer)?;
            (out.p0, out.dps, None, out.cloud, out.history, out.status, out.round, out.variables, out.evaluations)
        }
    };
    let fin = error_set(&problem, &scene.meta.poses, &scene.gt_cloud, &cloud, &p0, &dps)?;
    let result = TrialResult {
        trial: scene.meta.id,
        scene_seed: scene.meta.seed,
        init_seed: cfg.seeds.init,
        spec: spec.clone(),
        init_draw: draw,
        init,
        fin,
        status,
        rounds,
        variables,
        evaluations,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "trial {} {}: rot {:.3}° -> {:.3}°, style {:.5} -> {:.5}, loss {:.4} -> {:.4} ({:?}, {} rounds, {:.1}s)",
        result.trial,
        spec.label(),
        result.init.mean_rotation(),
        result.fin.mean_rotation(),
        result.init.style_error,
        result.fin.style_error,
        result.init.loss.l_total,
        result.fin.loss.l_total,
        status,
        rounds,
        result.wall_time_s
    );
    Ok(TrialOutput { result, p0, dps, style, cloud, history })
}
