use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::RasterOptions;
use crate::losses::{LossWeights, SilhouetteVisibility};
use crate::optimizer::OptimizerOptions;
use crate::persist::write_atomic;
use crate::shape_prior::procedural::DEFAULT_BOUNDS;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// `(lo, hi)` for each procedural family parameter.
    pub bounds: Vec<(f64, f64)>,
    pub training_shapes: usize,
    /// Latent dimension `d`.
    pub dim: usize,
    /// Points per shape `N`.
    pub num_points: usize,
    /// Fixes the corresponded sample locations on the surface.
    pub sampling_seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { bounds: DEFAULT_BOUNDS.to_vec(), training_shapes: 200, dim: 8, num_points: 2048, sampling_seed: 17 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Sequence length `L`.
    pub num_frames: usize,
    /// Camera rotation between consecutive frames.
    pub rotation_step_deg: f64,
    /// Camera-to-centroid distance range.
    pub distance: (f64, f64),
    /// Camera elevation above the ground plane.
    pub elevation_deg: (f64, f64),
    pub focal: f64,
    /// Accepted fraction of object pixels in the reference frame.
    pub coverage: (f64, f64),
    /// Pixels the object must keep from the border in every frame.
    pub border_margin: f64,
    pub max_attempts: usize,
    /// Ground-truth style is drawn per mode from `N(0, σ_k)` clipped to `±style_clip·σ_k`.
    pub style_clip: f64,
    /// Range the per-scene texture contrast is drawn from.
    pub texture_contrast: (f64, f64),
    pub raster: RasterOptions,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 128,
            width: 128,
            num_frames: 15,
            rotation_step_deg: 2.0,
            distance: (2.8, 3.6),
            elevation_deg: (5.0, 50.0),
            focal: 120.0,
            coverage: (0.10, 0.80),
            border_margin: 2.0,
            max_attempts: 1000,
            style_clip: 2.0,
            texture_contrast: (1.0, 1.0),
            raster: RasterOptions::default(),
        }
    }
}

/// Perturbation of the ground truth standing in for the initial regressors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitNoise {
    /// Scale of the half-normal rotation angle, degrees.
    pub rotation_deg: f64,
    /// Per-axis translation standard deviation as a fraction of the camera distance.
    pub translation_frac: f64,
    /// Per-mode style standard deviation as a fraction of the mode scale.
    pub style_frac: f64,
}

impl Default for InitNoise {
    fn default() -> Self {
        InitNoise { rotation_deg: 10.0, translation_frac: 0.05, style_frac: 0.5 }
    }
}

impl InitNoise {
    pub fn none() -> Self {
        InitNoise { rotation_deg: 0.0, translation_frac: 0.0, style_frac: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub trials: usize,
    pub view_counts: Vec<usize>,
    /// Thresholds of the pose success curve, degrees.
    pub pose_thresholds: Vec<f64>,
    /// Thresholds of the style success curve, in multiples of the style floor.
    pub style_thresholds: Vec<f64>,
    /// λ values of the loss-weight sweep.
    pub lambda_sweep: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            trials: 20,
            view_counts: vec![2, 5, 10, 15],
            pose_thresholds: (0..=30).map(f64::from).collect(),
            style_thresholds: (0..=20).map(|i| 0.5 * f64::from(i)).collect(),
            lambda_sweep: vec![0.0, 0.01, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub prior: u64,
    pub scenes: u64,
    pub init: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { prior: 1, scenes: 1000, init: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub prior: PriorConfig,
    pub scene: SceneConfig,
    pub init: InitNoise,
    pub weights: LossWeights,
    /// Grid refinement factor `U` of the pseudo-renderer.
    pub upscale: f64,
    pub silhouette_visibility: SilhouetteVisibility,
    pub optimizer: OptimizerOptions,
    pub evaluation: EvaluationConfig,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            prior: PriorConfig::default(),
            scene: SceneConfig::default(),
            init: InitNoise::default(),
            weights: LossWeights::default(),
            upscale: 0.35,
            silhouette_visibility: SilhouetteVisibility::PerTarget,
            optimizer: OptimizerOptions::default(),
            evaluation: EvaluationConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    check(lo >= min && lo <= hi && hi.is_finite(), || format!("{name} range ({lo}, {hi}) is invalid"))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.schema_version == SCHEMA_VERSION, || {
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)
        })?;
        let p = &self.prior;
        check(p.bounds.len() == DEFAULT_BOUNDS.len(), || format!("prior.bounds needs {} entries", DEFAULT_BOUNDS.len()))?;
        for (i, b) in p.bounds.iter().enumerate() {
            check_range(&format!("prior.bounds[{i}]"), *b, f64::MIN)?;
        }
        check(p.dim >= 1 && p.dim < p.training_shapes, || "need 1 ≤ prior.dim < prior.training_shapes".into())?;
        check(p.num_points >= 1, || "prior.num_points must be positive".into())?;
        let s = &self.scene;
        check(s.num_frames >= 2, || format!("scene.num_frames must be at least 2, got {}", s.num_frames))?;
        check(s.height >= 2 && s.width >= 2, || "image must be at least 2×2".into())?;
        check(s.rotation_step_deg > 0.0, || "scene.rotation_step_deg must be positive".into())?;
        check(s.focal > 0.0, || "scene.focal must be positive".into())?;
        check_range("scene.distance", s.distance, f64::MIN_POSITIVE)?;
        check_range("scene.elevation_deg", s.elevation_deg, -90.0)?;
        check(s.elevation_deg.1 <= 90.0, || "scene.elevation_deg must stay within ±90".into())?;
        check_range("scene.coverage", s.coverage, 0.0)?;
        check(s.coverage.1 <= 1.0, || "scene.coverage must stay within [0, 1]".into())?;
        check_range("scene.texture_contrast", s.texture_contrast, 0.0)?;
        check(s.max_attempts >= 1 && s.style_clip > 0.0 && s.border_margin >= 0.0, || "scene sampling limits are invalid".into())?;
        check(s.raster.splat_radius > 0.0, || "scene.raster.splat_radius must be positive".into())?;
        let n = &self.init;
        check(n.rotation_deg >= 0.0 && n.translation_frac >= 0.0 && n.style_frac >= 0.0, || "init noise must be non-negative".into())?;
        self.weights.validate()?;
        check(self.upscale > 0.0 && self.upscale.is_finite(), || format!("upscale must be positive, got {}", self.upscale))?;
        self.optimizer.validate()?;
        let e = &self.evaluation;
        check(e.trials >= 1, || "evaluation.trials must be positive".into())?;
        check(e.view_counts.iter().all(|&l| l >= 2), || "evaluation.view_counts must be at least 2".into())?;
        for (name, t) in [("pose_thresholds", &e.pose_thresholds), ("style_thresholds", &e.style_thresholds)] {
            check(t.windows(2).all(|w| w[0] < w[1]), || format!("evaluation.{name} must be ascending"))?;
        }
        Ok(())
    }

    pub fn bounds(&self) -> [(f64, f64); 10] {
        std::array::from_fn(|i| self.prior.bounds[i])
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_toml().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = ExperimentConfig::from_toml("upscale = 1.0\n[scene]\nnum_frames = 5\n").unwrap();
        assert_eq!(cfg.scene.num_frames, 5);
        assert_eq!(cfg.scene.height, 128);
        assert_eq!(cfg.upscale, 1.0);
    }

    #[test]
    fn rejects_invalid() {
        for text in [
            "[scene]\nnum_frames = 1\n",
            "schema_version = 7\n",
            "upscale = 0.0\n",
            "[scene]\nrotation_step_deg = 0.0\n",
            "[scene]\ndistance = [3.0, 2.0]\n",
            "[weights]\nlambda = -1.0\n",
            "[optimizer]\nwolfe_c1 = 0.95\n",
            "[evaluation]\nview_counts = [1]\n",
            "bogus = 3\n",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
