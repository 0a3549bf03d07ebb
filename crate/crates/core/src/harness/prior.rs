use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::persist::{read_json, write_json};
use crate::shape_prior::procedural::{sample_procedural_shape_in, FamilyMetadata, ProceduralShapeParams, PARAM_NAMES};
use crate::shape_prior::{fit_pca, LinearShapePrior, ShapePrior};

/// Fits the linear prior on `training_shapes` random family members.
///
/// Appearance is taken from the mid-bounds member: albedo depends only on the
/// surface location, and its normals stand in for every style.
pub fn fit_prior(cfg: &ExperimentConfig) -> Result<LinearShapePrior<f64>> {
    let bounds = cfg.bounds();
    let p = &cfg.prior;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.prior);
    let shapes = (0..p.training_shapes)
        .map(|_| {
            let params = ProceduralShapeParams::sample(&bounds, &mut rng);
            sample_procedural_shape_in(&params, &bounds, p.num_points, p.sampling_seed).map(|s| s.cloud)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut prior = fit_pca(&shapes, p.dim)?;
    let reference = sample_procedural_shape_in(&ProceduralShapeParams::midpoint(&bounds), &bounds, p.num_points, p.sampling_seed)?;
    prior.attributes = Some(reference.attributes);
    prior.family = Some(FamilyMetadata {
        param_names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        bounds: p.bounds.clone(),
        training_shapes: p.training_shapes,
        training_seed: cfg.seeds.prior,
        sampling_seed: p.sampling_seed,
    });
    Ok(prior)
}

pub fn save_prior(path: &Path, prior: &LinearShapePrior<f64>) -> Result<()> {
    write_json(path, prior)
}

pub fn load_prior(path: &Path) -> Result<LinearShapePrior<f64>> {
    let prior: LinearShapePrior<f64> = read_json(path)?;
    let checked = LinearShapePrior::new(prior.mean.clone(), prior.basis.clone(), prior.scales.clone())
        .map_err(|e| Error::format(path, e.to_string()))?;
    if prior.d != checked.d || prior.n != checked.n {
        return Err(Error::format(path, "stored d/n disagree with the basis"));
    }
    if let Some(a) = &prior.attributes {
        if a.len() != prior.num_points() || a.normals.len() != prior.num_points() {
            return Err(Error::format(path, "attribute count differs from the point count"));
        }
    }
    Ok(prior)
}

/// FNV-1a digest of the prior's parameters, recorded with every scene.
pub fn prior_fingerprint(prior: &LinearShapePrior<f64>) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |v: f64| {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    prior.mean.iter().chain(prior.basis.iter().flatten()).chain(&prior.scales).for_each(|&v| eat(v));
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.prior.training_shapes = 24;
        cfg.prior.num_points = 256;
        cfg.prior.dim = 4;
        cfg
    }

    #[test]
    fn deterministic_and_persistent() {
        let a = fit_prior(&small()).unwrap();
        let b = fit_prior(&small()).unwrap();
        assert_eq!(prior_fingerprint(&a), prior_fingerprint(&b));
        assert!(a.orthonormality_error() < 1e-8);
        assert!(a.scales.windows(2).all(|w| w[0] >= w[1]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.json");
        save_prior(&path, &a).unwrap();
        let back = load_prior(&path).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_prior(Path::new("/nonexistent/prior.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/prior.json"));
    }
}
