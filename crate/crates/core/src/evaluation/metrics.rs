use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, geodesic_rotation_error, PoseTwist};
use crate::losses::{LossBreakdown, Problem, Wrt};
use crate::scalar::Real;
use crate::shape_prior::PointCloud;

/// Errors of one parameter set against the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSet {
    /// Geodesic rotation error of every frame, degrees.
    pub rotation_deg: Vec<f64>,
    /// Camera-center distance of every frame, world units.
    pub translation: Vec<f64>,
    pub style_error: f64,
    /// Loss with visibility recomputed at these parameters.
    pub loss: LossBreakdown,
}

impl ErrorSet {
    pub fn mean_rotation(&self) -> f64 {
        mean(&self.rotation_deg)
    }

    pub fn mean_translation(&self) -> f64 {
        mean(&self.translation)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median (mean of the middle pair for even lengths); NaN when empty.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn camera_center(p: &PoseTwist<f64>) -> nalgebra::Vector3<f64> {
    let tf = p.transform();
    -(tf.rot.0.transpose() * tf.trans)
}

/// Per-frame rotation (degrees) and camera-center errors of `p0 ∘ dp_l` against `gt`.
pub fn pose_errors(gt: &[PoseTwist<f64>], p0: &PoseTwist<f64>, dps: &[PoseTwist<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if gt.len() != dps.len() + 1 {
        return Err(Error::DimensionMismatch { expected: gt.len(), got: dps.len() + 1 });
    }
    let poses: Vec<PoseTwist<f64>> = std::iter::once(*p0).chain(dps.iter().map(|dp| compose(p0, dp))).collect();
    let rot = poses.iter().zip(gt).map(|(p, g)| geodesic_rotation_error(&g.rotation(), &p.rotation())).collect();
    let trans = poses.iter().zip(gt).map(|(p, g)| (camera_center(p) - camera_center(g)).norm()).collect();
    Ok((rot, trans))
}

/// Loss at `(cloud, p0, dps)` with freshly computed visibility.
pub fn loss_at<T: Real>(problem: &Problem<T>, cloud: &PointCloud<T>, p0: &PoseTwist<T>, dps: &[PoseTwist<T>]) -> Result<LossBreakdown> {
    let vis = problem.visibility(cloud, p0, dps)?;
    let terms = problem.frame_terms(cloud, p0, dps, &vis, Wrt::NONE)?;
    Ok(problem.breakdown(&terms))
}

/// Full error set of a candidate reconstruction.
pub fn error_set(
    problem: &Problem<f64>,
    gt_poses: &[PoseTwist<f64>],
    gt_cloud: &PointCloud<f64>,
    cloud: &PointCloud<f64>,
    p0: &PoseTwist<f64>,
    dps: &[PoseTwist<f64>],
) -> Result<ErrorSet> {
    let (rotation_deg, translation) = pose_errors(gt_poses, p0, dps)?;
    Ok(ErrorSet {
        rotation_deg,
        translation,
        style_error: crate::losses::style_error(gt_cloud, cloud)?,
        loss: loss_at(problem, cloud, p0, dps)?,
    })
}

/// Fraction of errors at or below each threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub thresholds: Vec<f64>,
    pub success: Vec<f64>,
}

pub fn success_rate_curve(errors: &[f64], thresholds: &[f64]) -> Result<SuccessCurve> {
    if errors.is_empty() {
        return Err(Error::EmptySet("success_rate_curve needs at least one error"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("thresholds must be strictly ascending".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let success = thresholds.iter().map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n).collect();
    Ok(SuccessCurve { thresholds: thresholds.to_vec(), success })
}
