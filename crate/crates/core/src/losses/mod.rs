//! Photometric, silhouette-Chamfer and combined objectives with exact gradients,
//! plus the 3D Chamfer style metric.

pub mod nn;
mod objective;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelCoord;
use crate::scalar::Real;
use crate::shape_prior::PointCloud;
use nn::NearestIndex;

pub use objective::{
    combined_loss, photometric_loss, silhouette_loss, FrameTerm, ParamGrad, Params, Problem, ReferenceCache,
    SilhouetteVisibility, Visibility, Wrt,
};

/// Weight on the silhouette term of the combined loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 0.01 }
    }
}

impl LossWeights {
    pub fn photometric_only() -> Self {
        LossWeights { lambda: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite non-negative number, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Loss values of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ph: f64,
    pub l_cd: f64,
    /// `l_ph + lambda · l_cd`.
    pub l_total: f64,
    /// Photometric residual pairs summed over target frames.
    pub n_point_pairs: usize,
    /// Reference-visible points dropped from a frame pair, summed over target frames.
    pub n_dropped_oob: usize,
    /// `l_ph / n_point_pairs` (0 when there are no pairs).
    pub ph_mean: f64,
    /// Target frames whose Chamfer term fell back to the empty-set penalty.
    pub n_empty_silhouette: usize,
}

/// `Σ_k min_j ‖a_k − b_j‖² + Σ_j min_k ‖b_j − a_k‖²` and its gradient with respect to each `b_j`.
///
/// `a` is constant data (silhouette pixels), `b` the projected points.
pub fn chamfer_2d<T: Real>(a: &[PixelCoord<T>], b: &[PixelCoord<T>]) -> Result<(T, Vec<Vector2<T>>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet("chamfer_2d needs two non-empty sets"));
    }
    let a_index = NearestIndex::new(a.iter().map(|p| [p.u, p.v]).collect(), b.len()).expect("non-empty");
    Ok(chamfer_2d_indexed(&a_index, b, true))
}

/// Chamfer against a prebuilt index over the constant set.
pub(crate) fn chamfer_2d_indexed<T: Real>(a: &NearestIndex<T, 2>, b: &[PixelCoord<T>], with_grad: bool) -> (T, Vec<Vector2<T>>) {
    let bp: Vec<[T; 2]> = b.iter().map(|p| [p.u, p.v]).collect();
    let ap = a.points();
    let b_index = NearestIndex::new(bp.clone(), ap.len()).expect("non-empty");
    let two = T::of(2.0);
    let mut grad = if with_grad { vec![Vector2::zeros(); b.len()] } else { Vec::new() };
    let mut forward = T::zero();
    for q in ap {
        let (j, d) = b_index.nearest(q);
        forward += d;
        if with_grad {
            grad[j] += Vector2::new(bp[j][0] - q[0], bp[j][1] - q[1]) * two;
        }
    }
    let mut backward = T::zero();
    for (j, q) in bp.iter().enumerate() {
        let (k, d) = a.nearest(q);
        backward += d;
        if with_grad {
            grad[j] += Vector2::new(q[0] - ap[k][0], q[1] - ap[k][1]) * two;
        }
    }
    (forward + backward, grad)
}

/// `(1/N)(Σ_gt min ‖x_gt − x‖² + Σ_x min ‖x − x_gt‖²)` with `N = |cloud|`.
pub fn style_error<T: Real>(gt: &PointCloud<T>, cloud: &PointCloud<T>) -> Result<T> {
    if gt.is_empty() || cloud.is_empty() {
        return Err(Error::EmptySet("style_error needs two non-empty clouds"));
    }
    let g: Vec<[T; 3]> = gt.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let c: Vec<[T; 3]> = cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let gi = NearestIndex::new(g.clone(), c.len()).expect("non-empty");
    let ci = NearestIndex::new(c.clone(), g.len()).expect("non-empty");
    let mut forward = T::zero();
    for q in &g {
        forward += ci.nearest(q).1;
    }
    let mut backward = T::zero();
    for q in &c {
        backward += gi.nearest(q).1;
    }
    Ok((forward + backward) / T::from_count(cloud.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn chamfer_examples() {
        let a = vec![PixelCoord::new(0.0, 0.0)];
        let b = vec![PixelCoord::new(3.0, 4.0)];
        let (v, g) = chamfer_2d(&a, &b).unwrap();
        assert_eq!(v, 50.0);
        assert_eq!(g[0], Vector2::new(12.0, 16.0));
        let s: Vec<_> = (0..7).map(|i| PixelCoord::new(i as f64, (i * i) as f64)).collect();
        assert_eq!(chamfer_2d(&s, &s).unwrap().0, 0.0);
        assert!(matches!(chamfer_2d(&s, &[]), Err(Error::EmptySet(_))));
        assert!(chamfer_2d::<f64>(&[], &s).is_err());
    }

    #[test]
    fn single_point_on_one_pixel_mask() {
        let (v, g) = chamfer_2d(&[PixelCoord::new(5.0, 9.0)], &[PixelCoord::new(5.0, 9.0)]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g[0], Vector2::zeros());
    }

    #[test]
    fn style_error_examples() {
        let a = PointCloud::new(vec![Vector3::new(0.0, 0.0, 0.0)]);
        let b = PointCloud::new(vec![Vector3::new(1.0, 0.0, 0.0)]);
        assert_eq!(style_error(&a, &b).unwrap(), 2.0);
        assert_eq!(style_error(&b, &b).unwrap(), 0.0);
        assert!(style_error(&a, &PointCloud::new(vec![])).is_err());
    }

    #[test]
    fn lambda_validation() {
        assert!(LossWeights { lambda: -1.0 }.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
        assert_eq!(LossWeights::default().lambda, 0.01);
    }
}
