//! Differentiable shape generators mapping a low-dimensional style vector to a
//! dense point cloud, and the procedural shape family they are fit to.

mod linear;
mod mlp;
mod pca;
pub mod procedural;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use linear::LinearShapePrior;
pub use mlp::MlpShapePrior;
pub use pca::fit_pca;

/// Latent shape embedding `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", transparent)]
pub struct StyleVector<T: Real>(pub Vec<T>);

impl<T: Real> StyleVector<T> {
    pub fn zeros(d: usize) -> Self {
        StyleVector(vec![T::zero(); d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Ordered point set; index `i` is a persistent identity across generator calls.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T: Real> {
    pub points: Vec<Vector3<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<T> {
        let n = T::from_count(self.points.len().max(1));
        self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Flattened `[x0, y0, z0, x1, ...]`.
    pub fn flatten(&self) -> Vec<T> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(flat: &[T]) -> Self {
        assert_eq!(flat.len() % 3, 0);
        PointCloud { points: flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect() }
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud { points: self.points.iter().map(|p| p.map(|v| U::of(v.f64()))).collect() }
    }
}

/// Per-point appearance attached at sampling time; it follows the point index
/// through any style deformation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceAttributes {
    /// Linear RGB albedo in `[0, 1]`.
    pub albedo: Vec<[f64; 3]>,
    /// Outward unit normals in the canonical frame.
    pub normals: Vec<[f64; 3]>,
}

impl SurfaceAttributes {
    pub fn len(&self) -> usize {
        self.albedo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.albedo.is_empty()
    }
}

/// A differentiable generator `G(s)`.
pub trait ShapePrior<T: Real>: Send + Sync {
    /// Latent dimension `d`.
    fn dim(&self) -> usize;

    /// Number of generated points `N`.
    fn num_points(&self) -> usize;

    fn generate(&self, s: &StyleVector<T>) -> Result<PointCloud<T>>;

    /// Vector-Jacobian product `Σ_{i ∈ active} (∂x_i/∂s)ᵀ g_i`; all points when `active` is `None`.
    fn generate_backward(&self, s: &StyleVector<T>, grad_points: &[Vector3<T>], active: Option<&[usize]>) -> Result<Vec<T>>;

    /// Typical magnitude of each style coordinate.
    fn style_scales(&self) -> Vec<T> {
        vec![T::one(); self.dim()]
    }
}

pub(crate) fn check_backward_args<T: Real>(n: usize, grad_points: &[Vector3<T>], active: Option<&[usize]>) -> Result<()> {
    if grad_points.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: grad_points.len() });
    }
    if let Some(idx) = active {
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidInput(format!("active index {bad} out of range for {n} points")));
        }
    }
    Ok(())
}
