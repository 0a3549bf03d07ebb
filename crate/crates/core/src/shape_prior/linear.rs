use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::procedural::FamilyMetadata;
use super::{check_backward_args, PointCloud, ShapePrior, StyleVector, SurfaceAttributes};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Linear generator `G(s) = μ + Σ_k s_k B_k` with orthonormal flattened modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LinearShapePrior<T: Real> {
    pub d: usize,
    pub n: usize,
    /// Flattened mean shape, length `3N`.
    pub mean: Vec<T>,
    /// `d` flattened modes, each of length `3N`.
    pub basis: Vec<Vec<T>>,
    /// Standard deviation of the training coefficients along each mode.
    pub scales: Vec<T>,
    /// Singular values of the centered training matrix.
    pub singular_values: Vec<T>,
    pub attributes: Option<SurfaceAttributes>,
    pub family: Option<FamilyMetadata>,
}

impl<T: Real> LinearShapePrior<T> {
    pub fn new(mean: Vec<T>, basis: Vec<Vec<T>>, scales: Vec<T>) -> Result<Self> {
        if mean.is_empty() || !mean.len().is_multiple_of(3) {
            return Err(Error::InvalidInput("mean must hold 3N coordinates".into()));
        }
        if basis.is_empty() {
            return Err(Error::InvalidInput("prior needs at least one mode".into()));
        }
        for b in &basis {
            if b.len() != mean.len() {
                return Err(Error::DimensionMismatch { expected: mean.len(), got: b.len() });
            }
        }
        if scales.len() != basis.len() {
            return Err(Error::DimensionMismatch { expected: basis.len(), got: scales.len() });
        }
        Ok(LinearShapePrior {
            d: basis.len(),
            n: mean.len() / 3,
            singular_values: scales.clone(),
            mean,
            basis,
            scales,
            attributes: None,
            family: None,
        })
    }

    pub fn mean_cloud(&self) -> PointCloud<T> {
        PointCloud::from_flat(&self.mean)
    }

    pub fn mode(&self, k: usize) -> PointCloud<T> {
        PointCloud::from_flat(&self.basis[k])
    }

    /// Largest deviation of the flattened Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.d {
            for b in a..self.d {
                let dot: f64 = self.basis[a].iter().zip(&self.basis[b]).map(|(x, y)| x.f64() * y.f64()).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Least-squares style of a corresponded cloud, `s_k = B_k · (X − μ)`.
    pub fn project_to_style(&self, cloud: &PointCloud<T>) -> Result<StyleVector<T>> {
        if cloud.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: cloud.len() });
        }
        let s = self
            .basis
            .iter()
            .map(|b| {
                cloud
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let j = 3 * i;
                        b[j] * (p.x - self.mean[j]) + b[j + 1] * (p.y - self.mean[j + 1]) + b[j + 2] * (p.z - self.mean[j + 2])
                    })
                    .sum::<T>()
            })
            .collect();
        Ok(StyleVector(s))
    }

    pub fn cast<U: Real>(&self) -> LinearShapePrior<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        LinearShapePrior {
            d: self.d,
            n: self.n,
            mean: conv(&self.mean),
            basis: self.basis.iter().map(conv).collect(),
            scales: conv(&self.scales),
            singular_values: conv(&self.singular_values),
            attributes: self.attributes.clone(),
            family: self.family.clone(),
        }
    }

    fn check_dim(&self, s: &StyleVector<T>) -> Result<()> {
        if s.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: s.dim() });
        }
        Ok(())
    }
}

impl<T: Real> ShapePrior<T> for LinearShapePrior<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn num_points(&self) -> usize {
        self.n
    }

    fn generate(&self, s: &StyleVector<T>) -> Result<PointCloud<T>> {
        self.check_dim(s)?;
        let mut flat = self.mean.clone();
        for (b, &sk) in self.basis.iter().zip(&s.0) {
            for (x, &bk) in flat.iter_mut().zip(b) {
                *x += sk * bk;
            }
        }
        Ok(PointCloud::from_flat(&flat))
    }

    fn style_scales(&self) -> Vec<T> {
        self.scales.iter().map(|&v| if v > T::zero() { v } else { T::one() }).collect()
    }

    fn generate_backward(&self, s: &StyleVector<T>, grad_points: &[Vector3<T>], active: Option<&[usize]>) -> Result<Vec<T>> {
        self.check_dim(s)?;
        check_backward_args(self.n, grad_points, active)?;
        let dot = |b: &[T], i: usize| {
            let g = &grad_points[i];
            b[3 * i] * g.x + b[3 * i + 1] * g.y + b[3 * i + 2] * g.z
        };
        Ok(self
            .basis
            .iter()
            .map(|b| match active {
                Some(idx) => idx.iter().map(|&i| dot(b, i)).sum(),
                None => (0..self.n).map(|i| dot(b, i)).sum(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random prior with orthonormal modes built by Gram-Schmidt.
    pub(crate) fn random_prior(n: usize, d: usize, seed: u64) -> LinearShapePrior<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < d {
            let mut v: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
        LinearShapePrior::new(mean, basis, vec![1.0; d]).unwrap()
    }

    fn random_style(rng: &mut ChaCha8Rng, d: usize) -> StyleVector<f64> {
        StyleVector((0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    #[test]
    fn zero_style_gives_mean() {
        let p = random_prior(50, 4, 1);
        assert_eq!(p.generate(&StyleVector::zeros(4)).unwrap().flatten(), p.mean);
    }

    #[test]
    fn one_hot_style_reads_out_basis() {
        let p = random_prior(50, 4, 2);
        let mut s = StyleVector::zeros(4);
        s.0[0] = 1.0;
        let out = p.generate(&s).unwrap().flatten();
        let expect: Vec<f64> = p.mean.iter().zip(&p.basis[0]).map(|(m, b)| m + b).collect();
        assert_eq!(out, expect);
    }

    #[test]
    fn generate_matches_reassociated_sum() {
        let p = random_prior(80, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..20 {
            let s = random_style(&mut rng, 6);
            let out = p.generate(&s).unwrap();
            for i in 0..p.n {
                for c in 0..3 {
                    // modes summed in reverse order, mean added last
                    let mut acc = 0.0;
                    for k in (0..p.d).rev() {
                        acc += s.0[k] * p.basis[k][3 * i + c];
                    }
                    acc += p.mean[3 * i + c];
                    assert!((out.points[i][c] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn generate_rejects_wrong_dimension() {
        let p = random_prior(10, 3, 4);
        assert!(matches!(p.generate(&StyleVector::zeros(2)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn backward_zero_cotangent() {
        let p = random_prior(30, 5, 5);
        let g = p.generate_backward(&StyleVector::zeros(5), &vec![Vector3::zeros(); 30], None).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_single_point_is_dot_product() {
        let p = random_prior(30, 5, 6);
        let mut grad = vec![Vector3::zeros(); 30];
        grad[7] = Vector3::new(0.3, -1.2, 0.5);
        let g = p.generate_backward(&StyleVector::zeros(5), &grad, None).unwrap();
        for k in 0..5 {
            let b = &p.basis[k];
            let expect = b[21] * 0.3 + b[22] * -1.2 + b[23] * 0.5;
            assert!((g[k] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_subset() {
        let p = random_prior(60, 6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..20 {
            let s = random_style(&mut rng, 6);
            let grad: Vec<Vector3<f64>> =
                (0..60).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let active: Vec<usize> = (0..60).filter(|_| rng.random_bool(0.4)).collect();
            let f = |s: &StyleVector<f64>| -> f64 {
                let x = p.generate(s).unwrap();
                active.iter().map(|&i| grad[i].dot(&x.points[i])).sum()
            };
            let g = p.generate_backward(&s, &grad, Some(&active)).unwrap();
            for k in 0..6 {
                let h = 1e-5;
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp.0[k] += h;
                sm.0[k] -= h;
                let fd = (f(&sp) - f(&sm)) / (2.0 * h);
                assert!((g[k] - fd).abs() / fd.abs().max(1e-3) < 1e-6, "{} vs {}", g[k], fd);
            }
        }
    }

    #[test]
    fn backward_is_additive_over_partitions() {
        let p = random_prior(40, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let grad: Vec<Vector3<f64>> =
            (0..40).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let s = StyleVector::zeros(4);
        let full = p.generate_backward(&s, &grad, None).unwrap();
        let (a, b): (Vec<usize>, Vec<usize>) = (0..40).partition(|_| rng.random_bool(0.5));
        let ga = p.generate_backward(&s, &grad, Some(&a)).unwrap();
        let gb = p.generate_backward(&s, &grad, Some(&b)).unwrap();
        for k in 0..4 {
            assert!((full[k] - ga[k] - gb[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_bad_indices() {
        let p = random_prior(10, 2, 9);
        let grad = vec![Vector3::zeros(); 10];
        assert!(p.generate_backward(&StyleVector::zeros(2), &grad, Some(&[10])).is_err());
        assert!(p.generate_backward(&StyleVector::zeros(2), &grad[..9], None).is_err());
    }

    #[test]
    fn style_round_trip_and_projection() {
        let p = random_prior(70, 5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        assert!(p.project_to_style(&p.mean_cloud()).unwrap().0.iter().all(|v| v.abs() < 1e-14));
        for _ in 0..20 {
            let s = random_style(&mut rng, 5);
            let back = p.project_to_style(&p.generate(&s).unwrap()).unwrap();
            for (a, b) in back.0.iter().zip(&s.0) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        // outside the span: residual is orthogonal to every mode
        let cloud = PointCloud::new((0..70).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect());
        let s = p.project_to_style(&cloud).unwrap();
        let recon = p.generate(&s).unwrap().flatten();
        let resid: Vec<f64> = cloud.flatten().iter().zip(&recon).map(|(a, b)| a - b).collect();
        for b in &p.basis {
            let dot: f64 = resid.iter().zip(b).map(|(x, y)| x * y).sum();
            assert!(dot.abs() < 1e-8);
        }
    }

    #[test]
    fn single_precision_prior() {
        let p = random_prior(20, 3, 11).cast::<f32>();
        let s = StyleVector(vec![0.5f32, -0.25, 1.0]);
        let back = p.project_to_style(&p.generate(&s).unwrap()).unwrap();
        for (a, b) in back.0.iter().zip(&s.0) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
