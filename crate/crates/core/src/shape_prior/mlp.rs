use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_backward_args, PointCloud, ShapePrior, StyleVector};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Nonlinear generator `x = W2 tanh(W1 s + b1) + b2`, reshaped to `N×3`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MlpShapePrior<T: Real> {
    d: usize,
    hidden: usize,
    n: usize,
    /// `hidden × d`, row-major.
    w1: Vec<T>,
    b1: Vec<T>,
    /// `3N × hidden`, row-major.
    w2: Vec<T>,
    b2: Vec<T>,
}

impl<T: Real> MlpShapePrior<T> {
    pub fn new(d: usize, hidden: usize, w1: Vec<T>, b1: Vec<T>, w2: Vec<T>, b2: Vec<T>) -> Result<Self> {
        if d == 0 || hidden == 0 || b2.is_empty() || !b2.len().is_multiple_of(3) {
            return Err(Error::InvalidInput("layer sizes must be positive and the output a multiple of 3".into()));
        }
        let out = b2.len();
        for (got, expected) in [(w1.len(), hidden * d), (b1.len(), hidden), (w2.len(), out * hidden)] {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        Ok(MlpShapePrior { d, hidden, n: out / 3, w1, b1, w2, b2 })
    }

    /// Randomly initialized network with scaled uniform weights around a base shape.
    pub fn random(d: usize, hidden: usize, base: &PointCloud<T>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |fan_in: usize, count: usize| -> Vec<T> {
            let a = 1.0 / (fan_in as f64).sqrt();
            (0..count).map(|_| T::of(rng.random_range(-a..a))).collect()
        };
        let w1 = draw(d, hidden * d);
        let b1 = draw(d, hidden);
        let w2 = draw(hidden, 3 * base.len() * hidden);
        Self::new(d, hidden, w1, b1, w2, base.flatten()).expect("consistent layer sizes")
    }

    fn hidden_activations(&self, s: &[T]) -> Vec<T> {
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.d..(h + 1) * self.d];
                (row.iter().zip(s).map(|(w, x)| *w * *x).sum::<T>() + self.b1[h]).tanh()
            })
            .collect()
    }

    fn check_dim(&self, s: &StyleVector<T>) -> Result<()> {
        if s.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: s.dim() });
        }
        Ok(())
    }
}

impl<T: Real> ShapePrior<T> for MlpShapePrior<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn num_points(&self) -> usize {
        self.n
    }

    fn generate(&self, s: &StyleVector<T>) -> Result<PointCloud<T>> {
        self.check_dim(s)?;
        let a = self.hidden_activations(&s.0);
        let flat: Vec<T> = (0..3 * self.n)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                row.iter().zip(&a).map(|(w, x)| *w * *x).sum::<T>() + self.b2[o]
            })
            .collect();
        Ok(PointCloud::from_flat(&flat))
    }

    fn generate_backward(&self, s: &StyleVector<T>, grad_points: &[Vector3<T>], active: Option<&[usize]>) -> Result<Vec<T>> {
        self.check_dim(s)?;
        check_backward_args(self.n, grad_points, active)?;
        let a = self.hidden_activations(&s.0);
        let mut grad_a = vec![T::zero(); self.hidden];
        let mut accumulate = |i: usize| {
            for c in 0..3 {
                let g = grad_points[i][c];
                let row = &self.w2[(3 * i + c) * self.hidden..(3 * i + c + 1) * self.hidden];
                grad_a.iter_mut().zip(row).for_each(|(ga, w)| *ga += g * *w);
            }
        };
        match active {
            Some(idx) => idx.iter().for_each(|&i| accumulate(i)),
            None => (0..self.n).for_each(accumulate),
        }
        let mut grad_s = vec![T::zero(); self.d];
        for h in 0..self.hidden {
            let pre = grad_a[h] * (T::one() - a[h] * a[h]);
            for (k, g) in grad_s.iter_mut().enumerate() {
                *g += pre * self.w1[h * self.d + k];
            }
        }
        Ok(grad_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = PointCloud::new((0..25).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect());
        let mlp = MlpShapePrior::<f64>::random(4, 16, &base, 9);
        for trial in 0..20 {
            let s = StyleVector((0..4).map(|_| rng.random_range(-1.5..1.5)).collect());
            let grad: Vec<Vector3<f64>> =
                (0..25).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let active: Option<Vec<usize>> = (trial % 2 == 0).then(|| (0..25).filter(|i| i % 3 != 0).collect());
            let f = |s: &StyleVector<f64>| -> f64 {
                let x = mlp.generate(s).unwrap();
                match &active {
                    Some(idx) => idx.iter().map(|&i| grad[i].dot(&x.points[i])).sum(),
                    None => (0..25).map(|i| grad[i].dot(&x.points[i])).sum(),
                }
            };
            let g = mlp.generate_backward(&s, &grad, active.as_deref()).unwrap();
            for k in 0..4 {
                let h = 1e-6;
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp.0[k] += h;
                sm.0[k] -= h;
                let fd = (f(&sp) - f(&sm)) / (2.0 * h);
                assert!((g[k] - fd).abs() / fd.abs().max(1e-2) < 1e-4, "{} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn rejects_inconsistent_layers() {
        assert!(MlpShapePrior::<f64>::new(2, 3, vec![0.0; 5], vec![0.0; 3], vec![0.0; 9], vec![0.0; 3]).is_err());
        assert!(MlpShapePrior::<f64>::new(2, 3, vec![0.0; 6], vec![0.0; 3], vec![0.0; 9], vec![0.0; 3]).is_ok());
    }
}
