use nalgebra::DMatrix;

use super::{LinearShapePrior, PointCloud};
use crate::error::{Error, Result};

/// Fits a `d`-mode linear prior to index-corresponded training shapes.
///
/// Modes are the top right singular vectors of the centered data matrix
/// (rows: shapes, columns: flattened coordinates). Each mode's sign is fixed so
/// that its largest-magnitude entry is positive.
pub fn fit_pca(shapes: &[PointCloud<f64>], d: usize) -> Result<LinearShapePrior<f64>> {
    if d == 0 {
        return Err(Error::InvalidInput("latent dimension must be at least 1".into()));
    }
    if shapes.len() < d + 1 {
        return Err(Error::InvalidInput(format!("need at least {} shapes for {d} modes, got {}", d + 1, shapes.len())));
    }
    let n = shapes[0].len();
    if n == 0 {
        return Err(Error::EmptySet("training shape"));
    }
    if let Some(bad) = shapes.iter().find(|s| s.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
    }
    let rows = shapes.len();
    let cols = 3 * n;
    let mut data = DMatrix::<f64>::zeros(rows, cols);
    for (r, s) in shapes.iter().enumerate() {
        for (c, v) in s.flatten().into_iter().enumerate() {
            data[(r, c)] = v;
        }
    }
    let mean: Vec<f64> = (0..cols).map(|c| data.column(c).sum() / rows as f64).collect();
    for c in 0..cols {
        let m = mean[c];
        data.column_mut(c).add_scalar_mut(-m);
    }

    // Modes come from the eigen-decomposition of the small Gram matrix A·Aᵀ
    // (rows × rows): v_k = Aᵀu_k / σ_k. Directions with negligible variance are
    // completed with an orthonormal complement so the basis stays orthonormal.
    let gram = &data * data.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let cutoff = 1e-12 * top;

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut singular_values = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let lambda = eig.eigenvalues[k].max(0.0);
        if lambda <= cutoff || lambda == 0.0 {
            break;
        }
        let sigma = lambda.sqrt();
        let v = data.tr_mul(&eig.eigenvectors.column(k)) / sigma;
        basis.push(v.iter().copied().collect());
        singular_values.push(sigma);
    }
    let mut e = 0;
    while basis.len() < d {
        let mut v = vec![0.0; cols];
        v[e % cols] = 1.0;
        e += 1;
        basis.push(v);
        singular_values.push(0.0);
    }
    orthonormalize(&mut basis);
    for v in basis.iter_mut() {
        let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let scales: Vec<f64> = singular_values.iter().map(|s| s / ((rows - 1) as f64).sqrt()).collect();
    let mut prior = LinearShapePrior::new(mean, basis, scales)?;
    prior.singular_values = singular_values;
    Ok(prior)
}

/// Two passes of modified Gram-Schmidt, in order; vectors that collapse are
/// replaced by the next unit vector independent of the ones already accepted.
fn orthonormalize(basis: &mut [Vec<f64>]) {
    let cols = basis.first().map_or(0, |b| b.len());
    let mut fresh = 0usize;
    for i in 0..basis.len() {
        loop {
            for _ in 0..2 {
                for j in 0..i {
                    let dot: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
                    let (head, tail) = basis.split_at_mut(i);
                    tail[0].iter_mut().zip(&head[j]).for_each(|(a, b)| *a -= dot * b);
                }
            }
            let norm = basis[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                basis[i].iter_mut().for_each(|x| *x /= norm);
                break;
            }
            basis[i] = vec![0.0; cols];
            basis[i][fresh % cols] = 1.0;
            fresh += 1;
        }
    }
}
