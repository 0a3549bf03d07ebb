//! Exact nearest-neighbour queries over small point sets: brute force, or a
//! uniform grid searched in growing shells.

use crate::scalar::Real;

/// Set sizes (query count × reference count) up to which brute force is used.
pub const BRUTE_FORCE_MAX_WORK: usize = 1 << 16;

#[inline]
pub fn dist2<T: Real, const D: usize>(a: &[T; D], b: &[T; D]) -> T {
    let mut s = T::zero();
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

/// Nearest reference point by `(squared distance, index)` order, scanning all points.
pub fn brute_nearest<T: Real, const D: usize>(points: &[[T; D]], q: &[T; D]) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, q);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best
}

/// Uniform bucket grid over a fixed point set.
#[derive(Clone, Debug)]
pub struct NnGrid<T: Real, const D: usize> {
    points: Vec<[T; D]>,
    origin: [T; D],
    cell: T,
    dims: [usize; D],
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl<T: Real, const D: usize> NnGrid<T, D> {
    /// Builds a grid with roughly two points per occupied cell. Returns `None` for an empty set.
    pub fn new(points: Vec<[T; D]>) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in &points {
            for k in 0..D {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent: Vec<f64> = (0..D).map(|k| (hi[k] - lo[k]).f64()).collect();
        let max_extent = extent.iter().copied().fold(0.0, f64::max);
        let volume: f64 = extent.iter().map(|e| e.max(1e-3 * max_extent.max(1e-12))).product();
        let mut cell = (2.0 * volume / points.len() as f64).powf(1.0 / D as f64);
        if !(cell > 0.0 && cell.is_finite()) {
            cell = 1.0;
        }
        let mut dims = [1usize; D];
        for k in 0..D {
            dims[k] = ((extent[k] / cell).floor() as usize + 1).min(1 << 10);
        }
        let mut grid = NnGrid { points, origin: lo, cell: T::of(cell), dims, starts: Vec::new(), items: Vec::new() };
        let total: usize = dims.iter().product();
        let keys: Vec<usize> = grid.points.iter().map(|p| grid.flat(&grid.cell_of(p))).collect();
        let mut counts = vec![0usize; total + 1];
        for &c in &keys {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; keys.len()];
        for (i, &c) in keys.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        Some(grid)
    }

    pub fn points(&self) -> &[[T; D]] {
        &self.points
    }

    fn cell_of(&self, p: &[T; D]) -> [isize; D] {
        let mut c = [0isize; D];
        for k in 0..D {
            let f = ((p[k] - self.origin[k]) / self.cell).floor();
            let f = f.max(T::of(-1.0)).min(T::from_count(self.dims[k]));
            c[k] = (f.to_isize().unwrap_or(0)).clamp(0, self.dims[k] as isize - 1);
        }
        c
    }

    fn flat(&self, c: &[isize; D]) -> usize {
        let mut i = 0usize;
        for k in (0..D).rev() {
            i = i * self.dims[k] + c[k] as usize;
        }
        i
    }

    /// Nearest point by `(squared distance, index)` order; identical to [`brute_nearest`].
    pub fn nearest(&self, q: &[T; D]) -> (usize, T) {
        let center = self.cell_of(q);
        let max_r = self.dims.iter().copied().max().unwrap_or(1) as isize;
        let mut best: Option<(usize, T)> = None;
        for r in 0..=max_r {
            self.visit_shell(&center, r, &mut |i| {
                let d = dist2(&self.points[i], q);
                match best {
                    Some((bi, bd)) if d > bd || (d == bd && i > bi) => {}
                    _ => best = Some((i, d)),
                }
            });
            if let Some((_, bd)) = best {
                // distance from q to the outside of the searched block
                let mut bound = T::infinity();
                let mut covers_all = true;
                for k in 0..D {
                    let lo_c = center[k] - r;
                    let hi_c = center[k] + r + 1;
                    if lo_c > 0 {
                        covers_all = false;
                        bound = bound.min(q[k] - (self.origin[k] + T::of(lo_c as f64) * self.cell));
                    }
                    if hi_c < self.dims[k] as isize {
                        covers_all = false;
                        bound = bound.min(self.origin[k] + T::of(hi_c as f64) * self.cell - q[k]);
                    }
                }
                if covers_all {
                    break;
                }
                let bound = bound - self.cell * T::of(1e-9);
                if bound > T::zero() && bd < bound * bound {
                    break;
                }
            }
        }
        best.expect("grid is non-empty")
    }

    fn visit_shell(&self, center: &[isize; D], r: isize, f: &mut impl FnMut(usize)) {
        let mut lo = [0isize; D];
        let mut hi = [0isize; D];
        for k in 0..D {
            lo[k] = (center[k] - r).max(0);
            hi[k] = (center[k] + r).min(self.dims[k] as isize - 1);
        }
        let mut c = lo;
        loop {
            let on_shell = (0..D).any(|k| (c[k] - center[k]).abs() == r);
            if on_shell {
                let j = self.flat(&c);
                for &i in &self.items[self.starts[j]..self.starts[j + 1]] {
                    f(i);
                }
            }
            let mut k = 0;
            loop {
                if k == D {
                    return;
                }
                if c[k] < hi[k] {
                    c[k] += 1;
                    break;
                }
                c[k] = lo[k];
                k += 1;
            }
        }
    }
}

/// Nearest-neighbour index that picks brute force or a grid by expected work.
#[derive(Clone, Debug)]
pub enum NearestIndex<T: Real, const D: usize> {
    Brute(Vec<[T; D]>),
    Grid(NnGrid<T, D>),
}

impl<T: Real, const D: usize> NearestIndex<T, D> {
    /// `expected_queries` sizes the brute-force/grid decision.
    pub fn new(points: Vec<[T; D]>, expected_queries: usize) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        if points.len().saturating_mul(expected_queries) <= BRUTE_FORCE_MAX_WORK {
            Some(NearestIndex::Brute(points))
        } else {
            NnGrid::new(points).map(NearestIndex::Grid)
        }
    }

    pub fn points(&self) -> &[[T; D]] {
        match self {
            NearestIndex::Brute(p) => p,
            NearestIndex::Grid(g) => g.points(),
        }
    }

    #[inline]
    pub fn nearest(&self, q: &[T; D]) -> (usize, T) {
        match self {
            NearestIndex::Brute(p) => brute_nearest(p, q).expect("index is non-empty"),
            NearestIndex::Grid(g) => g.nearest(q),
        }
    }
}
