//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsOptions {
    /// Curvature pairs kept, `m`.
    pub history: usize,
    pub max_iters: usize,
    /// Stop when `‖∇f‖₂` falls below this.
    pub grad_tol: f64,
    /// A step whose relative decrease `(f_k − f_{k+1}) / max(|f_k|, 1e-300)` is
    /// below this floor is discarded and the run stops at `x_k`.
    pub min_rel_decrease: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_search: usize,
    /// Euclidean length of the first trial step (later iterations use the unit
    /// quasi-Newton step).
    pub initial_step: f64,
    /// Magnitude the relative decrease is measured against instead of `|f_k|`.
    #[serde(skip)]
    pub decrease_reference: Option<f64>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            history: 10,
            max_iters: 200,
            grad_tol: 1e-10,
            min_rel_decrease: 0.0,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search: 30,
            initial_step: 1.0,
            decrease_reference: None,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::Config("L-BFGS history must be at least 1".into()));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::Config(format!("need 0 < c1 < c2 < 1, got c1={} c2={}", self.wolfe_c1, self.wolfe_c2)));
        }
        if !(self.initial_step > 0.0) || self.min_rel_decrease < 0.0 || self.grad_tol < 0.0 {
            return Err(Error::Config("step and tolerances must be non-negative (initial step positive)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    GradientTolerance,
    RelativeDecrease,
    IterationLimit,
    /// No step satisfying the Wolfe conditions was found; the best point seen is returned.
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult<T: Real> {
    pub x: Vec<T>,
    pub value: T,
    pub grad: Vec<T>,
    /// Accepted steps.
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
    /// Objective after each accepted step, starting with `f(x0)`.
    pub values: Vec<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

struct Probe<T: Real> {
    alpha: T,
    value: T,
    grad: Vec<T>,
    slope: T,
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient.
///
/// Fails with `NonFiniteObjective` only when `f(x0)` is not finite; non-finite
/// values met during the line search shrink the step instead.
pub fn lbfgs_minimize<T: Real>(
    f: &mut dyn FnMut(&[T]) -> Result<(T, Vec<T>)>,
    x0: &[T],
    opts: &LbfgsOptions,
) -> Result<LbfgsResult<T>> {
    opts.validate()?;
    let n = x0.len();
    let (f0, g0) = f(x0)?;
    if g0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: g0.len() });
    }
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut g = g0.clone();
    let mut evaluations = 1;
    let mut values = vec![fx];
    let mut pairs: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.history);
    let c1 = T::of(opts.wolfe_c1);
    let c2 = T::of(opts.wolfe_c2);
    let mut iterations = 0;
    let status = loop {
        if norm(&g) <= T::of(opts.grad_tol) {
            break LbfgsStatus::GradientTolerance;
        }
        if iterations >= opts.max_iters {
            break LbfgsStatus::IterationLimit;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = *rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * *yi);
            alphas.push(a);
        }
        // scaling from the oldest pair: while the memory is not full it stays fixed,
        // which keeps exact-line-search runs on quadratics finite
        if let Some((s, y, _)) = pairs.front() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * *si);
        }
        let mut dir: Vec<T> = q.into_iter().map(|v| -v).collect();
        let mut slope0 = dot(&g, &dir);
        if !(slope0 < T::zero()) {
            // not a descent direction: restart from steepest descent
            pairs.clear();
            dir = g.iter().map(|v| -*v).collect();
            slope0 = dot(&g, &dir);
        }
        let alpha0 = if pairs.is_empty() { T::of(opts.initial_step) / norm(&dir) } else { T::one() };

        let mut eval_at = |alpha: T, evaluations: &mut usize| -> Option<Probe<T>> {
            let xt: Vec<T> = x.iter().zip(&dir).map(|(xi, di)| *xi + alpha * *di).collect();
            *evaluations += 1;
            match f(&xt) {
                Ok((v, gr)) if v.is_finite() && gr.iter().all(|t| t.is_finite()) => {
                    let slope = dot(&gr, &dir);
                    Some(Probe { alpha, value: v, grad: gr, slope })
                }
                _ => None,
            }
        };
        let search = LineSearch {
            eval: &mut eval_at,
            f0: fx,
            slope0,
            c1,
            c2,
            budget: opts.max_line_search,
            evaluations: &mut evaluations,
            best: None,
        };
        let p = match search.run(alpha0) {
            Some(p) if p.value <= fx + flat_tol(fx) => p,
            _ if !pairs.is_empty() => {
                // retry once along steepest descent
                pairs.clear();
                continue;
            }
            _ => break LbfgsStatus::LineSearchFailed,
        };
        let reference = opts.decrease_reference.map(T::of).unwrap_or(fx.abs());
        let rel = (fx - p.value) / reference.max(T::min_positive_value());
        if opts.min_rel_decrease > 0.0 && rel < T::of(opts.min_rel_decrease) {
            break LbfgsStatus::RelativeDecrease;
        }
        let s: Vec<T> = dir.iter().map(|d| p.alpha * *d).collect();
        let y: Vec<T> = p.grad.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += *si);
        fx = p.value;
        g = p.grad;
        values.push(fx);
        iterations += 1;
        if sy > T::epsilon() * dot(&y, &y).sqrt() * norm(&s) {
            if pairs.len() == opts.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, T::one() / sy));
        }
    };
    if fx > f0 {
        // rounding-level ascent through flat steps
        return Ok(LbfgsResult { x: x0.to_vec(), value: f0, grad: g0, iterations: 0, evaluations, status, values: vec![f0] });
    }
    Ok(LbfgsResult { x, value: fx, grad: g, iterations, evaluations, status, values })
}

struct LineSearch<'e, T: Real> {
    eval: &'e mut dyn FnMut(T, &mut usize) -> Option<Probe<T>>,
    f0: T,
    slope0: T,
    c1: T,
    c2: T,
    budget: usize,
    evaluations: &'e mut usize,
    best: Option<Probe<T>>,
}

impl<T: Real> LineSearch<'_, T> {
    fn probe(&mut self, alpha: T) -> Option<Probe<T>> {
        self.budget -= 1;
        let p = (self.eval)(alpha, self.evaluations)?;
        if self.sufficient(&p) && p.value <= self.f0 && self.best.as_ref().is_none_or(|b| p.value < b.value) {
            self.best = Some(Probe { alpha: p.alpha, value: p.value, grad: p.grad.clone(), slope: p.slope });
        }
        Some(p)
    }

    fn sufficient(&self, p: &Probe<T>) -> bool {
        p.value <= self.f0 + self.c1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Probe<T>) -> bool {
        p.slope.abs() <= -self.c2 * self.slope0
    }

    fn flat(&self, p: &Probe<T>) -> bool {
        (p.value - self.f0).abs() <= flat_tol(self.f0)
    }

    /// Strong Wolfe, with the decrease test waived once values are within rounding of `f0`.
    fn acceptable(&self, p: &Probe<T>) -> bool {
        (self.sufficient(p) || self.flat(p)) && self.curvature(p)
    }

    /// Bracketing phase with cubic extrapolation.
    fn run(mut self, alpha0: T) -> Option<Probe<T>> {
        let mut prev = Probe { alpha: T::zero(), value: self.f0, grad: Vec::new(), slope: self.slope0 };
        let mut alpha = alpha0;
        let mut first = true;
        while self.budget > 0 {
            let Some(cur) = self.probe(alpha) else {
                alpha = prev.alpha + (alpha - prev.alpha) * T::of(0.25);
                continue;
            };
            if self.acceptable(&cur) {
                return Some(cur);
            }
            if !self.flat(&cur) && (!self.sufficient(&cur) || (!first && cur.value >= prev.value)) {
                return self.zoom(prev, cur);
            }
            if cur.slope >= T::zero() {
                return self.zoom(cur, prev);
            }
            first = false;
            let lo = cur.alpha * T::of(2.0);
            let hi = cur.alpha * T::of(10.0);
            alpha = match cubic_min_raw(&prev, &cur) {
                Some(t) if t > lo && t < hi => t,
                Some(t) if t >= hi => hi,
                _ => lo,
            };
            prev = cur;
        }
        self.best
    }

    fn zoom(mut self, mut lo: Probe<T>, mut hi: Probe<T>) -> Option<Probe<T>> {
        while self.budget > 0 {
            let alpha = cubic_min(&lo, &hi);
            let Some(cur) = self.probe(alpha) else {
                hi = Probe { alpha, value: T::infinity(), grad: Vec::new(), slope: T::zero() };
                continue;
            };
            if self.acceptable(&cur) {
                return Some(cur);
            }
            if !self.flat(&cur) && (!self.sufficient(&cur) || cur.value >= lo.value) {
                hi = cur;
            } else {
                if cur.slope * (hi.alpha - lo.alpha) >= T::zero() {
                    hi = lo;
                }
                lo = cur;
            }
            if (hi.alpha - lo.alpha).abs() <= T::epsilon() * lo.alpha.abs().max(T::one()) {
                break;
            }
        }
        self.best
    }
}

/// Value changes below this are treated as rounding noise.
fn flat_tol<T: Real>(f: T) -> T {
    T::of(1e-12) * f.abs().max(T::min_positive_value())
}

fn cubic_min_raw<T: Real>(a: &Probe<T>, b: &Probe<T>) -> Option<T> {
    let scale = a.value.abs().max(b.value.abs());
    if (a.value - b.value).abs() <= T::of(1e-8) * scale {
        // values carry no information at this resolution: secant on the slopes
        let t = a.alpha - a.slope * (b.alpha - a.alpha) / (b.slope - a.slope);
        return t.is_finite().then_some(t);
    }
    let d1 = a.slope + b.slope - T::of(3.0) * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if !(disc >= T::zero()) {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + T::of(2.0) * d2);
    t.is_finite().then_some(t)
}

/// Minimizer of the cubic interpolating values and slopes at `a` and `b`,
/// falling back to bisection when it is undefined or too close to an end.
fn cubic_min<T: Real>(a: &Probe<T>, b: &Probe<T>) -> T {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let margin = (hi - lo) * T::of(0.1);
    match cubic_min_raw(a, b) {
        Some(t) if b.value.is_finite() && t > lo + margin && t < hi - margin => t,
        _ => (lo + hi) * T::of(0.5),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_sphere() {
        let c = [1.0, -2.0, 3.5, 0.25];
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let g: Vec<f64> = x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
            Ok((x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum(), g))
        };
        let r = lbfgs_minimize(&mut f, &[0.0; 4], &LbfgsOptions { grad_tol: 1e-8, ..Default::default() }).unwrap();
        assert_eq!(r.status, LbfgsStatus::GradientTolerance);
        assert!(r.iterations <= 10);
        assert!(r.x.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-8));
        assert!(r.values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let mut f = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        assert!(matches!(lbfgs_minimize(&mut f, &[0.0], &LbfgsOptions::default()), Err(Error::NonFiniteObjective)));
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // f = x² for x < 3, NaN beyond; start at 2.9 with a large first step
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] > 3.0 {
                Ok((f64::NAN, vec![f64::NAN]))
            } else {
                Ok(((x[0] + 1.0).powi(2), vec![2.0 * (x[0] + 1.0)]))
            }
        };
        let r = lbfgs_minimize(&mut f, &[2.9], &LbfgsOptions { initial_step: 100.0, grad_tol: 1e-9, ..Default::default() }).unwrap();
        assert!((r.x[0] + 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn tiny_decreases_are_rejected() {
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((1.0 + 1e-12 * x[0] * x[0], vec![2e-12 * x[0]])) };
        let r = lbfgs_minimize(&mut f, &[1.0], &LbfgsOptions { min_rel_decrease: 1e-9, grad_tol: 0.0, ..Default::default() }).unwrap();
        assert_eq!(r.status, LbfgsStatus::RelativeDecrease);
        assert_eq!(r.x, vec![1.0]);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn rejects_bad_options() {
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0] * x[0], vec![2.0 * x[0]])) };
        for o in [
            LbfgsOptions { history: 0, ..Default::default() },
            LbfgsOptions { wolfe_c1: 0.9, wolfe_c2: 0.5, ..Default::default() },
            LbfgsOptions { initial_step: 0.0, ..Default::default() },
        ] {
            assert!(lbfgs_minimize(&mut f, &[1.0], &o).is_err());
        }
    }
}
