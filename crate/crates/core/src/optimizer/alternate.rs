use std::fmt;

use serde::{Deserialize, Serialize};

use nalgebra::Vector3;

use super::lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsResult};
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, exp_so3_jacobian, PoseTwist};
use crate::losses::{FrameTerm, LossBreakdown, Problem, Visibility, Wrt};
use crate::scalar::Real;
use crate::shape_prior::{PointCloud, ShapePrior, StyleVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    /// Relative motions, then the reference pose, then the shape.
    #[default]
    Forward,
    Reverse,
}

/// Blocks that are optimized; masked blocks keep their initial values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockMask {
    pub dps: bool,
    pub p0: bool,
    pub shape: bool,
}

impl Default for BlockMask {
    fn default() -> Self {
        BlockMask { dps: true, p0: true, shape: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    /// L-BFGS memory `m`.
    pub history_size: usize,
    pub max_outer_rounds: usize,
    /// L-BFGS iterations per block per round.
    pub inner_steps: usize,
    /// Stop once `l_total ≤ delta_l_rel · (initial l_total)`.
    pub delta_l_rel: f64,
    /// Absolute threshold, overriding `delta_l_rel` when set.
    pub delta_l: Option<f64>,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Steps that reduce `l_total` by less than this fraction are rejected.
    pub min_rel_decrease: f64,
    pub grad_tol: f64,
    pub max_line_search: usize,
    /// First trial step length for pose blocks (radians / world units).
    pub pose_step: f64,
    /// First trial step length for the style block, in per-mode scale units.
    pub style_step: f64,
    /// First trial step length for direct point coordinates.
    pub point_step: f64,
    pub order: BlockOrder,
    pub blocks: BlockMask,
    /// Single L-BFGS run over all variables per round instead of the block schedule.
    pub joint: bool,
    /// Optimize pose blocks in coordinates whose rotations turn about the
    /// cloud centroid instead of the camera center.
    pub object_pivot: bool,
    /// Start each relative-motion block from the lowest-loss candidate among
    /// its current value, the previous frame's motion and a constant-velocity
    /// extrapolation of the two previous frames.
    pub propagate_motion: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            history_size: 10,
            max_outer_rounds: 30,
            inner_steps: 10,
            delta_l_rel: 1e-3,
            delta_l: None,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            min_rel_decrease: 1e-9,
            grad_tol: 1e-12,
            max_line_search: 20,
            pose_step: 1e-2,
            style_step: 0.1,
            point_step: 1e-2,
            order: BlockOrder::Forward,
            blocks: BlockMask::default(),
            joint: false,
            object_pivot: true,
            propagate_motion: true,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        self.lbfgs(1.0, 1.0).validate()?;
        if !(self.delta_l_rel >= 0.0) || self.delta_l.is_some_and(|d| !(d >= 0.0)) {
            return Err(Error::Config("delta_L must be non-negative".into()));
        }
        if !(self.style_step > 0.0 && self.point_step > 0.0) {
            return Err(Error::Config("initial steps must be positive".into()));
        }
        Ok(())
    }

    fn lbfgs(&self, step: f64, reference: f64) -> LbfgsOptions {
        LbfgsOptions {
            history: self.history_size,
            max_iters: self.inner_steps,
            grad_tol: self.grad_tol,
            min_rel_decrease: self.min_rel_decrease,
            wolfe_c1: self.wolfe_c1,
            wolfe_c2: self.wolfe_c2,
            max_line_search: self.max_line_search,
            initial_step: step,
            decrease_reference: Some(reference),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    /// Loss right after visibility was recomputed.
    Visibility,
    /// Relative motion of frame `l`.
    Dp(usize),
    P0,
    Style,
    Points,
    Joint,
    /// Return to the round start with the lowest loss.
    Restore,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Visibility => write!(f, "visibility"),
            Block::Dp(l) => write!(f, "dp{l}"),
            Block::P0 => write!(f, "p0"),
            Block::Style => write!(f, "s"),
            Block::Points => write!(f, "points"),
            Block::Joint => write!(f, "joint"),
            Block::Restore => write!(f, "restore"),
        }
    }
}

/// One line of the loss trace, logged after every block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub block: Block,
    pub loss: LossBreakdown,
    /// Norm of the block gradient at the block's final point.
    pub grad_norm: Option<f64>,
    /// Accepted L-BFGS steps.
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct OptimizationState<T: Real> {
    pub p0: PoseTwist<T>,
    pub dps: Vec<PoseTwist<T>>,
    pub s: StyleVector<T>,
    /// Visible sets of the last round.
    pub visibility: Option<Visibility>,
    pub history: Vec<TraceRow>,
    pub round: usize,
}

impl<T: Real> OptimizationState<T> {
    /// State with every relative motion at identity.
    pub fn new(p0: PoseTwist<T>, s: StyleVector<T>, num_frames: usize) -> Self {
        OptimizationState {
            p0,
            dps: vec![PoseTwist::identity(); num_frames.saturating_sub(1)],
            s,
            visibility: None,
            history: Vec::new(),
            round: 0,
        }
    }

    /// Loss after the last logged block.
    pub fn last_loss(&self) -> Option<&LossBreakdown> {
        self.history.last().map(|r| &r.loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxRounds,
    /// A round in which no block accepted a step.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct OptimizeOutcome<T: Real> {
    pub state: OptimizationState<T>,
    pub status: Termination,
    /// Scalars the optimizer was allowed to change.
    pub variables: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct DirectOutcome<T: Real> {
    pub cloud: PointCloud<T>,
    pub p0: PoseTwist<T>,
    pub dps: Vec<PoseTwist<T>>,
    /// Indices of the points whose coordinates were variables.
    pub point_indices: Vec<usize>,
    pub history: Vec<TraceRow>,
    pub status: Termination,
    pub round: usize,
    pub variables: usize,
    pub evaluations: usize,
}

/// The shape block: style through a prior, or raw point coordinates.
trait ShapeVars<T: Real> {
    fn cloud(&self) -> &PointCloud<T>;
    fn block(&self) -> Block;
    fn num_vars(&self) -> usize;
    fn vars(&self) -> Vec<T>;
    fn step(&self, opts: &OptimizerOptions) -> f64;
    /// Loss and gradient at `x` with poses and visibility fixed.
    fn eval(&self, x: &[T], problem: &Problem<T>, p0: &PoseTwist<T>, dps: &[PoseTwist<T>], vis: &Visibility) -> Result<(T, Vec<T>)>;
    fn set(&mut self, x: &[T]) -> Result<()>;
}

struct StyleVars<'p, T: Real, P: ShapePrior<T> + ?Sized> {
    prior: &'p P,
    scales: Vec<T>,
    s: StyleVector<T>,
    cloud: PointCloud<T>,
}

impl<T: Real, P: ShapePrior<T> + ?Sized> StyleVars<'_, T, P> {
    fn unscale(&self, z: &[T]) -> StyleVector<T> {
        StyleVector(z.iter().zip(&self.scales).map(|(a, b)| *a * *b).collect())
    }
}

impl<T: Real, P: ShapePrior<T> + ?Sized> ShapeVars<T> for StyleVars<'_, T, P> {
    fn cloud(&self) -> &PointCloud<T> {
        &self.cloud
    }

    fn block(&self) -> Block {
        Block::Style
    }

    fn num_vars(&self) -> usize {
        self.s.dim()
    }

    fn vars(&self) -> Vec<T> {
        self.s.0.iter().zip(&self.scales).map(|(a, b)| *a / *b).collect()
    }

    fn step(&self, opts: &OptimizerOptions) -> f64 {
        opts.style_step
    }

    fn eval(&self, z: &[T], problem: &Problem<T>, p0: &PoseTwist<T>, dps: &[PoseTwist<T>], vis: &Visibility) -> Result<(T, Vec<T>)> {
        let s = self.unscale(z);
        let cloud = self.prior.generate(&s)?;
        let terms = problem.frame_terms(&cloud, p0, dps, vis, Wrt { points: true, ..Wrt::NONE })?;
        let lambda = T::of(problem.weights.lambda);
        let (_, _, gp, active) = problem.assemble(&terms, cloud.len(), T::one(), lambda);
        let gs = self.prior.generate_backward(&s, &gp, Some(&active))?;
        Ok((problem.totals(&terms).2, gs.iter().zip(&self.scales).map(|(g, k)| *g * *k).collect()))
    }

    fn set(&mut self, z: &[T]) -> Result<()> {
        self.s = self.unscale(z);
        self.cloud = self.prior.generate(&self.s)?;
        Ok(())
    }
}

struct PointVars<T: Real> {
    indices: Vec<usize>,
    cloud: PointCloud<T>,
}

impl<T: Real> PointVars<T> {
    fn with(&self, x: &[T]) -> PointCloud<T> {
        let mut cloud = self.cloud.clone();
        for (k, &i) in self.indices.iter().enumerate() {
            cloud.points[i] = Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
        }
        cloud
    }
}

impl<T: Real> ShapeVars<T> for PointVars<T> {
    fn cloud(&self) -> &PointCloud<T> {
        &self.cloud
    }

    fn block(&self) -> Block {
        Block::Points
    }

    fn num_vars(&self) -> usize {
        3 * self.indices.len()
    }

    fn vars(&self) -> Vec<T> {
        self.indices.iter().flat_map(|&i| self.cloud.points[i].iter().copied().collect::<Vec<_>>()).collect()
    }

    fn step(&self, opts: &OptimizerOptions) -> f64 {
        opts.point_step
    }

    fn eval(&self, x: &[T], problem: &Problem<T>, p0: &PoseTwist<T>, dps: &[PoseTwist<T>], vis: &Visibility) -> Result<(T, Vec<T>)> {
        let cloud = self.with(x);
        let terms = problem.frame_terms(&cloud, p0, dps, vis, Wrt { points: true, ..Wrt::NONE })?;
        let lambda = T::of(problem.weights.lambda);
        let (_, _, gp, _) = problem.assemble(&terms, cloud.len(), T::one(), lambda);
        Ok((problem.totals(&terms).2, self.indices.iter().flat_map(|&i| [gp[i].x, gp[i].y, gp[i].z]).collect()))
    }

    fn set(&mut self, x: &[T]) -> Result<()> {
        self.cloud = self.with(x);
        Ok(())
    }
}

/// Pose coordinates `(ω, τ)` with `t = τ + a − R(ω)·b`.
struct Pivot<T: Real> {
    a: Vector3<T>,
    b: Vector3<T>,
}

impl<T: Real> Pivot<T> {
    fn none() -> Self {
        Pivot { a: Vector3::zeros(), b: Vector3::zeros() }
    }

    fn to_vars(&self, p: &PoseTwist<T>) -> Vec<T> {
        let tau = p.trans - self.a + p.rotation().apply(&self.b);
        vec![p.omega.x, p.omega.y, p.omega.z, tau.x, tau.y, tau.z]
    }

    fn pose(&self, z: &[T]) -> PoseTwist<T> {
        let omega = Vector3::new(z[0], z[1], z[2]);
        let tau = Vector3::new(z[3], z[4], z[5]);
        PoseTwist::new(omega, tau + self.a - exp_so3(&omega).apply(&self.b))
    }

    /// Chain rule from `(ω, t)` gradients to `(ω, τ)` gradients.
    fn grad(&self, z: &[T], g: &[T]) -> Vec<T> {
        let omega = Vector3::new(z[0], z[1], z[2]);
        let gt = Vector3::new(g[3], g[4], g[5]);
        let gw = Vector3::new(g[0], g[1], g[2]) - exp_so3_jacobian(&omega, &self.b).tr_mul(&gt);
        vec![gw.x, gw.y, gw.z, gt.x, gt.y, gt.z]
    }
}

fn norm<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.f64() * x.f64()).sum::<f64>().sqrt()
}

fn combine6<T: Real>(a: &[T; 6], b: &[T; 6], w: T) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| *x + w * *y).collect()
}

struct Schedule<'a, 'f, T: Real> {
    problem: &'a Problem<'f, T>,
    opts: &'a OptimizerOptions,
    p0: PoseTwist<T>,
    dps: Vec<PoseTwist<T>>,
    history: Vec<TraceRow>,
    round: usize,
    evaluations: usize,
    visibility: Option<Visibility>,
}

impl<T: Real> Schedule<'_, '_, T> {
    fn variables(&self, shape_vars: usize) -> usize {
        let m = self.opts.blocks;
        if self.opts.joint {
            return 6 * self.dps.len() + 6 + shape_vars;
        }
        (if m.dps { 6 * self.dps.len() } else { 0 }) + (if m.p0 { 6 } else { 0 }) + (if m.shape { shape_vars } else { 0 })
    }

    fn log(&mut self, block: Block, terms: &[FrameTerm<T>], r: Option<&LbfgsResult<T>>) {
        self.history.push(TraceRow {
            round: self.round,
            block,
            loss: self.problem.breakdown(terms),
            grad_norm: r.map(|r| norm(&r.grad)),
            steps: r.map_or(0, |r| r.iterations),
        });
    }

    fn run(&mut self, shape: &mut dyn ShapeVars<T>) -> Result<Termination> {
        self.opts.validate()?;
        let problem = self.problem;
        if self.dps.len() + 1 != problem.num_frames() {
            return Err(Error::DimensionMismatch { expected: problem.num_frames() - 1, got: self.dps.len() });
        }
        let mut threshold = self.opts.delta_l;
        let mut order: Vec<Block> = if self.opts.joint {
            vec![Block::Joint]
        } else {
            let m = self.opts.blocks;
            let mut o: Vec<Block> = Vec::new();
            if m.dps {
                o.extend((1..problem.num_frames()).map(Block::Dp));
            }
            if m.p0 {
                o.push(Block::P0);
            }
            if m.shape {
                o.push(shape.block());
            }
            o
        };
        if self.opts.order == BlockOrder::Reverse {
            order.reverse();
        }
        let mut best: Option<(f64, PoseTwist<T>, Vec<PoseTwist<T>>, Vec<T>)> = None;
        let mut last;
        let status = loop {
            let vis = problem.visibility(shape.cloud(), &self.p0, &self.dps)?;
            let mut terms = problem.frame_terms(shape.cloud(), &self.p0, &self.dps, &vis, Wrt::NONE)?;
            self.evaluations += 1;
            let start = problem.totals(&terms).2.f64();
            let threshold = *threshold.get_or_insert(self.opts.delta_l_rel * start);
            last = start;
            if best.as_ref().is_none_or(|b| start < b.0) {
                best = Some((start, self.p0, self.dps.clone(), shape.vars()));
            }
            self.visibility = Some(vis.clone());
            if start <= threshold {
                self.log(Block::Visibility, &terms, None);
                break Termination::Converged;
            }
            if self.round >= self.opts.max_outer_rounds {
                break Termination::MaxRounds;
            }
            self.round += 1;
            self.log(Block::Visibility, &terms, None);
            let mut moved = false;
            for &block in &order {
                let current = problem.totals(&terms).2.f64();
                let r = match block {
                    Block::Dp(l) => self.dp_block(shape.cloud(), &vis, l, current, &mut terms)?,
                    Block::P0 => self.p0_block(shape.cloud(), &vis, current, &mut terms)?,
                    Block::Joint => self.joint_block(shape, &vis, current, &mut terms)?,
                    _ => self.shape_block(shape, &vis, current, &mut terms)?,
                };
                moved |= r.iterations > 0;
                self.log(block, &terms, Some(&r));
            }
            if !moved {
                break Termination::Stalled;
            }
        };
        // return to the lowest-loss round start
        if let Some((loss, p0, dps, x)) = best {
            if last > loss {
                self.p0 = p0;
                self.dps = dps;
                shape.set(&x)?;
                let vis = problem.visibility(shape.cloud(), &self.p0, &self.dps)?;
                let terms = problem.frame_terms(shape.cloud(), &self.p0, &self.dps, &vis, Wrt::NONE)?;
                self.visibility = Some(vis);
                self.log(Block::Restore, &terms, None);
            }
        }
        Ok(status)
    }

    fn dp_block(&mut self, cloud: &PointCloud<T>, vis: &Visibility, l: usize, current: f64, terms: &mut [FrameTerm<T>]) -> Result<LbfgsResult<T>> {
        let problem = self.problem;
        let cache = problem.reference_cache(cloud, &self.p0, vis);
        let w = problem.cd_frame_weight();
        let wrt = Wrt { dp: true, ..Wrt::NONE };
        let pivot = if self.opts.object_pivot {
            let c = self.p0.apply(&cloud.centroid());
            Pivot { a: c, b: c }
        } else {
            Pivot::none()
        };
        let mut start = self.dps[l - 1];
        if self.opts.propagate_motion && l >= 2 {
            let frame_loss = |dp: &PoseTwist<T>| {
                let t = problem.frame_term(&cache, cloud, &self.p0, dp, l, vis, Wrt::NONE);
                t.ph + w * t.cd
            };
            let prev = self.dps[l - 2];
            let mut candidates = vec![prev];
            if l >= 3 {
                let step = self.dps[l - 3].transform().inverse().then(&prev.transform());
                candidates.push(PoseTwist::from_transform(&prev.transform().then(&step)));
            }
            let mut best = frame_loss(&start);
            for c in candidates {
                let v = frame_loss(&c);
                self.evaluations += 1;
                if v < best {
                    best = v;
                    start = c;
                }
            }
        }
        let mut f = |x: &[T]| -> Result<(T, Vec<T>)> {
            let t = problem.frame_term(&cache, cloud, &self.p0, &pivot.pose(x), l, vis, wrt);
            Ok((t.ph + w * t.cd, pivot.grad(x, &combine6(&t.ph_dp, &t.cd_dp, w))))
        };
        let r = lbfgs_minimize(&mut f, &pivot.to_vars(&start), &self.opts.lbfgs(self.opts.pose_step, current))?;
        self.evaluations += r.evaluations;
        if r.iterations > 0 {
            self.dps[l - 1] = pivot.pose(&r.x);
        } else {
            self.dps[l - 1] = start;
        }
        terms[l - 1] = problem.frame_term(&cache, cloud, &self.p0, &self.dps[l - 1], l, vis, Wrt::NONE);
        Ok(r)
    }

    fn p0_block(&mut self, cloud: &PointCloud<T>, vis: &Visibility, current: f64, terms: &mut Vec<FrameTerm<T>>) -> Result<LbfgsResult<T>> {
        let problem = self.problem;
        let lambda = T::of(problem.weights.lambda);
        let dps = &self.dps;
        let pivot = if self.opts.object_pivot { Pivot { a: Vector3::zeros(), b: cloud.centroid() } } else { Pivot::none() };
        let mut f = |x: &[T]| -> Result<(T, Vec<T>)> {
            let t = problem.frame_terms(cloud, &pivot.pose(x), dps, vis, Wrt { p0: true, ..Wrt::NONE })?;
            let (g, _, _, _) = problem.assemble(&t, 0, T::one(), lambda);
            Ok((problem.totals(&t).2, pivot.grad(x, &g)))
        };
        let r = lbfgs_minimize(&mut f, &pivot.to_vars(&self.p0), &self.opts.lbfgs(self.opts.pose_step, current))?;
        self.evaluations += r.evaluations;
        if r.iterations > 0 {
            self.p0 = pivot.pose(&r.x);
        }
        *terms = problem.frame_terms(cloud, &self.p0, &self.dps, vis, Wrt::NONE)?;
        Ok(r)
    }

    fn shape_block(&mut self, shape: &mut dyn ShapeVars<T>, vis: &Visibility, current: f64, terms: &mut Vec<FrameTerm<T>>) -> Result<LbfgsResult<T>> {
        let problem = self.problem;
        let (p0, dps) = (&self.p0, &self.dps);
        let step = shape.step(self.opts);
        let shape_ref = &*shape;
        let mut f = |x: &[T]| shape_ref.eval(x, problem, p0, dps, vis);
        let r = lbfgs_minimize(&mut f, &shape.vars(), &self.opts.lbfgs(step, current))?;
        self.evaluations += r.evaluations;
        shape.set(&r.x)?;
        *terms = problem.frame_terms(shape.cloud(), &self.p0, &self.dps, vis, Wrt::NONE)?;
        Ok(r)
    }

    fn joint_block(&mut self, shape: &mut dyn ShapeVars<T>, vis: &Visibility, current: f64, terms: &mut Vec<FrameTerm<T>>) -> Result<LbfgsResult<T>> {
        let problem = self.problem;
        let n_dps = self.dps.len();
        let lambda = T::of(problem.weights.lambda);
        let split = |x: &[T]| {
            let p0 = PoseTwist::from_slice(&x[..6]);
            let dps: Vec<PoseTwist<T>> = (0..n_dps).map(|l| PoseTwist::from_slice(&x[6 + 6 * l..12 + 6 * l])).collect();
            (p0, dps)
        };
        let shape_ref = &*shape;
        let mut f = |x: &[T]| -> Result<(T, Vec<T>)> {
            let (p0, dps) = split(x);
            let t = problem.frame_terms(shape_ref.cloud(), &p0, &dps, vis, Wrt { p0: true, dp: true, points: false })?;
            let (g0, gd, _, _) = problem.assemble(&t, 0, T::one(), lambda);
            let (_, gs) = shape_ref.eval(&x[6 + 6 * n_dps..], problem, &p0, &dps, vis)?;
            let mut g = g0.to_vec();
            g.extend(gd.iter().flatten());
            g.extend(gs);
            Ok((problem.totals(&t).2, g))
        };
        let mut x0 = self.p0.to_array().to_vec();
        x0.extend(self.dps.iter().flat_map(|d| d.to_array()));
        x0.extend(shape.vars());
        let r = lbfgs_minimize(&mut f, &x0, &self.opts.lbfgs(self.opts.pose_step, current))?;
        self.evaluations += r.evaluations;
        let (p0, dps) = split(&r.x);
        self.p0 = p0;
        self.dps = dps;
        shape.set(&r.x[6 + 6 * n_dps..])?;
        *terms = problem.frame_terms(shape.cloud(), &self.p0, &self.dps, vis, Wrt::NONE)?;
        Ok(r)
    }
}

/// Alternating minimization of `L_ph + λ L_CD` over `{Δp_l}`, `p0` and `s`.
///
/// Each round recomputes visibility from the current shape and reference pose,
/// then runs `inner_steps` L-BFGS iterations on every block in turn with the
/// visible sets frozen.
pub fn alternate_optimize<T: Real, P: ShapePrior<T> + ?Sized>(
    problem: &Problem<T>,
    prior: &P,
    init: OptimizationState<T>,
    opts: &OptimizerOptions,
) -> Result<OptimizeOutcome<T>> {
    if init.s.dim() != prior.dim() {
        return Err(Error::DimensionMismatch { expected: prior.dim(), got: init.s.dim() });
    }
    let cloud = prior.generate(&init.s)?;
    let mut shape = StyleVars { prior, scales: prior.style_scales(), s: init.s, cloud };
    let mut sched = Schedule {
        problem,
        opts,
        p0: init.p0,
        dps: init.dps,
        history: init.history,
        round: init.round,
        evaluations: 0,
        visibility: init.visibility,
    };
    let status = sched.run(&mut shape)?;
    let variables = sched.variables(shape.num_vars());
    Ok(OptimizeOutcome {
        state: OptimizationState {
            p0: sched.p0,
            dps: sched.dps,
            s: shape.s,
            visibility: sched.visibility,
            history: sched.history,
            round: sched.round,
        },
        status,
        variables,
        evaluations: sched.evaluations,
    })
}

/// Same schedule with the coordinates of the points visible from the initial
/// reference pose as the shape variables; all other points stay fixed.
pub fn optimize_direct_points<T: Real>(
    problem: &Problem<T>,
    cloud: &PointCloud<T>,
    p0: PoseTwist<T>,
    dps: Vec<PoseTwist<T>>,
    opts: &OptimizerOptions,
) -> Result<DirectOutcome<T>> {
    let indices = problem.visibility(cloud, &p0, &dps)?.reference;
    let mut shape = PointVars { indices, cloud: cloud.clone() };
    let mut sched = Schedule { problem, opts, p0, dps, history: Vec::new(), round: 0, evaluations: 0, visibility: None };
    let status = sched.run(&mut shape)?;
    let variables = sched.variables(shape.num_vars());
    Ok(DirectOutcome {
        cloud: shape.cloud,
        p0: sched.p0,
        dps: sched.dps,
        point_indices: shape.indices,
        history: sched.history,
        status,
        round: sched.round,
        variables,
        evaluations: sched.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_rotation_error;
    use crate::harness::prior::fit_prior;
    use crate::harness::scene::tests::small_cfg;
    use crate::harness::scene::{perturb_about, synth_scene, SceneBundle};
    use crate::imaging::Frame;
    use crate::losses::LossWeights;
    use crate::shape_prior::LinearShapePrior;

    fn fixture(frames: usize) -> (LinearShapePrior<f64>, SceneBundle) {
        let mut cfg = small_cfg();
        cfg.scene.num_frames = frames;
        let prior = fit_prior(&cfg).unwrap();
        let scene = synth_scene(&cfg, &prior, 0).unwrap();
        (prior, scene)
    }

    fn problem(scene: &SceneBundle) -> Problem<'_, f64> {
        Problem::new(&scene.frames, scene.intrinsics(), 0.5, LossWeights { lambda: 0.01 }, Default::default()).unwrap()
    }

    fn noisy_state(prior: &LinearShapePrior<f64>, scene: &SceneBundle) -> OptimizationState<f64> {
        let c = scene.gt_p0().apply(&scene.gt_cloud.centroid());
        let p0 = perturb_about(&scene.gt_p0(), &c, &Vector3::new(0.03, -0.05, 0.02), &Vector3::new(0.02, 0.0, -0.03));
        let mut s = scene.gt_style();
        for (v, k) in s.0.iter_mut().zip(prior.style_scales()) {
            *v += 0.3 * k;
        }
        OptimizationState::new(p0, s, scene.num_frames())
    }

    fn quick() -> OptimizerOptions {
        OptimizerOptions { max_outer_rounds: 3, inner_steps: 4, ..OptimizerOptions::default() }
    }

    #[test]
    fn pivot_round_trip_and_chain_rule() {
        let pivot = Pivot { a: Vector3::new(0.1, -0.2, 2.5), b: Vector3::new(0.3, 0.1, -0.4) };
        let p = PoseTwist::new(Vector3::new(0.2, -0.4, 0.1), Vector3::new(0.5, 0.3, -1.0));
        let z = pivot.to_vars(&p);
        let back = pivot.pose(&z);
        assert!((back.trans - p.trans).norm() < 1e-14 && (back.omega - p.omega).norm() < 1e-14);

        let y = Vector3::new(0.7, -0.3, 0.2);
        let v = Vector3::new(-0.6, 0.4, 1.1);
        let f = |q: &PoseTwist<f64>| (q.rotation().apply(&v) + q.trans - y).norm_squared();
        let h = 1e-6;
        let num = |g: &dyn Fn(&[f64]) -> f64, x: &[f64]| -> Vec<f64> {
            (0..6)
                .map(|i| {
                    let (mut a, mut b) = (x.to_vec(), x.to_vec());
                    a[i] += h;
                    b[i] -= h;
                    (g(&a) - g(&b)) / (2.0 * h)
                })
                .collect()
        };
        let g_pose = num(&|x| f(&PoseTwist::from_slice(x)), &p.to_array());
        let g_vars = num(&|x| f(&pivot.pose(x)), &z);
        for (a, b) in pivot.grad(&z, &g_pose).iter().zip(&g_vars) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn relative_motion_returns_to_an_identical_view() {
        let mut cfg = crate::harness::ExperimentConfig::default();
        cfg.scene.num_frames = 2;
        let prior = fit_prior(&cfg).unwrap();
        let mut scene = synth_scene(&cfg, &prior, 0).unwrap();
        let first = &scene.frames[0];
        scene.frames[1] = Frame::new(1, first.image.clone(), first.mask.clone(), first.gt_pose).unwrap();
        let problem = Problem::new(&scene.frames, scene.intrinsics(), 2.0, LossWeights { lambda: 0.01 }, Default::default()).unwrap();
        let mut state = OptimizationState::new(scene.gt_p0(), scene.gt_style(), 2);
        let c = scene.gt_p0().apply(&scene.gt_cloud.centroid());
        state.dps[0] = perturb_about(&PoseTwist::identity(), &c, &Vector3::new(0.02, 0.03, -0.01), &Vector3::new(0.01, -0.01, 0.0));
        let opts = OptimizerOptions {
            blocks: BlockMask { dps: true, p0: false, shape: false },
            inner_steps: 30,
            max_outer_rounds: 10,
            delta_l_rel: 0.0,
            ..OptimizerOptions::default()
        };
        let out = alternate_optimize(&problem, &prior, state, &opts).unwrap();
        assert_eq!(out.variables, 6);
        assert_eq!(out.state.p0, scene.gt_p0());
        assert_eq!(out.state.s, scene.gt_style());
        let err = geodesic_rotation_error(&out.state.dps[0].rotation(), &PoseTwist::<f64>::identity().rotation());
        assert!(err < 0.1, "rotation error {err}°");
    }

    #[test]
    fn counts_only_unmasked_variables() {
        let (prior, scene) = fixture(5);
        let problem = problem(&scene);
        let one = OptimizerOptions { max_outer_rounds: 1, inner_steps: 1, ..OptimizerOptions::default() };
        let all = alternate_optimize(&problem, &prior, noisy_state(&prior, &scene), &one).unwrap();
        assert_eq!(all.variables, 6 * 4 + 6 + 4);
        let poses = OptimizerOptions { blocks: BlockMask { shape: false, ..BlockMask::default() }, ..one.clone() };
        assert_eq!(alternate_optimize(&problem, &prior, noisy_state(&prior, &scene), &poses).unwrap().variables, 30);

        let st = noisy_state(&prior, &scene);
        let cloud = prior.generate(&st.s).unwrap();
        let direct = optimize_direct_points(&problem, &cloud, st.p0, st.dps, &one).unwrap();
        assert_eq!(direct.variables, 6 * 5 + 3 * direct.point_indices.len());
        assert!(!direct.point_indices.is_empty() && direct.point_indices.len() < cloud.len());
    }

    #[test]
    fn blocks_never_increase_the_loss_within_a_round() {
        let (prior, scene) = fixture(5);
        let problem = problem(&scene);
        let out = alternate_optimize(&problem, &prior, noisy_state(&prior, &scene), &quick()).unwrap();
        let h = &out.state.history;
        assert!(h.len() > 3);
        for w in h.windows(2) {
            if w[1].block != Block::Visibility && w[1].block != Block::Restore {
                assert!(w[1].loss.l_total <= w[0].loss.l_total * (1.0 + 1e-12), "{} raised the loss", w[1].block);
            }
        }
        let first = h[0].loss.l_total;
        assert!(out.state.last_loss().unwrap().l_total < first);
    }

    #[test]
    fn reruns_are_identical() {
        let (prior, scene) = fixture(3);
        let problem = problem(&scene);
        let a = alternate_optimize(&problem, &prior, noisy_state(&prior, &scene), &quick()).unwrap();
        let b = alternate_optimize(&problem, &prior, noisy_state(&prior, &scene), &quick()).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.evaluations, b.evaluations);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (prior, scene) = fixture(3);
        let problem = problem(&scene);
        let short = OptimizationState::new(scene.gt_p0(), scene.gt_style(), 2);
        assert!(alternate_optimize(&problem, &prior, short, &quick()).is_err());
        let wrong_dim = OptimizationState::new(scene.gt_p0(), StyleVector(vec![0.0; 2]), 3);
        assert!(alternate_optimize(&problem, &prior, wrong_dim, &quick()).is_err());
    }
}
