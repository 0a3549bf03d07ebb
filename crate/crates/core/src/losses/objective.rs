use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::nn::NearestIndex;
use super::{chamfer_2d_indexed, LossBreakdown, LossWeights};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseTwist, RotationLinearization, DEFAULT_Z_MIN};
use crate::imaging::{mask_to_coords, sample_bilinear, Frame};
use crate::pseudo_renderer::visible_subset;
use crate::scalar::Real;
use crate::shape_prior::{PointCloud, ShapePrior, StyleVector};

/// Which visible set supplies the projected points of the silhouette term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilhouetteVisibility {
    /// Points visible from each target pose `p0 ∘ dp_l`.
    #[default]
    PerTarget,
    /// The reference frame's visible set, reused for every target.
    Reference,
}

/// The optimized variables: reference pose, relative motions of frames `1..L`, style.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Params<T: Real> {
    pub p0: PoseTwist<T>,
    pub dps: Vec<PoseTwist<T>>,
    pub s: StyleVector<T>,
}

impl<T: Real> Params<T> {
    /// `[p0, dp_1, …, dp_{L−1}, s]` as one vector.
    pub fn flatten(&self) -> Vec<T> {
        self.p0.to_array().into_iter().chain(self.dps.iter().flat_map(|p| p.to_array())).chain(self.s.0.iter().copied()).collect()
    }

    /// Inverse of [`Params::flatten`] for `n_dps` relative poses.
    pub fn from_flat(v: &[T], n_dps: usize) -> Self {
        let p0 = PoseTwist::from_slice(&v[..6]);
        let dps = (0..n_dps).map(|l| PoseTwist::from_slice(&v[6 + 6 * l..12 + 6 * l])).collect();
        Params { p0, dps, s: StyleVector(v[6 + 6 * n_dps..].to_vec()) }
    }

    pub fn num_variables(&self) -> usize {
        6 + 6 * self.dps.len() + self.s.dim()
    }
}

/// Gradient with the same layout as [`Params`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad<T: Real> {
    pub p0: [T; 6],
    pub dps: Vec<[T; 6]>,
    pub s: Vec<T>,
}

impl<T: Real> ParamGrad<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.p0.iter().chain(self.dps.iter().flatten()).chain(&self.s).copied().collect()
    }
}

/// Frozen visible sets: one for the reference frame, one per target frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    pub reference: Vec<usize>,
    /// `targets[l - 1]` serves frame `l`.
    pub targets: Vec<Vec<usize>>,
}

/// Which gradients to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wrt {
    pub p0: bool,
    pub dp: bool,
    pub points: bool,
}

impl Wrt {
    pub const NONE: Wrt = Wrt { p0: false, dp: false, points: false };
    pub const ALL: Wrt = Wrt { p0: true, dp: true, points: true };

    fn any(&self) -> bool {
        self.p0 || self.dp || self.points
    }
}

/// Loss contributions of one target frame and their gradients.
#[derive(Clone, Debug)]
pub struct FrameTerm<T: Real> {
    pub ph: T,
    pub n_pairs: usize,
    pub n_dropped: usize,
    /// Chamfer sum of this frame (before the `1/(L−1)` average).
    pub cd: T,
    pub cd_empty: bool,
    pub ph_p0: [T; 6],
    pub ph_dp: [T; 6],
    pub cd_p0: [T; 6],
    pub cd_dp: [T; 6],
    pub ph_points: Vec<(usize, Vector3<T>)>,
    pub cd_points: Vec<(usize, Vector3<T>)>,
}

struct RefEntry<T: Real> {
    idx: usize,
    y0: Vector3<T>,
    c0: Vector3<T>,
    /// `∂c0/∂y0`.
    dc_dy: nalgebra::Matrix3<T>,
}

/// Reference-frame projections and samples of the visible points, reusable
/// while `p0` and the cloud stay fixed.
pub struct ReferenceCache<T: Real> {
    l0: RotationLinearization<T>,
    entries: Vec<Option<RefEntry<T>>>,
}

/// Frames, intrinsics and settings shared by every loss evaluation.
pub struct Problem<'a, T: Real> {
    frames: &'a [Frame<T>],
    pub k: CameraIntrinsics<T>,
    pub upscale: f64,
    pub weights: LossWeights,
    pub silhouette_visibility: SilhouetteVisibility,
    silhouettes: Vec<Option<NearestIndex<T, 2>>>,
    size: (usize, usize),
}

#[inline]
fn pack<T: Real>(w: &Vector3<T>, t: &Vector3<T>) -> [T; 6] {
    [w.x, w.y, w.z, t.x, t.y, t.z]
}

#[inline]
fn add6<T: Real>(a: &mut [T; 6], b: &[T; 6], scale: T) {
    for k in 0..6 {
        a[k] += b[k] * scale;
    }
}

impl<'a, T: Real> Problem<'a, T> {
    pub fn new(
        frames: &'a [Frame<T>],
        k: CameraIntrinsics<T>,
        upscale: f64,
        weights: LossWeights,
        silhouette_visibility: SilhouetteVisibility,
    ) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 frames, got {}", frames.len())));
        }
        weights.validate()?;
        let size = (frames[0].image.height(), frames[0].image.width());
        if let Some(f) = frames.iter().find(|f| (f.image.height(), f.image.width()) != size) {
            return Err(Error::InvalidInput(format!("frame {} has a different size than frame 0", f.index)));
        }
        let silhouettes = frames
            .iter()
            .map(|f| {
                let coords: Vec<[T; 2]> = mask_to_coords::<T>(&f.mask).iter().map(|p| [p.u, p.v]).collect();
                let n = coords.len();
                NearestIndex::new(coords, n)
            })
            .collect();
        Ok(Problem { frames, k, upscale, weights, silhouette_visibility, silhouettes, size })
    }

    pub fn frames(&self) -> &[Frame<T>] {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// `(H, W)`.
    pub fn size(&self) -> (usize, usize) {
        self.size
    }

    /// Chamfer value used when either set is empty.
    pub fn empty_penalty(&self) -> T {
        let (h, w) = self.size;
        T::of(4.0 * ((h * h + w * w) as f64))
    }

    pub fn with_weights(&self, weights: LossWeights) -> Self {
        Problem { frames: self.frames, weights, silhouettes: self.silhouettes.clone(), ..*self }
    }

    pub fn visibility(&self, cloud: &PointCloud<T>, p0: &PoseTwist<T>, dps: &[PoseTwist<T>]) -> Result<Visibility> {
        self.check_dps(dps)?;
        let reference = visible_subset(cloud, p0, &self.k, self.size, self.upscale)?.indices;
        let targets = match self.silhouette_visibility {
            SilhouetteVisibility::Reference => vec![reference.clone(); dps.len()],
            SilhouetteVisibility::PerTarget => {
                let tf0 = p0.transform();
                dps.iter()
                    .map(|dp| {
                        let pose = PoseTwist::from_transform(&tf0.then(&dp.transform()));
                        visible_subset(cloud, &pose, &self.k, self.size, self.upscale).map(|v| v.indices)
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(Visibility { reference, targets })
    }

    fn check_dps(&self, dps: &[PoseTwist<T>]) -> Result<()> {
        if dps.len() != self.frames.len() - 1 {
            return Err(Error::DimensionMismatch { expected: self.frames.len() - 1, got: dps.len() });
        }
        Ok(())
    }

    /// Projects and samples the reference-visible points in frame 0.
    pub fn reference_cache(&self, cloud: &PointCloud<T>, p0: &PoseTwist<T>, vis: &Visibility) -> ReferenceCache<T> {
        let l0 = RotationLinearization::new(&p0.omega);
        let z_min = T::of(DEFAULT_Z_MIN);
        let image = &self.frames[0].image;
        let entries = vis
            .reference
            .iter()
            .map(|&idx| {
                let y0 = l0.rot * cloud.points[idx] + p0.trans;
                let u0 = self.k.project_camera_point(&y0, z_min).ok()?;
                let (c0, j0) = sample_bilinear(image, &u0).ok()?;
                Some(RefEntry { idx, y0, c0, dc_dy: j0 * self.k.projection_jacobian(&y0) })
            })
            .collect();
        ReferenceCache { l0, entries }
    }

    /// Photometric and silhouette terms of target frame `l ≥ 1`.
    pub fn frame_term(
        &self,
        cache: &ReferenceCache<T>,
        cloud: &PointCloud<T>,
        p0: &PoseTwist<T>,
        dp: &PoseTwist<T>,
        l: usize,
        vis: &Visibility,
        wrt: Wrt,
    ) -> FrameTerm<T> {
        let z_min = T::of(DEFAULT_Z_MIN);
        let two = T::of(2.0);
        let ld = RotationLinearization::new(&dp.omega);
        let l0 = &cache.l0;
        let image = &self.frames[l].image;
        let zero6 = [T::zero(); 6];
        let mut term = FrameTerm {
            ph: T::zero(),
            n_pairs: 0,
            n_dropped: 0,
            cd: T::zero(),
            cd_empty: false,
            ph_p0: zero6,
            ph_dp: zero6,
            cd_p0: zero6,
            cd_dp: zero6,
            ph_points: Vec::new(),
            cd_points: Vec::new(),
        };

        // back-propagates a camera-frame gradient g_y (target) and g_y0 (extra, reference) to the blocks
        let push = |g_y: &Vector3<T>, g_y0_extra: &Vector3<T>, y0: &Vector3<T>, idx: usize, p0g: &mut [T; 6], dpg: &mut [T; 6], pts: &mut Vec<(usize, Vector3<T>)>| {
            let g_y0 = ld.rot.tr_mul(g_y) + g_y0_extra;
            if wrt.dp {
                add6(dpg, &pack(&ld.d_rotated_tr_mul(&(ld.rot * y0), g_y), g_y), T::one());
            }
            if wrt.p0 {
                let rx = y0 - p0.trans;
                add6(p0g, &pack(&l0.d_rotated_tr_mul(&rx, &g_y0), &g_y0), T::one());
            }
            if wrt.points {
                pts.push((idx, l0.rot.tr_mul(&g_y0)));
            }
        };

        for entry in &cache.entries {
            let Some(e) = entry else {
                term.n_dropped += 1;
                continue;
            };
            let y = ld.rot * e.y0 + dp.trans;
            let Ok(ul) = self.k.project_camera_point(&y, z_min) else {
                term.n_dropped += 1;
                continue;
            };
            let Ok((cl, jl)) = sample_bilinear(image, &ul) else {
                term.n_dropped += 1;
                continue;
            };
            let r = e.c0 - cl;
            term.ph += r.dot(&r);
            term.n_pairs += 1;
            if wrt.any() {
                let g_y0_ref = e.dc_dy.tr_mul(&r) * two;
                let dc_dy: nalgebra::Matrix3<T> = jl * self.k.projection_jacobian(&y);
                let g_y = -(dc_dy.tr_mul(&r) * two);
                push(&g_y, &g_y0_ref, &e.y0, e.idx, &mut term.ph_p0, &mut term.ph_dp, &mut term.ph_points);
            }
        }

        let targets = &vis.targets[l - 1];
        let mut ys: Vec<(usize, Vector3<T>, Vector3<T>)> = Vec::with_capacity(targets.len());
        let mut proj = Vec::with_capacity(targets.len());
        for &idx in targets {
            let y0 = l0.rot * cloud.points[idx] + p0.trans;
            let y = ld.rot * y0 + dp.trans;
            if let Ok(u) = self.k.project_camera_point(&y, z_min) {
                ys.push((idx, y0, y));
                proj.push(u);
            }
        }
        match (&self.silhouettes[l], proj.is_empty()) {
            (Some(sil), false) => {
                let (v, grads) = chamfer_2d_indexed(sil, &proj, wrt.any());
                term.cd = v;
                if wrt.any() {
                    let zero = Vector3::zeros();
                    for ((idx, y0, y), g) in ys.iter().zip(&grads) {
                        let du_dy: Matrix2x3<T> = self.k.projection_jacobian(y);
                        let g_y = du_dy.tr_mul(&Vector2::new(g.x, g.y));
                        push(&g_y, &zero, y0, *idx, &mut term.cd_p0, &mut term.cd_dp, &mut term.cd_points);
                    }
                }
            }
            _ => {
                term.cd = self.empty_penalty();
                term.cd_empty = true;
            }
        }
        term
    }

    /// All target-frame terms, in frame order.
    pub fn frame_terms(&self, cloud: &PointCloud<T>, p0: &PoseTwist<T>, dps: &[PoseTwist<T>], vis: &Visibility, wrt: Wrt) -> Result<Vec<FrameTerm<T>>> {
        self.check_dps(dps)?;
        let cache = self.reference_cache(cloud, p0, vis);
        Ok((1..self.frames.len()).map(|l| self.frame_term(&cache, cloud, p0, &dps[l - 1], l, vis, wrt)).collect())
    }

    /// Loss summary of a set of frame terms under `self.weights`.
    pub fn breakdown(&self, terms: &[FrameTerm<T>]) -> LossBreakdown {
        let (l_ph, l_cd, l_total) = self.totals(terms);
        let n_point_pairs: usize = terms.iter().map(|t| t.n_pairs).sum();
        LossBreakdown {
            l_ph: l_ph.f64(),
            l_cd: l_cd.f64(),
            l_total: l_total.f64(),
            n_point_pairs,
            n_dropped_oob: terms.iter().map(|t| t.n_dropped).sum(),
            ph_mean: if n_point_pairs > 0 { l_ph.f64() / n_point_pairs as f64 } else { 0.0 },
            n_empty_silhouette: terms.iter().filter(|t| t.cd_empty).count(),
        }
    }

    /// `(L_ph, L_CD, L_ph + λ L_CD)` in the objective's scalar type.
    pub fn totals(&self, terms: &[FrameTerm<T>]) -> (T, T, T) {
        let mut l_ph = T::zero();
        let mut cd_sum = T::zero();
        for t in terms {
            l_ph += t.ph;
            cd_sum += t.cd;
        }
        let l_cd = cd_sum / T::from_count(terms.len());
        (l_ph, l_cd, l_ph + T::of(self.weights.lambda) * l_cd)
    }

    /// Per-frame weight `λ/(L−1)` applied to each frame's Chamfer term.
    pub fn cd_frame_weight(&self) -> T {
        T::of(self.weights.lambda) / T::from_count(self.frames.len() - 1)
    }

    /// Gradients of `w_ph·L_ph + w_cd·L_CD` assembled from frame terms:
    /// `(p0, dps, dense point gradient, touched point indices)`.
    pub fn assemble(&self, terms: &[FrameTerm<T>], n_points: usize, w_ph: T, w_cd: T) -> ([T; 6], Vec<[T; 6]>, Vec<Vector3<T>>, Vec<usize>) {
        let w = w_cd / T::from_count(terms.len());
        let mut g0 = [T::zero(); 6];
        let mut gd = Vec::with_capacity(terms.len());
        let mut gp = vec![Vector3::zeros(); n_points];
        let mut touched = vec![false; n_points];
        for t in terms {
            add6(&mut g0, &t.ph_p0, w_ph);
            add6(&mut g0, &t.cd_p0, w);
            let mut d = [T::zero(); 6];
            add6(&mut d, &t.ph_dp, w_ph);
            add6(&mut d, &t.cd_dp, w);
            gd.push(d);
            for (i, g) in &t.ph_points {
                gp[*i] += g * w_ph;
                touched[*i] = true;
            }
            for (i, g) in &t.cd_points {
                gp[*i] += g * w;
                touched[*i] = true;
            }
        }
        let active = (0..n_points).filter(|&i| touched[i]).collect();
        (g0, gd, gp, active)
    }

    /// Loss of `params` under frozen visibility, with the full gradient when requested.
    pub fn evaluate<P: ShapePrior<T> + ?Sized>(
        &self,
        prior: &P,
        params: &Params<T>,
        vis: &Visibility,
        with_grad: bool,
    ) -> Result<(LossBreakdown, Option<ParamGrad<T>>)> {
        let cloud = prior.generate(&params.s)?;
        let wrt = if with_grad { Wrt::ALL } else { Wrt::NONE };
        let terms = self.frame_terms(&cloud, &params.p0, &params.dps, vis, wrt)?;
        let breakdown = self.breakdown(&terms);
        if !with_grad {
            return Ok((breakdown, None));
        }
        let lambda = T::of(self.weights.lambda);
        let (p0, dps, gp, active) = self.assemble(&terms, cloud.len(), T::one(), lambda);
        let s = prior.generate_backward(&params.s, &gp, Some(&active))?;
        Ok((breakdown, Some(ParamGrad { p0, dps, s })))
    }
}

fn one_shot<T: Real, P: ShapePrior<T> + ?Sized>(
    frames: &[Frame<T>],
    params: &Params<T>,
    prior: &P,
    k: &CameraIntrinsics<T>,
    upscale: f64,
    w_ph: T,
    w_cd: T,
) -> Result<(LossBreakdown, ParamGrad<T>)> {
    let problem = Problem::new(frames, *k, upscale, LossWeights { lambda: w_cd.f64() }, SilhouetteVisibility::PerTarget)?;
    let cloud = prior.generate(&params.s)?;
    let vis = problem.visibility(&cloud, &params.p0, &params.dps)?;
    let terms = problem.frame_terms(&cloud, &params.p0, &params.dps, &vis, Wrt::ALL)?;
    let (p0, dps, gp, active) = problem.assemble(&terms, cloud.len(), w_ph, w_cd);
    let s = prior.generate_backward(&params.s, &gp, Some(&active))?;
    Ok((problem.breakdown(&terms), ParamGrad { p0, dps, s }))
}

/// Photometric loss with visibility computed from `(s, p0)`; returns `(L_ph, ∇L_ph, breakdown)`.
pub fn photometric_loss<T: Real, P: ShapePrior<T> + ?Sized>(
    frames: &[Frame<T>],
    params: &Params<T>,
    prior: &P,
    k: &CameraIntrinsics<T>,
    upscale: f64,
) -> Result<(T, ParamGrad<T>, LossBreakdown)> {
    let (b, g) = one_shot(frames, params, prior, k, upscale, T::one(), T::zero())?;
    Ok((T::of(b.l_ph), g, b))
}

/// Silhouette Chamfer loss averaged over target frames; returns `(L_CD, ∇L_CD)`.
pub fn silhouette_loss<T: Real, P: ShapePrior<T> + ?Sized>(
    frames: &[Frame<T>],
    params: &Params<T>,
    prior: &P,
    k: &CameraIntrinsics<T>,
    upscale: f64,
) -> Result<(T, ParamGrad<T>)> {
    let (b, g) = one_shot(frames, params, prior, k, upscale, T::zero(), T::one())?;
    Ok((T::of(b.l_cd), g))
}

/// `L_ph + λ L_CD` with its gradient.
pub fn combined_loss<T: Real, P: ShapePrior<T> + ?Sized>(
    frames: &[Frame<T>],
    params: &Params<T>,
    prior: &P,
    k: &CameraIntrinsics<T>,
    upscale: f64,
    weights: LossWeights,
) -> Result<(LossBreakdown, ParamGrad<T>)> {
    weights.validate()?;
    one_shot(frames, params, prior, k, upscale, T::one(), T::of(weights.lambda))
}
