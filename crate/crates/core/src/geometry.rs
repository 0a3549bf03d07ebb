//! Rigid-body math: Rodrigues exponential map, pinhole projection, pose
//! composition, their analytic Jacobians, and the geodesic rotation metric.
//!
//! Poses map world points into the camera frame, `y = R x + t`. Rotation and
//! translation are independent parameter blocks (no SE(3) coupling), and a
//! relative motion `dp` composes on the left of a reference pose `p0`:
//! `R = dR R0`, `t = dR t0 + dt`.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ProjectionError;
use crate::scalar::Real;

/// Default minimum camera-frame depth accepted by the projection.
pub const DEFAULT_Z_MIN: f64 = 1e-4;

/// Below this rotation angle Rodrigues switches to its Taylor expansion.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric cross-product matrix, `hat(a) * b == a.cross(&b)`.
#[inline]
pub fn hat<T: Real>(a: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -a.z, a.y, a.z, z, -a.x, -a.y, a.x, z)
}

#[inline]
pub fn norm3<T: Real>(a: &Vector3<T>) -> T {
    a.dot(a).sqrt()
}

/// Rotation matrix `R ∈ SO(3)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix<T: Real>(pub Matrix3<T>);

impl<T: Real> RotationMatrix<T> {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    #[inline]
    pub fn apply(&self, x: &Vector3<T>) -> Vector3<T> {
        self.0 * x
    }

    pub fn compose(&self, rhs: &Self) -> Self {
        RotationMatrix(self.0 * rhs.0)
    }

    pub fn trace(&self) -> T {
        self.0[(0, 0)] + self.0[(1, 1)] + self.0[(2, 2)]
    }

    pub fn determinant(&self) -> T {
        let m = &self.0;
        m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
            - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
            + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
    }

    /// Checks `‖mᵀm − I‖_F < tol` and `|det(m) − 1| ≤ tol`.
    pub fn is_valid(&self, tol: T) -> bool {
        let e = self.0.transpose() * self.0 - Matrix3::identity();
        let fro = e.iter().map(|v| *v * *v).sum::<T>().sqrt();
        fro < tol && (self.determinant() - T::one()).abs() <= tol
    }

    /// Axis-angle vector with angle in `[0, π]`.
    pub fn log(&self) -> Vector3<T> {
        log_so3(self)
    }
}

/// Camera extrinsics in exponential-twist form, `p = [ω, t]` with `ω = φ·n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", into = "PoseRepr<T>", from = "PoseRepr<T>")]
pub struct PoseTwist<T: Real> {
    pub omega: Vector3<T>,
    pub trans: Vector3<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct PoseRepr<T: Real> {
    omega: [T; 3],
    trans: [T; 3],
}

impl<T: Real> From<PoseTwist<T>> for PoseRepr<T> {
    fn from(p: PoseTwist<T>) -> Self {
        PoseRepr { omega: p.omega.into(), trans: p.trans.into() }
    }
}

impl<T: Real> From<PoseRepr<T>> for PoseTwist<T> {
    fn from(r: PoseRepr<T>) -> Self {
        PoseTwist { omega: r.omega.into(), trans: r.trans.into() }
    }
}

impl<T: Real> Default for PoseTwist<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> PoseTwist<T> {
    pub fn new(omega: Vector3<T>, trans: Vector3<T>) -> Self {
        PoseTwist { omega, trans }
    }

    pub fn identity() -> Self {
        PoseTwist { omega: Vector3::zeros(), trans: Vector3::zeros() }
    }

    /// `[ω, t]` packed as six scalars.
    pub fn to_array(&self) -> [T; 6] {
        [self.omega.x, self.omega.y, self.omega.z, self.trans.x, self.trans.y, self.trans.z]
    }

    pub fn from_slice(v: &[T]) -> Self {
        assert_eq!(v.len(), 6, "pose twist has six parameters");
        PoseTwist {
            omega: Vector3::new(v[0], v[1], v[2]),
            trans: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.trans.iter()).all(|v| v.is_finite())
    }

    pub fn rotation(&self) -> RotationMatrix<T> {
        exp_so3(&self.omega)
    }

    pub fn transform(&self) -> RigidTransform<T> {
        RigidTransform { rot: self.rotation(), trans: self.trans }
    }

    pub fn from_transform(tf: &RigidTransform<T>) -> Self {
        PoseTwist { omega: log_so3(&tf.rot), trans: tf.trans }
    }

    /// Equivalent twist with `‖ω‖ ≤ π`.
    pub fn canonicalized(&self) -> Self {
        PoseTwist { omega: canonicalize_rotation(&self.omega), trans: self.trans }
    }

    /// Applies `x ↦ R x + t`.
    pub fn apply(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation().apply(x) + self.trans
    }

    pub fn cast<U: Real>(&self) -> PoseTwist<U> {
        PoseTwist {
            omega: self.omega.map(|v| U::of(v.f64())),
            trans: self.trans.map(|v| U::of(v.f64())),
        }
    }
}

/// Wraps an axis-angle vector onto the equivalent representation with angle `≤ π`.
pub fn canonicalize_rotation<T: Real>(omega: &Vector3<T>) -> Vector3<T> {
    let theta = norm3(omega);
    if !(theta > T::PI()) {
        return *omega;
    }
    let two_pi = T::PI() + T::PI();
    let mut wrapped = theta % two_pi;
    if wrapped > T::PI() {
        wrapped -= two_pi;
    }
    omega * (wrapped / theta)
}

/// Matrix-level rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T: Real> {
    pub rot: RotationMatrix<T>,
    pub trans: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        RigidTransform { rot: RotationMatrix::identity(), trans: Vector3::zeros() }
    }

    #[inline]
    pub fn apply(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rot.apply(x) + self.trans
    }

    /// `self` followed by `next`: `x ↦ next(self(x))`.
    pub fn then(&self, next: &Self) -> Self {
        RigidTransform {
            rot: next.rot.compose(&self.rot),
            trans: next.rot.apply(&self.trans) + next.trans,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        RigidTransform { rot: rt, trans: -(rt.apply(&self.trans)) }
    }
}

/// Pose composition `p0 ∘ dp`: the camera reached by applying the relative
/// motion `dp` after the reference pose `p0`.
pub fn compose<T: Real>(p0: &PoseTwist<T>, dp: &PoseTwist<T>) -> PoseTwist<T> {
    PoseTwist::from_transform(&p0.transform().then(&dp.transform()))
}

/// Rodrigues exponential map.
pub fn exp_so3<T: Real>(omega: &Vector3<T>) -> RotationMatrix<T> {
    let theta2 = omega.dot(omega);
    let theta = theta2.sqrt();
    let w = hat(omega);
    let w2 = w * w;
    if theta < T::of(SMALL_ANGLE) {
        return RotationMatrix(Matrix3::identity() + w + w2 * T::of(0.5));
    }
    let (a, b) = rodrigues_coefficients(theta);
    RotationMatrix(Matrix3::identity() + w * a + w2 * b)
}

/// `(sin θ / θ, (1 − cos θ) / θ²)` with the versine computed without cancellation.
#[inline]
fn rodrigues_coefficients<T: Real>(theta: T) -> (T, T) {
    let half = theta * T::of(0.5);
    let s = half.sin();
    (theta.sin() / theta, T::of(2.0) * s * s / (theta * theta))
}

/// Right Jacobian of SO(3).
pub fn right_jacobian_so3<T: Real>(omega: &Vector3<T>) -> Matrix3<T> {
    let theta2 = omega.dot(omega);
    let theta = theta2.sqrt();
    let w = hat(omega);
    let w2 = w * w;
    if theta < T::of(SMALL_ANGLE) {
        return Matrix3::identity() - w * T::of(0.5) + w2 * T::of(1.0 / 6.0);
    }
    let (_, b) = rodrigues_coefficients(theta);
    // (θ − sin θ) / θ³, series below 1e-2 rad
    let c = if theta < T::of(1e-2) {
        T::of(1.0 / 6.0) - theta2 / T::of(120.0) + theta2 * theta2 / T::of(5040.0)
    } else {
        (theta - theta.sin()) / (theta2 * theta)
    };
    Matrix3::identity() - w * b + w2 * c
}

/// Rotation together with `R·J_r(ω)`, enough to differentiate `R x` with respect to `ω`
/// for many points without re-evaluating trigonometric functions.
#[derive(Clone, Copy, Debug)]
pub struct RotationLinearization<T: Real> {
    pub rot: Matrix3<T>,
    rot_jr: Matrix3<T>,
}

impl<T: Real> RotationLinearization<T> {
    pub fn new(omega: &Vector3<T>) -> Self {
        let rot = exp_so3(omega).0;
        RotationLinearization { rot, rot_jr: rot * right_jacobian_so3(omega) }
    }

    /// `∂(R x)/∂ω = −R [x]ˆ J_r(ω)`.
    #[inline]
    pub fn d_rotated(&self, x: &Vector3<T>) -> Matrix3<T> {
        // R [x]ˆ J_r = [R x]ˆ R J_r
        -(hat(&(self.rot * x)) * self.rot_jr)
    }

    /// `(∂(R x)/∂ω)ᵀ g`, given the already rotated point `rx = R x`.
    #[inline]
    pub fn d_rotated_tr_mul(&self, rx: &Vector3<T>, g: &Vector3<T>) -> Vector3<T> {
        self.rot_jr.tr_mul(&rx.cross(g))
    }
}

/// `∂(exp_so3(ω)·x)/∂ω` as a 3×3 matrix (rows: output coordinates, columns: ω components).
pub fn exp_so3_jacobian<T: Real>(omega: &Vector3<T>, x: &Vector3<T>) -> Matrix3<T> {
    RotationLinearization::new(omega).d_rotated(x)
}

/// Logarithm of a rotation matrix, angle in `[0, π]`.
pub fn log_so3<T: Real>(r: &RotationMatrix<T>) -> Vector3<T> {
    let m = &r.0;
    let cos = ((r.trace() - T::one()) * T::of(0.5)).max(-T::one()).min(T::one());
    let theta = cos.acos();
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    if theta < T::of(1e-6) {
        // sin θ / θ ≈ 1 − θ²/6
        return skew * (T::of(0.5) * (T::one() + theta * theta / T::of(6.0)));
    }
    if T::PI() - theta > T::of(1e-4) {
        return skew * (theta / (T::of(2.0) * theta.sin()));
    }
    // Near π: the axis comes from the symmetric part, R ≈ 2nnᵀ − I.
    let sym = (m + m.transpose()) * T::of(0.5);
    let one_minus_cos = T::one() - cos;
    let mut k = 0;
    for i in 1..3 {
        if sym[(i, i)] > sym[(k, k)] {
            k = i;
        }
    }
    let nk = ((sym[(k, k)] - cos) / one_minus_cos).max(T::zero()).sqrt();
    let mut n = Vector3::zeros();
    for i in 0..3 {
        n[i] = if i == k { nk } else { sym[(i, k)] / (one_minus_cos * nk) };
    }
    let n = n / norm3(&n);
    // resolve the sign from the antisymmetric part
    let sign = if n.dot(&skew) < T::zero() { -T::one() } else { T::one() };
    n * (theta * sign)
}

/// Pinhole intrinsics `K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Self {
        assert!(fx > T::zero() && fy > T::zero(), "focal lengths must be positive");
        CameraIntrinsics { fx, fy, cx, cy }
    }

    /// Perspective projection of a camera-frame point.
    #[inline]
    pub fn project_camera_point(&self, y: &Vector3<T>, z_min: T) -> Result<PixelCoord<T>, ProjectionError> {
        if !(y.z > z_min) {
            return Err(ProjectionError::BehindCamera);
        }
        Ok(PixelCoord { u: self.fx * y.x / y.z + self.cx, v: self.fy * y.y / y.z + self.cy })
    }

    /// `∂u/∂y` for a camera-frame point in front of the camera.
    #[inline]
    pub fn projection_jacobian(&self, y: &Vector3<T>) -> Matrix2x3<T> {
        let iz = T::one() / y.z;
        let iz2 = iz * iz;
        let z = T::zero();
        Matrix2x3::new(self.fx * iz, z, -self.fx * y.x * iz2, z, self.fy * iz, -self.fy * y.y * iz2)
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics { fx: U::of(self.fx.f64()), fy: U::of(self.fy.f64()), cx: U::of(self.cx.f64()), cy: U::of(self.cy.f64()) }
    }
}

/// Subpixel image location; pixel centers sit at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PixelCoord<T: Real> {
    pub u: T,
    pub v: T,
}

impl<T: Real> PixelCoord<T> {
    pub fn new(u: T, v: T) -> Self {
        PixelCoord { u, v }
    }

    pub fn as_vector(&self) -> Vector2<T> {
        Vector2::new(self.u, self.v)
    }

    #[inline]
    pub fn dist2(&self, other: &Self) -> T {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        du * du + dv * dv
    }
}

/// `π(x; p) = K(R x + t)` followed by the perspective division.
pub fn project<T: Real>(x: &Vector3<T>, pose: &PoseTwist<T>, k: &CameraIntrinsics<T>) -> Result<PixelCoord<T>, ProjectionError> {
    project_with_z_min(x, pose, k, T::of(DEFAULT_Z_MIN))
}

pub fn project_with_z_min<T: Real>(
    x: &Vector3<T>,
    pose: &PoseTwist<T>,
    k: &CameraIntrinsics<T>,
    z_min: T,
) -> Result<PixelCoord<T>, ProjectionError> {
    k.project_camera_point(&pose.apply(x), z_min)
}

/// Projection under the composed pose `p0 ∘ dp`: `y = dR (R0 x + t0) + dt`.
pub fn project_composed<T: Real>(
    x: &Vector3<T>,
    p0: &PoseTwist<T>,
    dp: &PoseTwist<T>,
    k: &CameraIntrinsics<T>,
) -> Result<PixelCoord<T>, ProjectionError> {
    let y = dp.apply(&p0.apply(x));
    k.project_camera_point(&y, T::of(DEFAULT_Z_MIN))
}

/// Projection and its derivatives with respect to the pose blocks and the point.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionJacobians<T: Real> {
    pub uv: PixelCoord<T>,
    pub d_omega: Matrix2x3<T>,
    pub d_trans: Matrix2x3<T>,
    pub d_point: Matrix2x3<T>,
}

pub fn project_with_jacobians<T: Real>(
    x: &Vector3<T>,
    pose: &PoseTwist<T>,
    k: &CameraIntrinsics<T>,
    z_min: T,
) -> Result<ProjectionJacobians<T>, ProjectionError> {
    let lin = RotationLinearization::new(&pose.omega);
    let y = lin.rot * x + pose.trans;
    let uv = k.project_camera_point(&y, z_min)?;
    let du_dy = k.projection_jacobian(&y);
    Ok(ProjectionJacobians { uv, d_omega: du_dy * lin.d_rotated(x), d_trans: du_dy, d_point: du_dy * lin.rot })
}

/// Derivatives of the composed projection with respect to both poses and the point.
#[derive(Clone, Copy, Debug)]
pub struct ComposedJacobians<T: Real> {
    pub uv: PixelCoord<T>,
    pub d_omega0: Matrix2x3<T>,
    pub d_trans0: Matrix2x3<T>,
    pub d_domega: Matrix2x3<T>,
    pub d_dtrans: Matrix2x3<T>,
    pub d_point: Matrix2x3<T>,
}

pub fn project_composed_with_jacobians<T: Real>(
    x: &Vector3<T>,
    p0: &PoseTwist<T>,
    dp: &PoseTwist<T>,
    k: &CameraIntrinsics<T>,
    z_min: T,
) -> Result<ComposedJacobians<T>, ProjectionError> {
    let l0 = RotationLinearization::new(&p0.omega);
    let ld = RotationLinearization::new(&dp.omega);
    let z = l0.rot * x + p0.trans;
    let y = ld.rot * z + dp.trans;
    let uv = k.project_camera_point(&y, z_min)?;
    let du_dy = k.projection_jacobian(&y);
    let du_dz = du_dy * ld.rot;
    Ok(ComposedJacobians {
        uv,
        d_omega0: du_dz * l0.d_rotated(x),
        d_trans0: du_dz,
        d_domega: du_dy * ld.d_rotated(&z),
        d_dtrans: du_dy,
        d_point: du_dz * l0.rot,
    })
}

/// Smallest rotation angle between two rotations, in degrees.
pub fn geodesic_rotation_error<T: Real>(ra: &RotationMatrix<T>, rb: &RotationMatrix<T>) -> T {
    let rel = ra.transpose().compose(rb);
    let c = ((rel.trace() - T::one()) * T::of(0.5)).max(-T::one()).min(T::one());
    c.acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_rotation_jacobian_product() {
        let omega = Vector3::new(0.3, -1.1, 0.7);
        let x = Vector3::new(0.2, 0.5, -1.3);
        let g = Vector3::new(-0.4, 0.9, 0.1);
        let lin = RotationLinearization::new(&omega);
        let a = lin.d_rotated(&x).transpose() * g;
        let b = lin.d_rotated_tr_mul(&(lin.rot * x), &g);
        assert!((a - b).norm() < 1e-14);
    }
    use approx_eq::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    mod approx_eq {
        pub fn rel_err(a: f64, b: f64) -> f64 {
            (a - b).abs() / a.abs().max(b.abs()).max(1.0)
        }
    }

    fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
    }

    fn rand_omega(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = rand_vec(rng, std::f64::consts::PI);
            if v.norm() <= std::f64::consts::PI {
                return v;
            }
        }
    }

    /// Matrix exponential by 30-term power series.
    fn expm_series(w: &Matrix3<f64>) -> Matrix3<f64> {
        let mut out = Matrix3::identity();
        let mut term = Matrix3::identity();
        for k in 1..30 {
            term = term * w / k as f64;
            out += term;
        }
        out
    }

    #[test]
    fn exp_zero_is_identity() {
        assert_eq!(exp_so3(&Vector3::<f64>::zeros()).0, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let y = r.apply(&Vector3::new(1.0, 0.0, 0.0));
        assert!((y - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn exp_matches_power_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let w = rand_omega(&mut rng);
            let r = exp_so3(&w);
            let s = expm_series(&hat(&w));
            assert!((r.0 - s).abs().max() < 1e-10, "{w:?}");
            assert!(r.is_valid(1e-9));
        }
    }

    #[test]
    fn exp_inverse_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let w = rand_omega(&mut rng);
            let p = exp_so3(&w).compose(&exp_so3(&-w));
            assert!((p.0 - Matrix3::identity()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn jacobian_at_identity_is_cross_product() {
        let x = Vector3::new(1.0, 0.0, 0.0);
        let j = exp_so3_jacobian(&Vector3::zeros(), &x);
        for k in 0..3 {
            let e = Vector3::ith(k, 1.0);
            assert!((j.column(k) - e.cross(&x)).norm() < 1e-15);
        }
    }

    fn fd_rot_jacobian(w: &Vector3<f64>, x: &Vector3<f64>) -> Matrix3<f64> {
        let h = 1e-6;
        let mut j = Matrix3::zeros();
        for k in 0..3 {
            let mut wp = *w;
            let mut wm = *w;
            wp[k] += h;
            wm[k] -= h;
            let d = (exp_so3(&wp).apply(x) - exp_so3(&wm).apply(x)) / (2.0 * h);
            j.set_column(k, &d);
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cases: Vec<(Vector3<f64>, Vector3<f64>)> =
            vec![(Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), Vector3::new(1.0, 0.0, 0.0))];
        for _ in 0..500 {
            cases.push((rand_omega(&mut rng), rand_vec(&mut rng, 2.0)));
        }
        for (w, x) in cases {
            let a = exp_so3_jacobian(&w, &x);
            let n = fd_rot_jacobian(&w, &x);
            let scale = n.abs().max().max(1e-3);
            assert!((a - n).abs().max() / scale < 1e-5, "{w:?} {x:?}\n{a}\n{n}");
        }
    }

    #[test]
    fn small_angle_branches_are_continuous() {
        let x = Vector3::new(0.3, -0.7, 1.1);
        for &t in &[1e-9, 1e-8 * 0.999, 1e-8 * 1.001, 1e-6, 1e-3, 9.99e-3, 1.001e-2] {
            let w = Vector3::new(t, -2.0 * t, 0.5 * t);
            let a = exp_so3_jacobian(&w, &x);
            let n = fd_rot_jacobian(&w, &x);
            assert!((a - n).abs().max() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let w = rand_omega(&mut rng);
            let back = log_so3(&exp_so3(&w));
            assert!((exp_so3(&back).0 - exp_so3(&w).0).abs().max() < 1e-9);
            if w.norm() < std::f64::consts::PI - 1e-3 {
                assert!((back - w).norm() < 1e-8, "{w:?} {back:?}");
            }
        }
        let w = Vector3::new(0.0, std::f64::consts::PI, 0.0);
        assert!((exp_so3(&log_so3(&exp_so3(&w))).0 - exp_so3(&w).0).abs().max() < 1e-9);
    }

    #[test]
    fn canonicalize_wraps_large_angles() {
        let n = Vector3::new(1.0, 2.0, -2.0) / 3.0;
        for &a in &[0.5, 3.0, 4.0, 7.0, 12.0] {
            let w = n * a;
            let c = canonicalize_rotation(&w);
            assert!(c.norm() <= std::f64::consts::PI + 1e-12);
            assert!((exp_so3(&c).0 - exp_so3(&w).0).abs().max() < 1e-12);
        }
    }

    #[test]
    fn project_examples() {
        let id = PoseTwist::<f64>::identity();
        let k1 = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(project(&Vector3::new(0.0, 0.0, 1.0), &id, &k1).unwrap(), PixelCoord::new(0.0, 0.0));
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0);
        assert_eq!(project(&Vector3::new(0.5, 0.0, 1.0), &id, &k).unwrap(), PixelCoord::new(114.0, 64.0));
        assert_eq!(project(&Vector3::new(0.5, 0.0, -1.0), &id, &k), Err(ProjectionError::BehindCamera));
        assert_eq!(project(&Vector3::new(0.5, 0.0, 1e-4), &id, &k), Err(ProjectionError::BehindCamera));
    }

    #[test]
    fn project_matches_stepwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = CameraIntrinsics::new(120.0, 110.0, 63.5, 60.0);
        for _ in 0..500 {
            let w = rand_omega(&mut rng);
            let t = rand_vec(&mut rng, 0.5) + Vector3::new(0.0, 0.0, 5.0);
            let x = rand_vec(&mut rng, 1.0);
            // scalar Rodrigues with explicit axis/angle
            let phi = w.norm();
            let (n1, n2, n3) = (w.x / phi, w.y / phi, w.z / phi);
            let (c, s) = (phi.cos(), phi.sin());
            let v = 1.0 - c;
            let r = [
                [c + n1 * n1 * v, n1 * n2 * v - n3 * s, n1 * n3 * v + n2 * s],
                [n2 * n1 * v + n3 * s, c + n2 * n2 * v, n2 * n3 * v - n1 * s],
                [n3 * n1 * v - n2 * s, n3 * n2 * v + n1 * s, c + n3 * n3 * v],
            ];
            let mut y = [0.0; 3];
            for i in 0..3 {
                y[i] = r[i][0] * x.x + r[i][1] * x.y + r[i][2] * x.z + t[i];
            }
            let u = 120.0 * y[0] / y[2] + 63.5;
            let vv = 110.0 * y[1] / y[2] + 60.0;
            let p = project(&x, &PoseTwist::new(w, t), &k).unwrap();
            assert!(rel_err(p.u, u) < 1e-12 && rel_err(p.v, vv) < 1e-12);
        }
    }

    #[test]
    fn perspective_invariance_under_ray_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0);
        for _ in 0..200 {
            let pose = PoseTwist::new(rand_omega(&mut rng), Vector3::zeros());
            let x = pose.rotation().transpose().apply(&(rand_vec(&mut rng, 1.0) + Vector3::new(0.0, 0.0, 3.0)));
            let lam = rng.random_range(0.1..10.0);
            let a = project(&x, &pose, &k).unwrap();
            let b = project(&(x * lam), &pose, &k).unwrap();
            assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        }
    }

    #[test]
    fn composed_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0);
        let id = PoseTwist::identity();
        for _ in 0..100 {
            let p = PoseTwist::new(rand_omega(&mut rng) * 0.3, rand_vec(&mut rng, 0.3) + Vector3::new(0.0, 0.0, 4.0));
            let x = rand_vec(&mut rng, 1.0);
            assert_eq!(project_composed(&x, &p, &id, &k), project(&x, &p, &k));
            assert_eq!(project_composed(&x, &id, &p, &k), project(&x, &p, &k));
        }
    }

    #[test]
    fn composed_matches_matrix_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0);
        for _ in 0..300 {
            let p0 = PoseTwist::new(rand_omega(&mut rng), rand_vec(&mut rng, 0.3) + Vector3::new(0.0, 0.0, 4.0));
            let dp = PoseTwist::new(rand_omega(&mut rng) * 0.2, rand_vec(&mut rng, 0.2));
            let x = rand_vec(&mut rng, 1.0);
            // 4x4 homogeneous composition, independent of RigidTransform::then
            let h = |p: &PoseTwist<f64>| {
                let mut m = nalgebra::Matrix4::identity();
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&exp_so3(&p.omega).0);
                m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.trans);
                m
            };
            let m = h(&dp) * h(&p0);
            let y = m * x.push(1.0);
            if y.z <= 1e-3 {
                continue;
            }
            let expect = PixelCoord::new(100.0 * y.x / y.z + 64.0, 100.0 * y.y / y.z + 64.0);
            let a = project_composed(&x, &p0, &dp, &k).unwrap();
            let b = project(&x, &compose(&p0, &dp), &k).unwrap();
            assert!(a.dist2(&expect).sqrt() < 1e-9 && b.dist2(&expect).sqrt() < 1e-8);
        }
    }

    #[test]
    fn geodesic_examples() {
        let r = exp_so3(&Vector3::new(0.1, 0.2, 0.3));
        assert_eq!(geodesic_rotation_error(&r, &r), 0.0);
        let q = exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert!((geodesic_rotation_error(&RotationMatrix::identity(), &q) - 90.0).abs() < 1e-12);
    }

    fn quat(r: &Matrix3<f64>) -> [f64; 4] {
        // Shepperd's method
        let tr = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [0.25 * s, (r[(2, 1)] - r[(1, 2)]) / s, (r[(0, 2)] - r[(2, 0)]) / s, (r[(1, 0)] - r[(0, 1)]) / s]
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            [(r[(2, 1)] - r[(1, 2)]) / s, 0.25 * s, (r[(0, 1)] + r[(1, 0)]) / s, (r[(0, 2)] + r[(2, 0)]) / s]
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            [(r[(0, 2)] - r[(2, 0)]) / s, (r[(0, 1)] + r[(1, 0)]) / s, 0.25 * s, (r[(1, 2)] + r[(2, 1)]) / s]
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            [(r[(1, 0)] - r[(0, 1)]) / s, (r[(0, 2)] + r[(2, 0)]) / s, (r[(1, 2)] + r[(2, 1)]) / s, 0.25 * s]
        }
    }

    #[test]
    fn geodesic_matches_quaternion_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let a = exp_so3(&rand_omega(&mut rng));
            let b = exp_so3(&rand_omega(&mut rng));
            let (qa, qb) = (quat(&a.0), quat(&b.0));
            let dot: f64 = qa.iter().zip(&qb).map(|(x, y)| x * y).sum::<f64>().abs().min(1.0);
            let oracle = 2.0 * dot.acos().to_degrees();
            // arccos is ill-conditioned near 0; compare on the well-conditioned range
            let g = geodesic_rotation_error(&a, &b);
            assert!((g - oracle).abs() < 1e-5, "{g} {oracle}");
        }
    }

    #[test]
    fn geodesic_symmetry_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let a = exp_so3(&rand_omega(&mut rng));
            let b = exp_so3(&rand_omega(&mut rng));
            let c = exp_so3(&rand_omega(&mut rng));
            let ab = geodesic_rotation_error(&a, &b);
            assert!((ab - geodesic_rotation_error(&b, &a)).abs() < 1e-9);
            assert!(geodesic_rotation_error(&a, &c) <= ab + geodesic_rotation_error(&b, &c) + 1e-9);
        }
    }

    #[test]
    fn pose_json_shape() {
        let p = PoseTwist::new(Vector3::new(0.0, 0.5, 0.0), Vector3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"omega":[0.0,0.5,0.0],"trans":[1.0,2.0,3.0]}"#);
        let back: PoseTwist<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let k = CameraIntrinsics::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(serde_json::to_string(&k).unwrap(), r#"{"fx":1.0,"fy":2.0,"cx":3.0,"cy":4.0}"#);
    }

    #[test]
    fn works_in_single_precision() {
        let r = exp_so3(&Vector3::new(0.0f32, 0.0, std::f32::consts::FRAC_PI_2));
        let y = r.apply(&Vector3::new(1.0, 0.0, 0.0));
        assert!((y.y - 1.0).abs() < 1e-6);
        let k = CameraIntrinsics::new(100.0f32, 100.0, 64.0, 64.0);
        let p = project(&Vector3::new(0.5f32, 0.0, 1.0), &PoseTwist::identity(), &k).unwrap();
        assert!((p.u - 114.0).abs() < 1e-4);
    }

    proptest::proptest! {
        #[test]
        fn composed_transform_matches_sequential_application(
            a in proptest::array::uniform6(-1.0f64..1.0),
            b in proptest::array::uniform6(-1.0f64..1.0),
            x in proptest::array::uniform3(-2.0f64..2.0),
        ) {
            let (pa, pb) = (PoseTwist::from_slice(&a), PoseTwist::from_slice(&b));
            let x = Vector3::from(x);
            let direct = compose(&pa, &pb).apply(&x);
            let seq = pa.transform().then(&pb.transform()).apply(&x);
            proptest::prop_assert!((direct - seq).norm() < 1e-9);
        }
    }
}
