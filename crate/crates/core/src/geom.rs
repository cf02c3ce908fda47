//! Rigid-body geometry: SE(3) poses, their exponential and logarithm maps,
//! the pinhole camera model and closed-form rigid point-set alignment.
//!
//! Twists are ordered `(rho, phi)`: translation part first, rotation part
//! (axis-angle) second. Cameras look along +z with x to the right and y down.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

use crate::scalar::Real;

pub type Vec3<T> = Vector3<T>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("rotation angle is within tolerance of pi; use the axis-extraction fallback")]
    AngleAtPi,
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
#[inline]
pub fn hat<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

#[inline]
fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Element of the tangent space of SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist<T: Real> {
    pub rho: Vector3<T>,
    pub phi: Vector3<T>,
}

impl<T: Real> Twist<T> {
    pub fn new(rho: Vector3<T>, phi: Vector3<T>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<T>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

/// Coefficients `sin(t)/t`, `(1-cos t)/t^2`, `(t-sin t)/t^3`, with series near zero.
fn rodrigues_coefficients<T: Real>(theta: T) -> (T, T, T) {
    if theta < T::lit(0.1) {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        let a = T::one() - t2 / T::lit(6.0) + t4 / T::lit(120.0) - t6 / T::lit(5040.0);
        let b = T::lit(0.5) - t2 / T::lit(24.0) + t4 / T::lit(720.0) - t6 / T::lit(40320.0);
        let c = T::lit(1.0 / 6.0) - t2 / T::lit(120.0) + t4 / T::lit(5040.0)
            - t6 / T::lit(362880.0);
        (a, b, c)
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (T::one() - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Left Jacobian of SO(3); equals the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let (_, b, c) = rodrigues_coefficients(phi.norm());
    let k = hat(phi);
    Matrix3::identity() + k * b + k * k * c
}

/// Inverse of [`so3_left_jacobian`].
pub fn so3_left_jacobian_inverse<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta = phi.norm();
    let k = hat(phi);
    let coeff = if theta < T::lit(0.1) {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        T::lit(1.0 / 12.0) + t2 / T::lit(720.0) + t4 / T::lit(30240.0) + t6 / T::lit(1209600.0)
    } else {
        let (s, c) = theta.sin_cos();
        T::one() / (theta * theta) - (T::one() + c) / (T::lit(2.0) * theta * s)
    };
    Matrix3::identity() - k * T::lit(0.5) + k * k * coeff
}

/// The `Q(rho, phi)` block coupling translation and rotation in the SE(3) left Jacobian.
fn se3_q_block<T: Real>(rho: &Vector3<T>, phi: &Vector3<T>) -> Matrix3<T> {
    let theta = phi.norm();
    let (c1, c2, c3) = if theta < T::lit(0.1) {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            T::lit(1.0 / 6.0) - t2 / T::lit(120.0) + t4 / T::lit(5040.0) - t6 / T::lit(362880.0),
            T::lit(1.0 / 24.0) - t2 / T::lit(720.0) + t4 / T::lit(40320.0)
                - t6 / T::lit(3628800.0),
            T::lit(1.0 / 120.0) - t2 / T::lit(2520.0) + t4 / T::lit(120960.0)
                - t6 / T::lit(9979200.0),
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let t4 = t2 * t2;
        let t5 = t4 * theta;
        (
            (theta - s) / t3,
            (t2 + T::lit(2.0) * c - T::lit(2.0)) / (T::lit(2.0) * t4),
            (T::lit(2.0) * theta - T::lit(3.0) * s + theta * c) / (T::lit(2.0) * t5),
        )
    };
    let p = hat(phi);
    let r = hat(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    let pp = p * p;
    r * T::lit(0.5)
        + (pr + rp + prp) * c1
        + (pp * r + rp * p - prp * T::lit(3.0)) * c2
        + (prp * p + pp * rp) * c3
}

/// Left Jacobian of SE(3) in `(rho, phi)` ordering.
pub fn se3_left_jacobian<T: Real>(xi: &Twist<T>) -> Matrix6<T> {
    let j = so3_left_jacobian(&xi.phi);
    let q = se3_q_block(&xi.rho, &xi.phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out
}

/// Inverse of [`se3_left_jacobian`].
pub fn se3_left_jacobian_inverse<T: Real>(xi: &Twist<T>) -> Matrix6<T> {
    let jinv = so3_left_jacobian_inverse(&xi.phi);
    let q = se3_q_block(&xi.rho, &xi.phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-(jinv * q * jinv)));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out
}

/// Inverse right Jacobian: `Jr^-1(xi) = Jl^-1(-xi)`.
pub fn se3_right_jacobian_inverse<T: Real>(xi: &Twist<T>) -> Matrix6<T> {
    se3_left_jacobian_inverse(&Twist::new(-xi.rho, -xi.phi))
}

/// Rigid-body transform. Composition `a * b` applies `b` first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SE3Pose<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for SE3Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> SE3Pose<T> {
    /// Builds a pose without checking orthonormality.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_axis_angle(axis_angle: Vector3<T>, translation: Vector3<T>) -> Self {
        let (a, b, _) = rodrigues_coefficients(axis_angle.norm());
        let k = hat(&axis_angle);
        Self::new(Matrix3::identity() + k * a + k * k * b, translation)
    }

    /// Rotation about the world z axis.
    pub fn rot_z(angle: T, translation: Vector3<T>) -> Self {
        Self::from_axis_angle(Vector3::new(T::zero(), T::zero(), angle), translation)
    }

    /// Builds a pose from a unit quaternion given as `[qx, qy, qz, qw]`.
    pub fn from_quaternion(translation: Vector3<T>, q: [T; 4]) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]));
        Self::new(uq.to_rotation_matrix().into_inner(), translation)
    }

    /// Unit quaternion `[qx, qy, qz, qw]` with `qw >= 0`.
    pub fn quaternion(&self) -> [T; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let mut c = [q.i, q.j, q.k, q.w];
        if c[3] < T::zero() {
            for v in c.iter_mut() {
                *v = -*v;
            }
        }
        c
    }

    pub fn compose(&self, other: &Self) -> Self {
        let out = Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        );
        if out.orthonormality_error() > T::lit(1e-12) {
            out.orthonormalized()
        } else {
            out
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// `max |R Rᵀ - I|` over entries.
    pub fn orthonormality_error(&self) -> T {
        (self.rotation * self.rotation.transpose() - Matrix3::identity()).amax()
    }

    pub fn is_valid(&self, tol: T) -> bool {
        self.orthonormality_error() <= tol
            && (self.rotation.determinant() - T::one()).abs() <= tol
            && self.translation.iter().all(|c| c.is_finite())
    }

    /// Projects the rotation back onto SO(3) (nearest rotation in Frobenius norm).
    pub fn orthonormalized(&self) -> Self {
        Self::new(nearest_rotation(&self.rotation), self.translation)
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> T {
        let w = vee(&(self.rotation - self.rotation.transpose()));
        let s = w.norm() * T::lit(0.5);
        let c = (self.rotation.trace() - T::one()) * T::lit(0.5);
        s.atan2(c)
    }

    pub fn exp(xi: &Twist<T>) -> Self {
        let (a, b, c) = rodrigues_coefficients(xi.phi.norm());
        let k = hat(&xi.phi);
        let kk = k * k;
        let r = Matrix3::identity() + k * a + kk * b;
        let v = Matrix3::identity() + k * b + kk * c;
        Self::new(r, v * xi.rho)
    }

    /// Logarithm map. Fails with [`GeomError::AngleAtPi`] when the rotation
    /// angle is within `1e-9` of pi.
    pub fn log(&self) -> Result<Twist<T>, GeomError> {
        let w = vee(&(self.rotation - self.rotation.transpose()));
        let s = w.norm() * T::lit(0.5);
        let c = (self.rotation.trace() - T::one()) * T::lit(0.5);
        let theta = s.atan2(c);
        if T::pi() - theta < T::lit(1e-9) {
            return Err(GeomError::AngleAtPi);
        }
        let phi = if theta < T::lit(1e-4) {
            // theta / (2 sin theta) ~ 1/2 + theta^2 / 12
            w * (T::lit(0.5) + theta * theta / T::lit(12.0))
        } else {
            w * (theta / (T::lit(2.0) * theta.sin()))
        };
        Ok(Twist::new(so3_left_jacobian_inverse(&phi) * self.translation, phi))
    }

    /// Logarithm that also handles rotations at pi by extracting the axis from `R + I`.
    pub fn log_robust(&self) -> Twist<T> {
        match self.log() {
            Ok(xi) => xi,
            Err(_) => {
                let b = (self.rotation + Matrix3::identity()) * T::lit(0.5);
                // Column with the largest diagonal entry is proportional to the axis.
                let mut best = 0;
                for i in 1..3 {
                    if b[(i, i)] > b[(best, best)] {
                        best = i;
                    }
                }
                let axis = b.column(best).into_owned().normalize();
                let phi = axis * T::pi();
                Twist::new(so3_left_jacobian_inverse(&phi) * self.translation, phi)
            }
        }
    }

    /// Adjoint in `(rho, phi)` ordering: `exp(Ad(T) xi) = T exp(xi) T^-1`.
    pub fn adjoint(&self) -> Matrix6<T> {
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        out.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(hat(&self.translation) * self.rotation));
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        out
    }

    /// Largest absolute componentwise difference of rotation and translation.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let dr = (self.rotation - other.rotation).amax();
        let dt = (self.translation - other.translation).amax();
        dr.max(dt)
    }

    pub fn cast<U: Real>(&self) -> SE3Pose<U> {
        SE3Pose::new(
            self.rotation.map(|v| U::lit(v.to_f64_lossy())),
            self.translation.map(|v| U::lit(v.to_f64_lossy())),
        )
    }
}

impl<T: Real> Mul for SE3Pose<T> {
    type Output = SE3Pose<T>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.compose(&rhs)
    }
}

impl<T: Real> Mul<&SE3Pose<T>> for &SE3Pose<T> {
    type Output = SE3Pose<T>;
    fn mul(self, rhs: &SE3Pose<T>) -> Self::Output {
        self.compose(rhs)
    }
}

impl<T: Real + fmt::Display> fmt::Display for SE3Pose<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion();
        write!(
            f,
            "t=({}, {}, {}) q=({}, {}, {}, {})",
            self.translation.x, self.translation.y, self.translation.z, q[0], q[1], q[2], q[3]
        )
    }
}

fn nearest_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    u * d * v_t
}

/// Pinhole intrinsics; depth rasters store integer multiples of `depth_scale` meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        depth_scale: f64,
    ) -> Result<Self, GeomError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(GeomError::InvalidIntrinsics("cx outside the image"));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeomError::InvalidIntrinsics("cy outside the image"));
        }
        if !(self.depth_scale > 0.0) {
            return Err(GeomError::InvalidIntrinsics("depth_scale must be positive"));
        }
        Ok(())
    }

    /// 640x480 sensor with a ~70 degree horizontal field of view, millimeter depth.
    pub fn vga() -> Self {
        Self {
            fx: 460.0,
            fy: 460.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
            depth_scale: 0.001,
        }
    }

    /// Same optics as [`CameraIntrinsics::vga`] at half resolution.
    pub fn qvga() -> Self {
        Self::vga().scaled(320, 240)
    }

    /// Rescales the intrinsics to another raster size, keeping the field of view.
    pub fn scaled(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            depth_scale: self.depth_scale,
        }
    }

    pub fn project<T: Real>(&self, p: &Vector3<T>) -> Result<(T, T), GeomError> {
        if p.z <= T::zero() {
            return Err(GeomError::BehindCamera(p.z.to_f64_lossy()));
        }
        let u = T::lit(self.fx) * p.x / p.z + T::lit(self.cx);
        let v = T::lit(self.fy) * p.y / p.z + T::lit(self.cy);
        Ok((u, v))
    }

    /// Camera-frame point at z-depth `depth` meters along pixel `(u, v)`.
    pub fn backproject<T: Real>(&self, u: T, v: T, depth: T) -> Vector3<T> {
        Vector3::new(
            (u - T::lit(self.cx)) * depth / T::lit(self.fx),
            (v - T::lit(self.cy)) * depth / T::lit(self.fy),
            depth,
        )
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Least-squares rigid transform `T` minimizing `sum |T src_i - dst_i|^2` (Kabsch/Umeyama, no scale).
///
/// Requires at least three non-collinear correspondences.
pub fn rigid_align<T: Real>(src: &[Vector3<T>], dst: &[Vector3<T>]) -> Result<SE3Pose<T>, GeomError> {
    if src.len() != dst.len() {
        return Err(GeomError::DegenerateConfiguration("length mismatch"));
    }
    if src.len() < 3 {
        return Err(GeomError::DegenerateConfiguration("fewer than three points"));
    }
    let (pose, spread) = kabsch(src, dst);
    // Second singular value of the centered source scatter vanishes for collinear input.
    if !(spread[1] > spread[0] * T::lit(1e-10)) {
        return Err(GeomError::DegenerateConfiguration("points are collinear"));
    }
    Ok(pose)
}

/// Alignment without the degeneracy check. Collinear inputs still give a
/// residual-minimizing transform (the spin about the line is arbitrary).
/// Returns the pose and the singular values of the centered source scatter.
pub fn kabsch<T: Real>(src: &[Vector3<T>], dst: &[Vector3<T>]) -> (SE3Pose<T>, [T; 3]) {
    let n = src.len().min(dst.len());
    if n == 0 {
        return (SE3Pose::identity(), [T::zero(); 3]);
    }
    let inv_n = T::one() / T::lit(n as f64);
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for (s, d) in src.iter().zip(dst).take(n) {
        cs += s;
        cd += d;
    }
    cs *= inv_n;
    cd *= inv_n;
    let mut h = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst).take(n) {
        let a = s - cs;
        let b = d - cd;
        h += b * a.transpose();
        scatter += a * a.transpose();
    }
    let mut sv = scatter.symmetric_eigenvalues().as_slice().to_vec();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let spread = [
        sv[0].max(T::zero()).sqrt(),
        sv[1].max(T::zero()).sqrt(),
        sv[2].max(T::zero()).sqrt(),
    ];

    let svd = h.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < T::zero() {
        // Flip the axis of the smallest singular value to avoid a reflection.
        let mut smallest = 0;
        for i in 1..3 {
            if svd.singular_values[i] < svd.singular_values[smallest] {
                smallest = i;
            }
        }
        d[(smallest, smallest)] = -T::one();
    }
    let r = u * d * v_t;
    let t = cd - r * cs;
    (SE3Pose::new(r, t), spread)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_pose(rng: &mut ChaCha8Rng) -> SE3Pose<f64> {
        let phi = Vector3::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        );
        let t = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        SE3Pose::from_axis_angle(phi, t)
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        assert_eq!(SE3Pose::identity().compose(&p), p);
        let e = p.compose(&p.inverse());
        assert!(e.max_abs_diff(&SE3Pose::identity()) < 1e-12);
    }

    #[test]
    fn compose_quarter_turns() {
        let a = SE3Pose::rot_z(FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
        let b = SE3Pose::rot_z(FRAC_PI_2, Vector3::zeros());
        let c = a * b;
        let expected = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((c.rotation - expected).amax() < 1e-15);
        assert_eq!(c.translation, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn inverse_of_translation() {
        let p = SE3Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(p.inverse().translation, Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(SE3Pose::<f64>::identity().inverse(), SE3Pose::identity());
    }

    #[test]
    fn exp_special_cases() {
        assert_eq!(SE3Pose::<f64>::exp(&Twist::zero()), SE3Pose::identity());
        let p = SE3Pose::exp(&Twist::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()));
        assert_eq!(p.translation, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(p.rotation, Matrix3::identity());
    }

    #[test]
    fn log_of_pure_translation() {
        let xi = SE3Pose::from_translation(Vector3::new(0.1, 0.0, 0.0)).log().unwrap();
        assert_eq!(xi.to_vector(), Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn log_at_pi_is_an_error_with_fallback() {
        let p = SE3Pose::rot_z(PI, Vector3::new(0.3, 0.0, 0.0));
        assert_eq!(p.log(), Err(GeomError::AngleAtPi));
        let xi = p.log_robust();
        assert_relative_eq!(xi.phi.norm(), PI, epsilon = 1e-12);
        let back = SE3Pose::exp(&xi);
        assert!(back.max_abs_diff(&p) < 1e-9);
    }

    #[test]
    fn quaternion_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let q = p.quaternion();
            assert!(q[3] >= 0.0);
            let back = SE3Pose::from_quaternion(p.translation, q);
            assert!(back.max_abs_diff(&p) < 1e-12);
        }
    }

    #[test]
    fn rigid_align_identity_and_degenerate() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.5),
            Vector3::new(2.0, 1.0, -0.5),
        ];
        let p = rigid_align(&pts, &pts).unwrap();
        assert!(p.max_abs_diff(&SE3Pose::identity()) < 1e-12);

        let line = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(2.0, 2.0, 2.0),
        ];
        assert!(matches!(
            rigid_align(&line, &line),
            Err(GeomError::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            rigid_align(&pts[..2], &pts[..2]),
            Err(GeomError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn rigid_align_recovers_quarter_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = SE3Pose::rot_z(FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
        let src: Vec<_> = (0..10)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect();
        let dst: Vec<_> = src.iter().map(|p| truth.transform_point(p)).collect();
        let est = rigid_align(&src, &dst).unwrap();
        assert!(est.max_abs_diff(&truth) < 1e-9);
    }

    #[test]
    fn rigid_align_handles_planar_reflection_case() {
        // Coplanar points admit a reflection with zero residual; the sign fix must reject it.
        let src = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let truth: SE3Pose<f64> =
            SE3Pose::from_axis_angle(Vector3::new(0.2, -0.4, 0.9), Vector3::new(0.5, 0.1, -2.0));
        let dst: Vec<_> = src.iter().map(|p| truth.transform_point(p)).collect();
        let est = rigid_align(&src, &dst).unwrap();
        assert!((est.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!(est.max_abs_diff(&truth) < 1e-9);
    }

    #[test]
    fn projection_principal_point() {
        let k = CameraIntrinsics::vga();
        assert_eq!(k.backproject(k.cx, k.cy, 4.0), Vector3::new(0.0, 0.0, 4.0));
        assert_eq!(k.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap(), (k.cx, k.cy));
        assert!(matches!(
            k.project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(GeomError::BehindCamera(_))
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4, 0.001).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 1.0, 4, 4, 0.001).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 1.0, 4, 4, 0.0).is_err());
        assert!(CameraIntrinsics::qvga().validate().is_ok());
    }

    #[test]
    fn analytic_left_jacobian_matches_finite_differences() {
        // exp(xi + d) ~ exp(Jl d) exp(xi)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let xi = Twist::new(
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            );
            let jl = se3_left_jacobian(&xi);
            let base = SE3Pose::exp(&xi);
            let h = 1e-6;
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let plus = SE3Pose::exp(&Twist::from_vector(&(xi.to_vector() + d)));
                let minus = SE3Pose::exp(&Twist::from_vector(&(xi.to_vector() - d)));
                let lp = (plus * base.inverse()).log().unwrap().to_vector();
                let lm = (minus * base.inverse()).log().unwrap().to_vector();
                let col = (lp - lm) / (2.0 * h);
                assert!((col - jl.column(k)).amax() < 1e-7, "column {k}");
            }
            let prod = jl * se3_left_jacobian_inverse(&xi);
            assert!((prod - Matrix6::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let p = SE3Pose::<f32>::rot_z(0.5, Vector3::new(1.0, 2.0, 3.0));
        let xi = p.log().unwrap();
        let back = SE3Pose::exp(&xi);
        assert!(back.max_abs_diff(&p) < 1e-5);
        let cast: SE3Pose<f64> = p.cast();
        assert!((cast.translation.x - 1.0).abs() < 1e-12);
    }
}
