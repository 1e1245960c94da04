//! Quaternion algebra with the convention used throughout this crate.
//!
//! Storage is vector-first: `q = [x, y, z, w]` with `w` the scalar part.
//! Products are Hamilton products. A unit quaternion `q_WB` represents the
//! body-to-world rotation: `v_W = q.rotation_matrix() * v_B`.
//!
//! The manifold retraction pair used by the minimal-coordinate machinery is
//! [`Quat::boxplus`] / [`Quat::boxminus`]: a 3-vector rotation perturbation
//! `dtheta` maps to the local quaternion increment
//!
//! `dq = [sin(|dtheta|/2) * dtheta/|dtheta|, cos(|dtheta|/2)]`
//!
//! applied on the right, `q ⊞ dtheta = q ⊗ dq`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use std::ops::Mul;

/// Unit quaternion, vector part first: `[x, y, z, w]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        w: 1.0,
    };

    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Quat { x, y, z, w }
    }

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-300 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let u = axis / n;
        Quat::new(s * u.x, s * u.y, s * u.z, c)
    }

    /// Rotation about z by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_axis_angle(Vector3::z(), yaw)
    }

    pub fn vector_part(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn as_vector4(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.z, self.w)
    }

    pub fn from_vector4(v: Vector4<f64>) -> Self {
        Quat::new(v.x, v.y, v.z, v.w)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector4().norm()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quat::new(self.x / n, self.y / n, self.z / n, self.w / n)
    }

    /// Conjugate; equals the inverse for unit quaternions.
    pub fn conjugate(&self) -> Self {
        Quat::new(-self.x, -self.y, -self.z, self.w)
    }

    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    /// Same rotation with scalar part made non-negative.
    pub fn canonicalized(&self) -> Self {
        if self.w < 0.0 {
            Quat::new(-self.x, -self.y, -self.z, -self.w)
        } else {
            *self
        }
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z + self.w * other.w
    }

    /// Body-to-world rotation matrix of a unit quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let v = self.vector_part();
        let w = self.w;
        Matrix3::identity() * (w * w - v.dot(&v))
            + 2.0 * v * v.transpose()
            + 2.0 * w * skew(&v)
    }

    /// Rotate a body-frame vector into the world frame.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }

    /// Retraction: `self ⊗ dq(dtheta)`. Always returns a unit quaternion.
    pub fn boxplus(&self, dtheta: &Vector3<f64>) -> Quat {
        (*self * Quat::from_rotation_vector(dtheta)).normalized()
    }

    /// Inverse retraction: the `dtheta` with `other ⊞ dtheta = self`,
    /// shortest arc. Exact inverse of [`Quat::boxplus`] for `|dtheta| < pi`.
    pub fn boxminus(&self, other: &Quat) -> Vector3<f64> {
        (other.inverse() * *self).to_rotation_vector()
    }

    /// Exponential-style map from a rotation vector.
    pub fn from_rotation_vector(dtheta: &Vector3<f64>) -> Quat {
        let theta = dtheta.norm();
        let half = theta / 2.0;
        // sin(theta/2)/theta, series-expanded near zero
        let k = if theta < 1e-6 {
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        Quat::new(k * dtheta.x, k * dtheta.y, k * dtheta.z, half.cos())
    }

    /// Log-style map to a rotation vector, shortest arc (`|result| <= pi`).
    pub fn to_rotation_vector(&self) -> Vector3<f64> {
        let q = self.canonicalized();
        let v = q.vector_part();
        let n = v.norm();
        if n < 1e-12 {
            // atan2(n, w)/n -> 1/w as n -> 0
            return 2.0 * v / q.w;
        }
        let angle = 2.0 * n.atan2(q.w);
        v * (angle / n)
    }

    /// Matrix `L(q)` with `(q ⊗ p).as_vector4() == L(q) * p.as_vector4()`.
    pub fn left_mul_matrix(&self) -> Matrix4<f64> {
        let v = self.vector_part();
        let w = self.w;
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * w + skew(&v)));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&v);
        m.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-v.transpose()));
        m[(3, 3)] = w;
        m
    }

    /// Matrix `R(p)` with `(q ⊗ p).as_vector4() == R(p) * q.as_vector4()`.
    pub fn right_mul_matrix(&self) -> Matrix4<f64> {
        let v = self.vector_part();
        let w = self.w;
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * w - skew(&v)));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&v);
        m.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-v.transpose()));
        m[(3, 3)] = w;
        m
    }

    /// Yaw angle of the ZYX Euler decomposition, in `[-pi, pi]`.
    pub fn yaw(&self) -> f64 {
        let (x, y, z, w) = (self.x, self.y, self.z, self.w);
        (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }
}

impl Mul for Quat {
    type Output = Quat;

    /// Hamilton product.
    fn mul(self, rhs: Quat) -> Quat {
        let v1 = self.vector_part();
        let v2 = rhs.vector_part();
        let v = self.w * v2 + rhs.w * v1 + v1.cross(&v2);
        let w = self.w * rhs.w - v1.dot(&v2);
        Quat::new(v.x, v.y, v.z, w)
    }
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a x b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    // Convention pin: q_WB rotates body vectors into the world frame and a
    // positive yaw takes +x toward +y.
    #[test]
    fn yaw_quarter_turn_maps_x_to_y() {
        let q = Quat::from_yaw(PI / 2.0);
        let v = q.rotate(&Vector3::x());
        assert_relative_eq!(v, Vector3::y(), epsilon = 1e-12);
        assert_relative_eq!(q.yaw(), PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn product_matches_rotation_composition() {
        let qa = Quat::from_axis_angle(Vector3::new(1.0, 2.0, -0.5), 0.7);
        let qb = Quat::from_axis_angle(Vector3::new(-0.3, 1.0, 2.0), -1.3);
        let composed = (qa * qb).rotation_matrix();
        let stacked = qa.rotation_matrix() * qb.rotation_matrix();
        assert_relative_eq!(composed, stacked, epsilon = 1e-12);
    }

    #[test]
    fn mul_matrices_agree_with_product() {
        let qa = Quat::from_axis_angle(Vector3::new(0.4, -1.0, 0.2), 1.1);
        let qb = Quat::from_axis_angle(Vector3::new(1.0, 0.1, -2.0), -0.4);
        let prod = (qa * qb).as_vector4();
        assert_relative_eq!(qa.left_mul_matrix() * qb.as_vector4(), prod, epsilon = 1e-14);
        assert_relative_eq!(qb.right_mul_matrix() * qa.as_vector4(), prod, epsilon = 1e-14);
    }

    #[test]
    fn boxplus_zero_is_identity() {
        let q = Quat::from_axis_angle(Vector3::new(0.3, 0.4, 1.0), 0.9);
        let r = q.boxplus(&Vector3::zeros());
        assert_relative_eq!(r.as_vector4(), q.as_vector4(), epsilon = 1e-15);
    }

    #[test]
    fn boxplus_pi_roll_from_identity() {
        let q = Quat::identity().boxplus(&Vector3::new(PI, 0.0, 0.0));
        assert_relative_eq!(q.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(q.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(q.z, 0.0, epsilon = 1e-12);
        assert_relative_eq!(q.w, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn boxminus_round_trip_many_random() {
        // Deterministic pseudo-random sweep, small perturbations.
        let mut s = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..1000 {
            let q = Quat::from_axis_angle(
                Vector3::new(next(), next(), next()),
                next() * PI,
            );
            let d = Vector3::new(next(), next(), next()) * 0.8;
            let back = q.boxplus(&d).boxminus(&q);
            assert_relative_eq!(back, d, epsilon = 1e-10);
        }
    }

    #[test]
    fn rotation_vector_small_angle_limit() {
        let d = Vector3::new(1e-9, -2e-9, 3e-10);
        let q = Quat::from_rotation_vector(&d);
        assert_relative_eq!(q.to_rotation_vector(), d, epsilon = 1e-18);
    }

    #[test]
    fn canonicalization_fixes_double_cover() {
        let q = Quat::new(0.0, 0.0, 1.0, -1e-9).normalized();
        let c = q.canonicalized();
        assert!(c.w >= 0.0);
        // Same rotation either way.
        assert_relative_eq!(q.rotation_matrix(), c.rotation_matrix(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn boxplus_result_is_unit(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
                                  angle in -3.0f64..3.0,
                                  dx in -2.0f64..2.0, dy in -2.0f64..2.0, dz in -2.0f64..2.0) {
            let q = Quat::from_axis_angle(Vector3::new(ax, ay, az + 0.1), angle);
            let r = q.boxplus(&Vector3::new(dx, dy, dz));
            prop_assert!((r.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn boxminus_inverts_boxplus(angle in -3.0f64..3.0,
                                    dx in -1.5f64..1.5, dy in -1.5f64..1.5, dz in -1.5f64..1.5) {
            let q = Quat::from_axis_angle(Vector3::new(0.2, -1.0, 0.7), angle);
            let d = Vector3::new(dx, dy, dz);
            prop_assume!(d.norm() < PI - 1e-3);
            let back = q.boxplus(&d).boxminus(&q);
            prop_assert!((back - d).norm() < 1e-10);
        }
    }
}
