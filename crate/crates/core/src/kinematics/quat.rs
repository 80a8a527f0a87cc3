//! Unit quaternions stored as `(x, y, z, w)` with `w` the scalar part.
//!
//! Composition follows the Hamilton convention: `a * b` applies `b` first,
//! then `a`. Rotation matrices are row-major and act on column vectors.

use std::ops::{Mul, Neg};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { x: 0.0, y: 0.0, z: 0.0, w: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self { x, y, z, w }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.z, self.w]
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm3(axis);
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / n;
        Self::new(axis[0] * k, axis[1] * k, axis[2] * k, c)
    }

    /// Exponential map of a rotation vector (axis scaled by angle).
    pub fn from_rotation_vector(v: Vec3) -> Self {
        let angle = norm3(v);
        if angle < 1e-12 {
            let q = Self::new(0.5 * v[0], 0.5 * v[1], 0.5 * v[2], 1.0);
            return q.normalize().unwrap_or(Self::IDENTITY);
        }
        Self::from_axis_angle(v, angle)
    }

    /// Logarithm map: the rotation vector in the `w >= 0` hemisphere.
    pub fn to_rotation_vector(self) -> Vec3 {
        let q = if self.w < 0.0 { -self } else { self };
        let s = norm3([q.x, q.y, q.z]);
        if s < 1e-12 {
            return [2.0 * q.x, 2.0 * q.y, 2.0 * q.z];
        }
        let angle = 2.0 * s.atan2(q.w);
        let k = angle / s;
        [q.x * k, q.y * k, q.z * k]
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z + self.w * o.w
    }

    pub fn normalize(self) -> Result<Quat> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateQuaternion);
        }
        Ok(self.scale(1.0 / n))
    }

    pub fn scale(self, k: f64) -> Quat {
        Quat::new(self.x * k, self.y * k, self.z * k, self.w * k)
    }

    pub fn conj(self) -> Quat {
        Quat::new(-self.x, -self.y, -self.z, self.w)
    }

    /// Returns `self` negated if needed so that `dot(reference, out) >= 0`.
    pub fn align_to(self, reference: Quat) -> Quat {
        if reference.dot(self) < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = [self.x, self.y, self.z];
        let t = cross(u, v);
        let t = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
        let ut = cross(u, t);
        [v[0] + self.w * t[0] + ut[0], v[1] + self.w * t[1] + ut[1], v[2] + self.w * t[2] + ut[2]]
    }

    pub fn to_matrix(self) -> Mat3 {
        let Quat { x, y, z, w } = self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Shepperd's method; the result has `w >= 0`.
    pub fn from_matrix(m: &Mat3) -> Quat {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new((m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s, 0.25 * s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quat::new(0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s, (m[2][1] - m[1][2]) / s)
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quat::new((m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s, (m[0][2] - m[2][0]) / s)
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quat::new((m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s, (m[1][0] - m[0][1]) / s)
        };
        let q = q.normalize().unwrap_or(Quat::IDENTITY);
        if q.w < 0.0 {
            -q
        } else {
            q
        }
    }

    /// Composes elementary rotations in the listed order: for `order = [Z, X, Y]`
    /// the result is `Rz(a0) * Rx(a1) * Ry(a2)`. Angles in radians.
    pub fn from_euler(order: EulerOrder, angles: Vec3) -> Quat {
        let axes = order.axes();
        let mut q = Quat::IDENTITY;
        for (axis, angle) in axes.iter().zip(angles) {
            q = q * Quat::from_axis_angle(axis.unit(), angle);
        }
        q
    }

    /// Inverse of [`Quat::from_euler`]; angles in radians, middle angle in
    /// `[-pi/2, pi/2]`.
    pub fn to_euler(self, order: EulerOrder) -> Vec3 {
        let m = self.to_matrix();
        let [i, j, k] = order.axes().map(|a| a as usize);
        let s = if order.is_cyclic() { 1.0 } else { -1.0 };
        let sb = (s * m[i][k]).clamp(-1.0, 1.0);
        let beta = sb.asin();
        if sb.abs() < 1.0 - 1e-12 {
            let alpha = (-s * m[j][k]).atan2(m[k][k]);
            let gamma = (-s * m[i][j]).atan2(m[i][i]);
            [alpha, beta, gamma]
        } else {
            // Gimbal lock: fold everything into the first angle.
            let alpha = (s * m[k][j]).atan2(m[j][j]);
            [alpha, beta, 0.0]
        }
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, b: Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        )
    }
}

impl Neg for Quat {
    type Output = Quat;

    fn neg(self) -> Quat {
        Quat::new(-self.x, -self.y, -self.z, -self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub fn unit(self) -> Vec3 {
        let mut v = [0.0; 3];
        v[self as usize] = 1.0;
        v
    }
}

/// Tait-Bryan rotation order, named in the order the matrices multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EulerOrder {
    Xyz,
    Xzy,
    Yxz,
    Yzx,
    Zxy,
    Zyx,
}

impl EulerOrder {
    pub const ALL: [EulerOrder; 6] =
        [EulerOrder::Xyz, EulerOrder::Xzy, EulerOrder::Yxz, EulerOrder::Yzx, EulerOrder::Zxy, EulerOrder::Zyx];

    pub fn axes(self) -> [Axis; 3] {
        use Axis::*;
        match self {
            EulerOrder::Xyz => [X, Y, Z],
            EulerOrder::Xzy => [X, Z, Y],
            EulerOrder::Yxz => [Y, X, Z],
            EulerOrder::Yzx => [Y, Z, X],
            EulerOrder::Zxy => [Z, X, Y],
            EulerOrder::Zyx => [Z, Y, X],
        }
    }

    pub fn from_axes(axes: [Axis; 3]) -> Option<EulerOrder> {
        Self::ALL.into_iter().find(|o| o.axes() == axes)
    }

    fn is_cyclic(self) -> bool {
        matches!(self, EulerOrder::Xyz | EulerOrder::Yzx | EulerOrder::Zxy)
    }
}

/// Spherical linear interpolation along the shorter arc. Falls back to a
/// normalized lerp when the inputs are nearly parallel.
pub fn slerp(q0: Quat, q1: Quat, t: f64) -> Quat {
    let q1 = q1.align_to(q0);
    let d = q0.dot(q1).min(1.0);
    if d > 1.0 - 1e-7 {
        let q = Quat::new(
            q0.x + t * (q1.x - q0.x),
            q0.y + t * (q1.y - q0.y),
            q0.z + t * (q1.z - q0.z),
            q0.w + t * (q1.w - q0.w),
        );
        return q.normalize().unwrap_or(q0);
    }
    let theta = d.acos();
    let s = theta.sin();
    let a = ((1.0 - t) * theta).sin() / s;
    let b = (t * theta).sin() / s;
    Quat::new(a * q0.x + b * q1.x, a * q0.y + b * q1.y, a * q0.z + b * q1.z, a * q0.w + b * q1.w)
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm3(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn lerp3(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use proptest::prelude::*;

    use super::*;

    fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        c
    }

    fn mat_vec(a: &Mat3, v: Vec3) -> Vec3 {
        [0, 1, 2].map(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
    }

    // Independent axis-rotation matrices.
    fn rot_x(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
    }
    fn rot_y(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
    }
    fn rot_z(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    fn close_q(a: Quat, b: Quat, tol: f64) -> bool {
        let b = b.align_to(a);
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && (a.z - b.z).abs() < tol && (a.w - b.w).abs() < tol
    }

    fn arb_unit() -> impl Strategy<Value = Quat> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z, w)| x * x + y * y + z * z + w * w > 1e-3)
            .prop_map(|(x, y, z, w)| Quat::new(x, y, z, w).normalize().unwrap())
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(Quat::new(0.0, 0.0, 0.0, 2.0).normalize().unwrap(), Quat::IDENTITY);
        assert_eq!(Quat::IDENTITY.normalize().unwrap(), Quat::IDENTITY);
        assert_eq!(Quat::new(1.0, 1.0, 1.0, 1.0).normalize().unwrap(), Quat::new(0.5, 0.5, 0.5, 0.5));
        assert!(matches!(Quat::new(0.0, 0.0, 0.0, 0.0).normalize(), Err(Error::DegenerateQuaternion)));
    }

    #[test]
    fn mul_examples() {
        let b = Quat::new(0.1, -0.3, 0.5, 0.8).normalize().unwrap();
        assert_eq!(Quat::IDENTITY * b, b);
        let z90 = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        assert!(close_q(z90 * z90, Quat::new(0.0, 0.0, 1.0, 0.0), 1e-12));

        // 90 deg about x, then 90 deg about y: matrix Ry * Rx.
        let qx = Quat::from_axis_angle([1.0, 0.0, 0.0], FRAC_PI_2);
        let qy = Quat::from_axis_angle([0.0, 1.0, 0.0], FRAC_PI_2);
        let oracle = mat_mul(&rot_y(FRAC_PI_2), &rot_x(FRAC_PI_2));
        let m = (qy * qx).to_matrix();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - oracle[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotate_examples() {
        assert_eq!(Quat::IDENTITY.rotate([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
        let v = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2).rotate([1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn rotate_matches_matrix_oracle() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (a, b, c) = (rng.random_range(-PI..PI), rng.random_range(-PI..PI), rng.random_range(-PI..PI));
            let m = mat_mul(&mat_mul(&rot_z(a), &rot_y(b)), &rot_x(c));
            let q = Quat::from_euler(EulerOrder::Zyx, [a, b, c]);
            let v = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let got = q.rotate(v);
            let want = mat_vec(&m, v);
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn euler_round_trip_all_orders() {
        let angles = [0.3, -0.7, 1.1];
        for order in EulerOrder::ALL {
            let q = Quat::from_euler(order, angles);
            let back = q.to_euler(order);
            assert!(close_q(Quat::from_euler(order, back), q, 1e-12), "{order:?}");
            for k in 0..3 {
                assert!((back[k] - angles[k]).abs() < 1e-10, "{order:?}: {back:?}");
            }
        }
    }

    #[test]
    fn matrix_round_trip() {
        let q = Quat::new(0.2, -0.4, 0.1, -0.9).normalize().unwrap();
        assert!(close_q(Quat::from_matrix(&q.to_matrix()), q, 1e-12));
        let q = Quat::new(0.9, 0.1, 0.0, 0.05).normalize().unwrap();
        assert!(close_q(Quat::from_matrix(&q.to_matrix()), q, 1e-12));
    }

    #[test]
    fn slerp_examples() {
        let q = Quat::new(0.1, 0.2, 0.3, 0.9).normalize().unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert!(close_q(slerp(q, q, t), q, 1e-12));
        }
        let z90 = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        let half = slerp(Quat::IDENTITY, z90, 0.5);
        assert!(close_q(half, Quat::from_axis_angle([0.0, 0.0, 1.0], PI / 4.0), 1e-12));
        assert!(close_q(slerp(q, z90, 0.0), q, 1e-12));
        assert!(close_q(slerp(q, z90, 1.0), z90, 1e-12));
    }

    #[test]
    fn slerp_matches_log_exp_oracle() {
        let q0 = Quat::new(0.3, -0.2, 0.5, 0.7).normalize().unwrap();
        let q1 = Quat::new(-0.6, 0.1, 0.2, 0.4).normalize().unwrap();
        // q0 * exp(t * log(q0^-1 q1))
        let delta = q0.conj() * q1.align_to(q0);
        let r = delta.to_rotation_vector();
        let oracle = q0 * Quat::from_rotation_vector([0.25 * r[0], 0.25 * r[1], 0.25 * r[2]]);
        assert!(close_q(slerp(q0, q1, 0.25), oracle, 1e-7));
    }

    proptest! {
        #[test]
        fn normalize_gives_unit(x in -5.0..5.0f64, y in -5.0..5.0f64, z in -5.0..5.0f64, w in 0.1..5.0f64) {
            let q = Quat::new(x, y, z, w).normalize().unwrap();
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn rotation_preserves_length(q in arb_unit(), v in prop::array::uniform3(-10.0..10.0f64)) {
            prop_assert!((norm3(q.rotate(v)) - norm3(v)).abs() < 1e-9);
        }

        #[test]
        fn mul_is_associative(a in arb_unit(), b in arb_unit(), c in arb_unit()) {
            let l = (a * b) * c;
            let r = a * (b * c);
            prop_assert!((l.x - r.x).abs() < 1e-9 && (l.y - r.y).abs() < 1e-9);
            prop_assert!((l.z - r.z).abs() < 1e-9 && (l.w - r.w).abs() < 1e-9);
        }

        #[test]
        fn slerp_stays_unit(a in arb_unit(), b in arb_unit(), t in 0.0..1.0f64) {
            prop_assert!((slerp(a, b, t).norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn align_makes_dot_non_negative(a in arb_unit(), b in arb_unit()) {
            prop_assert!(a.dot(b.align_to(a)) >= 0.0);
        }
    }
}
