//! Quaternion helpers.
//!
//! Quaternions are Hamilton, scalar-first `[w, x, y, z]`, and rotate body
//! (FLU) vectors into the world (ENU) frame. Euler angles are intrinsic
//! Z-Y-X (yaw, then pitch, then roll).

use nalgebra::{Matrix3, Matrix4, Quaternion, Vector3, Vector4};

pub type Quat = Quaternion<f64>;

/// Hamilton product `a ∘ b`.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    Quat::new(
        a.w * b.w - a.i * b.i - a.j * b.j - a.k * b.k,
        a.w * b.i + a.i * b.w + a.j * b.k - a.k * b.j,
        a.w * b.j - a.i * b.k + a.j * b.w + a.k * b.i,
        a.w * b.k + a.i * b.j - a.j * b.i + a.k * b.w,
    )
}

pub fn quat_conj(q: &Quat) -> Quat {
    Quat::new(q.w, -q.i, -q.j, -q.k)
}

pub fn quat_normalize(q: &Quat) -> Quat {
    let n = quat_norm(q);
    Quat::new(q.w / n, q.i / n, q.j / n, q.k / n)
}

pub fn quat_norm(q: &Quat) -> f64 {
    (q.w * q.w + q.i * q.i + q.j * q.j + q.k * q.k).sqrt()
}

pub fn quat_to_array(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Scalar-first coordinates `[w, x, y, z]` (nalgebra stores `[x, y, z, w]`).
pub fn quat_to_wxyz(q: &Quat) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

pub fn quat_from_slice(s: &[f64]) -> Quat {
    Quat::new(s[0], s[1], s[2], s[3])
}

/// Rotation matrix of a unit quaternion.
///
/// Uses the homogeneous polynomial form, so its partial derivatives
/// ([`rot_partials`]) are exact for the same expression.
pub fn quat_to_rot(q: &Quat) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`quat_to_rot`] with respect to `w, x, y, z`.
pub fn rot_partials(q: &Quat) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (2.0 * q.w, 2.0 * q.i, 2.0 * q.j, 2.0 * q.k);
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0),
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x),
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y),
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0),
    ]
}

/// Intrinsic Z-Y-X Euler angles (radians) to quaternion.
pub fn rpy_to_quat(roll: f64, pitch: f64, yaw: f64) -> Quat {
    let (sr, cr) = (0.5 * roll).sin_cos();
    let (sp, cp) = (0.5 * pitch).sin_cos();
    let (sy, cy) = (0.5 * yaw).sin_cos();
    Quat::new(
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    )
}

/// Inverse of [`rpy_to_quat`]; returns `[roll, pitch, yaw]`.
pub fn quat_to_rpy(q: &Quat) -> Vector3<f64> {
    let q = quat_normalize(q);
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    let pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0).asin();
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    Vector3::new(roll, pitch, yaw)
}

/// Vector part of `q ∘ q_r⁻¹`, sign-flipped so the error takes the short way
/// around.
pub fn quat_error_vec(q: &Quat, q_ref: &Quat) -> Vector3<f64> {
    let e = quat_mul(q, &quat_conj(q_ref));
    let s = if e.w < 0.0 { -1.0 } else { 1.0 };
    Vector3::new(s * e.i, s * e.j, s * e.k)
}

/// Matrix `M(p)` with `q ∘ p = M(p) q` (right multiplication by `p`).
pub fn right_mul_matrix(p: &Quat) -> Matrix4<f64> {
    let (w, x, y, z) = (p.w, p.i, p.j, p.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Matrix `L(q)` with `q ∘ p = L(q) p` (left multiplication by `q`).
pub fn left_mul_matrix(q: &Quat) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
