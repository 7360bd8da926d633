//! Camera geometry: quaternions, intrinsics, poses, and back-projection.
//!
//! Rotations predicted per detection are allocentric: they describe the
//! object orientation relative to the viewing ray through the detection
//! centroid, which keeps appearance and rotation decoupled under camera
//! translation. [`allocentric_to_egocentric`] transports such a rotation
//! into the camera frame by composing it with the rotation that carries
//! the optical axis onto the viewing ray; [`egocentric_to_allocentric`]
//! inverts the transport exactly.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{DepthMap, Mask};
use crate::{Mat3, Vec3};

/// Tolerance on `|norm - 1|` below which a quaternion is accepted as unit.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Unit quaternion stored `[w, x, y, z]` with scalar part first.
///
/// Rotation-valued quaternions are kept in the canonical hemisphere
/// `w >= 0`; `q` and `-q` encode the same rotation and canonicalization
/// makes representations comparable componentwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion from raw components without normalizing.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// True if the norm is within [`UNIT_NORM_TOL`] of one.
    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOL
    }

    /// Returns the unit quaternion with the same direction.
    ///
    /// Errors with [`Error::InvalidRotation`] when the norm is zero, not
    /// finite, or too small to normalize reliably.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidRotation { norm: n });
        }
        Ok(Quaternion::new(
            self.w / n,
            self.x / n,
            self.y / n,
            self.z / n,
        ))
    }

    /// Flips the sign so the scalar part is non-negative.
    pub fn canonicalized(&self) -> Self {
        if self.w < 0.0 {
            Quaternion::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        }
    }

    pub fn conjugate(&self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs`; applying the result rotates by `rhs`
    /// first, then by `self`.
    pub fn mul(&self, rhs: &Quaternion) -> Self {
        Quaternion::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
    }

    /// Rotation of `angle` radians about `axis`.
    ///
    /// Errors when the axis is zero or not finite.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::domain("rotation axis must be non-zero"));
        }
        if !angle.is_finite() {
            return Err(Error::NonFinite {
                context: "rotation angle",
            });
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Ok(Quaternion::new(
            c,
            s * axis.x / n,
            s * axis.y / n,
            s * axis.z / n,
        ))
    }

    /// Converts a rotation matrix to the canonical unit quaternion.
    ///
    /// `m` must be a proper rotation; the branch on the largest diagonal
    /// term keeps the conversion stable for rotations near pi.
    pub fn from_matrix(m: &Mat3) -> Self {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.renormalized().canonicalized()
    }

    /// Rotation matrix equivalent of a unit quaternion.
    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
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

    /// Geodesic angle in radians between the rotations encoded by `self`
    /// and `other`, insensitive to quaternion sign.
    pub fn angle_to(&self, other: &Quaternion) -> f64 {
        2.0 * self.dot(other).abs().clamp(0.0, 1.0).acos()
    }

    /// Normalizes assuming the norm is already close to one.
    fn renormalized(&self) -> Self {
        let n = self.norm();
        Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Rotates `v`; `self` must already be unit.
    fn rotate_unit(&self, v: &Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> [f64; 4] {
        [q.w, q.x, q.y, q.z]
    }
}

impl TryFrom<[f64; 4]> for Quaternion {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        if !q.is_unit() {
            return Err(Error::InvalidRotation { norm: q.norm() });
        }
        Ok(q.renormalized().canonicalized())
    }
}

impl std::ops::Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        Quaternion::mul(&self, &rhs)
    }
}

/// Rotates `p` by the unit quaternion `q`.
///
/// Errors with [`Error::InvalidRotation`] when `q` is not unit within
/// [`UNIT_NORM_TOL`]. The rotation itself uses the renormalized
/// quaternion, so accepted inputs preserve vector norms to machine
/// precision.
pub fn quat_rotate(q: &Quaternion, p: &Vec3) -> Result<Vec3> {
    if !q.is_unit() {
        return Err(Error::InvalidRotation { norm: q.norm() });
    }
    Ok(q.renormalized().rotate_unit(p))
}

/// Pinhole camera intrinsics with the image size they apply to.
///
/// Pixel `(i, j)` covers the unit square `[i, i+1) x [j, j+1)` and is
/// sampled at its center `(i + 0.5, j + 0.5)`; all continuous pixel
/// coordinates in this crate follow that convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::NonFinite {
                context: "camera intrinsics",
            });
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::domain("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::domain("image size must be non-zero"));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    ///
    /// Errors when the point is at or behind the camera plane.
    pub fn project(&self, p: &Vec3) -> Result<[f64; 2]> {
        if p.z <= 1e-12 {
            return Err(Error::domain(format!(
                "cannot project point with depth {}",
                p.z
            )));
        }
        Ok([
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ])
    }

    /// Direction of the viewing ray through pixel coordinates `(x, y)`,
    /// unnormalized with unit depth component.
    pub fn back_ray(&self, x: f64, y: f64) -> Vec3 {
        Vec3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }
}

/// Per-axis metric extents `(w, h, l)` of an object along its canonical
/// `x`, `y`, `z` axes, in meters. Applied to canonical coordinates in
/// `[-0.5, 0.5]^3` they yield metric object-frame points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", try_from = "[f64; 3]")]
pub struct Scale3 {
    w: f64,
    h: f64,
    l: f64,
}

impl Scale3 {
    pub fn new(w: f64, h: f64, l: f64) -> Result<Self> {
        if !(w.is_finite() && h.is_finite() && l.is_finite()) {
            return Err(Error::NonFinite { context: "scale" });
        }
        if w <= 0.0 || h <= 0.0 || l <= 0.0 {
            return Err(Error::domain("scale extents must be positive"));
        }
        Ok(Scale3 { w, h, l })
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    /// Componentwise product with a canonical point.
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        Vec3::new(self.w * p.x, self.h * p.y, self.l * p.z)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.w, self.h, self.l]
    }
}

impl From<Scale3> for [f64; 3] {
    fn from(s: Scale3) -> [f64; 3] {
        s.as_array()
    }
}

impl TryFrom<[f64; 3]> for Scale3 {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Scale3::new(v[0], v[1], v[2])
    }
}

/// Rigid transform from object frame to camera frame.
///
/// The rotation is stored normalized and canonicalized; construction
/// rejects quaternions that are not unit within [`UNIT_NORM_TOL`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose6D {
    rotation: Quaternion,
    translation: Vec3,
}

impl Pose6D {
    pub fn new(rotation: Quaternion, translation: Vec3) -> Result<Self> {
        if !rotation.is_unit() {
            return Err(Error::InvalidRotation {
                norm: rotation.norm(),
            });
        }
        if !(translation.x.is_finite() && translation.y.is_finite() && translation.z.is_finite()) {
            return Err(Error::NonFinite {
                context: "pose translation",
            });
        }
        Ok(Pose6D {
            rotation: rotation.renormalized().canonicalized(),
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose6D {
            rotation: Quaternion::IDENTITY,
            translation: Vec3::zeros(),
        }
    }

    pub fn rotation(&self) -> Quaternion {
        self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate_unit(p) + self.translation
    }

    /// Composition `self * rhs`: applies `rhs` first, then `self`.
    pub fn compose(&self, rhs: &Pose6D) -> Pose6D {
        Pose6D {
            rotation: (self.rotation * rhs.rotation)
                .renormalized()
                .canonicalized(),
            translation: self.rotation.rotate_unit(&rhs.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose6D {
        let inv_rot = self.rotation.conjugate().canonicalized();
        Pose6D {
            rotation: inv_rot,
            translation: -inv_rot.rotate_unit(&self.translation),
        }
    }
}

/// Unordered set of 3D points with finite coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::domain(format!("point {i} has non-finite coordinate")));
            }
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3> {
        self.points.iter()
    }

    /// Arithmetic mean of the points; errors on an empty cloud.
    pub fn centroid(&self) -> Result<Vec3> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let sum: Vec3 = self.points.iter().sum();
        Ok(sum / self.points.len() as f64)
    }

    /// Cloud with `f` applied to every point, in order.
    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
        }
    }
}

/// Metric camera-frame centroid from a pixel location and depth.
///
/// `(x, y)` are continuous pixel coordinates of the object centroid, `z`
/// its metric depth. The result is `z * K^-1 * (x, y, 1)`.
pub fn backproject_centroid(x: f64, y: f64, z: f64, k: &CameraIntrinsics) -> Result<Vec3> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::NonFinite {
            context: "centroid back-projection",
        });
    }
    if z <= 0.0 {
        return Err(Error::domain(format!("centroid depth {z} must be positive")));
    }
    Ok(Vec3::new(
        z * (x - k.cx) / k.fx,
        z * (y - k.cy) / k.fy,
        z,
    ))
}

/// Rotation carrying the optical axis onto the viewing ray through pixel
/// coordinates `(x, y)`.
///
/// The axis is the normalized cross product of the optical axis and the
/// ray; the angle is the clamped arccosine of their normalized dot
/// product. A ray within `1e-12` of the optical axis yields the identity.
pub fn centroid_rotation(x: f64, y: f64, k: &CameraIntrinsics) -> Quaternion {
    let ray = k.back_ray(x, y).normalize();
    let z_axis = Vec3::new(0.0, 0.0, 1.0);
    let axis = z_axis.cross(&ray);
    let axis_norm = axis.norm();
    if axis_norm <= 1e-12 {
        return Quaternion::IDENTITY;
    }
    let angle = ray.dot(&z_axis).clamp(-1.0, 1.0).acos();
    let (s, c) = (angle / 2.0).sin_cos();
    Quaternion::new(
        c,
        s * axis.x / axis_norm,
        s * axis.y / axis_norm,
        s * axis.z / axis_norm,
    )
}

/// Transports an allocentric rotation into the camera frame.
///
/// `(x, y)` are the pixel coordinates of the detection centroid. The
/// result is the viewing-ray correction composed with `q_a`, normalized
/// and canonicalized. `q_a` must be unit; the correction for a centroid
/// on the optical axis is the identity, so there the output equals the
/// canonicalized input.
pub fn allocentric_to_egocentric(
    q_a: &Quaternion,
    x: f64,
    y: f64,
    k: &CameraIntrinsics,
) -> Result<Quaternion> {
    if !q_a.is_unit() {
        return Err(Error::InvalidRotation { norm: q_a.norm() });
    }
    let q_c = centroid_rotation(x, y, k);
    Ok((q_c * *q_a).renormalized().canonicalized())
}

/// Inverse transport of [`allocentric_to_egocentric`].
pub fn egocentric_to_allocentric(
    q: &Quaternion,
    x: f64,
    y: f64,
    k: &CameraIntrinsics,
) -> Result<Quaternion> {
    if !q.is_unit() {
        return Err(Error::InvalidRotation { norm: q.norm() });
    }
    let q_c = centroid_rotation(x, y, k);
    Ok((q_c.conjugate() * *q).renormalized().canonicalized())
}

/// Applies scale then pose to every point of a canonical cloud:
/// `p' = R (s . p) + t`.
pub fn transform_cloud(canonical: &PointCloud, scale: &Scale3, pose: &Pose6D) -> PointCloud {
    canonical.map(|p| pose.transform_point(&scale.apply(p)))
}

/// Back-projects every masked, valid depth pixel to a camera-frame point.
///
/// Pixels are sampled at their centers and visited in row-major order, so
/// the output order is deterministic. Errors when resolutions disagree or
/// when no pixel is both masked and valid.
pub fn backproject_depth(depth: &DepthMap, mask: &Mask, k: &CameraIntrinsics) -> Result<PointCloud> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(Error::ResolutionMismatch {
            expected_w: k.width,
            expected_h: k.height,
            got_w: depth.width(),
            got_h: depth.height(),
        });
    }
    if mask.width() != depth.width() || mask.height() != depth.height() {
        return Err(Error::ResolutionMismatch {
            expected_w: depth.width(),
            expected_h: depth.height(),
            got_w: mask.width(),
            got_h: mask.height(),
        });
    }
    let mut points = Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if !mask.get(x, y) {
                continue;
            }
            let Some(z) = depth.get(x, y) else { continue };
            points.push(Vec3::new(
                z * (x as f64 + 0.5 - k.cx) / k.fx,
                z * (y as f64 + 0.5 - k.cy) / k.fy,
                z,
            ));
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(PointCloud { points })
}
