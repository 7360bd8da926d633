//! Depth rasterization and the image types shared across the crate.
//!
//! The rasterizer exists so the self-supervision losses can compare a
//! predicted object against the observed depth and mask. It is
//! deliberately minimal and fully deterministic: edge-function coverage
//! with a top-left fill rule, perspective-correct depth, a z-buffer
//! keeping the nearest surface, and no anti-aliasing.

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, PointCloud, Pose6D};
use crate::Vec3;

/// Vertices culled at or below this camera-space depth.
pub const NEAR_PLANE: f64 = 1e-6;

/// Triangles with area at or below this are dropped at mesh construction.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Dense depth image in meters; `0.0` marks pixels without a measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    /// All-invalid map of the given size.
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Wraps a row-major buffer. Values must be finite and non-negative;
    /// `0.0` is the no-measurement sentinel.
    pub fn from_values(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::domain(format!(
                "depth buffer has {} values for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        for v in &data {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::domain(format!("invalid depth value {v}")));
            }
        }
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Depth at pixel `(x, y)`, or `None` when there is no measurement.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let v = self.data[self.index(x, y)];
        (v > 0.0).then_some(v)
    }

    /// Stores a measurement; `0.0` clears the pixel.
    pub fn set(&mut self, x: usize, y: usize, z: f64) {
        assert!(z.is_finite() && z >= 0.0, "invalid depth value {z}");
        let i = self.index(x, y);
        self.data[i] = z;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| **v > 0.0).count()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    fn index(&self, x: usize, y: usize) -> usize {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        y * self.width + x
    }
}

/// Binary foreground mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::domain(format!(
                "mask buffer has {} values for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[self.index(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        let i = self.index(x, y);
        self.data[i] = v;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    /// Mean of foreground pixel centers, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Probability image with `1.0` on foreground and `0.0` elsewhere.
    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| f64::from(u8::from(*v))).collect(),
        }
    }

    pub fn values(&self) -> &[bool] {
        &self.data
    }

    fn index(&self, x: usize, y: usize) -> usize {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        y * self.width + x
    }
}

/// Per-pixel foreground probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SoftMask {
    pub fn from_values(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::domain(format!(
                "probability buffer has {} values for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        for v in &data {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::domain(format!("probability {v} outside [0, 1]")));
            }
        }
        Ok(SoftMask {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.data[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Indexed triangle mesh over metric object-frame vertices.
///
/// Construction validates indices and silently drops triangles whose
/// area is at or below [`DEGENERATE_AREA`]; everything downstream may
/// assume non-degenerate faces.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: PointCloud,
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: PointCloud, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        let mut kept = Vec::with_capacity(triangles.len());
        for t in triangles {
            if t[0] >= n || t[1] >= n || t[2] >= n {
                return Err(Error::domain(format!(
                    "triangle {t:?} references a vertex outside 0..{n}"
                )));
            }
            let p = vertices.points();
            let area = 0.5
                * (p[t[1]] - p[t[0]])
                    .cross(&(p[t[2]] - p[t[0]]))
                    .norm();
            if area > DEGENERATE_AREA {
                kept.push(t);
            }
        }
        Ok(TriangleMesh {
            vertices,
            triangles: kept,
        })
    }

    pub fn vertices(&self) -> &PointCloud {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Same connectivity over new vertex positions. The triangle list is
    /// carried over verbatim — no degeneracy re-filtering — so that
    /// deformations (smoothing, shape decoding onto a fixed template)
    /// keep indices stable.
    pub fn with_vertices(&self, vertices: PointCloud) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::domain(format!(
                "replacement vertex count {} does not match mesh vertex count {}",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(TriangleMesh {
            vertices,
            triangles: self.triangles.clone(),
        })
    }
}

fn edge(a: [f64; 2], b: [f64; 2], px: f64, py: f64) -> f64 {
    (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
}

/// Top or left edge under a y-down, counter-clockwise convention; pixels
/// exactly on such edges belong to the triangle, others do not, so shared
/// edges are covered exactly once.
fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    (a[1] == b[1] && b[0] < a[0]) || b[1] > a[1]
}

/// Renders a mesh under a rigid pose into a depth map and coverage mask.
///
/// Triangles with any vertex at camera-space depth `<=` [`NEAR_PLANE`]
/// are discarded whole rather than clipped. Coverage is decided at pixel
/// centers with a top-left fill rule; depth is perspective-correct and
/// the nearest surface wins. Both faces of every triangle are rasterized.
///
/// Errors when the mesh has no triangles.
pub fn rasterize(
    mesh: &TriangleMesh,
    pose: &Pose6D,
    k: &CameraIntrinsics,
) -> Result<(DepthMap, Mask)> {
    if mesh.triangles.is_empty() {
        return Err(Error::domain("cannot rasterize a mesh with no triangles"));
    }
    let cam: Vec<Vec3> = mesh
        .vertices
        .points()
        .iter()
        .map(|p| pose.transform_point(p))
        .collect();

    let mut depth = DepthMap::new(k.width, k.height);
    let mut mask = Mask::new(k.width, k.height);

    for tri in &mesh.triangles {
        let v = [cam[tri[0]], cam[tri[1]], cam[tri[2]]];
        if v.iter().any(|p| p.z <= NEAR_PLANE) {
            continue;
        }
        let mut proj = [[0.0; 2]; 3];
        let mut z = [0.0; 3];
        for i in 0..3 {
            proj[i] = k.project(&v[i])?;
            z[i] = v[i].z;
        }
        let mut area2 = edge(proj[0], proj[1], proj[2][0], proj[2][1]);
        if area2 == 0.0 {
            continue;
        }
        if area2 < 0.0 {
            proj.swap(1, 2);
            z.swap(1, 2);
            area2 = -area2;
        }

        let min_x = proj.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = proj.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = proj.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = proj.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x - 0.5).floor().max(0.0) as usize;
        let y0 = (min_y - 0.5).floor().max(0.0) as usize;
        if min_x - 0.5 > (k.width - 1) as f64 || min_y - 0.5 > (k.height - 1) as f64 {
            continue;
        }
        let x1 = ((max_x - 0.5).ceil().max(0.0) as usize).min(k.width - 1);
        let y1 = ((max_y - 0.5).ceil().max(0.0) as usize).min(k.height - 1);

        let accept = |w: f64, a: [f64; 2], b: [f64; 2]| w > 0.0 || (w == 0.0 && is_top_left(a, b));

        for py in y0..=y1 {
            for px in x0..=x1 {
                let cx = px as f64 + 0.5;
                let cy = py as f64 + 0.5;
                let w0 = edge(proj[1], proj[2], cx, cy);
                let w1 = edge(proj[2], proj[0], cx, cy);
                let w2 = edge(proj[0], proj[1], cx, cy);
                if !(accept(w0, proj[1], proj[2])
                    && accept(w1, proj[2], proj[0])
                    && accept(w2, proj[0], proj[1]))
                {
                    continue;
                }
                let inv_z = (w0 / z[0] + w1 / z[1] + w2 / z[2]) / area2;
                let zp = 1.0 / inv_z;
                match depth.get(px, py) {
                    Some(existing) if existing <= zp => {}
                    _ => depth.set(px, py, zp),
                }
                mask.set(px, py, true);
            }
        }
    }
    Ok((depth, mask))
}

/// Back-projects the valid, masked pixels of a rendered pair into a
/// camera-frame cloud. Equivalent to [`crate::geom::backproject_depth`].
pub fn visible_cloud(depth: &DepthMap, mask: &Mask, k: &CameraIntrinsics) -> Result<PointCloud> {
    crate::geom::backproject_depth(depth, mask, k)
}

/// Fraction of mask pixels that carry a valid depth measurement.
///
/// Errors when resolutions disagree or the mask is empty.
pub fn depth_coverage(depth: &DepthMap, mask: &Mask) -> Result<f64> {
    if depth.width() != mask.width() || depth.height() != mask.height() {
        return Err(Error::ResolutionMismatch {
            expected_w: depth.width(),
            expected_h: depth.height(),
            got_w: mask.width(),
            got_h: mask.height(),
        });
    }
    let total = mask.count();
    if total == 0 {
        return Err(Error::domain("depth coverage of an empty mask"));
    }
    let mut covered = 0usize;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) && depth.get(x, y).is_some() {
                covered += 1;
            }
        }
    }
    Ok(covered as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Quaternion, Scale3};

    fn quad_mesh(z: f64, half: f64) -> TriangleMesh {
        let vertices = PointCloud::new(vec![
            Vec3::new(-half, -half, z),
            Vec3::new(half, -half, z),
            Vec3::new(half, half, z),
            Vec3::new(-half, half, z),
        ])
        .unwrap();
        TriangleMesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
    }

    fn small_camera() -> CameraIntrinsics {
        CameraIntrinsics::new(8.0, 8.0, 4.0, 4.0, 8, 8).unwrap()
    }

    #[test]
    fn degenerate_triangles_are_dropped() {
        let vertices = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ])
        .unwrap();
        let mesh = TriangleMesh::new(vertices, vec![[0, 1, 2], [0, 1, 3], [1, 1, 3]]).unwrap();
        assert_eq!(mesh.triangle_count(), 1);
        assert_eq!(mesh.triangles()[0], [0, 1, 3]);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let vertices = PointCloud::new(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(TriangleMesh::new(vertices, vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn flat_quad_renders_exact_depth() {
        let mesh = quad_mesh(2.0, 0.5);
        let pose = Pose6D::identity();
        let k = small_camera();
        let (depth, mask) = rasterize(&mesh, &pose, &k).unwrap();
        // Vertices project to pixel coords 4 +- 2; the quad covers pixel
        // centers 2.5..5.5 in both axes.
        let mut covered = 0;
        for y in 0..8 {
            for x in 0..8 {
                if mask.get(x, y) {
                    covered += 1;
                    assert_eq!(depth.get(x, y), Some(2.0));
                }
            }
        }
        assert_eq!(covered, 16);
    }

    #[test]
    fn shared_edge_leaves_no_seam() {
        let mesh = quad_mesh(1.0, 0.4);
        let k = small_camera();
        let (_, mask) = rasterize(&mesh, &Pose6D::identity(), &k).unwrap();
        // The quad spans pixel coords 0.8..7.2; every interior pixel
        // center must be covered, including those on the diagonal seam.
        for y in 1..7 {
            for x in 1..7 {
                assert!(mask.get(x, y), "gap at ({x}, {y})");
            }
        }
    }

    #[test]
    fn behind_camera_triangles_are_discarded() {
        let mesh = quad_mesh(-1.0, 0.5);
        let k = small_camera();
        let (depth, mask) = rasterize(&mesh, &Pose6D::identity(), &k).unwrap();
        assert_eq!(mask.count(), 0);
        assert_eq!(depth.valid_count(), 0);
    }

    #[test]
    fn tilted_plane_depth_matches_ray_intersection() {
        let vertices = PointCloud::new(vec![
            Vec3::new(-1.0, -1.0, 2.0),
            Vec3::new(1.0, -1.0, 2.4),
            Vec3::new(1.0, 1.0, 3.0),
            Vec3::new(-1.0, 1.0, 2.6),
        ])
        .unwrap();
        let mesh = TriangleMesh::new(vertices.clone(), vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let k = CameraIntrinsics::new(16.0, 16.0, 8.0, 8.0, 16, 16).unwrap();
        let (depth, mask) = rasterize(&mesh, &Pose6D::identity(), &k).unwrap();
        assert!(mask.count() > 0);
        let p = vertices.points();
        for y in 0..16 {
            for x in 0..16 {
                let Some(z) = depth.get(x, y) else { continue };
                let dir = k.back_ray(x as f64 + 0.5, y as f64 + 0.5);
                // Both triangles lie in one plane through p0 with normal n.
                let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
                let t = n.dot(&p[0]) / n.dot(&dir);
                assert!((z - t * dir.z).abs() < 1e-9, "depth off at ({x}, {y})");
            }
        }
    }

    #[test]
    fn nearest_surface_wins() {
        let vertices = PointCloud::new(vec![
            Vec3::new(-0.5, -0.5, 2.0),
            Vec3::new(0.5, -0.5, 2.0),
            Vec3::new(0.5, 0.5, 2.0),
            Vec3::new(-0.5, 0.5, 2.0),
            Vec3::new(-0.5, -0.5, 1.0),
            Vec3::new(0.5, -0.5, 1.0),
            Vec3::new(0.5, 0.5, 1.0),
            Vec3::new(-0.5, 0.5, 1.0),
        ])
        .unwrap();
        let mesh =
            TriangleMesh::new(vertices, vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]]).unwrap();
        let k = small_camera();
        let (depth, _) = rasterize(&mesh, &Pose6D::identity(), &k).unwrap();
        // The near plane at z=1 projects over a wider area and must win
        // wherever both planes cover a pixel.
        assert_eq!(depth.get(4, 4), Some(1.0));
    }

    #[test]
    fn rasterization_is_deterministic() {
        let mesh = quad_mesh(1.5, 0.37);
        let k = small_camera();
        let pose = Pose6D::new(
            Quaternion::from_axis_angle(&Vec3::new(0.3, 1.0, 0.2), 0.4).unwrap(),
            Vec3::new(0.05, -0.03, 0.2),
        )
        .unwrap();
        let a = rasterize(&mesh, &pose, &k).unwrap();
        let b = rasterize(&mesh, &pose, &k).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scaled_cube_face_coverage() {
        // A unit-cube front face scaled by (2, 1, 1) doubles its pixel
        // footprint horizontally.
        let face = PointCloud::new(vec![
            Vec3::new(-0.5, -0.5, 0.0),
            Vec3::new(0.5, -0.5, 0.0),
            Vec3::new(0.5, 0.5, 0.0),
            Vec3::new(-0.5, 0.5, 0.0),
        ])
        .unwrap();
        let scale = Scale3::new(2.0, 1.0, 1.0).unwrap();
        let scaled = crate::geom::transform_cloud(
            &face,
            &scale,
            &Pose6D::new(Quaternion::IDENTITY, Vec3::new(0.0, 0.0, 4.0)).unwrap(),
        );
        let mesh = TriangleMesh::new(scaled, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let k = CameraIntrinsics::new(8.0, 8.0, 8.0, 8.0, 16, 16).unwrap();
        let (_, mask) = rasterize(&mesh, &Pose6D::identity(), &k).unwrap();
        // The face spans pixel coords 6..10 x 7..9, so pixel centers in
        // 6..=9 x 7..=8 are covered: 4x2 pixels.
        assert_eq!(mask.count(), 8);
        assert_eq!(mask_extent(&mask), (3, 1));
    }

    fn mask_extent(mask: &Mask) -> (usize, usize) {
        let (mut min_x, mut max_x, mut min_y, mut max_y) = (usize::MAX, 0, usize::MAX, 0);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) {
                    min_x = min_x.min(x);
                    max_x = max_x.max(x);
                    min_y = min_y.min(y);
                    max_y = max_y.max(y);
                }
            }
        }
        (max_x - min_x, max_y - min_y)
    }

    #[test]
    fn coverage_counts_valid_mask_pixels() {
        let mut depth = DepthMap::new(4, 1);
        let mut mask = Mask::new(4, 1);
        for x in 0..3 {
            mask.set(x, 0, true);
        }
        depth.set(0, 0, 1.0);
        depth.set(1, 0, 1.0);
        depth.set(3, 0, 1.0);
        let c = depth_coverage(&depth, &mask).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
    }
}
