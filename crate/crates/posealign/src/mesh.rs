//! Point-cloud-to-mesh pipeline: uv-grid triangulation, ball-pivoting
//! hole filling, and uniform Laplacian smoothing.
//!
//! Decoded shapes arrive as uv-grid point clouds; [`triangulate_uv_grid`]
//! gives each grid cell two triangles. Lathed shapes close their seam by
//! duplicating a grid column, which leaves zero-area cells that the mesh
//! constructor silently drops, so the fused surface can still have small
//! holes (pole caps, grid boundaries). [`ball_pivot_fill`] closes what a
//! ball of the configured radius can reach without inventing vertices,
//! and [`laplacian_smooth`] relaxes interior vertices while pinning the
//! boundary so open patches do not shrink.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::render::TriangleMesh;
use crate::shapespace::UVGrid;
use crate::Vec3;

/// Slack for the empty-ball test: a point counts as inside the pivot
/// ball only when it is more than this far inside, so the three support
/// vertices (at exactly the radius) never disqualify their own ball.
const BALL_EPS: f64 = 1e-9;

/// Meshing behavior knobs.
///
/// `ball_radius: None` derives the radius from the data as twice the
/// median nearest-neighbor spacing of the mesh vertices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshingConfig {
    pub ball_radius: Option<f64>,
    pub laplacian_iterations: usize,
    pub laplacian_lambda: f64,
}

impl Default for MeshingConfig {
    fn default() -> Self {
        MeshingConfig {
            ball_radius: None,
            laplacian_iterations: 1,
            laplacian_lambda: 0.5,
        }
    }
}

impl MeshingConfig {
    fn validate(&self) -> Result<()> {
        if let Some(r) = self.ball_radius {
            if !r.is_finite() || r <= 0.0 {
                return Err(Error::domain(format!("ball radius {r} must be positive")));
            }
        }
        if !(self.laplacian_lambda > 0.0 && self.laplacian_lambda <= 1.0) {
            return Err(Error::domain(format!(
                "smoothing weight {} must lie in (0, 1]",
                self.laplacian_lambda
            )));
        }
        Ok(())
    }
}

/// Two triangles per grid cell over a row-major uv-grid cloud.
///
/// Winding is consistent across the grid: both triangles of a cell run
/// counter-clockwise when the grid is viewed with u rightward and v
/// downward. Cells collapsed to zero area (duplicated seam columns,
/// poles) are dropped by the mesh constructor; a grid in general
/// position keeps exactly `2 (rows-1) (cols-1)` triangles.
pub fn triangulate_uv_grid(cloud: &PointCloud, grid: &UVGrid) -> Result<TriangleMesh> {
    if cloud.len() != grid.count() {
        return Err(Error::domain(format!(
            "cloud has {} points but the {}x{} grid needs {}",
            cloud.len(),
            grid.rows(),
            grid.cols(),
            grid.count()
        )));
    }
    let cols = grid.cols();
    let mut triangles = Vec::with_capacity(2 * (grid.rows() - 1) * (cols - 1));
    for r in 0..grid.rows() - 1 {
        for c in 0..cols - 1 {
            let i00 = r * cols + c;
            let i01 = i00 + 1;
            let i10 = i00 + cols;
            let i11 = i10 + 1;
            triangles.push([i00, i01, i11]);
            triangles.push([i00, i11, i10]);
        }
    }
    TriangleMesh::new(cloud.clone(), triangles)
}

/// Twice the median nearest-neighbor spacing — the automatic pivot-ball
/// radius. Even-length medians average the two middle values.
pub fn auto_ball_radius(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::domain(
            "nearest-neighbor spacing needs at least two points",
        ));
    }
    let pts = cloud.points();
    let mut spacings: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            pts.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    spacings.sort_by(|a, b| a.total_cmp(b));
    let n = spacings.len();
    let median = if n % 2 == 1 {
        spacings[n / 2]
    } else {
        0.5 * (spacings[n / 2 - 1] + spacings[n / 2])
    };
    if !(median.is_finite() && median > 0.0) {
        return Err(Error::domain(
            "degenerate point spacing: duplicate points dominate",
        ));
    }
    Ok(2.0 * median)
}

/// Result of a hole-filling pass: the merged mesh and how many
/// triangles pivoting added. `added == 0` means the ball could not seed
/// any new triangle (closed input, or radius too small).
#[derive(Clone, Debug)]
pub struct FillOutcome {
    pub mesh: TriangleMesh,
    pub added: usize,
}

impl FillOutcome {
    pub fn no_new_triangles(&self) -> bool {
        self.added == 0
    }
}

/// Circumcenter of a 3D triangle and its circumradius, or `None` when
/// the triangle is (near-)degenerate.
fn circumcenter(p1: &Vec3, p2: &Vec3, p3: &Vec3) -> Option<(Vec3, f64)> {
    let u = p2 - p1;
    let v = p3 - p1;
    let uu = u.dot(&u);
    let vv = v.dot(&v);
    let uv = u.dot(&v);
    let det = uu * vv - uv * uv;
    if det <= 1e-18 {
        return None;
    }
    let alpha = 0.5 * (uu * vv - vv * uv) / det;
    let beta = 0.5 * (vv * uu - uu * uv) / det;
    let center = p1 + u * alpha + v * beta;
    Some((center, (center - p1).norm()))
}

/// The two centers of radius-`rho` balls resting on a triangle, or
/// `None` when the circumradius exceeds the ball radius.
fn ball_centers(p1: &Vec3, p2: &Vec3, p3: &Vec3, rho: f64) -> Option<[Vec3; 2]> {
    let (c, r) = circumcenter(p1, p2, p3)?;
    let h2 = rho * rho - r * r;
    if h2 < 0.0 {
        return None;
    }
    let n = (p2 - p1).cross(&(p3 - p1));
    let norm = n.norm();
    if norm <= 1e-18 {
        return None;
    }
    let lift = n / norm * h2.sqrt();
    Some([c + lift, c - lift])
}

/// True when no vertex other than the three support indices lies
/// strictly inside the ball.
fn ball_is_empty(center: &Vec3, rho: f64, pts: &[Vec3], support: [usize; 3]) -> bool {
    pts.iter().enumerate().all(|(i, p)| {
        support.contains(&i) || (p - center).norm() >= rho - BALL_EPS
    })
}

fn sorted_triple(t: [usize; 3]) -> [usize; 3] {
    let mut s = t;
    s.sort_unstable();
    s
}

fn undirected(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Per-edge bookkeeping: how many triangles use it, plus — while it is
/// a boundary edge — its direction in the owning triangle and that
/// triangle's opposite vertex, which seed the pivot.
struct EdgeState {
    count: u8,
    dir: (usize, usize),
    opposite: usize,
}

/// Ball pivoting over the existing mesh vertices.
///
/// Starting from the input's boundary edges, a ball of the configured
/// radius pivots around each edge; the first empty ball resting on the
/// edge and a third vertex contributes a triangle, whose fresh boundary
/// edges join the front. Output is the union of input and pivoted
/// triangles with duplicates (by sorted vertex triple) removed; the
/// vertex set is untouched and input triangles are never removed. Edges
/// already shared by two triangles are never given a third.
pub fn ball_pivot_fill(mesh: &TriangleMesh, cfg: &MeshingConfig) -> Result<FillOutcome> {
    cfg.validate()?;
    if mesh.vertices().is_empty() {
        return Err(Error::EmptyCloud);
    }
    let rho = match cfg.ball_radius {
        Some(r) => r,
        None => auto_ball_radius(mesh.vertices())?,
    };
    let pts = mesh.vertices().points();

    let mut triangles: Vec<[usize; 3]> = mesh.triangles().to_vec();
    let mut seen: BTreeMap<[usize; 3], ()> = BTreeMap::new();
    let mut edges: BTreeMap<(usize, usize), EdgeState> = BTreeMap::new();
    let mut front: VecDeque<(usize, usize)> = VecDeque::new();

    let register = |tri: [usize; 3],
                        edges: &mut BTreeMap<(usize, usize), EdgeState>,
                        front: &mut VecDeque<(usize, usize)>| {
        for (a, b, o) in [
            (tri[0], tri[1], tri[2]),
            (tri[1], tri[2], tri[0]),
            (tri[2], tri[0], tri[1]),
        ] {
            let state = edges.entry(undirected(a, b)).or_insert(EdgeState {
                count: 0,
                dir: (a, b),
                opposite: o,
            });
            state.count += 1;
            if state.count == 1 {
                state.dir = (a, b);
                state.opposite = o;
                front.push_back(undirected(a, b));
            }
        }
    };

    for tri in &triangles {
        if seen.insert(sorted_triple(*tri), ()).is_none() {
            register(*tri, &mut edges, &mut front);
        }
    }

    let mut added = 0usize;
    while let Some(key) = front.pop_front() {
        let (dir, opposite) = match edges.get(&key) {
            Some(s) if s.count == 1 => (s.dir, s.opposite),
            _ => continue,
        };
        let (a, b) = dir;
        let (pa, pb, po) = (&pts[a], &pts[b], &pts[opposite]);
        let m = (pa + pb) * 0.5;
        let axis = (pb - pa).normalize();

        // Reference frame on the pivot circle: x toward the owner ball
        // center (or, failing an empty owner ball, away from the owner
        // triangle), y oriented so growing angle moves away from the
        // owner triangle first.
        let away = {
            let d = po - m;
            let planar = d - axis * d.dot(&axis);
            -planar.normalize()
        };
        let x_hat = ball_centers(pa, pb, po, rho)
            .and_then(|cands| {
                cands
                    .into_iter()
                    .find(|c| ball_is_empty(c, rho, pts, [a, b, opposite]))
            })
            .map(|c| (c - m).normalize())
            .unwrap_or(away);
        let y_raw = axis.cross(&x_hat);
        let y_hat = if y_raw.dot(&away) >= 0.0 { y_raw } else { -y_raw };

        let mut best: Option<(f64, usize, [usize; 3])> = None;
        for c in 0..pts.len() {
            if c == a || c == b {
                continue;
            }
            let tri = [b, a, c];
            if seen.contains_key(&sorted_triple(tri)) {
                continue;
            }
            // Refuse a third face on any edge.
            if edges.get(&undirected(a, c)).is_some_and(|s| s.count >= 2)
                || edges.get(&undirected(b, c)).is_some_and(|s| s.count >= 2)
            {
                continue;
            }
            let Some(centers) = ball_centers(pa, pb, &pts[c], rho) else {
                continue;
            };
            let theta = centers
                .into_iter()
                .filter(|ctr| ball_is_empty(ctr, rho, pts, [a, b, c]))
                .map(|ctr| {
                    let r = ctr - m;
                    let t = r.dot(&y_hat).atan2(r.dot(&x_hat));
                    if t < 0.0 {
                        t + 2.0 * std::f64::consts::PI
                    } else {
                        t
                    }
                })
                .fold(f64::INFINITY, f64::min);
            if theta.is_finite() && best.is_none_or(|(bt, bc, _)| theta < bt || (theta == bt && c < bc)) {
                best = Some((theta, c, tri));
            }
        }
        if let Some((_, _, tri)) = best {
            triangles.push(tri);
            seen.insert(sorted_triple(tri), ());
            register(tri, &mut edges, &mut front);
            added += 1;
            // The popped edge may still be open if the new triangle was
            // attached through a different orientation; re-check.
            if edges.get(&key).is_some_and(|s| s.count == 1) {
                front.push_back(key);
            }
        }
    }

    Ok(FillOutcome {
        mesh: TriangleMesh::new(mesh.vertices().clone(), triangles)?,
        added,
    })
}

/// Number of undirected edges used by exactly one triangle.
pub fn boundary_edge_count(mesh: &TriangleMesh) -> usize {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in mesh.triangles() {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *counts.entry(undirected(a, b)).or_insert(0) += 1;
        }
    }
    counts.values().filter(|c| **c == 1).count()
}

/// Uniform Laplacian smoothing: every interior vertex moves toward the
/// unweighted average of its edge neighbors by `laplacian_lambda`, all
/// vertices updating simultaneously from the previous iteration's
/// positions. Boundary vertices (incident to an edge with a single
/// face) and isolated vertices stay fixed. Connectivity is preserved
/// exactly.
pub fn laplacian_smooth(mesh: &TriangleMesh, cfg: &MeshingConfig) -> Result<TriangleMesh> {
    cfg.validate()?;
    let n = mesh.vertices().len();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut edge_counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in mesh.triangles() {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let key = undirected(a, b);
            let c = edge_counts.entry(key).or_insert(0);
            *c += 1;
            if *c == 1 {
                neighbors[key.0].push(key.1);
                neighbors[key.1].push(key.0);
            }
        }
    }
    let mut boundary = vec![false; n];
    for (&(a, b), &c) in &edge_counts {
        if c == 1 {
            boundary[a] = true;
            boundary[b] = true;
        }
    }

    let mut pos: Vec<Vec3> = mesh.vertices().points().to_vec();
    for _ in 0..cfg.laplacian_iterations {
        let prev = pos.clone();
        for (i, p) in pos.iter_mut().enumerate() {
            if boundary[i] || neighbors[i].is_empty() {
                continue;
            }
            let mean: Vec3 =
                neighbors[i].iter().map(|&j| prev[j]).sum::<Vec3>() / neighbors[i].len() as f64;
            *p = prev[i] + (mean - prev[i]) * cfg.laplacian_lambda;
        }
    }
    mesh.with_vertices(PointCloud::new(pos)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn grid_cloud(rows: usize, cols: usize, mut f: impl FnMut(f64, f64) -> Vec3) -> PointCloud {
        let grid = UVGrid::new(rows, cols).unwrap();
        PointCloud::new(grid.samples().into_iter().map(|(u, v)| f(u, v)).collect()).unwrap()
    }

    #[test]
    fn two_by_two_grid_gives_two_triangles() {
        let grid = UVGrid::new(2, 2).unwrap();
        let cloud = grid_cloud(2, 2, |u, v| Vec3::new(u, v, u * v + 0.1));
        let mesh = triangulate_uv_grid(&cloud, &grid).unwrap();
        assert_eq!(mesh.triangle_count(), 2);
    }

    #[test]
    fn ten_by_ten_grid_gives_162_triangles() {
        let grid = UVGrid::new(10, 10).unwrap();
        let cloud = grid_cloud(10, 10, |u, v| Vec3::new(u, v, (3.0 * u).sin() * 0.2 + v));
        let mesh = triangulate_uv_grid(&cloud, &grid).unwrap();
        assert_eq!(mesh.triangle_count(), 162);
    }

    #[test]
    fn triangle_count_formula_holds_in_general_position() {
        for rows in 2..=8 {
            for cols in 2..=8 {
                let grid = UVGrid::new(rows, cols).unwrap();
                let cloud = grid_cloud(rows, cols, |u, v| {
                    Vec3::new(u, v, 0.3 * u * u + 0.1 * (5.0 * v).sin())
                });
                let mesh = triangulate_uv_grid(&cloud, &grid).unwrap();
                assert_eq!(mesh.triangle_count(), 2 * (rows - 1) * (cols - 1));
                let n = mesh.vertices().len();
                assert!(mesh.triangles().iter().all(|t| t.iter().all(|&i| i < n)));
            }
        }
    }

    #[test]
    fn planar_grid_area_matches_patch_area() {
        // The patch spans 2 x 3 meters in a tilted plane; triangle areas
        // must sum to the parallelogram area 6 * |e1 x e2| scaling.
        let e1 = Vec3::new(1.0, 0.0, 0.5);
        let e2 = Vec3::new(0.0, 1.0, -0.25);
        let grid = UVGrid::new(7, 5).unwrap();
        let cloud = grid_cloud(7, 5, |u, v| e1 * (2.0 * u) + e2 * (3.0 * v));
        let mesh = triangulate_uv_grid(&cloud, &grid).unwrap();
        let total: f64 = mesh
            .triangles()
            .iter()
            .map(|t| {
                let p = mesh.vertices().points();
                0.5 * (p[t[1]] - p[t[0]]).cross(&(p[t[2]] - p[t[0]])).norm()
            })
            .sum();
        let expected = 6.0 * e1.cross(&e2).norm();
        assert!((total - expected).abs() < 1e-9);
    }

    #[test]
    fn grid_winding_is_consistent() {
        // Consistent orientation means no directed edge repeats.
        let grid = UVGrid::new(4, 6).unwrap();
        let cloud = grid_cloud(4, 6, |u, v| Vec3::new(u, v, u + 2.0 * v));
        let mesh = triangulate_uv_grid(&cloud, &grid).unwrap();
        let mut directed = std::collections::BTreeSet::new();
        for t in mesh.triangles() {
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                assert!(directed.insert(e), "directed edge {e:?} repeated");
            }
        }
    }

    #[test]
    fn cardinality_mismatch_is_rejected() {
        let grid = UVGrid::new(3, 3).unwrap();
        let cloud = PointCloud::new(vec![Vec3::zeros(); 8]).unwrap();
        assert!(triangulate_uv_grid(&cloud, &grid).is_err());
    }

    #[test]
    fn auto_radius_is_twice_median_spacing() {
        let cloud = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.5, 0.0, 0.0),
        ])
        .unwrap();
        assert!((auto_ball_radius(&cloud).unwrap() - 1.0).abs() < 1e-15);
        // A uniform grid has spacing equal to the cell size everywhere.
        let grid_points = grid_cloud(4, 4, |u, v| Vec3::new(u * 3.0, v * 3.0, 0.0));
        assert!((auto_ball_radius(&grid_points).unwrap() - 2.0).abs() < 1e-12);
    }

    fn octahedron() -> TriangleMesh {
        let v = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
        ];
        let t = vec![
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ];
        TriangleMesh::new(PointCloud::new(v).unwrap(), t).unwrap()
    }

    #[test]
    fn closed_surface_gains_no_triangles() {
        let mesh = octahedron();
        assert_eq!(boundary_edge_count(&mesh), 0);
        let out = ball_pivot_fill(&mesh, &MeshingConfig::default()).unwrap();
        assert!(out.no_new_triangles());
        assert_eq!(out.mesh.triangle_count(), 8);
    }

    #[test]
    fn deleted_face_is_refilled() {
        let full = octahedron();
        let holed = TriangleMesh::new(
            full.vertices().clone(),
            full.triangles()[1..].to_vec(),
        )
        .unwrap();
        assert_eq!(boundary_edge_count(&holed), 3);
        let out = ball_pivot_fill(&holed, &MeshingConfig::default()).unwrap();
        assert_eq!(out.added, 1);
        assert!(boundary_edge_count(&out.mesh) < boundary_edge_count(&holed));
        assert_eq!(out.mesh.vertices(), full.vertices());
        // Input triangles all survive.
        for t in holed.triangles() {
            assert!(out.mesh.triangles().contains(t));
        }
    }

    #[test]
    fn tiny_radius_seeds_nothing() {
        let full = octahedron();
        let holed = TriangleMesh::new(
            full.vertices().clone(),
            full.triangles()[1..].to_vec(),
        )
        .unwrap();
        let cfg = MeshingConfig {
            ball_radius: Some(0.01),
            ..MeshingConfig::default()
        };
        let out = ball_pivot_fill(&holed, &cfg).unwrap();
        assert!(out.no_new_triangles());
        assert_eq!(out.mesh.triangles(), holed.triangles());
    }

    #[test]
    fn far_clusters_are_never_bridged() {
        // Two open triangles 100 m apart with a ball that fits either.
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(100.0, 0.0, 0.0),
            Vec3::new(101.0, 0.0, 0.0),
            Vec3::new(100.0, 1.0, 0.0),
        ];
        let mesh = TriangleMesh::new(
            PointCloud::new(v).unwrap(),
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let cfg = MeshingConfig {
            ball_radius: Some(1.0),
            ..MeshingConfig::default()
        };
        let out = ball_pivot_fill(&mesh, &cfg).unwrap();
        for t in out.mesh.triangles() {
            let left = t.iter().all(|&i| i < 3);
            let right = t.iter().all(|&i| i >= 3);
            assert!(left || right, "triangle {t:?} bridges the clusters");
        }
    }

    #[test]
    fn fill_is_deterministic() {
        let full = octahedron();
        let holed = TriangleMesh::new(
            full.vertices().clone(),
            full.triangles()[..6].to_vec(),
        )
        .unwrap();
        let a = ball_pivot_fill(&holed, &MeshingConfig::default()).unwrap();
        let b = ball_pivot_fill(&holed, &MeshingConfig::default()).unwrap();
        assert_eq!(a.mesh.triangles(), b.mesh.triangles());
        assert_eq!(a.added, b.added);
    }

    #[test]
    fn uniform_grid_interior_is_a_smoothing_fixed_point() {
        let grid = UVGrid::new(5, 5).unwrap();
        let cloud = grid_cloud(5, 5, |u, v| Vec3::new(4.0 * u, 4.0 * v, 0.0));
        let mesh = triangulate_uv_grid(&cloud, &grid).unwrap();
        let cfg = MeshingConfig {
            laplacian_iterations: 3,
            ..MeshingConfig::default()
        };
        let smoothed = laplacian_smooth(&mesh, &cfg).unwrap();
        for (a, b) in mesh.vertices().iter().zip(smoothed.vertices().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn spike_with_full_weight_moves_to_ring_centroid() {
        // A fan: spiked apex surrounded by a pinned planar ring.
        let ring = 6;
        let mut v = vec![Vec3::new(0.0, 0.0, 1.0)];
        for i in 0..ring {
            let t = i as f64 / ring as f64 * std::f64::consts::TAU;
            v.push(Vec3::new(t.cos(), t.sin(), 0.0));
        }
        let mut tris = Vec::new();
        for i in 0..ring {
            tris.push([0, 1 + i, 1 + (i + 1) % ring]);
        }
        let mesh = TriangleMesh::new(PointCloud::new(v).unwrap(), tris).unwrap();
        let cfg = MeshingConfig {
            laplacian_lambda: 1.0,
            ..MeshingConfig::default()
        };
        let smoothed = laplacian_smooth(&mesh, &cfg).unwrap();
        assert!(smoothed.vertices().points()[0].norm() < 1e-12);
        // Ring vertices are boundary, hence fixed.
        for i in 1..=ring {
            assert_eq!(
                smoothed.vertices().points()[i],
                mesh.vertices().points()[i]
            );
        }
        // Half weight halves the spike height instead.
        let halved = laplacian_smooth(&mesh, &MeshingConfig::default()).unwrap();
        assert!((halved.vertices().points()[0].z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn smoothing_never_expands_the_bounding_box() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..10 {
            let grid = UVGrid::new(6, 6).unwrap();
            let cloud = grid_cloud(6, 6, |u, v| {
                Vec3::new(u, v, rng.random_range(-0.5..0.5))
            });
            let mesh = triangulate_uv_grid(&cloud, &grid).unwrap();
            let cfg = MeshingConfig {
                laplacian_iterations: 4,
                ..MeshingConfig::default()
            };
            let smoothed = laplacian_smooth(&mesh, &cfg).unwrap();
            for axis in 0..3 {
                let lo = cloud.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
                let hi = cloud
                    .iter()
                    .map(|p| p[axis])
                    .fold(f64::NEG_INFINITY, f64::max);
                for p in smoothed.vertices().iter() {
                    assert!(p[axis] >= lo - 1e-12 && p[axis] <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn smoothing_preserves_connectivity_and_isolated_vertices() {
        // One unused vertex rides along and must not move.
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(9.0, 9.0, 9.0),
        ];
        let mesh = TriangleMesh::new(PointCloud::new(v).unwrap(), vec![[0, 1, 2]]).unwrap();
        let smoothed = laplacian_smooth(&mesh, &MeshingConfig::default()).unwrap();
        assert_eq!(smoothed.triangles(), mesh.triangles());
        assert_eq!(smoothed.vertices().points()[3], Vec3::new(9.0, 9.0, 9.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mesh = octahedron();
        let bad_radius = MeshingConfig {
            ball_radius: Some(0.0),
            ..MeshingConfig::default()
        };
        assert!(ball_pivot_fill(&mesh, &bad_radius).is_err());
        let bad_lambda = MeshingConfig {
            laplacian_lambda: 0.0,
            ..MeshingConfig::default()
        };
        assert!(laplacian_smooth(&mesh, &bad_lambda).is_err());
    }
}
