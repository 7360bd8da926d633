//! Refinement against observed depth: point-to-point ICP, a
//! render-and-compare optimizer over the prediction parameters, and the
//! detection filtering rules that keep unreliable samples out.
//!
//! The optimizer is the label-free objective in miniature: rasterize the
//! decoded prediction, compare rendered and observed masks and visible
//! clouds, and descend the silhouette and geometric losses directly on
//! the pose parameters. Gradients come from central finite differences —
//! the rasterizer is hard (not differentiable), so the geometric term,
//! which varies smoothly through the back-projected clouds, carries most
//! of the signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, PointCloud, Pose6D, Quaternion, Scale3};
use crate::losses::{chamfer, finite_diff_grad, geom_loss, mask_loss, LossWeights, PredictionParams};
use crate::mesh::triangulate_uv_grid;
use crate::render::{rasterize, visible_cloud, DepthMap, Mask};
use crate::shapespace::LinearBlendDecoder;
use crate::{Mat3, Vec3};

/// Point-to-point ICP settings. Defaults suit desk-scale scenes: 50
/// iterations, 1e-5 m convergence, 0.1 m correspondence cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub convergence_eps: f64,
    pub max_correspondence_dist: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 50,
            convergence_eps: 1e-5,
            max_correspondence_dist: 0.1,
        }
    }
}

impl IcpConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.convergence_eps.is_finite() && self.convergence_eps > 0.0)
            || !(self.max_correspondence_dist.is_finite() && self.max_correspondence_dist > 0.0)
        {
            return Err(Error::domain("ICP settings must be positive"));
        }
        Ok(())
    }
}

/// Outcome of an ICP run. With `no_correspondences` set, `pose` is the
/// last pose before the correspondence set became empty and `rmse` is
/// infinite.
#[derive(Clone, Debug)]
pub struct IcpResult {
    pub pose: Pose6D,
    pub rmse: f64,
    pub iterations: usize,
    /// Correspondence RMSE before each accepted update.
    pub rmse_trace: Vec<f64>,
    pub no_correspondences: bool,
}

/// Least-squares rigid transform `(R, t)` mapping `from` onto `to`
/// (Kabsch): cross-covariance SVD with a reflection guard.
fn kabsch(from: &[Vec3], to: &[Vec3]) -> Result<Pose6D> {
    let n = from.len() as f64;
    let mu_f: Vec3 = from.iter().sum::<Vec3>() / n;
    let mu_t: Vec3 = to.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (f, t) in from.iter().zip(to) {
        h += (f - mu_f) * (t - mu_t).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::domain("rigid fit failed: SVD did not converge")),
    };
    let v = v_t.transpose();
    let mut d = Mat3::identity();
    d[(2, 2)] = (v * u.transpose()).determinant().signum();
    let r = v * d * u.transpose();
    let q = Quaternion::from_matrix(&r);
    let t = mu_t - r * mu_f;
    Pose6D::new(q, t)
}

/// Iterative closest point: nearest-neighbor correspondences within the
/// cutoff, closed-form rigid update, until the update translation drops
/// below `convergence_eps` or iterations run out. Returns the refined
/// pose and the RMSE of the final correspondences.
pub fn icp_refine(
    model_cloud: &PointCloud,
    scene_cloud: &PointCloud,
    init: &Pose6D,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    cfg.validate()?;
    if model_cloud.is_empty() || scene_cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let scene = scene_cloud.points();
    let correspondences = |pose: &Pose6D| -> Vec<(Vec3, Vec3)> {
        model_cloud
            .iter()
            .filter_map(|m| {
                let p = pose.transform_point(m);
                let mut best = f64::INFINITY;
                let mut arg = 0usize;
                for (j, s) in scene.iter().enumerate() {
                    let d = (p - s).norm();
                    if d < best {
                        best = d;
                        arg = j;
                    }
                }
                (best <= cfg.max_correspondence_dist).then_some((p, scene[arg]))
            })
            .collect()
    };
    let rmse_of = |pairs: &[(Vec3, Vec3)]| -> f64 {
        (pairs.iter().map(|(p, s)| (p - s).norm_squared()).sum::<f64>() / pairs.len() as f64)
            .sqrt()
    };

    let mut pose = *init;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        let pairs = correspondences(&pose);
        if pairs.is_empty() {
            return Ok(IcpResult {
                pose,
                rmse: f64::INFINITY,
                iterations,
                rmse_trace: trace,
                no_correspondences: true,
            });
        }
        trace.push(rmse_of(&pairs));
        let from: Vec<Vec3> = pairs.iter().map(|(p, _)| *p).collect();
        let to: Vec<Vec3> = pairs.iter().map(|(_, s)| *s).collect();
        let update = kabsch(&from, &to)?;
        pose = update.compose(&pose);
        iterations += 1;
        if update.translation().norm() < cfg.convergence_eps {
            break;
        }
    }
    let pairs = correspondences(&pose);
    if pairs.is_empty() {
        return Ok(IcpResult {
            pose,
            rmse: f64::INFINITY,
            iterations,
            rmse_trace: trace,
            no_correspondences: true,
        });
    }
    Ok(IcpResult {
        pose,
        rmse: rmse_of(&pairs),
        iterations,
        rmse_trace: trace,
        no_correspondences: false,
    })
}

/// Descent settings for [`self_optimize`]. `step_size` is the trial
/// step length along the unit gradient direction, in mixed quaternion /
/// meter units.
///
/// Scale stays frozen by default: silhouette and depth alone constrain
/// it weakly (a larger object farther away looks the same), so freeing
/// it without labels mostly adds noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub steps: usize,
    pub fd_step: f64,
    pub weights: LossWeights,
    pub free_rotation: bool,
    pub free_translation: bool,
    pub free_scale: bool,
    /// Shift the rendered cloud by the visible-centroid difference, and
    /// penalize that difference, before the geometric comparison.
    /// Disabled, the geometric term is the plain bidirectional Chamfer
    /// distance, which constrains translation along the viewing ray
    /// only weakly.
    pub centroid_anchor: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 0.05,
            steps: 30,
            // Large enough that a probe moves rendered edges by a
            // meaningful fraction of a pixel: the rasterized mask term
            // is piecewise constant, and probes far below pixel
            // granularity read spurious slopes from it.
            fd_step: 1e-2,
            weights: LossWeights::default(),
            free_rotation: true,
            free_translation: true,
            free_scale: false,
            centroid_anchor: true,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0)
            || !(self.fd_step.is_finite() && self.fd_step > 0.0)
        {
            return Err(Error::domain("optimizer step sizes must be positive"));
        }
        if !(self.free_rotation || self.free_translation || self.free_scale) {
            return Err(Error::domain("optimizer has no free parameters"));
        }
        Ok(())
    }
}

/// Result of a descent run: the best parameters and the objective
/// values bracketing the run. `objective <= initial_objective` always
/// (best-seen semantics).
#[derive(Clone, Debug)]
pub struct OptimizeOutcome {
    pub params: PredictionParams,
    pub initial_objective: f64,
    pub objective: f64,
    /// Accepted objective value after each step, starting with the
    /// initial value; non-increasing by construction.
    pub trace: Vec<f64>,
}

/// Flat parameter vector over the free blocks, in the fixed order
/// rotation (4), translation (3), scale (3).
fn pack(pred: &PredictionParams, k: &CameraIntrinsics, cfg: &OptimizerConfig) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    if cfg.free_rotation {
        let q = pred.rotation();
        v.extend([q.w, q.x, q.y, q.z]);
    }
    if cfg.free_translation {
        // Translation descends in metric camera space; the centroid
        // pixel and depth are re-derived on unpack.
        let t = pred.egocentric_pose(k)?.translation();
        v.extend([t.x, t.y, t.z]);
    }
    if cfg.free_scale {
        v.extend(pred.scale().as_array());
    }
    Ok(v)
}

/// Rebuild prediction parameters from a flat vector, projecting back to
/// the feasible set: the quaternion renormalizes, depth and extents
/// clamp to small positive floors.
fn unpack(
    v: &[f64],
    base: &PredictionParams,
    k: &CameraIntrinsics,
    cfg: &OptimizerConfig,
) -> Result<PredictionParams> {
    let mut i = 0;
    let rotation = if cfg.free_rotation {
        let q = Quaternion::new(v[i], v[i + 1], v[i + 2], v[i + 3]).normalized()?;
        i += 4;
        q
    } else {
        base.rotation()
    };
    let (centroid, z) = if cfg.free_translation {
        let t = Vec3::new(v[i], v[i + 1], v[i + 2].max(1e-3));
        i += 3;
        (k.project(&t)?, t.z)
    } else {
        (base.centroid(), base.z())
    };
    let scale = if cfg.free_scale {
        Scale3::new(v[i].max(1e-4), v[i + 1].max(1e-4), v[i + 2].max(1e-4))?
    } else {
        base.scale()
    };
    PredictionParams::new(rotation, centroid, z, scale, base.latent().clone())
}

/// Label-free objective of a parameter vector: rasterize the decoded,
/// meshed prediction and score silhouette and geometric agreement with
/// the observed pair.
fn render_objective(
    pred: &PredictionParams,
    decoder: &LinearBlendDecoder,
    observed_mask: &Mask,
    observed_cloud: &PointCloud,
    k: &CameraIntrinsics,
    cfg: &OptimizerConfig,
) -> Result<f64> {
    let canonical = decoder.decode(pred.latent())?;
    let scaled = canonical.map(|p| pred.scale().apply(p));
    let mesh = triangulate_uv_grid(&scaled, &decoder.grid())?;
    let pose = pred.egocentric_pose(k)?;
    let (depth_r, mask_r) = rasterize(&mesh, &pose, k)?;
    let mask_term = mask_loss(&mask_r.to_soft(), observed_mask)?;
    let rendered_cloud = visible_cloud(&depth_r, &mask_r, k)?;
    let geom_term = if cfg.centroid_anchor {
        geom_loss(&rendered_cloud, observed_cloud)?
    } else {
        chamfer(&rendered_cloud, observed_cloud)?
    };
    Ok(cfg.weights.lambda_mask * mask_term + cfg.weights.lambda_geom * geom_term)
}

/// Gradient descent of the render-and-compare objective over the free
/// prediction parameters.
///
/// Each step takes a central-difference gradient, tries a full step, and
/// halves it up to five times while the objective worsens; the returned
/// parameters are the best seen anywhere in the run. The rotation lives
/// on the unit sphere: steps are additive with renormalization after
/// each one. Descent stops early if a probe leaves the feasible region.
pub fn self_optimize(
    scene: (&DepthMap, &Mask),
    pred: &PredictionParams,
    decoder: &LinearBlendDecoder,
    k: &CameraIntrinsics,
    cfg: &OptimizerConfig,
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    let (observed_depth, observed_mask) = scene;
    let observed_cloud = visible_cloud(observed_depth, observed_mask, k).map_err(|_| {
        Error::domain("observed mask has no valid depth — sample would be filtered")
    })?;

    let objective = |v: &[f64]| -> Result<f64> {
        let p = unpack(v, pred, k, cfg)?;
        render_objective(&p, decoder, observed_mask, &observed_cloud, k, cfg)
    };

    let mut params = pack(pred, k, cfg)?;
    let initial = objective(&params)?;
    if !initial.is_finite() {
        return Err(Error::domain("objective is not finite at the start"));
    }
    let mut current = initial;
    let mut best = (initial, params.clone());
    let mut trace = vec![initial];

    'outer: for _ in 0..cfg.steps {
        let grad = match finite_diff_grad(
            |v| objective(v).unwrap_or(f64::NAN),
            &params,
            cfg.fd_step,
        ) {
            Ok(g) => g,
            Err(_) => break,
        };
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        // Steepest descent along the unit gradient direction: the raw
        // gradient mixes rotation components with meters, so its norm
        // says little about a usable step length.
        let mut step = cfg.step_size;
        for _ in 0..=5 {
            let candidate: Vec<f64> = params
                .iter()
                .zip(&grad)
                .map(|(p, g)| p - step * g / norm)
                .collect();
            let value = objective(&candidate).unwrap_or(f64::INFINITY);
            if value <= current {
                // Store the renormalized, clamped version so the vector
                // stays on the feasible manifold.
                let projected = unpack(&candidate, pred, k, cfg)?;
                params = pack(&projected, k, cfg)?;
                current = value;
                trace.push(value);
                if value < best.0 {
                    best = (value, params.clone());
                }
                continue 'outer;
            }
            step /= 2.0;
        }
        break; // five halvings without improvement
    }

    Ok(OptimizeOutcome {
        params: unpack(&best.1, pred, k, cfg)?,
        initial_objective: initial,
        objective: best.0,
        trace,
    })
}

/// Acceptance gates for a detection before self-supervised use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_confidence: f64,
    pub min_depth_coverage: f64,
    pub max_distance: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_confidence: 0.85,
            min_depth_coverage: 0.90,
            max_distance: 2.5,
        }
    }
}

/// Why a detection was rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    Confidence,
    DepthCoverage,
    Distance,
}

impl RejectReason {
    /// Stable name used in prediction files and tool output.
    pub fn label(&self) -> &'static str {
        match self {
            RejectReason::Confidence => "confidence",
            RejectReason::DepthCoverage => "depth_coverage",
            RejectReason::Distance => "distance",
        }
    }
}

/// Filtering verdict; `reasons` lists every failed gate in the fixed
/// order confidence, coverage, distance.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterDecision {
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
}

/// Keep a detection only when it is confident, its mask is well covered
/// by depth data, and the object is near enough for reliable depth.
pub fn filter_detection(
    confidence: f64,
    depth_coverage: f64,
    distance: f64,
    cfg: &FilterConfig,
) -> FilterDecision {
    let mut reasons = Vec::new();
    if confidence < cfg.min_confidence {
        reasons.push(RejectReason::Confidence);
    }
    if depth_coverage < cfg.min_depth_coverage {
        reasons.push(RejectReason::DepthCoverage);
    }
    if distance > cfg.max_distance {
        reasons.push(RejectReason::Distance);
    }
    FilterDecision {
        accepted: reasons.is_empty(),
        reasons,
    }
}

/// Outlier-removal outcome; `skipped` is set when the cloud was too
/// small to judge (at most `k` points) and passed through unchanged.
#[derive(Clone, Debug)]
pub struct OutlierResult {
    pub cloud: PointCloud,
    pub removed: usize,
    pub skipped: bool,
}

/// Statistical outlier removal: a point is dropped when its mean
/// distance to its `k` nearest neighbors exceeds the global mean of
/// those values by more than `std_ratio` standard deviations
/// (population). Order is preserved; defaults k=16, std_ratio=2.
pub fn remove_outliers(cloud: &PointCloud, k: usize, std_ratio: f64) -> Result<OutlierResult> {
    if k == 0 || !(std_ratio.is_finite() && std_ratio >= 0.0) {
        return Err(Error::domain("outlier removal needs k > 0 and a finite ratio"));
    }
    if cloud.len() <= k {
        return Ok(OutlierResult {
            cloud: cloud.clone(),
            removed: 0,
            skipped: true,
        });
    }
    let pts = cloud.points();
    let mean_knn: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut dists: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm())
                .collect();
            dists.sort_by(|a, b| a.total_cmp(b));
            dists[..k].iter().sum::<f64>() / k as f64
        })
        .collect();
    let n = mean_knn.len() as f64;
    let mean = mean_knn.iter().sum::<f64>() / n;
    let var = mean_knn.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let cutoff = mean + std_ratio * var.sqrt();
    let kept: Vec<Vec3> = pts
        .iter()
        .zip(&mean_knn)
        .filter(|(_, d)| **d <= cutoff)
        .map(|(p, _)| *p)
        .collect();
    let removed = pts.len() - kept.len();
    Ok(OutlierResult {
        cloud: PointCloud::new(kept)?,
        removed,
        skipped: false,
    })
}

/// 4-connected flood fill over the depth map from a seed pixel,
/// accepting each neighbor whose depth differs from the accepted pixel
/// it was reached from by less than `depth_tol`.
pub fn region_grow_centroid(
    depth: &DepthMap,
    seed: (usize, usize),
    depth_tol: f64,
) -> Result<Mask> {
    if !(depth_tol.is_finite() && depth_tol > 0.0) {
        return Err(Error::domain("depth tolerance must be positive"));
    }
    let (sx, sy) = seed;
    if sx >= depth.width() || sy >= depth.height() {
        return Err(Error::domain(format!(
            "seed pixel ({sx}, {sy}) is outside the image"
        )));
    }
    if depth.get(sx, sy).is_none() {
        return Err(Error::domain(format!(
            "seed pixel ({sx}, {sy}) has no valid depth"
        )));
    }
    let mut mask = Mask::new(depth.width(), depth.height());
    let mut queue = std::collections::VecDeque::new();
    mask.set(sx, sy, true);
    queue.push_back((sx, sy));
    while let Some((x, y)) = queue.pop_front() {
        let here = depth.get(x, y).expect("accepted pixels have depth");
        let neighbors = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbors {
            if nx >= depth.width() || ny >= depth.height() || mask.get(nx, ny) {
                continue;
            }
            if let Some(d) = depth.get(nx, ny) {
                if (d - here).abs() < depth_tol {
                    mask.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{transform_cloud, Scale3};
    use crate::losses::LossWeights;
    use crate::shapespace::{LatentCode, UVGrid};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_cloud(rng: &mut StdRng, n: usize, extent: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-extent..extent),
                        rng.random_range(-extent..extent),
                        rng.random_range(-extent..extent),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn unit_scale() -> Scale3 {
        Scale3::new(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn kabsch_recovers_a_planted_transform() {
        let mut rng = StdRng::seed_from_u64(1);
        let cloud = random_cloud(&mut rng, 40, 0.5);
        let q = Quaternion::from_axis_angle(&Vec3::new(0.3, 1.0, -0.2), 0.8).unwrap();
        let truth = Pose6D::new(q, Vec3::new(0.1, -0.2, 0.3)).unwrap();
        let moved: Vec<Vec3> = cloud.iter().map(|p| truth.transform_point(p)).collect();
        let fit = kabsch(cloud.points(), &moved).unwrap();
        assert!(fit.rotation().angle_to(&truth.rotation()) < 1e-9);
        assert!((fit.translation() - truth.translation()).norm() < 1e-9);
    }

    #[test]
    fn icp_converges_immediately_on_a_perfect_start() {
        let mut rng = StdRng::seed_from_u64(2);
        let model = random_cloud(&mut rng, 50, 0.3);
        let init = Pose6D::new(
            Quaternion::from_axis_angle(&Vec3::new(0.0, 1.0, 0.0), 0.4).unwrap(),
            Vec3::new(0.0, 0.0, 1.5),
        )
        .unwrap();
        let scene = transform_cloud(&model, &unit_scale(), &init);
        let out = icp_refine(&model, &scene, &init, &IcpConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.rmse < 1e-12);
        assert!(!out.no_correspondences);
    }

    #[test]
    fn icp_recovers_a_small_perturbation() {
        let mut rng = StdRng::seed_from_u64(3);
        let model = random_cloud(&mut rng, 80, 0.3);
        let truth = Pose6D::new(
            Quaternion::from_axis_angle(&Vec3::new(0.2, 0.9, 0.1), 0.5).unwrap(),
            Vec3::new(0.05, -0.02, 1.2),
        )
        .unwrap();
        let scene = transform_cloud(&model, &unit_scale(), &truth);
        // Start 2 degrees and 1 cm away from the truth.
        let nudge = Pose6D::new(
            Quaternion::from_axis_angle(&Vec3::new(1.0, 0.0, 0.0), 2.0f64.to_radians()).unwrap(),
            Vec3::new(0.01, 0.0, 0.0),
        )
        .unwrap();
        let init = nudge.compose(&truth);
        let out = icp_refine(&model, &scene, &init, &IcpConfig::default()).unwrap();
        assert!(out.pose.rotation().angle_to(&truth.rotation()) < 1e-6);
        assert!((out.pose.translation() - truth.translation()).norm() < 1e-6);
        // The per-iteration RMSE trace never increases.
        for w in out.rmse_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn icp_flags_disjoint_clouds() {
        let model = PointCloud::new(vec![Vec3::new(0.0, 0.0, 0.0)]).unwrap();
        let scene = PointCloud::new(vec![Vec3::new(10.0, 0.0, 0.0)]).unwrap();
        let init = Pose6D::identity();
        let out = icp_refine(&model, &scene, &init, &IcpConfig::default()).unwrap();
        assert!(out.no_correspondences);
        assert!(out.rmse.is_infinite());
        assert_eq!(out.pose, init);
    }

    #[test]
    fn icp_is_rigidly_equivariant() {
        let mut rng = StdRng::seed_from_u64(4);
        let model = random_cloud(&mut rng, 60, 0.3);
        let truth = Pose6D::new(
            Quaternion::from_axis_angle(&Vec3::new(0.1, 0.8, 0.3), 0.7).unwrap(),
            Vec3::new(0.0, 0.1, 1.0),
        )
        .unwrap();
        let scene = transform_cloud(&model, &unit_scale(), &truth);
        let nudge = Pose6D::new(
            Quaternion::from_axis_angle(&Vec3::new(0.0, 0.0, 1.0), 0.02).unwrap(),
            Vec3::new(0.005, -0.005, 0.0),
        )
        .unwrap();
        let init = nudge.compose(&truth);
        let base = icp_refine(&model, &scene, &init, &IcpConfig::default()).unwrap();

        let motion = Pose6D::new(
            Quaternion::from_axis_angle(&Vec3::new(0.5, 0.5, 0.0), 1.1).unwrap(),
            Vec3::new(0.3, -0.2, 0.4),
        )
        .unwrap();
        let scene_m = transform_cloud(&scene, &unit_scale(), &motion);
        let init_m = motion.compose(&init);
        let moved = icp_refine(&model, &scene_m, &init_m, &IcpConfig::default()).unwrap();
        let expected = motion.compose(&base.pose);
        assert!(moved.pose.rotation().angle_to(&expected.rotation()) < 1e-6);
        assert!((moved.pose.translation() - expected.translation()).norm() < 1e-6);
    }

    /// Small camera and a decoder of tilted, bowed plates. The tilt and
    /// the unequal extents leave the shape with no rotational symmetry,
    /// so every pose parameter is observable from silhouette and depth.
    fn test_rig() -> (CameraIntrinsics, LinearBlendDecoder) {
        let k = CameraIntrinsics::new(80.0, 80.0, 48.0, 36.0, 96, 72).unwrap();
        let grid = UVGrid::new(8, 8).unwrap();
        let plate = |bow: f64| {
            PointCloud::new(
                grid.samples()
                    .into_iter()
                    .map(|(u, v)| {
                        let x = u - 0.5;
                        let y = v - 0.5;
                        Vec3::new(x, y, bow * (x * x + y * y) - 0.25 * bow + 0.2 * x)
                    })
                    .collect(),
            )
            .unwrap()
        };
        let decoder = LinearBlendDecoder::new(
            "plate",
            grid,
            vec![
                LatentCode::new(vec![0.0, 0.0]).unwrap(),
                LatentCode::new(vec![1.0, 0.0]).unwrap(),
                LatentCode::new(vec![0.0, 1.0]).unwrap(),
            ],
            vec![plate(0.2), plate(0.5), plate(0.8)],
        )
        .unwrap();
        (k, decoder)
    }

    fn scene_params(z: f64) -> PredictionParams {
        PredictionParams::new(
            Quaternion::from_axis_angle(&Vec3::new(1.0, 0.2, 0.0), 0.5).unwrap(),
            [48.0, 36.0],
            z,
            Scale3::new(0.5, 0.3, 0.4).unwrap(),
            LatentCode::new(vec![0.4, 0.2]).unwrap(),
        )
        .unwrap()
    }

    fn render_scene(
        pred: &PredictionParams,
        decoder: &LinearBlendDecoder,
        k: &CameraIntrinsics,
    ) -> (DepthMap, Mask) {
        let canonical = decoder.decode(pred.latent()).unwrap();
        let scaled = canonical.map(|p| pred.scale().apply(p));
        let mesh = triangulate_uv_grid(&scaled, &decoder.grid()).unwrap();
        rasterize(&mesh, &pred.egocentric_pose(k).unwrap(), k).unwrap()
    }

    #[test]
    fn optimizer_stays_at_a_perfect_start() {
        let (k, decoder) = test_rig();
        let truth = scene_params(1.2);
        let (depth, mask) = render_scene(&truth, &decoder, &k);
        let cfg = OptimizerConfig {
            steps: 5,
            ..OptimizerConfig::default()
        };
        let out = self_optimize((&depth, &mask), &truth, &decoder, &k, &cfg).unwrap();
        assert!(out.objective <= out.initial_objective);
        let moved = out
            .params
            .egocentric_pose(&k)
            .unwrap()
            .translation()
            - truth.egocentric_pose(&k).unwrap().translation();
        assert!(moved.norm() < 1e-6, "drifted {} from a perfect start", moved.norm());
        assert!(
            out.params
                .rotation()
                .angle_to(&truth.rotation())
                < 1e-6
        );
    }

    #[test]
    fn optimizer_improves_perturbed_poses() {
        let (k, decoder) = test_rig();
        let mut improved = 0;
        let trials = 6;
        for seed in 0..trials {
            let mut rng = StdRng::seed_from_u64(100 + seed);
            let truth = scene_params(1.2);
            let (depth, mask) = render_scene(&truth, &decoder, &k);

            let axis = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let spin = Quaternion::from_axis_angle(&axis, rng.random_range(0.05..0.15)).unwrap();
            let start = PredictionParams::new(
                truth.rotation().mul(&spin),
                [
                    truth.centroid()[0] + rng.random_range(-2.0..2.0),
                    truth.centroid()[1] + rng.random_range(-2.0..2.0),
                ],
                truth.z() + rng.random_range(-0.04..0.04),
                truth.scale(),
                truth.latent().clone(),
            )
            .unwrap();

            let out = self_optimize(
                (&depth, &mask),
                &start,
                &decoder,
                &k,
                &OptimizerConfig::default(),
            )
            .unwrap();
            assert!(out.objective <= out.initial_objective);
            assert_eq!(out.trace[0], out.initial_objective);
            for w in out.trace.windows(2) {
                assert!(w[1] <= w[0], "accepted objective rose: {w:?}");
            }

            let t_true = truth.egocentric_pose(&k).unwrap().translation();
            let err_before = (start.egocentric_pose(&k).unwrap().translation() - t_true).norm()
                + start.rotation().angle_to(&truth.rotation());
            let err_after = (out.params.egocentric_pose(&k).unwrap().translation() - t_true)
                .norm()
                + out.params.rotation().angle_to(&truth.rotation());
            if err_after < err_before {
                improved += 1;
            }
        }
        assert!(
            improved >= trials - 1,
            "only {improved}/{trials} trials improved"
        );
    }

    #[test]
    fn silhouette_only_objective_leaves_depth_ambiguous() {
        let (k, decoder) = test_rig();
        let truth = scene_params(1.2);
        let (depth, mask) = render_scene(&truth, &decoder, &k);
        let start = PredictionParams::new(
            truth.rotation(),
            truth.centroid(),
            truth.z() + 0.10,
            truth.scale(),
            truth.latent().clone(),
        )
        .unwrap();

        let full = self_optimize(
            (&depth, &mask),
            &start,
            &decoder,
            &k,
            &OptimizerConfig::default(),
        )
        .unwrap();
        let silhouette_only = self_optimize(
            (&depth, &mask),
            &start,
            &decoder,
            &k,
            &OptimizerConfig {
                weights: LossWeights::new(1.0, 0.0).unwrap(),
                ..OptimizerConfig::default()
            },
        )
        .unwrap();

        let z_err_full = (full.params.z() - truth.z()).abs();
        let z_err_sil = (silhouette_only.params.z() - truth.z()).abs();
        // With the geometric term, depth recovers; from the silhouette
        // alone, motion along the optical axis is nearly invisible.
        assert!(z_err_full < 0.03, "full objective left z off by {z_err_full}");
        assert!(
            z_err_sil > 2.0 * z_err_full,
            "silhouette-only z error {z_err_sil} vs full {z_err_full}"
        );
    }

    #[test]
    fn unanchored_geometric_term_is_the_plain_chamfer_distance() {
        let (k, decoder) = test_rig();
        let truth = scene_params(1.2);
        let (depth, mask) = render_scene(&truth, &decoder, &k);
        let start = PredictionParams::new(
            truth.rotation(),
            truth.centroid(),
            truth.z() + 0.05,
            truth.scale(),
            truth.latent().clone(),
        )
        .unwrap();
        let cfg = OptimizerConfig {
            steps: 1,
            ..OptimizerConfig::default()
        };

        let (depth_r, mask_r) = render_scene(&start, &decoder, &k);
        let rendered = visible_cloud(&depth_r, &mask_r, &k).unwrap();
        let observed = visible_cloud(&depth, &mask, &k).unwrap();
        let mask_term = mask_loss(&mask_r.to_soft(), &mask).unwrap();

        let unanchored = self_optimize(
            (&depth, &mask),
            &start,
            &decoder,
            &k,
            &OptimizerConfig {
                centroid_anchor: false,
                ..cfg
            },
        )
        .unwrap();
        let expected = mask_term + chamfer(&rendered, &observed).unwrap();
        assert!(
            (unanchored.initial_objective - expected).abs() < 1e-12,
            "initial {} vs recomputed {expected}",
            unanchored.initial_objective
        );

        let anchored = self_optimize((&depth, &mask), &start, &decoder, &k, &cfg).unwrap();
        let expected = mask_term + geom_loss(&rendered, &observed).unwrap();
        assert!(
            (anchored.initial_objective - expected).abs() < 1e-12,
            "initial {} vs recomputed {expected}",
            anchored.initial_objective
        );
        // At a pure depth offset the two objectives genuinely differ.
        assert!((anchored.initial_objective - unanchored.initial_objective).abs() > 1e-6);
    }

    #[test]
    fn optimizer_rejects_empty_scenes() {
        let (k, decoder) = test_rig();
        let truth = scene_params(1.2);
        let depth = DepthMap::new(96, 72);
        let mask = Mask::new(96, 72);
        let err = self_optimize(
            (&depth, &mask),
            &truth,
            &decoder,
            &k,
            &OptimizerConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("filtered"));
    }

    #[test]
    fn filter_rules_match_thresholds() {
        let cfg = FilterConfig::default();
        let cases = [
            (0.84, 1.0, 1.0, Some(RejectReason::Confidence)),
            (0.9, 0.89, 1.0, Some(RejectReason::DepthCoverage)),
            (0.9, 1.0, 3.0, Some(RejectReason::Distance)),
            (0.85, 0.90, 2.5, None),
        ];
        for (conf, cov, dist, reason) in cases {
            let d = filter_detection(conf, cov, dist, &cfg);
            match reason {
                None => assert!(d.accepted, "({conf}, {cov}, {dist}) should pass"),
                Some(r) => {
                    assert!(!d.accepted);
                    assert_eq!(d.reasons, vec![r]);
                }
            }
        }
        // Multiple failures are all reported, in gate order.
        let d = filter_detection(0.1, 0.1, 9.0, &cfg);
        assert_eq!(
            d.reasons,
            vec![
                RejectReason::Confidence,
                RejectReason::DepthCoverage,
                RejectReason::Distance
            ]
        );
    }

    #[test]
    fn outlier_removal_drops_exactly_the_planted_stray() {
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                pts.push(Vec3::new(x as f64 * 0.01, y as f64 * 0.01, 1.0));
            }
        }
        let grid = pts.clone();
        pts.insert(17, Vec3::new(1.0, 1.0, 1.0)); // 100x the grid spacing away
        let tainted = PointCloud::new(pts).unwrap();
        let out = remove_outliers(&tainted, 16, 2.0).unwrap();
        assert_eq!(out.removed, 1);
        assert!(!out.skipped);
        // Exactly the stray goes; the grid survives in its original order.
        assert_eq!(out.cloud.len(), grid.len());
        for (a, b) in out.cloud.iter().zip(&grid) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn outlier_removal_skips_tiny_clouds() {
        let tiny = PointCloud::new(vec![Vec3::zeros(); 10]).unwrap();
        let out = remove_outliers(&tiny, 16, 2.0).unwrap();
        assert!(out.skipped);
        assert_eq!(out.cloud.len(), 10);
    }

    #[test]
    fn region_growing_respects_steps_and_follows_ramps() {
        let (w, h) = (20, 10);
        // Left half at 1 m, right half at 2 m.
        let mut stepped = DepthMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                stepped.set(x, y, if x < 10 { 1.0 } else { 2.0 });
            }
        }
        let grown = region_grow_centroid(&stepped, (3, 5), 0.02).unwrap();
        assert_eq!(grown.count(), 10 * h);
        assert!(grown.get(9, 0) && !grown.get(10, 0));

        // A smooth ramp below tolerance per pixel floods entirely.
        let mut ramp = DepthMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                ramp.set(x, y, 1.0 + 0.01 * x as f64);
            }
        }
        let grown = region_grow_centroid(&ramp, (0, 0), 0.02).unwrap();
        assert_eq!(grown.count(), w * h);

        // Constant depth with a hole of invalid pixels: the hole stays out.
        let mut flat = DepthMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if (x, y) != (5, 5) {
                    flat.set(x, y, 1.5);
                }
            }
        }
        let grown = region_grow_centroid(&flat, (0, 0), 0.02).unwrap();
        assert_eq!(grown.count(), w * h - 1);
        assert!(!grown.get(5, 5));

        assert!(region_grow_centroid(&flat, (5, 5), 0.02).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn filtering_is_monotone(
            conf in 0.0f64..1.0,
            cov in 0.0f64..1.0,
            dist in 0.0f64..5.0,
            d_conf in 0.0f64..0.2,
            d_cov in 0.0f64..0.2,
            d_dist in 0.0f64..1.0,
        ) {
            let cfg = FilterConfig::default();
            let base = filter_detection(conf, cov, dist, &cfg);
            let better = filter_detection(
                (conf + d_conf).min(1.0),
                (cov + d_cov).min(1.0),
                (dist - d_dist).max(0.0),
                &cfg,
            );
            if base.accepted {
                prop_assert!(better.accepted);
            }
        }
    }
}
