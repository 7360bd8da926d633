//! Training objectives: Chamfer alignment, its disentangled variant,
//! balanced mask cross-entropy, the centroid-anchored geometric loss, and
//! finite-difference gradients.
//!
//! The supervised objective compares a prediction against full ground
//! truth: point-cloud alignment, a latent-space regularizer, and mask
//! cross-entropy. The self-supervised objective adds two terms that need
//! no labels, only the sensor depth and mask: a balanced silhouette loss
//! between the rendered and observed masks, and a geometric loss between
//! the rendered and observed visible clouds. The geometric loss first
//! shifts the rendered cloud by the difference of visible centroids and
//! penalizes that shift, which anchors translation along the optical axis
//! where the silhouette alone is ambiguous (a larger, farther object and
//! a smaller, nearer one render the same mask).
//!
//! Everything here is a pure function; gradients for optimization come
//! from [`finite_diff_grad`] or the fixed-assignment analytic forms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    allocentric_to_egocentric, backproject_centroid, transform_cloud, CameraIntrinsics,
    PointCloud, Pose6D, Quaternion, Scale3,
};
use crate::render::{Mask, SoftMask};
use crate::shapespace::{shape_regularizer, EmbeddingSet, LatentCode, LinearBlendDecoder};
use crate::Vec3;

/// Probability clamp for the cross-entropy losses; hard rasterized masks
/// would otherwise produce infinities.
pub const BCE_EPS: f64 = 1e-6;

/// Point-pair count above which Chamfer sums evaluate in parallel.
/// Parallel evaluation is bit-identical to sequential: per-point terms
/// are collected in order and reduced sequentially.
const CHAMFER_PAR_THRESHOLD: usize = 1 << 16;

/// The regressed parameters of one detection: allocentric rotation,
/// centroid pixel location, metric depth, metric extents, latent shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionParams {
    rotation: Quaternion,
    centroid: [f64; 2],
    z: f64,
    scale: Scale3,
    latent: LatentCode,
}

impl PredictionParams {
    pub fn new(
        rotation: Quaternion,
        centroid: [f64; 2],
        z: f64,
        scale: Scale3,
        latent: LatentCode,
    ) -> Result<Self> {
        if !rotation.is_unit() {
            return Err(Error::InvalidRotation {
                norm: rotation.norm(),
            });
        }
        if !(centroid[0].is_finite() && centroid[1].is_finite()) {
            return Err(Error::NonFinite {
                context: "prediction centroid",
            });
        }
        if !z.is_finite() || z <= 0.0 {
            return Err(Error::domain(format!("prediction depth {z} must be positive")));
        }
        Ok(PredictionParams {
            rotation: rotation.normalized()?.canonicalized(),
            centroid,
            z,
            scale,
            latent,
        })
    }

    /// Allocentric rotation.
    pub fn rotation(&self) -> Quaternion {
        self.rotation
    }

    /// Centroid pixel coordinates `(x, y)`.
    pub fn centroid(&self) -> [f64; 2] {
        self.centroid
    }

    /// Metric centroid depth in meters.
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn scale(&self) -> Scale3 {
        self.scale
    }

    pub fn latent(&self) -> &LatentCode {
        &self.latent
    }

    /// Camera-frame pose: egocentric rotation from the viewpoint
    /// transport, translation from the back-projected centroid.
    pub fn egocentric_pose(&self, k: &CameraIntrinsics) -> Result<Pose6D> {
        let q = allocentric_to_egocentric(&self.rotation, self.centroid[0], self.centroid[1], k)?;
        let t = backproject_centroid(self.centroid[0], self.centroid[1], self.z, k)?;
        Pose6D::new(q, t)
    }

    /// Decoded, scaled, posed camera-frame cloud of this prediction.
    pub fn camera_cloud(
        &self,
        decoder: &LinearBlendDecoder,
        k: &CameraIntrinsics,
    ) -> Result<PointCloud> {
        let canonical = decoder.decode(&self.latent)?;
        Ok(transform_cloud(&canonical, &self.scale, &self.egocentric_pose(k)?))
    }
}

/// Weights of the self-supervision terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_mask: f64,
    pub lambda_geom: f64,
}

impl LossWeights {
    pub fn new(lambda_mask: f64, lambda_geom: f64) -> Result<Self> {
        if !(lambda_mask.is_finite() && lambda_geom.is_finite())
            || lambda_mask < 0.0
            || lambda_geom < 0.0
        {
            return Err(Error::domain("loss weights must be finite and non-negative"));
        }
        Ok(LossWeights {
            lambda_mask,
            lambda_geom,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mask: 1.0,
            lambda_geom: 1.0,
        }
    }
}

/// One value per regressed parameter group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamTerms {
    pub rotation: f64,
    pub centroid: f64,
    pub depth: f64,
    pub scale: f64,
    pub latent: f64,
}

impl ParamTerms {
    pub fn mean(&self) -> f64 {
        (self.rotation + self.centroid + self.depth + self.scale + self.latent) / 5.0
    }
}

/// Itemized objective value.
///
/// `total = l3d + reg + bce + lambda_mask * mask + lambda_geom * geom`
/// within 1e-9; the supervised part leaves `mask` and `geom` at zero.
/// `l3d_terms` holds the disentangled alignment contributions and
/// `param_l1` the raw parameter-space L1 distances, both diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l3d: f64,
    pub reg: f64,
    pub bce: f64,
    pub mask: f64,
    pub geom: f64,
    pub weights: LossWeights,
    pub l3d_terms: ParamTerms,
    pub param_l1: ParamTerms,
}

fn nearest_distance(p: &Vec3, cloud: &PointCloud) -> f64 {
    let mut best = f64::INFINITY;
    for q in cloud.iter() {
        let d = (p - q).norm();
        if d < best {
            best = d;
        }
    }
    best
}

fn mean_nearest(from: &PointCloud, to: &PointCloud) -> f64 {
    let sum: f64 = if from.len() * to.len() >= CHAMFER_PAR_THRESHOLD {
        let dists: Vec<f64> = from
            .points()
            .par_iter()
            .map(|p| nearest_distance(p, to))
            .collect();
        dists.iter().sum()
    } else {
        from.iter().map(|p| nearest_distance(p, to)).sum()
    };
    sum / from.len() as f64
}

/// Bidirectional mean nearest-neighbor distance (unsquared L2):
/// the mean distance from each point of `a` to its nearest point of `b`,
/// plus the same with roles swapped.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

/// Analytic gradient of [`chamfer`] with respect to the points of `a`,
/// holding the nearest-neighbor assignments fixed.
///
/// Each direction contributes: the a-to-b term moves `a_i` along the unit
/// vector away from its nearest neighbor, and every `b_j` whose nearest
/// point is `a_i` pulls `a_i` toward it. Zero-distance pairs contribute
/// nothing (the norm has no gradient there). Ties resolve to the lowest
/// index, matching the evaluation order of [`chamfer`].
pub fn chamfer_grad(a: &PointCloud, b: &PointCloud) -> Result<Vec<Vec3>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let mut grad = vec![Vec3::zeros(); a.len()];
    for (i, p) in a.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut arg = 0usize;
        for (j, q) in b.iter().enumerate() {
            let d = (p - q).norm();
            if d < best {
                best = d;
                arg = j;
            }
        }
        if best > 0.0 {
            grad[i] += (p - b.points()[arg]) / best / na;
        }
    }
    for q in b.iter() {
        let mut best = f64::INFINITY;
        let mut arg = 0usize;
        for (i, p) in a.iter().enumerate() {
            let d = (q - p).norm();
            if d < best {
                best = d;
                arg = i;
            }
        }
        if best > 0.0 {
            grad[arg] -= (q - a.points()[arg]) / best / nb;
        }
    }
    Ok(grad)
}

/// Camera-frame alignment loss: Chamfer distance between the prediction's
/// posed cloud and the ground-truth model under the ground-truth pose.
///
/// `gt_cloud` is the ground-truth model in metric object frame (canonical
/// shape with its scale already applied); it is transformed by the
/// ground-truth pose without further scaling.
pub fn align_loss_l3d(
    pred: &PredictionParams,
    gt: &PredictionParams,
    decoder: &LinearBlendDecoder,
    gt_cloud: &PointCloud,
    k: &CameraIntrinsics,
) -> Result<f64> {
    let p3d = pred.camera_cloud(decoder, k)?;
    let gt_pose = gt.egocentric_pose(k)?;
    let gt3d = gt_cloud.map(|p| gt_pose.transform_point(p));
    chamfer(&p3d, &gt3d)
}

fn gt3d_cloud(
    gt: &PredictionParams,
    gt_cloud: &PointCloud,
    k: &CameraIntrinsics,
) -> Result<PointCloud> {
    let gt_pose = gt.egocentric_pose(k)?;
    Ok(gt_cloud.map(|p| gt_pose.transform_point(p)))
}

/// Alignment loss evaluated once per parameter group, with that group
/// taken from `pred` and all others from ground truth; returns the mean
/// of the five terms and the per-group breakdown.
///
/// Perturbing a single group therefore moves exactly one term, and the
/// total is that term divided by five.
pub fn disentangled_l3d(
    pred: &PredictionParams,
    gt: &PredictionParams,
    decoder: &LinearBlendDecoder,
    gt_cloud: &PointCloud,
    k: &CameraIntrinsics,
) -> Result<(f64, ParamTerms)> {
    let gt3d = gt3d_cloud(gt, gt_cloud, k)?;
    let one = |p: &PredictionParams| -> Result<f64> {
        let cloud = p.camera_cloud(decoder, k)?;
        chamfer(&cloud, &gt3d)
    };
    let make = |rotation: &PredictionParams,
                centroid: &PredictionParams,
                depth: &PredictionParams,
                scale: &PredictionParams,
                latent: &PredictionParams|
     -> PredictionParams {
        PredictionParams {
            rotation: rotation.rotation,
            centroid: centroid.centroid,
            z: depth.z,
            scale: scale.scale,
            latent: latent.latent.clone(),
        }
    };
    let terms = ParamTerms {
        rotation: one(&make(pred, gt, gt, gt, gt))?,
        centroid: one(&make(gt, pred, gt, gt, gt))?,
        depth: one(&make(gt, gt, pred, gt, gt))?,
        scale: one(&make(gt, gt, gt, pred, gt))?,
        latent: one(&make(gt, gt, gt, gt, pred))?,
    };
    Ok((terms.mean(), terms))
}

/// Cross-entropy balanced between foreground and background: the mean
/// over ground-truth foreground pixels of `-ln p` plus the mean over
/// background pixels of `-ln (1 - p)`, probabilities clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`. A side with no pixels contributes zero.
pub fn balanced_bce(pred: &SoftMask, gt: &Mask) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::ResolutionMismatch {
            expected_w: gt.width(),
            expected_h: gt.height(),
            got_w: pred.width(),
            got_h: pred.height(),
        });
    }
    let mut fg_sum = 0.0;
    let mut fg_n = 0usize;
    let mut bg_sum = 0.0;
    let mut bg_n = 0usize;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let p = pred.get(x, y).clamp(BCE_EPS, 1.0 - BCE_EPS);
            if gt.get(x, y) {
                fg_sum -= p.ln();
                fg_n += 1;
            } else {
                bg_sum -= (1.0 - p).ln();
                bg_n += 1;
            }
        }
    }
    let fg = if fg_n > 0 { fg_sum / fg_n as f64 } else { 0.0 };
    let bg = if bg_n > 0 { bg_sum / bg_n as f64 } else { 0.0 };
    Ok(fg + bg)
}

/// Silhouette loss between a rendered mask and the observed mask:
/// balanced cross-entropy with the observed mask as the target.
pub fn mask_loss(rendered: &SoftMask, observed: &Mask) -> Result<f64> {
    balanced_bce(rendered, observed)
}

/// Difference of visible centroids, observed minus rendered.
pub fn centroid_delta(rendered: &PointCloud, observed: &PointCloud) -> Result<Vec3> {
    Ok(observed.centroid()? - rendered.centroid()?)
}

/// Centroid-anchored geometric loss: Chamfer distance between the
/// rendered cloud shifted by the centroid difference and the observed
/// cloud, plus the norm of that difference.
///
/// For an observed cloud that is exactly the rendered cloud translated by
/// `d`, the Chamfer part vanishes and the loss equals `|d|`.
pub fn geom_loss(rendered: &PointCloud, observed: &PointCloud) -> Result<f64> {
    let delta = centroid_delta(rendered, observed)?;
    let shifted = rendered.map(|p| p + delta);
    Ok(chamfer(&shifted, observed)? + delta.norm())
}

/// Analytic gradient of [`geom_loss`] with respect to the rendered
/// points, holding nearest-neighbor assignments fixed.
///
/// The centroid shift couples every point: with `g` the Chamfer gradient
/// at the shifted cloud, the gradient at point `i` is
/// `g_i - mean(g) - delta_hat / n` (the last term absent when the
/// centroid difference is zero, where its norm has no gradient).
pub fn geom_loss_grad(rendered: &PointCloud, observed: &PointCloud) -> Result<Vec<Vec3>> {
    let delta = centroid_delta(rendered, observed)?;
    let shifted = rendered.map(|p| p + delta);
    let g = chamfer_grad(&shifted, observed)?;
    let n = rendered.len() as f64;
    let g_mean: Vec3 = g.iter().sum::<Vec3>() / n;
    let delta_term = if delta.norm() > 0.0 {
        delta / delta.norm() / n
    } else {
        Vec3::zeros()
    };
    Ok(g.into_iter().map(|gi| gi - g_mean - delta_term).collect())
}

/// Fully supervised objective: disentangled alignment, latent
/// regularizer, and balanced mask cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn supervised_total(
    pred: &PredictionParams,
    gt: &PredictionParams,
    decoder: &LinearBlendDecoder,
    gt_cloud: &PointCloud,
    k: &CameraIntrinsics,
    set: &EmbeddingSet,
    pred_mask: &SoftMask,
    gt_mask: &Mask,
) -> Result<LossBreakdown> {
    let (l3d, l3d_terms) = disentangled_l3d(pred, gt, decoder, gt_cloud, k)?;
    let reg = shape_regularizer(&pred.latent, set)?;
    let bce = balanced_bce(pred_mask, gt_mask)?;
    let param_l1 = param_l1(pred, gt);
    Ok(LossBreakdown {
        total: l3d + reg + bce,
        l3d,
        reg,
        bce,
        mask: 0.0,
        geom: 0.0,
        weights: LossWeights::default(),
        l3d_terms,
        param_l1,
    })
}

/// Parameter-space L1 distances per group, a diagnostic independent of
/// any point cloud. Quaternions compare in canonical form.
fn param_l1(pred: &PredictionParams, gt: &PredictionParams) -> ParamTerms {
    let qp = pred.rotation.canonicalized();
    let qg = gt.rotation.canonicalized();
    let latent = pred
        .latent
        .values()
        .iter()
        .zip(gt.latent.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let sp = pred.scale.as_array();
    let sg = gt.scale.as_array();
    ParamTerms {
        rotation: (qp.w - qg.w).abs()
            + (qp.x - qg.x).abs()
            + (qp.y - qg.y).abs()
            + (qp.z - qg.z).abs(),
        centroid: (pred.centroid[0] - gt.centroid[0]).abs()
            + (pred.centroid[1] - gt.centroid[1]).abs(),
        depth: (pred.z - gt.z).abs(),
        scale: (0..3).map(|i| (sp[i] - sg[i]).abs()).sum(),
        latent,
    }
}

/// Self-supervised objective: the supervised part plus weighted
/// silhouette and geometric terms computed from the rendered pair and
/// the observed pair.
pub fn self_total(
    supervised_part: &LossBreakdown,
    rendered_mask: &SoftMask,
    observed_mask: &Mask,
    rendered_cloud: &PointCloud,
    observed_cloud: &PointCloud,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let mask = mask_loss(rendered_mask, observed_mask)?;
    let geom = geom_loss(rendered_cloud, observed_cloud)?;
    Ok(LossBreakdown {
        total: supervised_part.total + weights.lambda_mask * mask + weights.lambda_geom * geom,
        mask,
        geom,
        weights,
        ..*supervised_part
    })
}

/// Central-difference gradient `(f(p + h e_i) - f(p - h e_i)) / 2h`.
///
/// Errors when an evaluation is non-finite, naming the coordinate.
pub fn finite_diff_grad(
    f: impl Fn(&[f64]) -> f64,
    params: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::domain(format!("finite-difference step {h} must be positive")));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let fp = f(&probe);
        probe[i] = params[i] - h;
        let fm = f(&probe);
        probe[i] = params[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::domain(format!(
                "non-finite loss while probing coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}
