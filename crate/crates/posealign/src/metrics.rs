//! Evaluation metrics: average model-point distances (fixed and closest
//! correspondence), the bidirectional predicted-point-set score, exact
//! oriented-box 3D IoU, rotation/translation errors with symmetry
//! handling, and detection average precision.
//!
//! Pose errors quotient by a declared object symmetry: a bottle spun
//! about its upright axis is the same bottle, so rotation error is the
//! minimum over all rotations about that axis, evaluated in closed form
//! rather than by sampling. The same quotient is applied to the
//! prediction's rotation before box IoU.
//!
//! Average precision follows the standard detection protocol: sort by
//! confidence, match each detection greedily one-to-one against unmatched
//! ground truths of the same class in the same image, accumulate
//! precision and recall, and integrate the precision envelope
//! (all-point interpolation).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Pose6D, Quaternion, Scale3};
use crate::Vec3;

/// Tolerance for point-on-plane decisions while clipping boxes.
const CLIP_EPS: f64 = 1e-12;

/// Declared object symmetry, honored by rotation error and box IoU.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Symmetry {
    None,
    /// Continuous rotational symmetry about this object-frame axis.
    Axis([f64; 3]),
}

impl Symmetry {
    /// Unit symmetry axis, if any.
    pub fn axis(&self) -> Result<Option<Vec3>> {
        match self {
            Symmetry::None => Ok(None),
            Symmetry::Axis(a) => {
                let v = Vec3::new(a[0], a[1], a[2]);
                let n = v.norm();
                if !n.is_finite() || n < 1e-12 {
                    return Err(Error::domain("symmetry axis must be a nonzero vector"));
                }
                Ok(Some(v / n))
            }
        }
    }
}

/// One scored prediction: class, confidence, pose, metric extents, and
/// the canonical (unit-extent) model points it decodes to. `image_id`
/// scopes matching — detections only ever match ground truth from the
/// same image.
#[derive(Clone, Debug)]
pub struct DetectionRecord {
    image_id: usize,
    class_id: String,
    confidence: f64,
    pose: Pose6D,
    scale: Scale3,
    cloud: PointCloud,
}

impl DetectionRecord {
    pub fn new(
        image_id: usize,
        class_id: impl Into<String>,
        confidence: f64,
        pose: Pose6D,
        scale: Scale3,
        cloud: PointCloud,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::domain(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(DetectionRecord {
            image_id,
            class_id: class_id.into(),
            confidence,
            pose,
            scale,
            cloud,
        })
    }

    pub fn image_id(&self) -> usize {
        self.image_id
    }

    pub fn class_id(&self) -> &str {
        &self.class_id
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn pose(&self) -> &Pose6D {
        &self.pose
    }

    pub fn scale(&self) -> Scale3 {
        self.scale
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    /// Canonical cloud with metric extents applied.
    pub fn metric_cloud(&self) -> PointCloud {
        self.cloud.map(|p| self.scale.apply(p))
    }
}

/// One annotated object: pose, metric extents, canonical model points,
/// and its symmetry class.
#[derive(Clone, Debug)]
pub struct GroundTruthRecord {
    image_id: usize,
    class_id: String,
    pose: Pose6D,
    scale: Scale3,
    cloud: PointCloud,
    symmetry: Symmetry,
}

impl GroundTruthRecord {
    pub fn new(
        image_id: usize,
        class_id: impl Into<String>,
        pose: Pose6D,
        scale: Scale3,
        cloud: PointCloud,
        symmetry: Symmetry,
    ) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        symmetry.axis()?;
        Ok(GroundTruthRecord {
            image_id,
            class_id: class_id.into(),
            pose,
            scale,
            cloud,
            symmetry,
        })
    }

    pub fn image_id(&self) -> usize {
        self.image_id
    }

    pub fn class_id(&self) -> &str {
        &self.class_id
    }

    pub fn pose(&self) -> &Pose6D {
        &self.pose
    }

    pub fn scale(&self) -> Scale3 {
        self.scale
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn metric_cloud(&self) -> PointCloud {
        self.cloud.map(|p| self.scale.apply(p))
    }
}

/// Average distance between corresponding model points under two poses.
pub fn add_error(pred_pose: &Pose6D, gt_pose: &Pose6D, model: &PointCloud) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sum: f64 = model
        .iter()
        .map(|x| (pred_pose.transform_point(x) - gt_pose.transform_point(x)).norm())
        .sum();
    Ok(sum / model.len() as f64)
}

/// Average distance from each ground-truth-posed model point to the
/// closest prediction-posed model point — indistinguishable-points
/// variant of [`add_error`], never larger than it.
pub fn adi_error(pred_pose: &Pose6D, gt_pose: &Pose6D, model: &PointCloud) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let pred: Vec<Vec3> = model.iter().map(|x| pred_pose.transform_point(x)).collect();
    let sum: f64 = model
        .iter()
        .map(|x2| {
            let g = gt_pose.transform_point(x2);
            pred.iter()
                .map(|p| (p - g).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(sum / model.len() as f64)
}

/// Largest pairwise distance in a cloud.
pub fn diameter(cloud: &PointCloud) -> Result<f64> {
    let pts = cloud.points();
    if pts.len() < 2 {
        return Err(Error::domain("diameter needs at least two points"));
    }
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.max((pts[i] - pts[j]).norm());
        }
    }
    Ok(best)
}

/// Bidirectional predicted-point-set test: passes when the mean
/// closest-point distance from the posed prediction to the posed ground
/// truth stays within `alpha` times the prediction cloud's own diameter,
/// and the reverse direction stays within `alpha` times the ground-truth
/// cloud's diameter. Both clouds are metric; each side is judged against
/// its own extent.
pub fn app_score(
    pred_cloud: &PointCloud,
    gt_cloud: &PointCloud,
    pred_pose: &Pose6D,
    gt_pose: &Pose6D,
    alpha: f64,
) -> Result<bool> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::domain(format!("alpha {alpha} must be positive")));
    }
    if pred_cloud.is_empty() || gt_cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let pred: Vec<Vec3> = pred_cloud
        .iter()
        .map(|x| pred_pose.transform_point(x))
        .collect();
    let gt: Vec<Vec3> = gt_cloud.iter().map(|x| gt_pose.transform_point(x)).collect();
    let mean_closest = |from: &[Vec3], to: &[Vec3]| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    let m1 = mean_closest(&pred, &gt);
    let m2 = mean_closest(&gt, &pred);
    Ok(m1 <= alpha * diameter(pred_cloud)? && m2 <= alpha * diameter(gt_cloud)?)
}

/// Prediction rotation re-aligned to ground truth within the symmetry
/// orbit: the rotation about `axis` is chosen, in closed form, to
/// minimize the angular difference to `gt`.
pub fn symmetry_aligned_rotation(pred: &Quaternion, gt: &Quaternion, axis: &Vec3) -> Quaternion {
    let rel = gt.conjugate().mul(pred);
    let va = rel.x * axis.x + rel.y * axis.y + rel.z * axis.z;
    // Scalar part of rel * rot(axis, phi) is w cos(phi/2) - va sin(phi/2),
    // maximized at phi = 2 atan2(-va, w).
    let phi = 2.0 * (-va).atan2(rel.w);
    match Quaternion::from_axis_angle(axis, phi) {
        Ok(spin) => pred.mul(&spin).canonicalized(),
        Err(_) => *pred,
    }
}

/// Rotation error in degrees and translation error in meters.
///
/// The rotation error quotients by the declared symmetry: for an axis
/// symmetry with relative rotation `(w, v)`, the minimum angle over all
/// spins about the axis is `2 acos sqrt(w^2 + (v . a)^2)`.
pub fn rot_trans_error(
    pred_pose: &Pose6D,
    gt_pose: &Pose6D,
    symmetry: Symmetry,
) -> Result<(f64, f64)> {
    let q = pred_pose.rotation();
    let qb = gt_pose.rotation();
    let rad = match symmetry.axis()? {
        None => q.angle_to(&qb),
        Some(a) => {
            let rel = qb.conjugate().mul(&q);
            let va = rel.x * a.x + rel.y * a.y + rel.z * a.z;
            let m = (rel.w * rel.w + va * va).sqrt().clamp(-1.0, 1.0);
            2.0 * m.acos()
        }
    };
    let trans = (pred_pose.translation() - gt_pose.translation()).norm();
    Ok((rad.to_degrees(), trans))
}

/// Oriented 3D bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    center: Vec3,
    half_extents: Vec3,
    rotation: Quaternion,
}

impl OrientedBox {
    pub fn new(center: Vec3, half_extents: Vec3, rotation: Quaternion) -> Result<Self> {
        if !(center.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite {
                context: "box center",
            });
        }
        if !half_extents.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::domain("box half-extents must be positive"));
        }
        if !rotation.is_unit() {
            return Err(Error::InvalidRotation {
                norm: rotation.norm(),
            });
        }
        Ok(OrientedBox {
            center,
            half_extents,
            rotation: rotation.normalized()?.canonicalized(),
        })
    }

    /// Box of a posed object whose canonical frame spans unit extents:
    /// the metric extents are the scale, centered on the pose.
    pub fn from_pose_scale(pose: &Pose6D, scale: Scale3) -> Result<Self> {
        let s = scale.as_array();
        OrientedBox::new(
            pose.translation(),
            Vec3::new(s[0] / 2.0, s[1] / 2.0, s[2] / 2.0),
            pose.rotation(),
        )
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn half_extents(&self) -> Vec3 {
        self.half_extents
    }

    pub fn rotation(&self) -> Quaternion {
        self.rotation
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    fn corners(&self) -> [Vec3; 8] {
        let r = self.rotation.to_matrix();
        let h = self.half_extents;
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            );
            *c = self.center + r * s;
        }
        out
    }

    /// Faces as convex polygons with outward-consistent winding.
    fn faces(&self) -> Vec<Vec<Vec3>> {
        let c = self.corners();
        [
            [1, 3, 7, 5], // +x
            [0, 4, 6, 2], // -x
            [2, 6, 7, 3], // +y
            [0, 1, 5, 4], // -y
            [4, 5, 7, 6], // +z
            [0, 2, 3, 1], // -z
        ]
        .iter()
        .map(|idx| idx.iter().map(|&i| c[i]).collect())
        .collect()
    }

    /// The six half-spaces `n . x <= d` whose intersection is the box.
    fn halfspaces(&self) -> [(Vec3, f64); 6] {
        let r = self.rotation.to_matrix();
        let mut out = [(Vec3::zeros(), 0.0); 6];
        for k in 0..3 {
            let n = r.column(k).into_owned();
            let h = self.half_extents[k];
            out[2 * k] = (n, n.dot(&self.center) + h);
            out[2 * k + 1] = (-n, -n.dot(&self.center) + h);
        }
        out
    }
}

/// Clip a convex polygon to `n . x <= d`, returning the kept polygon and
/// the points where it meets the plane: proper edge crossings plus any
/// vertex lying on the plane itself. Grazed vertices matter — the cut
/// boundary can pass exactly through a polyhedron vertex (boxes sharing
/// symmetry do this routinely), and a cap built only from edge crossings
/// would miss it.
fn clip_polygon(poly: &[Vec3], n: &Vec3, d: f64) -> (Vec<Vec3>, Vec<Vec3>) {
    let eps = CLIP_EPS * (1.0 + d.abs());
    let mut kept = Vec::with_capacity(poly.len() + 2);
    let mut chord = Vec::new();
    for i in 0..poly.len() {
        let cur = poly[i];
        let nxt = poly[(i + 1) % poly.len()];
        let dc = n.dot(&cur) - d;
        let dn = n.dot(&nxt) - d;
        if dc <= eps {
            kept.push(cur);
            if dc >= -eps {
                chord.push(cur);
            }
        }
        if (dc < -eps && dn > eps) || (dc > eps && dn < -eps) {
            let t = dc / (dc - dn);
            let p = cur + (nxt - cur) * t;
            kept.push(p);
            chord.push(p);
        }
    }
    (kept, chord)
}

/// Clip a convex polyhedron (face list, outward winding) by one
/// half-space, capping the cut with a new face on the plane. A cap is
/// added only when some face actually changed: a plane that merely
/// grazes the surface (tangent contact, identical boxes) must not
/// duplicate the touching face.
fn clip_polyhedron(faces: &[Vec<Vec3>], n: &Vec3, d: f64) -> Vec<Vec<Vec3>> {
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut cap_points: Vec<Vec3> = Vec::new();
    let mut any_cut = false;
    for face in faces {
        let (kept, chord) = clip_polygon(face, n, d);
        if kept != *face {
            any_cut = true;
        }
        if kept.len() >= 3 {
            out.push(kept);
        }
        cap_points.extend(chord);
    }
    if !any_cut {
        return out;
    }
    // Dedupe chord endpoints shared between adjacent faces.
    let mut cap: Vec<Vec3> = Vec::new();
    for p in cap_points {
        if !cap.iter().any(|q| (p - q).norm() < 1e-9) {
            cap.push(p);
        }
    }
    if cap.len() >= 3 {
        let centroid: Vec3 = cap.iter().sum::<Vec3>() / cap.len() as f64;
        // Basis (u, v) with u x v = n, so angle-sorting winds the cap
        // counter-clockwise around +n — outward for the kept side.
        let u = {
            let probe = if n.x.abs() < 0.9 {
                Vec3::new(1.0, 0.0, 0.0)
            } else {
                Vec3::new(0.0, 1.0, 0.0)
            };
            (probe - n * probe.dot(n)).normalize()
        };
        let v = n.cross(&u);
        cap.sort_by(|a, b| {
            let pa = a - centroid;
            let pb = b - centroid;
            pa.dot(&v)
                .atan2(pa.dot(&u))
                .total_cmp(&pb.dot(&v).atan2(pb.dot(&u)))
        });
        out.push(cap);
    }
    out
}

/// Volume of a convex polyhedron with outward-wound faces, via the
/// divergence theorem over a fan triangulation.
fn polyhedron_volume(faces: &[Vec<Vec3>]) -> f64 {
    let mut six_v = 0.0;
    for face in faces {
        for i in 1..face.len() - 1 {
            six_v += face[0].cross(&face[i]).dot(&face[i + 1]);
        }
    }
    six_v / 6.0
}

/// Exact intersection-over-union of two oriented boxes: box `a` is
/// clipped by each of `b`'s six half-spaces and the remaining volume is
/// measured analytically.
pub fn iou3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let mut faces = a.faces();
    for (n, d) in b.halfspaces() {
        faces = clip_polyhedron(&faces, &n, d);
        if faces.is_empty() {
            return 0.0;
        }
    }
    let inter = polyhedron_volume(&faces).max(0.0);
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Pass-fail (or score) rule for detection-to-ground-truth matching.
///
/// The `threshold` argument of [`average_precision`] is interpreted per
/// variant: minimum IoU for `Iou3d`, maximum degrees for `RotationDeg`,
/// maximum centimeters for `TranslationCm`, the shared bound `n` of the
/// n-degree-n-centimeter rule for `PoseDegCm`, and the diameter fraction
/// `alpha` for `App`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Iou3d,
    RotationDeg,
    TranslationCm,
    PoseDegCm,
    App,
}

/// Precision-recall curve with its all-point-interpolated area.
///
/// `points` are the accumulation states in confidence order: recall is
/// non-decreasing, precision stays in `[0, 1]`, and `ap` integrates the
/// precision envelope over recall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// IoU between a detection and a ground truth, with the detection's
/// rotation quotiented by the ground truth's symmetry first.
fn detection_iou(det: &DetectionRecord, gt: &GroundTruthRecord) -> Result<f64> {
    let pred_rot = match gt.symmetry.axis()? {
        None => det.pose.rotation(),
        Some(a) => symmetry_aligned_rotation(&det.pose.rotation(), &gt.pose.rotation(), &a),
    };
    let pred_pose = Pose6D::new(pred_rot, det.pose.translation())?;
    let pb = OrientedBox::from_pose_scale(&pred_pose, det.scale)?;
    let gb = OrientedBox::from_pose_scale(&gt.pose, gt.scale)?;
    Ok(iou3d(&pb, &gb))
}

fn criterion_passes(
    det: &DetectionRecord,
    gt: &GroundTruthRecord,
    criterion: Criterion,
    threshold: f64,
) -> Result<bool> {
    match criterion {
        Criterion::Iou3d => Ok(detection_iou(det, gt)? >= threshold),
        Criterion::RotationDeg => {
            let (deg, _) = rot_trans_error(&det.pose, &gt.pose, gt.symmetry)?;
            Ok(deg <= threshold)
        }
        Criterion::TranslationCm => {
            let (_, m) = rot_trans_error(&det.pose, &gt.pose, gt.symmetry)?;
            Ok(m * 100.0 <= threshold)
        }
        Criterion::PoseDegCm => {
            let (deg, m) = rot_trans_error(&det.pose, &gt.pose, gt.symmetry)?;
            Ok(deg <= threshold && m * 100.0 <= threshold)
        }
        Criterion::App => app_score(
            &det.metric_cloud(),
            &gt.metric_cloud(),
            &det.pose,
            &gt.pose,
            threshold,
        ),
    }
}

fn validate_threshold(criterion: Criterion, threshold: f64) -> Result<()> {
    if !threshold.is_finite() {
        return Err(Error::NonFinite {
            context: "matching threshold",
        });
    }
    match criterion {
        Criterion::Iou3d if !(0.0..=1.0).contains(&threshold) => Err(Error::domain(format!(
            "IoU threshold {threshold} outside [0, 1]"
        ))),
        Criterion::App if threshold <= 0.0 => {
            Err(Error::domain(format!("alpha {threshold} must be positive")))
        }
        _ => Ok(()),
    }
}

/// Detection average precision over one pool of records.
///
/// Detections are visited in descending confidence (ties keep input
/// order) and matched one-to-one against unmatched ground truths of the
/// same class in the same image. Under `Iou3d` a detection claims the
/// candidate with the highest IoU and counts as a true positive when
/// that IoU reaches the threshold; under the pass-fail criteria it
/// claims the first candidate (in ground-truth input order) that passes.
/// Requires at least one ground truth: recall is undefined otherwise —
/// use [`mean_average_precision`] to skip and record empty classes.
pub fn average_precision(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    criterion: Criterion,
    threshold: f64,
) -> Result<PRCurve> {
    validate_threshold(criterion, threshold)?;
    if gts.is_empty() {
        return Err(Error::domain(
            "average precision needs at least one ground truth",
        ));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));

    let mut matched = vec![false; gts.len()];
    let mut points = Vec::with_capacity(dets.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &di in &order {
        let det = &dets[di];
        let candidates = gts.iter().enumerate().filter(|(gi, gt)| {
            !matched[*gi] && gt.class_id == det.class_id && gt.image_id == det.image_id
        });
        let hit = match criterion {
            Criterion::Iou3d => {
                let mut best: Option<(f64, usize)> = None;
                for (gi, gt) in candidates {
                    let iou = detection_iou(det, gt)?;
                    if best.is_none_or(|(bi, _)| iou > bi) {
                        best = Some((iou, gi));
                    }
                }
                match best {
                    Some((iou, gi)) if iou >= threshold => Some(gi),
                    _ => None,
                }
            }
            _ => {
                let mut found = None;
                for (gi, gt) in candidates {
                    if criterion_passes(det, gt, criterion, threshold)? {
                        found = Some(gi);
                        break;
                    }
                }
                found
            }
        };
        match hit {
            Some(gi) => {
                matched[gi] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        points.push((
            tp as f64 / gts.len() as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }

    // All-point interpolation: integrate the precision envelope (the
    // best precision at any recall at least as large).
    let mut ap = 0.0;
    let mut envelope = 0.0;
    let mut next_recall = 1.0;
    for &(r, p) in points.iter().rev() {
        if r < next_recall {
            // Recall drops here walking backward: everything at higher
            // recall is integrated with the envelope seen so far.
            ap += (next_recall - r) * envelope;
            next_recall = r;
        }
        envelope = envelope.max(p);
    }
    ap += next_recall * envelope;
    Ok(PRCurve { points, ap })
}

/// Per-class average precision and the mean over classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub per_class: BTreeMap<String, PRCurve>,
    pub mean: f64,
    /// Classes that had detections but no ground truth — excluded from
    /// the mean rather than treated as all-false-positive.
    pub excluded: Vec<String>,
}

/// Average precision per class, averaged over every class that has at
/// least one ground truth. Classes with detections but no ground truth
/// are recorded in `excluded`.
pub fn mean_average_precision(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    criterion: Criterion,
    threshold: f64,
) -> Result<MeanAp> {
    validate_threshold(criterion, threshold)?;
    let mut classes: Vec<String> = gts.iter().map(|g| g.class_id.clone()).collect();
    classes.sort();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::domain("no ground truths in any class"));
    }
    let mut per_class = BTreeMap::new();
    for class in &classes {
        let class_dets: Vec<DetectionRecord> = dets
            .iter()
            .filter(|d| &d.class_id == class)
            .cloned()
            .collect();
        let class_gts: Vec<GroundTruthRecord> = gts
            .iter()
            .filter(|g| &g.class_id == class)
            .cloned()
            .collect();
        per_class.insert(
            class.clone(),
            average_precision(&class_dets, &class_gts, criterion, threshold)?,
        );
    }
    let mut excluded: Vec<String> = dets
        .iter()
        .filter(|d| !classes.contains(&d.class_id))
        .map(|d| d.class_id.clone())
        .collect();
    excluded.sort();
    excluded.dedup();
    let mean = per_class.values().map(|c| c.ap).sum::<f64>() / per_class.len() as f64;
    Ok(MeanAp {
        per_class,
        mean,
        excluded,
    })
}

/// Mean AP at each threshold of a non-decreasing grid.
pub fn threshold_sweep(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    criterion: Criterion,
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("threshold grid must be non-decreasing"));
    }
    thresholds
        .iter()
        .map(|&t| Ok((t, mean_average_precision(dets, gts, criterion, t)?.mean)))
        .collect()
}
