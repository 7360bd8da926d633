//! End-to-end refinement flows over a generated dataset: the
//! correspondence-based and render-and-compare passes that the command
//! line tools expose. Detections are processed in parallel and merged
//! back in input order, so results do not depend on the thread count.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{backproject_depth, egocentric_to_allocentric};
use crate::Vec3;
use crate::harness::bank::ClassBank;
use crate::harness::config::ToolkitConfig;
use crate::harness::dataset::{DatasetIndex, PoseRecord, Prediction, PredictionSet};
use crate::harness::io::read_pfm;
use crate::losses::PredictionParams;
use crate::mesh::triangulate_uv_grid;
use crate::refine::{
    filter_detection, icp_refine, region_grow_centroid, remove_outliers, self_optimize,
    FilterDecision,
};
use crate::render::{depth_coverage, rasterize, DepthMap, Mask};

/// One detection's objective trajectory, labeled by its index in the
/// prediction file.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveTrace {
    pub detection: usize,
    pub objective: Vec<f64>,
}

fn load_depths(root: &Path, index: &DatasetIndex) -> Result<Vec<DepthMap>> {
    index
        .frames
        .iter()
        .map(|f| read_pfm(&root.join(&f.depth)))
        .collect()
}

fn frame_of<'a>(index: &'a DatasetIndex, p: &Prediction) -> Result<&'a crate::harness::dataset::FrameEntry> {
    index.frames.get(p.frame).ok_or_else(|| {
        Error::domain(format!(
            "prediction references frame {} but the dataset has {}",
            p.frame,
            index.frames.len()
        ))
    })
}

/// Renders the prediction's silhouette and gates it: confidence,
/// scene-depth coverage of the silhouette, and camera distance.
fn gate(
    p: &Prediction,
    mask: &Mask,
    depth: &DepthMap,
    cfg: &ToolkitConfig,
) -> Result<FilterDecision> {
    let coverage = if mask.count() == 0 {
        0.0
    } else {
        depth_coverage(depth, mask)?
    };
    let distance = p.pose()?.translation().norm();
    Ok(filter_detection(p.confidence, coverage, distance, &cfg.filter))
}

/// Rasterizes the prediction's own depth and silhouette.
fn rendered_view(
    p: &Prediction,
    bank: &ClassBank,
    k: &crate::geom::CameraIntrinsics,
) -> Result<(DepthMap, Mask)> {
    let entry = bank.get(&p.class_id)?;
    let canonical = entry.decoder.decode(&p.latent_code()?)?;
    let scale = p.scale3()?;
    let scaled = canonical.map(|q| scale.apply(q));
    let mesh = triangulate_uv_grid(&scaled, &entry.decoder.grid())?;
    rasterize(&mesh, &p.pose()?, k)
}

/// Correspondence-based pose refinement of every accepted detection.
///
/// The model cloud is the *visible* predicted surface — the prediction's
/// rendered depth back-projected and carried to the object frame — and
/// the scene cloud is the observed depth over the same outlier-cleaned
/// pixels of the predicted silhouette. Matching visible samples against
/// visible samples keeps the far side of the model from dragging the
/// alignment, and an already-exact prediction is a fixed point because
/// the two clouds then coincide pixel for pixel. Rejected detections
/// pass through unchanged with their gate names recorded; so do
/// detections whose silhouette finds no scene points to match.
pub fn icp_refine_set(
    root: &Path,
    index: &DatasetIndex,
    preds: &PredictionSet,
    bank: &ClassBank,
    cfg: &ToolkitConfig,
) -> Result<PredictionSet> {
    let depths = load_depths(root, index)?;
    let predictions = preds
        .predictions
        .par_iter()
        .map(|p| -> Result<Prediction> {
            let frame = frame_of(index, p)?;
            let depth = &depths[p.frame];
            let k = &frame.camera;
            let (pred_depth, pred_mask) = rendered_view(p, bank, k)?;
            let decision = gate(p, &pred_mask, depth, cfg)?;
            if !decision.accepted {
                return Ok(Prediction {
                    filter_reasons: decision.reasons.iter().map(|r| r.label().into()).collect(),
                    ..p.clone()
                });
            }
            let inliers = match inlier_mask(depth, &pred_mask, k, cfg.outliers.k, cfg.outliers.std_ratio)
            {
                Ok(m) => m,
                Err(_) => {
                    return Ok(Prediction {
                        filter_reasons: vec!["no_correspondences".into()],
                        ..p.clone()
                    })
                }
            };
            let scene = backproject_depth(depth, &inliers, k)?;
            let pose = p.pose()?;
            let inverse = pose.inverse();
            let model = backproject_depth(&pred_depth, &inliers, k)?
                .map(|q| inverse.transform_point(q));
            let result = icp_refine(&model, &scene, &pose, &cfg.icp)?;
            if result.no_correspondences {
                return Ok(Prediction {
                    filter_reasons: vec!["no_correspondences".into()],
                    ..p.clone()
                });
            }
            Ok(Prediction {
                pose: PoseRecord::from_pose(&result.pose),
                ..p.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet::new(predictions))
}

/// Rebuilds a mask containing only the pixels whose back-projected
/// points survived outlier removal. Relies on kept points being an
/// in-order subsequence of the original cloud.
fn inlier_mask(
    depth: &DepthMap,
    grown: &Mask,
    k: &crate::geom::CameraIntrinsics,
    neighbors: usize,
    std_ratio: f64,
) -> Result<Mask> {
    let mut pixels = Vec::new();
    let mut points = Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if !grown.get(x, y) {
                continue;
            }
            let Some(z) = depth.get(x, y) else { continue };
            pixels.push((x, y));
            points.push(Vec3::new(
                z * (x as f64 + 0.5 - k.cx) / k.fx,
                z * (y as f64 + 0.5 - k.cy) / k.fy,
                z,
            ));
        }
    }
    if points.is_empty() {
        return Err(Error::domain("grown region has no valid depth"));
    }
    let cleaned = remove_outliers(&crate::geom::PointCloud::new(points.clone())?, neighbors, std_ratio)?;
    let mut mask = Mask::new(depth.width(), depth.height());
    let mut kept = cleaned.cloud.points().iter();
    let mut next = kept.next();
    for (pixel, original) in pixels.iter().zip(&points) {
        if next == Some(original) {
            mask.set(pixel.0, pixel.1, true);
            next = kept.next();
        }
    }
    Ok(mask)
}

/// Render-and-compare refinement of every accepted detection. The
/// observed region is grown from the projected centroid over the scene
/// depth, cleaned of stray points, and handed to the optimizer; one
/// objective trace per refined detection comes back alongside the new
/// predictions. Detections that fail the gates — or whose centroid
/// pixel carries no usable depth — pass through flagged.
pub fn self_optimize_set(
    root: &Path,
    index: &DatasetIndex,
    preds: &PredictionSet,
    bank: &ClassBank,
    cfg: &ToolkitConfig,
) -> Result<(PredictionSet, Vec<ObjectiveTrace>)> {
    let depths = load_depths(root, index)?;
    let optimizer = cfg.optimizer_config()?;
    let outcomes = preds
        .predictions
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<(Prediction, Option<ObjectiveTrace>)> {
            let frame = frame_of(index, p)?;
            let depth = &depths[p.frame];
            let k = &frame.camera;
            let (_, mask) = rendered_view(p, bank, k)?;
            let decision = gate(p, &mask, depth, cfg)?;
            if !decision.accepted {
                let flagged = Prediction {
                    filter_reasons: decision.reasons.iter().map(|r| r.label().into()).collect(),
                    ..p.clone()
                };
                return Ok((flagged, None));
            }
            let pose = p.pose()?;
            let centroid = k.project(&pose.translation())?;
            let seed = (centroid[0].round() as i64, centroid[1].round() as i64);
            if seed.0 < 0
                || seed.1 < 0
                || seed.0 >= depth.width() as i64
                || seed.1 >= depth.height() as i64
            {
                let flagged = Prediction {
                    filter_reasons: vec!["seed_outside_image".into()],
                    ..p.clone()
                };
                return Ok((flagged, None));
            }
            let seed = (seed.0 as usize, seed.1 as usize);
            let grown = match region_grow_centroid(depth, seed, cfg.region_grow.depth_tol) {
                Ok(m) => m,
                Err(_) => {
                    let flagged = Prediction {
                        filter_reasons: vec!["seed_depth".into()],
                        ..p.clone()
                    };
                    return Ok((flagged, None));
                }
            };
            let observed = inlier_mask(depth, &grown, k, cfg.outliers.k, cfg.outliers.std_ratio)?;
            let allocentric = egocentric_to_allocentric(&pose.rotation(), centroid[0], centroid[1], k)?;
            let params = PredictionParams::new(
                allocentric,
                centroid,
                pose.translation().z,
                p.scale3()?,
                p.latent_code()?,
            )?;
            let entry = bank.get(&p.class_id)?;
            let outcome = self_optimize((depth, &observed), &params, &entry.decoder, k, &optimizer)?;
            let refined_pose = outcome.params.egocentric_pose(k)?;
            let refined = Prediction {
                pose: PoseRecord::from_pose(&refined_pose),
                scale: outcome.params.scale().as_array(),
                ..p.clone()
            };
            let trace = ObjectiveTrace {
                detection: i,
                objective: outcome.trace,
            };
            Ok((refined, Some(trace)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut predictions = Vec::with_capacity(outcomes.len());
    let mut traces = Vec::new();
    for (p, t) in outcomes {
        predictions.push(p);
        traces.extend(t);
    }
    Ok((PredictionSet::new(predictions), traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::GenerateConfig;
    use crate::harness::eval::{evaluate, records_from};
    use crate::harness::scene::{generate_dataset, gt_predictions, perturb_predictions, sample_scene_specs};
    use crate::metrics::rot_trans_error;
    use tempfile::tempdir;

    fn build_dataset(
        frames: usize,
        noise: f64,
        max_objects: usize,
    ) -> (tempfile::TempDir, DatasetIndex, ClassBank, PredictionSet) {
        let bank = ClassBank::builtin().unwrap();
        let gen = GenerateConfig {
            seed: 19,
            frames,
            width: 160,
            height: 120,
            focal: 140.0,
            noise_sigma: noise,
            dropout: 0.0,
            min_objects: 1,
            max_objects,
            z_min: 0.7,
            z_max: 1.2,
            ..GenerateConfig::default()
        };
        let specs = sample_scene_specs(&gen, &bank).unwrap();
        let dir = tempdir().unwrap();
        let index = generate_dataset(dir.path(), &specs, &bank).unwrap();
        let preds = gt_predictions(&index);
        (dir, index, bank, preds)
    }

    #[test]
    fn icp_improves_perturbed_predictions() {
        let (dir, index, bank, gt) = build_dataset(3, 0.0, 2);
        let cfg = ToolkitConfig::default();
        let noisy = perturb_predictions(&gt, 23, 4.0, 0.015).unwrap();
        let refined = icp_refine_set(dir.path(), &index, &noisy, &bank, &cfg).unwrap();
        assert_eq!(refined.predictions.len(), noisy.predictions.len());

        let (_, gts) = records_from(&index, &bank, &gt).unwrap();
        let score = |set: &PredictionSet| {
            let (dets, _) = records_from(&index, &bank, set).unwrap();
            evaluate(&dets, &gts, &Default::default()).unwrap().pose_10deg_10cm.mean
        };
        let before = score(&noisy);
        let after = score(&refined);
        assert!(
            after >= before,
            "pose AP degraded from {before} to {after} after refinement"
        );
        assert!(after > 0.99, "refined AP only reached {after}");
    }

    #[test]
    fn icp_leaves_exact_predictions_unchanged() {
        let (dir, index, bank, gt) = build_dataset(2, 0.0, 1);
        let cfg = ToolkitConfig::default();
        let refined = icp_refine_set(dir.path(), &index, &gt, &bank, &cfg).unwrap();
        for (orig, new) in gt.predictions.iter().zip(&refined.predictions) {
            let a = orig.pose.to_pose().unwrap();
            let b = new.pose.to_pose().unwrap();
            let (rot_deg, trans) = rot_trans_error(&a, &b, crate::metrics::Symmetry::None).unwrap();
            assert!(rot_deg < 1e-4, "rotation moved by {rot_deg} degrees");
            assert!(trans < 1e-6, "translation moved by {trans}");
        }
    }

    #[test]
    fn far_detection_passes_through_with_distance_flag() {
        let (dir, index, bank, gt) = build_dataset(1, 0.0, 1);
        let cfg = ToolkitConfig::default();
        let mut far = gt.clone();
        // Push the first detection to 3 m, past the distance gate.
        let t = far.predictions[0].pose.translation;
        let norm = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        far.predictions[0].pose.translation = [
            t[0] / norm * 3.0,
            t[1] / norm * 3.0,
            t[2] / norm * 3.0,
        ];
        let refined = icp_refine_set(dir.path(), &index, &far, &bank, &cfg).unwrap();
        let flagged = &refined.predictions[0];
        assert!(flagged.filter_reasons.iter().any(|r| r == "distance"));
        assert_eq!(flagged.pose, far.predictions[0].pose, "pose must pass through");
    }

    #[test]
    fn self_optimization_improves_pose_errors_and_traces_decrease() {
        let (dir, index, bank, gt) = build_dataset(3, 0.0, 2);
        let cfg = ToolkitConfig::default();
        let noisy = perturb_predictions(&gt, 31, 6.0, 0.02).unwrap();
        let (refined, traces) =
            self_optimize_set(dir.path(), &index, &noisy, &bank, &cfg).unwrap();

        let errors = |set: &PredictionSet| -> (f64, f64) {
            let mut rot = 0.0;
            let mut trans = 0.0;
            for (p, g) in set.predictions.iter().zip(&gt.predictions) {
                let (r, t) = rot_trans_error(
                    &p.pose.to_pose().unwrap(),
                    &g.pose.to_pose().unwrap(),
                    crate::metrics::Symmetry::None,
                )
                .unwrap();
                rot += r;
                trans += t;
            }
            let n = set.predictions.len() as f64;
            (rot / n, trans / n)
        };
        let (rot_before, trans_before) = errors(&noisy);
        let (rot_after, trans_after) = errors(&refined);
        assert!(
            rot_after < rot_before,
            "mean rotation error {rot_before} -> {rot_after}"
        );
        assert!(
            trans_after < trans_before,
            "mean translation error {trans_before} -> {trans_after}"
        );

        assert!(!traces.is_empty());
        for trace in &traces {
            for pair in trace.objective.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "trace increased: {pair:?}");
            }
        }
    }

    #[test]
    fn low_confidence_detection_is_flagged_not_refined() {
        let (dir, index, bank, gt) = build_dataset(1, 0.0, 1);
        let cfg = ToolkitConfig::default();
        let mut weak = gt.clone();
        weak.predictions[0].confidence = 0.2;
        let (refined, traces) =
            self_optimize_set(dir.path(), &index, &weak, &bank, &cfg).unwrap();
        assert_eq!(refined.predictions[0].filter_reasons, vec!["confidence"]);
        assert_eq!(refined.predictions[0].pose, weak.predictions[0].pose);
        assert!(traces.iter().all(|t| t.detection != 0));
    }
}
