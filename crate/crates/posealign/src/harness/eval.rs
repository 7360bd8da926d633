//! Scoring pipeline: pairs a dataset's ground truth with a prediction
//! set, decodes shapes through the class bank, and reports average
//! precision under the box-overlap, pose-accuracy, and shape-distance
//! criteria, with threshold sweep curves alongside the headline numbers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::Scale3;
use crate::harness::bank::ClassBank;
use crate::harness::config::EvalConfig;
use crate::harness::dataset::{write_json, DatasetIndex, PredictionSet, SCHEMA_VERSION};
use crate::harness::io::write_curve_csv;
use crate::metrics::{
    mean_average_precision, threshold_sweep, Criterion, DetectionRecord, GroundTruthRecord, MeanAp,
};
use crate::shapespace::LatentCode;

/// Sweep curves as `(threshold, mean AP)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurves {
    /// Box overlap, thresholds in IoU.
    pub iou: Vec<(f64, f64)>,
    /// Combined rotation/translation rule, threshold `n` meaning
    /// `n` degrees and `n` centimeters.
    pub pose_deg_cm: Vec<(f64, f64)>,
    /// Shape distance as a fraction of the object diameter.
    pub app: Vec<(f64, f64)>,
}

/// Full scoring output for one prediction set against one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub iou_25: MeanAp,
    pub iou_50: MeanAp,
    pub pose_5deg_5cm: MeanAp,
    pub pose_10deg_10cm: MeanAp,
    pub app_020: MeanAp,
    pub app_050: MeanAp,
    pub sweeps: SweepCurves,
}

impl EvalReport {
    /// Writes `report.json` plus one CSV per sweep curve into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        write_curve_csv(&dir.join("curve_iou.csv"), &self.sweeps.iou)?;
        write_curve_csv(&dir.join("curve_pose.csv"), &self.sweeps.pose_deg_cm)?;
        write_curve_csv(&dir.join("curve_app.csv"), &self.sweeps.app)?;
        Ok(())
    }
}

/// Expands a dataset index and a prediction set into scoring records,
/// decoding each latent code to its canonical model cloud and attaching
/// class symmetry from the bank. The frame index is the image id.
pub fn records_from(
    index: &DatasetIndex,
    bank: &ClassBank,
    preds: &PredictionSet,
) -> Result<(Vec<DetectionRecord>, Vec<GroundTruthRecord>)> {
    let mut gts = Vec::new();
    for (fi, frame) in index.frames.iter().enumerate() {
        for obj in &frame.objects {
            let entry = bank.get(&obj.class_id)?;
            let cloud = entry.decoder.decode(&LatentCode::new(obj.latent.clone())?)?;
            gts.push(GroundTruthRecord::new(
                fi,
                &obj.class_id,
                obj.pose.to_pose()?,
                Scale3::try_from(obj.scale)?,
                cloud,
                entry.symmetry,
            )?);
        }
    }
    let mut dets = Vec::new();
    for p in &preds.predictions {
        let entry = bank.get(&p.class_id)?;
        let cloud = entry.decoder.decode(&p.latent_code()?)?;
        dets.push(DetectionRecord::new(
            p.frame,
            &p.class_id,
            p.confidence,
            p.pose()?,
            p.scale3()?,
            cloud,
        )?);
    }
    Ok((dets, gts))
}

/// Scores detections against ground truth: six headline AP tables and
/// the three sweep curves from the config.
pub fn evaluate(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    Ok(EvalReport {
        version: SCHEMA_VERSION.to_string(),
        iou_25: mean_average_precision(dets, gts, Criterion::Iou3d, 0.25)?,
        iou_50: mean_average_precision(dets, gts, Criterion::Iou3d, 0.50)?,
        pose_5deg_5cm: mean_average_precision(dets, gts, Criterion::PoseDegCm, 5.0)?,
        pose_10deg_10cm: mean_average_precision(dets, gts, Criterion::PoseDegCm, 10.0)?,
        app_020: mean_average_precision(dets, gts, Criterion::App, 0.2)?,
        app_050: mean_average_precision(dets, gts, Criterion::App, 0.5)?,
        sweeps: SweepCurves {
            iou: threshold_sweep(dets, gts, Criterion::Iou3d, &cfg.iou_sweep)?,
            pose_deg_cm: threshold_sweep(dets, gts, Criterion::PoseDegCm, &cfg.pose_sweep)?,
            app: threshold_sweep(dets, gts, Criterion::App, &cfg.app_sweep)?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::CameraIntrinsics;
    use crate::harness::config::GenerateConfig;
    use crate::harness::scene::{gt_predictions, generate_dataset, sample_scene_specs};
    use tempfile::tempdir;

    fn small_dataset() -> (tempfile::TempDir, DatasetIndex, ClassBank) {
        let bank = ClassBank::builtin().unwrap();
        let cfg = GenerateConfig {
            frames: 2,
            width: 128,
            height: 96,
            focal: 120.0,
            noise_sigma: 0.0,
            dropout: 0.0,
            ..GenerateConfig::default()
        };
        let specs = sample_scene_specs(&cfg, &bank).unwrap();
        let dir = tempdir().unwrap();
        let index = generate_dataset(dir.path(), &specs, &bank).unwrap();
        (dir, index, bank)
    }

    #[test]
    fn ground_truth_predictions_score_perfectly() {
        let (_dir, index, bank) = small_dataset();
        let preds = gt_predictions(&index);
        let (dets, gts) = records_from(&index, &bank, &preds).unwrap();
        assert_eq!(dets.len(), gts.len());
        let report = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        for (name, table) in [
            ("iou_25", &report.iou_25),
            ("iou_50", &report.iou_50),
            ("pose_5deg_5cm", &report.pose_5deg_5cm),
            ("pose_10deg_10cm", &report.pose_10deg_10cm),
            ("app_020", &report.app_020),
            ("app_050", &report.app_050),
        ] {
            assert!(
                (table.mean - 1.0).abs() < 1e-12,
                "{name} mean AP {}",
                table.mean
            );
            assert!(table.excluded.is_empty());
        }
        for (t, ap) in report
            .sweeps
            .iou
            .iter()
            .chain(&report.sweeps.pose_deg_cm)
            .chain(&report.sweeps.app)
        {
            assert!((ap - 1.0).abs() < 1e-12, "sweep point ({t}, {ap})");
        }
    }

    #[test]
    fn empty_predictions_score_zero() {
        let (_dir, index, bank) = small_dataset();
        let (dets, gts) =
            records_from(&index, &bank, &PredictionSet::new(Vec::new())).unwrap();
        assert!(dets.is_empty());
        let report = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(report.iou_25.mean, 0.0);
        assert_eq!(report.pose_5deg_5cm.mean, 0.0);
        assert_eq!(report.app_020.mean, 0.0);
    }

    #[test]
    fn predicted_class_missing_from_ground_truth_is_excluded() {
        let (_dir, index, bank) = small_dataset();
        let mut preds = gt_predictions(&index);
        // Relabel one prediction as a class the ground truth lacks.
        let absent = ["bottle", "bowl", "camera", "can", "laptop", "mug"]
            .iter()
            .find(|c| {
                !index
                    .frames
                    .iter()
                    .any(|f| f.objects.iter().any(|o| &o.class_id == *c))
            })
            .map(|c| c.to_string());
        let Some(absent) = absent else {
            // Every class appears; nothing to exclude in this draw.
            return;
        };
        preds.predictions[0].class_id = absent.clone();
        let (dets, gts) = records_from(&index, &bank, &preds).unwrap();
        let report = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(report.iou_25.excluded, vec![absent]);
    }

    #[test]
    fn report_saves_json_and_curves() {
        let (_dir, index, bank) = small_dataset();
        let preds = gt_predictions(&index);
        let (dets, gts) = records_from(&index, &bank, &preds).unwrap();
        let report = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        let out = tempdir().unwrap();
        report.save(out.path()).unwrap();

        let text = std::fs::read_to_string(out.path().join("report.json")).unwrap();
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.version, SCHEMA_VERSION);

        let csv = std::fs::read_to_string(out.path().join("curve_iou.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("threshold,ap"));
        assert_eq!(lines.count(), report.sweeps.iou.len());
        assert!(out.path().join("curve_pose.csv").exists());
        assert!(out.path().join("curve_app.csv").exists());
    }

    #[test]
    fn camera_must_match_the_bank() {
        // records_from fails cleanly when a prediction names an unknown
        // class rather than silently dropping it.
        let (_dir, index, bank) = small_dataset();
        let mut preds = gt_predictions(&index);
        preds.predictions[0].class_id = "chair".to_string();
        let err = records_from(&index, &bank, &preds).unwrap_err();
        assert!(err.to_string().contains("chair"));
        // Intrinsics from the index deserialize into a usable camera.
        let k: CameraIntrinsics = index.frames[0].camera;
        assert!(k.fx > 0.0);
    }
}
