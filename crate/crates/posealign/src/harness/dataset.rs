//! On-disk dataset and prediction schemas: version-tagged JSON with
//! quaternions as `[w, x, y, z]`, translations in meters, scales as
//! metric extents `[w, h, l]`, and latent codes as flat float arrays.
//!
//! Writers emit a stable field order and a trailing newline so that
//! write → read → write is byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Pose6D, Quaternion, Scale3};
use crate::shapespace::LatentCode;
use crate::Vec3;

/// Version tag shared by every JSON artifact this toolkit writes.
pub const SCHEMA_VERSION: &str = "pose-align/1";

fn check_version(version: &str, path: &Path) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::domain(format!(
            "{}: schema version '{version}' (expected '{SCHEMA_VERSION}')",
            path.display()
        )));
    }
    Ok(())
}

/// Serializable pose: quaternion `[w, x, y, z]` plus translation meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(pose: &Pose6D) -> Self {
        let q = pose.rotation();
        let t = pose.translation();
        PoseRecord {
            rotation: [q.w, q.x, q.y, q.z],
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn to_pose(self) -> Result<Pose6D> {
        let [w, x, y, z] = self.rotation;
        let [tx, ty, tz] = self.translation;
        Pose6D::new(Quaternion::new(w, x, y, z), Vec3::new(tx, ty, tz))
    }
}

/// One annotated object instance in a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub class_id: String,
    /// Path of this object's visibility mask, relative to the index file.
    pub mask: String,
    pub pose: PoseRecord,
    pub scale: [f64; 3],
    pub latent: Vec<f64>,
}

/// One generated frame: its depth image and annotated objects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    /// Path of the composite depth PFM, relative to the index file.
    pub depth: String,
    pub camera: CameraIntrinsics,
    pub objects: Vec<GtObject>,
}

/// Top-level dataset index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: String,
    pub frames: Vec<FrameEntry>,
}

impl DatasetIndex {
    pub fn new(frames: Vec<FrameEntry>) -> Self {
        DatasetIndex {
            version: SCHEMA_VERSION.to_string(),
            frames,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads and validates an index: version tag and the existence of
    /// every referenced file.
    pub fn load(path: &Path) -> Result<Self> {
        let index: DatasetIndex = read_json(path)?;
        check_version(&index.version, path)?;
        let base = parent_dir(path);
        for (i, frame) in index.frames.iter().enumerate() {
            let depth = base.join(&frame.depth);
            if !depth.is_file() {
                return Err(Error::domain(format!(
                    "frame {i}: missing depth file {}",
                    depth.display()
                )));
            }
            for obj in &frame.objects {
                let mask = base.join(&obj.mask);
                if !mask.is_file() {
                    return Err(Error::domain(format!(
                        "frame {i}: missing mask file {}",
                        mask.display()
                    )));
                }
            }
        }
        Ok(index)
    }
}

/// Directory containing `path`, for resolving relative references.
pub fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// One predicted object instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Index of the frame this prediction belongs to.
    pub frame: usize,
    pub class_id: String,
    pub confidence: f64,
    pub pose: PoseRecord,
    pub scale: [f64; 3],
    pub latent: Vec<f64>,
    /// Set by refinement commands: names of filter gates that rejected
    /// this detection, empty when it was refined.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filter_reasons: Vec<String>,
}

impl Prediction {
    pub fn pose(&self) -> Result<Pose6D> {
        self.pose.to_pose()
    }

    pub fn scale3(&self) -> Result<Scale3> {
        Scale3::new(self.scale[0], self.scale[1], self.scale[2])
    }

    pub fn latent_code(&self) -> Result<LatentCode> {
        LatentCode::new(self.latent.clone())
    }
}

/// A set of predictions over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub version: String,
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(predictions: Vec<Prediction>) -> Self {
        PredictionSet {
            version: SCHEMA_VERSION.to_string(),
            predictions,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: PredictionSet = read_json(path)?;
        check_version(&set.version, path)?;
        Ok(set)
    }
}

/// Pretty JSON with a trailing newline; stable output for byte-identical
/// round trips.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::domain(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::domain(format!("{}: {e}", path.display())))
}

/// Reads JSON, reporting the path and position on parse errors.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::domain(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::domain(format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}
