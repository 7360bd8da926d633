//! Toolkit configuration: one TOML file, every section optional, every
//! key defaulted, so an empty file (or none at all) is a valid config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::mesh::MeshingConfig;
use crate::refine::{FilterConfig, IcpConfig, OptimizerConfig};

/// Scene generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels (same for x and y); principal point sits
    /// at the image center.
    pub focal: f64,
    /// Gaussian depth noise, meters.
    pub noise_sigma: f64,
    /// Fraction of valid depth pixels dropped to the no-data sentinel.
    pub dropout: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Centroid depth range, meters.
    pub z_min: f64,
    pub z_max: f64,
    /// Metric extent range for sampled objects, meters.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Classes to sample from; empty means every bank class.
    pub classes: Vec<String>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            seed: 7,
            frames: 8,
            width: 640,
            height: 480,
            focal: 572.0,
            noise_sigma: 0.003,
            dropout: 0.02,
            min_objects: 2,
            max_objects: 4,
            z_min: 0.8,
            z_max: 1.8,
            scale_min: 0.12,
            scale_max: 0.30,
            classes: Vec::new(),
        }
    }
}

/// Evaluation sweep grids. Headline report thresholds are fixed; these
/// only steer the CSV curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_sweep: Vec<f64>,
    /// Shared n of the n-degree-n-centimeter rule.
    pub pose_sweep: Vec<f64>,
    pub app_sweep: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_sweep: (1..=19).map(|i| i as f64 * 0.05).collect(),
            pose_sweep: (1..=12).map(|i| i as f64 * 5.0).collect(),
            app_sweep: (1..=10).map(|i| i as f64 * 0.05).collect(),
        }
    }
}

/// Statistical outlier removal settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierConfig {
    pub k: usize,
    pub std_ratio: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        OutlierConfig {
            k: 16,
            std_ratio: 2.0,
        }
    }
}

/// Region growing settings for scene segmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionGrowConfig {
    /// Max depth difference to an accepted neighbor, meters.
    pub depth_tol: f64,
}

impl Default for RegionGrowConfig {
    fn default() -> Self {
        RegionGrowConfig { depth_tol: 0.02 }
    }
}

/// Diagnostics tolerances and fault injection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Absolute tolerance for Chamfer vs the brute-force reference.
    pub chamfer_tol: f64,
    /// Relative tolerance for analytic vs finite-difference gradients.
    pub grad_rel_tol: f64,
    /// Absolute tolerance for exact vs Monte Carlo box IoU.
    pub iou_tol: f64,
    pub mc_samples: usize,
    /// Name of a check to corrupt deliberately (testing the harness).
    pub corrupt: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 11,
            chamfer_tol: 1e-9,
            grad_rel_tol: 1e-4,
            iou_tol: 0.01,
            mc_samples: 200_000,
            corrupt: None,
        }
    }
}

/// Loss weights as a plain config table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub lambda_mask: f64,
    pub lambda_geom: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            lambda_mask: 1.0,
            lambda_geom: 1.0,
        }
    }
}

impl WeightsConfig {
    pub fn to_weights(self) -> Result<LossWeights> {
        LossWeights::new(self.lambda_mask, self.lambda_geom)
    }
}

/// Self-optimizer settings as a config table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub step_size: f64,
    pub steps: usize,
    pub fd_step: f64,
    pub free_rotation: bool,
    pub free_translation: bool,
    pub free_scale: bool,
    pub centroid_anchor: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        OptimizerSection {
            step_size: d.step_size,
            steps: d.steps,
            fd_step: d.fd_step,
            free_rotation: d.free_rotation,
            free_translation: d.free_translation,
            free_scale: d.free_scale,
            centroid_anchor: d.centroid_anchor,
        }
    }
}

/// The full toolkit configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub generate: GenerateConfig,
    pub eval: EvalConfig,
    pub filter: FilterConfig,
    pub icp: IcpConfig,
    pub optimizer: OptimizerSection,
    pub weights: WeightsConfig,
    pub outliers: OutlierConfig,
    pub region_grow: RegionGrowConfig,
    pub gradcheck: GradcheckConfig,
    pub mesh: MeshingConfig,
}

impl ToolkitConfig {
    /// Parses a TOML file; unknown keys are rejected to catch typos.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::domain(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::domain(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Optimizer config assembled from its section plus the weights.
    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        Ok(OptimizerConfig {
            step_size: self.optimizer.step_size,
            steps: self.optimizer.steps,
            fd_step: self.optimizer.fd_step,
            weights: self.weights.to_weights()?,
            free_rotation: self.optimizer.free_rotation,
            free_translation: self.optimizer.free_translation,
            free_scale: self.optimizer.free_scale,
            centroid_anchor: self.optimizer.centroid_anchor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = ToolkitConfig::parse("").unwrap();
        assert_eq!(cfg, ToolkitConfig::default());
        assert_eq!(cfg.icp.max_iterations, 50);
        assert_eq!(cfg.filter.max_distance, 2.5);
        assert_eq!(cfg.outliers.k, 16);
        assert_eq!(cfg.region_grow.depth_tol, 0.02);
    }

    #[test]
    fn partial_sections_override_only_their_keys() {
        let cfg = ToolkitConfig::parse(
            "[generate]\nseed = 99\nframes = 2\n\n[weights]\nlambda_geom = 0.0\n",
        )
        .unwrap();
        assert_eq!(cfg.generate.seed, 99);
        assert_eq!(cfg.generate.frames, 2);
        assert_eq!(cfg.generate.width, 640);
        assert_eq!(cfg.weights.lambda_geom, 0.0);
        assert_eq!(cfg.weights.lambda_mask, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ToolkitConfig::parse("[generate]\nsede = 3\n").is_err());
        assert!(ToolkitConfig::parse("[generat]\nseed = 3\n").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ToolkitConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = ToolkitConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
