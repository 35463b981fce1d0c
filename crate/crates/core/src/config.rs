//! The single JSON configuration consumed by the CLI and the test harness.
//!
//! Unknown keys are rejected. Every field has a default, so `{}` is a valid
//! config file; the schema below documents the semantics.

use serde::{Deserialize, Serialize};

use crate::backbone::BodyBackboneConfig;
use crate::train::LossWeights;

/// Camera and image-plane conventions of the synthetic universe. The world
/// frame is the camera frame: x right, y up, z away from the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub image_w: f64,
    pub image_h: f64,
    pub focal: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            image_w: 256.0,
            image_h: 192.0,
            focal: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub train_scenes: usize,
    pub heldout_scenes: usize,
    /// Mixture over (full_body, interacting_hands, single_hand).
    pub kind_mixture: [f64; 3],
    /// Per-hand detection miss probability for full-body scenes.
    pub miss_rate: f64,
    /// Hand bounding-box padding fraction around the projected keypoints.
    pub box_padding: f64,
    /// Per-cell token noise.
    pub token_noise: f64,
    /// Gain on the wrist payload channels of the body stream — the "limited
    /// hand diversity" of whole-body training inputs.
    pub body_wrist_gain: f64,
    /// Per-sample axis-angle noise baked into the body stream's wrist
    /// payload. This makes the supervision gap structural: no amount of
    /// body-side training can recover the wrist orientation below this
    /// floor, while the hand stream carries it cleanly.
    pub body_wrist_noise: f64,
    /// Noise on the hand stream's camera-frame wrist payload.
    pub hand_wrist_noise: f64,
    /// Pose sampling spreads (radians).
    pub root_spread: f64,
    pub arm_spread: f64,
    pub wrist_spread: f64,
    pub minor_joint_spread: f64,
    /// Shape sampling spreads.
    pub body_shape_spread: f64,
    pub hand_shape_spread: f64,
    pub hand_latent_spread: f64,
    pub camera: CameraConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            train_scenes: 2000,
            heldout_scenes: 400,
            kind_mixture: [0.4, 0.4, 0.2],
            miss_rate: 0.1,
            box_padding: 0.2,
            token_noise: 0.02,
            body_wrist_gain: 0.25,
            body_wrist_noise: 0.25,
            hand_wrist_noise: 0.03,
            root_spread: 0.12,
            arm_spread: 0.3,
            wrist_spread: 0.5,
            minor_joint_spread: 0.05,
            body_shape_spread: 0.5,
            hand_shape_spread: 0.7,
            hand_latent_spread: 0.6,
            camera: CameraConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Axis-angle noise applied once per sample to the wrist labels.
    pub wrist_label_noise: f64,
    /// Pretraining loss weights: the rotation and shape terms are rescaled
    /// so their gradients keep up with the millimeter-scale keypoint term
    /// under plain gradient descent.
    pub pose_weight: f64,
    pub shape_weight: f64,
    pub keypoint_weight: f64,
    /// Held-out full-body MPVPE the pretrained backbone must reach (mm).
    pub body_mpvpe_threshold: f64,
    /// Held-out wrist geodesic error that must remain (radians) — the gap.
    pub wrist_gap_threshold: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 1600,
            batch_size: 16,
            learning_rate: 2e-3,
            wrist_label_noise: 0.3,
            pose_weight: 600.0,
            shape_weight: 100.0,
            keypoint_weight: 1.0,
            body_mpvpe_threshold: 150.0,
            wrist_gap_threshold: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChamTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning-rate decay factor applied at 3/4 of the epochs.
    pub decay: f64,
    /// Checkpoint cadence in steps; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub weights: LossWeights,
}

impl Default for ChamTrainConfig {
    fn default() -> Self {
        ChamTrainConfig {
            epochs: 4,
            batch_size: 32,
            learning_rate: 1e-4,
            decay: 0.1,
            checkpoint_every: 0,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfigFile {
    pub lambda: f64,
    pub iters: usize,
    pub band: usize,
}

impl Default for SmoothingConfigFile {
    fn default() -> Self {
        SmoothingConfigFile {
            lambda: 0.5,
            iters: 5,
            band: 1,
        }
    }
}

impl From<SmoothingConfigFile> for crate::transfer::SmoothingConfig {
    fn from(c: SmoothingConfigFile) -> Self {
        crate::transfer::SmoothingConfig {
            lambda: c.lambda,
            iters: c.iters,
            band: c.band,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub model_seed: u64,
    pub backbone_seed: u64,
    pub hand_backbone_seed: u64,
    pub cham_seed: u64,
    pub backbone: BodyBackboneConfig,
    pub generate: GenerateConfig,
    pub pretrain: PretrainConfig,
    pub train: ChamTrainConfig,
    pub smoothing: SmoothingConfigFile,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model_seed: 7,
            backbone_seed: 11,
            hand_backbone_seed: 13,
            cham_seed: 17,
            backbone: BodyBackboneConfig::default(),
            generate: GenerateConfig::default(),
            pretrain: PretrainConfig::default(),
            train: ChamTrainConfig::default(),
            smoothing: SmoothingConfigFile::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, crate::data::DataError> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| crate::data::DataError::ConfigError(e.to_string()))
    }

    pub fn camera(&self) -> crate::model::Camera {
        let c = &self.generate.camera;
        crate::model::Camera::new(c.focal, c.focal, c.image_w / 2.0, c.image_h / 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<PipelineConfig>("{\"bogus\": 1}").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = serde_json::from_str::<PipelineConfig>("{\"generate\": {\"typo_field\": 2}}")
            .unwrap_err();
        assert!(err.to_string().contains("typo_field"));
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
