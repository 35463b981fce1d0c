//! The CHAM training loop: mini-batch gradient descent over the mixed-kind
//! train split with frozen backbones, learning rate decayed at 3/4 of the
//! epochs, JSONL logging, and frozen-hash verification before and after.

use serde::Serialize;
use std::io::Write;
use std::path::Path;

use crate::backbone::content_hash;
use crate::cham::ChamParams;
use crate::config::PipelineConfig;
use crate::data::Dataset;
use crate::rng;

use super::grad::{total_loss_with_grads, PipelineBundle};
use super::TrainError;

#[derive(Debug, Clone, Serialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub pose: f64,
    pub shape: f64,
    pub keypoint_3d: f64,
    pub keypoint_2d: f64,
    pub wrist_orientation: f64,
    pub upright: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ChamParams,
    pub log: Vec<TrainLogRecord>,
    pub body_backbone_hash: String,
    pub hand_backbone_hash: String,
}

fn shuffled(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = indices.to_vec();
    let mut r = rng::substream(seed ^ 0x73687566, epoch as u64);
    for i in (1..order.len()).rev() {
        let j = (rng::uniform(&mut r, 0.0, (i + 1) as f64) as usize).min(i);
        order.swap(i, j);
    }
    order
}

/// Trains CHAM with backbones frozen. `log_path` gets one JSONL record per
/// step; `checkpoint_dir` receives parameter snapshots every
/// `checkpoint_every` steps when enabled.
pub fn train_cham(
    dataset: &Dataset,
    bundle: &PipelineBundle,
    init: ChamParams,
    config: &PipelineConfig,
    seed: u64,
    log_path: Option<&Path>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let body_hash_before = content_hash(bundle.body_backbone);
    let hand_hash_before = content_hash(bundle.hand_backbone);

    let tcfg = &config.train;
    let train_indices = dataset.split("train")?;
    let mut params = init;
    let mut log = Vec::new();
    let mut log_file = match log_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)?;
            }
            Some(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => None,
    };

    let decay_epoch = (tcfg.epochs * 3) / 4;
    let mut step = 0usize;
    for epoch in 0..tcfg.epochs {
        let lr = if epoch >= decay_epoch && tcfg.epochs > 1 {
            tcfg.learning_rate * tcfg.decay
        } else {
            tcfg.learning_rate
        };
        let order = shuffled(train_indices, seed, epoch);
        for batch in order.chunks(tcfg.batch_size) {
            let mut grads = params.zeros_like();
            let mut breakdown_sum = super::grad::LossBreakdown::default();
            for &index in batch {
                let record = dataset.read_sample(index)?;
                let (breakdown, g) =
                    total_loss_with_grads(&record, bundle, &params, &tcfg.weights)?;
                grads.add_scaled(&g, 1.0);
                breakdown_sum.total += breakdown.total;
                breakdown_sum.pose += breakdown.pose;
                breakdown_sum.shape += breakdown.shape;
                breakdown_sum.keypoint_3d += breakdown.keypoint_3d;
                breakdown_sum.keypoint_2d += breakdown.keypoint_2d;
                breakdown_sum.wrist_orientation += breakdown.wrist_orientation;
                breakdown_sum.upright += breakdown.upright;
            }
            let inv = 1.0 / batch.len() as f64;
            params.add_scaled(&grads, -lr * inv);

            let record = TrainLogRecord {
                step,
                epoch,
                learning_rate: lr,
                loss: breakdown_sum.total * inv,
                pose: breakdown_sum.pose * inv,
                shape: breakdown_sum.shape * inv,
                keypoint_3d: breakdown_sum.keypoint_3d * inv,
                keypoint_2d: breakdown_sum.keypoint_2d * inv,
                wrist_orientation: breakdown_sum.wrist_orientation * inv,
                upright: breakdown_sum.upright * inv,
            };
            if !record.loss.is_finite() {
                return Err(TrainError::NonFiniteLoss);
            }
            if let Some(f) = log_file.as_mut() {
                let line = serde_json::to_string(&record)
                    .map_err(|e| TrainError::Data(crate::data::DataError::ConfigError(e.to_string())))?;
                writeln!(f, "{line}")?;
            }
            log.push(record);
            step += 1;

            if tcfg.checkpoint_every > 0 && step % tcfg.checkpoint_every == 0 {
                if let Some(dir) = checkpoint_dir {
                    std::fs::create_dir_all(dir)?;
                    save_cham_params(&params, &dir.join(format!("cham_step_{step:06}.json")))?;
                }
            }
        }
    }
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }

    if content_hash(bundle.body_backbone) != body_hash_before
        || content_hash(bundle.hand_backbone) != hand_hash_before
    {
        return Err(TrainError::FrozenParamsModified);
    }

    Ok(TrainOutcome {
        params,
        log,
        body_backbone_hash: body_hash_before,
        hand_backbone_hash: hand_hash_before,
    })
}

/// Versioned parameter blob with a content hash.
#[derive(Debug, Serialize, serde::Deserialize)]
pub struct ChamParamsFile {
    pub version: String,
    pub content_hash: String,
    pub params: ChamParams,
}

pub const CHAM_PARAMS_VERSION: &str = "posefuse-cham-v1";

pub fn save_cham_params(params: &ChamParams, path: &Path) -> Result<(), TrainError> {
    let file = ChamParamsFile {
        version: CHAM_PARAMS_VERSION.to_string(),
        content_hash: content_hash(params),
        params: params.clone(),
    };
    let json = serde_json::to_vec(&file)
        .map_err(|e| TrainError::Data(crate::data::DataError::ConfigError(e.to_string())))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_cham_params(path: &Path) -> Result<ChamParams, TrainError> {
    let bytes = std::fs::read(path)?;
    let file: ChamParamsFile = serde_json::from_slice(&bytes)
        .map_err(|e| TrainError::Data(crate::data::DataError::Malformed(e.to_string())))?;
    if file.version != CHAM_PARAMS_VERSION {
        return Err(TrainError::Data(crate::data::DataError::Malformed(
            "cham params version mismatch".into(),
        )));
    }
    if content_hash(&file.params) != file.content_hash {
        return Err(TrainError::Data(crate::data::DataError::Malformed(
            "cham params hash mismatch".into(),
        )));
    }
    Ok(file.params)
}
