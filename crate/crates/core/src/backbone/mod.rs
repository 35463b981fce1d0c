//! Frozen toy stand-ins for the whole-body and hand estimators.
//!
//! The body backbone is a depth-D token-mixer over the 16×12 body grid with
//! one additive fusion point per block; the hand backbone maps an 8×8 hand
//! crop to final-layer tokens plus finger pose and shape. Both are frozen
//! after initialization (the body one after its pretraining run) and carry
//! content hashes that training re-verifies.

mod body;
mod hand;
mod params_io;
pub mod pretrain;

pub use body::{
    body_backbone_backward, body_backbone_forward, decode_backward, init_body_backbone,
    BodyBackboneConfig, BodyBackboneParams, BodyBlock, BodyForwardTrace, BodyParamGrads,
    PoseDecode,
};
pub use hand::{
    hand_backbone_forward, init_hand_backbone, HandBackboneParams, HandObservation, HAND_GRID,
};
pub use params_io::{load_body_backbone, save_body_backbone};
pub use pretrain::{pretrain_body_backbone, PretrainConfig, PretrainReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(&'static str),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("frozen parameters were modified (hash mismatch)")]
    FrozenParamsModified,
}

/// SHA-256 over the canonical JSON serialization.
pub fn content_hash<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("serializable params");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
