//! Losses, metrics, the shape-fitting optimizer, and the CHAM training loop.

pub mod fit;
pub mod grad;
pub mod loss;
pub mod metrics;
pub mod trainer;

pub use fit::{
    body_region_fit_model, fit_shape_to_target, hand_fit_model, FitConfig, FitModel, FitReport,
    FitTarget,
};
pub use grad::{
    forward_pipeline, forward_with_observations, hand_observations, loss_and_head_gradient,
    total_loss_with_grads, total_loss_with_grads_given_obs, LossBreakdown, PipelineBundle,
    PipelinePrediction,
};
pub use loss::{
    axis_angle_l1, axis_angle_l1_grad, keypoint_loss_2d, keypoint_loss_2d_grad, keypoint_loss_3d,
    keypoint_loss_3d_grad, pose_loss, root_upright_loss, shape_loss, shape_loss_grad,
    wrist_orientation_loss, LossWeights, SampleKind,
};
pub use metrics::{mpvpe, mrrpe, pa_mpvpe, MetricsReport, SampleMetrics};
pub use trainer::{
    load_cham_params, save_cham_params, train_cham, TrainLogRecord, TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(&'static str),
    #[error("missing reference joint for the sample kind")]
    MissingReference,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("frozen parameters were modified during training (hash mismatch)")]
    FrozenParamsModified,
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("geometry error: {0}")]
    Geom(#[from] crate::geom::GeomError),
    #[error("transfer error: {0}")]
    Transfer(#[from] crate::transfer::TransferError),
    #[error("backbone error: {0}")]
    Backbone(#[from] crate::backbone::BackboneError),
    #[error("modulator error: {0}")]
    Cham(#[from] crate::cham::ChamError),
    #[error("data error: {0}")]
    Data(#[from] crate::data::DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
