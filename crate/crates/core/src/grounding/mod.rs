//! Text-to-voxel grounding: a voxel grid over each aligned car model, 2D
//! anchors backprojected into 3D to produce weak labels, and a shared text
//! encoder with one linear head per model.

mod anchor;
mod eval;
mod model;
mod voxel;

use thiserror::Error;

pub use anchor::{
    anchor_segments, backproject_to_surface, generate_training_pairs, label_anchored,
    select_anchor, AnchorContext, AnchorStrategy, AnchoredSegment, Detection2D, DropReason,
    NarrationSegment, PairGeneration, SaliencyMap, TrainingPair, DEFAULT_RADIUS_PX,
};
pub use eval::{
    chance_baseline, evaluate_chance_pck, evaluate_grounding, evaluate_grounding_pck, ClassPck,
    GroundingEvaluation, GroundingQuery,
};
pub use model::{
    bucket_of, ground_query, tokenize, train_grounding, GroundingModel, Head, QueryResult, Sample,
    TextEncoder, TrainConfig, TrainReport, TrainingTask,
};
pub use voxel::{build_voxel_grid, VoxelGrid, DEFAULT_DIVISIONS, DEFAULT_N_V};

use crate::transfer::TransferError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("point cloud is empty")]
    EmptyPointCloud,
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
    #[error("anchor strategy {0} needs input that was not supplied")]
    MissingStrategyInput(&'static str),
    #[error("label {label} out of range for model {model} with {n_v} voxels")]
    LabelOutOfRange {
        model: String,
        label: usize,
        n_v: usize,
    },
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("unknown model id {0}")]
    UnknownModelId(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Transfer(#[from] TransferError),
}
