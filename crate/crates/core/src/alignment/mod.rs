//! From 2D-2D matches to a registered set of reconstructions.
//!
//! Matches are lifted to 3D-3D correspondences through the observation
//! tracks of each reconstruction, a RANSAC loop around the closed-form
//! Umeyama fit estimates one similarity per video pair, and successful fits
//! become edges of an alignment graph. Indirect alignments are obtained by
//! composing edge transforms along shortest paths.

mod graph;
mod lift;
mod ransac;
mod umeyama;

pub use graph::{
    build_alignment_graph, path_transform, register_all, AlignmentGraph, EdgeEstimate, EdgeFailure,
    Registration,
};
pub use lift::{lift_matches, Correspondence3D, DEFAULT_ASSOC_RADIUS};
pub use ransac::{solve_similarity, InlierThreshold, RansacConfig, RansacFit};
pub use umeyama::fit_similarity_umeyama;

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("need at least {needed} point pairs, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("source has {src} points but destination has {dst}")]
    LengthMismatch { src: usize, dst: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("no consensus: best model has {inliers} of {total} inliers")]
    NoConsensus { inliers: usize, total: usize },
    #[error("reconstruction {reconstruction} has no frame {frame}")]
    UnknownFrame {
        reconstruction: String,
        frame: String,
    },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{from} and {to} are not connected")]
    NodesDisconnected { from: String, to: String },
    #[error("unknown reference {0}")]
    UnknownReference(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
