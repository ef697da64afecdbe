//! Alignment of independently reconstructed videos of one object class into
//! a common frame, keypoint transfer across reconstructions, and
//! weakly-supervised grounding of text to voxels of the aligned model.
//!
//! The pipeline is divide-and-conquer: each video is reconstructed on its
//! own, frame pairs across videos are matched and filtered against dense
//! flow, the matches are lifted to 3D and a robust similarity solver links
//! reconstructions into an alignment graph. Any node can then be chosen as
//! reference and every connected reconstruction registered to it by
//! composing transforms along shortest paths.

pub mod alignment;
pub mod geometry;
pub mod grounding;
pub mod io;
pub mod matching;
pub mod par;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod transfer;

pub use geometry::{CameraModel, Keypoints3D, Reconstruction, SimilarityTransform3, Vec2, Vec3};
