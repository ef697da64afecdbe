//! Foundational 3D types: similarity transforms, pinhole cameras,
//! triangulation and per-video reconstructions.

mod camera;
mod keypoints;
pub(crate) mod reconstruction;
mod transform;
mod triangulation;

pub use camera::{CameraModel, Ray};
pub use keypoints::Keypoints3D;
pub use reconstruction::{Observation, Reconstruction};
pub use transform::{nearest_rotation, SimilarityTransform3};
pub use triangulation::{triangulate, Triangulation};

use thiserror::Error;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;

/// Rotations that deviate from orthonormality by less than this are
/// projected back onto SO(3) at construction.
pub const ROTATION_REPAIR_LIMIT: f64 = 1e-6;
/// Rotations within this deviation are accepted unchanged.
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Camera-frame depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("matrix is not a proper rotation (deviation {deviation:.3e})")]
    NotARotation { deviation: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point has non-positive depth {depth:.3e}")]
    DepthNonPositive { depth: f64 },
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("triangulation needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("invalid reconstruction {id}: {reason}")]
    InvalidReconstruction { id: String, reason: String },
    #[error("invalid keypoints: {0}")]
    InvalidKeypoints(String),
}

pub(crate) fn all_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Largest absolute entry of `RᵀR − I` combined with `|det R − 1|`.
pub(crate) fn rotation_deviation(r: &Mat3) -> f64 {
    let gram = r.transpose() * r - Mat3::identity();
    let ortho = gram.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

/// Accept, repair or reject a candidate rotation matrix.
pub(crate) fn validate_rotation(r: &Mat3) -> Result<Mat3, GeometryError> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(GeometryError::NonFinite("rotation"));
    }
    let deviation = rotation_deviation(r);
    if deviation <= ROTATION_TOLERANCE {
        Ok(*r)
    } else if deviation < ROTATION_REPAIR_LIMIT {
        Ok(nearest_rotation(r))
    } else {
        Err(GeometryError::NotARotation { deviation })
    }
}
