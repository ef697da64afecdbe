//! Keypoint annotations: triangulation in a source reconstruction, transfer
//! to other reconstructions, ground-truth transform fitting and 3D PCK.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::alignment::{fit_similarity_umeyama, AlignError};
use crate::geometry::{
    triangulate, GeometryError, Keypoints3D, Reconstruction, SimilarityTransform3, Vec2, Vec3,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("need at least 3 common keypoints, found {0}")]
    TooFewCommonKeypoints(usize),
    #[error("no keypoint names in common")]
    NoCommonKeypoints,
    #[error("threshold grids differ between curves")]
    ThresholdGridMismatch,
    #[error("no curves to average")]
    EmptyCurves,
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("metric scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// A 2D keypoint annotation in one frame of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointAnnotation2D {
    pub video_id: String,
    pub frame_id: String,
    pub keypoint_name: String,
    pub pixel: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OmissionReason {
    /// Fewer than two annotations in registered frames.
    InsufficientViews(usize),
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmittedKeypoint {
    pub name: String,
    pub reason: OmissionReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulatedKeypoints {
    /// `None` when every keypoint was omitted.
    pub keypoints: Option<Keypoints3D>,
    pub omitted: Vec<OmittedKeypoint>,
    /// Mean reprojection error per triangulated keypoint, same order as `keypoints`.
    pub reprojection_errors: Vec<f64>,
}

/// Triangulates every annotated keypoint of `rec` from all its annotated,
/// registered frames. Annotations of other videos are ignored. Keypoints come
/// out sorted by name.
pub fn triangulate_keypoints(
    annotations: &[KeypointAnnotation2D],
    rec: &Reconstruction,
) -> TriangulatedKeypoints {
    let mut by_name: BTreeMap<&str, Vec<&KeypointAnnotation2D>> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.video_id == rec.id()) {
        by_name.entry(a.keypoint_name.as_str()).or_default().push(a);
    }
    let mut names = Vec::new();
    let mut coords = Vec::new();
    let mut errors = Vec::new();
    let mut omitted = Vec::new();
    for (name, anns) in by_name {
        let views: Vec<_> = anns
            .iter()
            .filter_map(|a| rec.camera(&a.frame_id).map(|c| (c, a.pixel)))
            .collect();
        if views.len() < 2 {
            omitted.push(OmittedKeypoint {
                name: name.to_string(),
                reason: OmissionReason::InsufficientViews(views.len()),
            });
            continue;
        }
        match triangulate(&views) {
            Ok(t) => {
                names.push(name.to_string());
                coords.push(t.point);
                errors.push(t.mean_reprojection_error);
            }
            Err(e) => omitted.push(OmittedKeypoint {
                name: name.to_string(),
                reason: OmissionReason::Degenerate(e.to_string()),
            }),
        }
    }
    let keypoints = if names.is_empty() {
        None
    } else {
        Some(Keypoints3D::new(names, coords).expect("unique finite names"))
    };
    TriangulatedKeypoints {
        keypoints,
        omitted,
        reprojection_errors: errors,
    }
}

/// Maps source keypoints into a target frame: `K_t = S · K_s`.
pub fn transfer_keypoints(k_src: &Keypoints3D, s: &SimilarityTransform3) -> Keypoints3D {
    k_src.transformed(s)
}

fn common_columns(k_src: &Keypoints3D, k_tgt: &Keypoints3D) -> (Vec<Vec3>, Vec<Vec3>) {
    k_src
        .common_with(k_tgt)
        .into_iter()
        .map(|(_, a, b)| (a, b))
        .unzip()
}

/// Least-squares similarity between the name-matched keypoints of two videos.
pub fn fit_gt_transform(
    k_src: &Keypoints3D,
    k_tgt: &Keypoints3D,
) -> Result<SimilarityTransform3, TransferError> {
    let (src, dst) = common_columns(k_src, k_tgt);
    if src.len() < 3 {
        return Err(TransferError::TooFewCommonKeypoints(src.len()));
    }
    Ok(fit_similarity_umeyama(&src, &dst)?)
}

/// Outcome of the shape-consistency check on an annotated video pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub transform: SimilarityTransform3,
    /// RMS residual of the fit, target units.
    pub rms: f64,
    /// Largest pairwise distance among the target keypoints.
    pub diameter: f64,
    pub admitted: bool,
}

/// Default admission bound on `rms / diameter`.
pub const DEFAULT_CONSISTENCY_RATIO: f64 = 0.10;

/// Fits the ground-truth transform and admits the pair only when the residual
/// RMS is below `max_ratio` of the target keypoint cloud's diameter.
pub fn check_consistency(
    k_src: &Keypoints3D,
    k_tgt: &Keypoints3D,
    max_ratio: f64,
) -> Result<ConsistencyReport, TransferError> {
    let transform = fit_gt_transform(k_src, k_tgt)?;
    let (src, dst) = common_columns(k_src, k_tgt);
    let sse: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (d - transform.apply(s)).norm_squared())
        .sum();
    let rms = (sse / src.len() as f64).sqrt();
    let mut diameter = 0.0_f64;
    for (i, a) in dst.iter().enumerate() {
        for b in &dst[i + 1..] {
            diameter = diameter.max((a - b).norm());
        }
    }
    Ok(ConsistencyReport {
        transform,
        rms,
        diameter,
        admitted: rms < max_ratio * diameter,
    })
}

/// PCK values over an ascending threshold grid (centimetres).
#[derive(Debug, Clone, PartialEq)]
pub struct PckCurve {
    thresholds: Vec<f64>,
    values: Vec<f64>,
}

impl PckCurve {
    pub fn new(thresholds: Vec<f64>, values: Vec<f64>) -> Result<Self, TransferError> {
        validate_thresholds(&thresholds)?;
        if thresholds.len() != values.len() {
            return Err(TransferError::InvalidCurve(
                "thresholds and values differ in length".into(),
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(TransferError::InvalidCurve(
                "values must lie in [0, 1]".into(),
            ));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(TransferError::InvalidCurve(
                "values must be non-decreasing".into(),
            ));
        }
        Ok(Self { thresholds, values })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at an exact grid threshold.
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == threshold)
            .map(|i| self.values[i])
    }
}

fn validate_thresholds(thresholds: &[f64]) -> Result<(), TransferError> {
    if thresholds.is_empty() {
        return Err(TransferError::InvalidThresholds("empty grid".into()));
    }
    if thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(TransferError::InvalidThresholds(
            "thresholds must be finite and non-negative".into(),
        ));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TransferError::InvalidThresholds(
            "thresholds must be strictly ascending".into(),
        ));
    }
    Ok(())
}

/// Fraction of distances (already in cm) at or below each threshold.
pub fn pck_from_distances(
    distances_cm: &[f64],
    thresholds_cm: &[f64],
) -> Result<PckCurve, TransferError> {
    validate_thresholds(thresholds_cm)?;
    if distances_cm.is_empty() {
        return Err(TransferError::NoCommonKeypoints);
    }
    let n = distances_cm.len() as f64;
    let values = thresholds_cm
        .iter()
        .map(|&t| distances_cm.iter().filter(|&&d| d <= t).count() as f64 / n)
        .collect();
    PckCurve::new(thresholds_cm.to_vec(), values)
}

/// 3D PCK between name-matched keypoints; `metric_scale` is cm per model unit.
pub fn pck_3d(
    predicted: &Keypoints3D,
    ground_truth: &Keypoints3D,
    thresholds_cm: &[f64],
    metric_scale: f64,
) -> Result<PckCurve, TransferError> {
    if !(metric_scale.is_finite() && metric_scale > 0.0) {
        return Err(TransferError::InvalidScale(metric_scale));
    }
    let distances: Vec<f64> = predicted
        .common_with(ground_truth)
        .iter()
        .map(|(_, p, g)| metric_scale * (p - g).norm())
        .collect();
    if distances.is_empty() {
        return Err(TransferError::NoCommonKeypoints);
    }
    pck_from_distances(&distances, thresholds_cm)
}

/// Pointwise mean of curves sharing one threshold grid.
pub fn mean_pck_over_pairs(curves: &[PckCurve]) -> Result<PckCurve, TransferError> {
    let first = curves.first().ok_or(TransferError::EmptyCurves)?;
    if curves.iter().any(|c| c.thresholds != first.thresholds) {
        return Err(TransferError::ThresholdGridMismatch);
    }
    let n = curves.len() as f64;
    let values = (0..first.values.len())
        .map(|i| (curves.iter().map(|c| c.values[i]).sum::<f64>() / n).clamp(0.0, 1.0))
        .collect::<Vec<_>>();
    // Summation rounding can break monotonicity by an ulp; restore it.
    let values = values
        .iter()
        .scan(0.0_f64, |m, &v| {
            *m = m.max(v);
            Some(*m)
        })
        .collect();
    PckCurve::new(first.thresholds.clone(), values)
}
