use std::collections::BTreeMap;

use super::{GroundingError, VoxelGrid};
use crate::geometry::{CameraModel, Reconstruction, SimilarityTransform3, Vec2, Vec3};
use crate::par;

/// Default pixel radius for matching projected points to an anchor.
pub const DEFAULT_RADIUS_PX: f64 = 5.0;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum AnchorStrategy {
    CenterOfFrame,
    HandDetector,
    SaliencyArgmax,
}

impl AnchorStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::CenterOfFrame => "center_of_frame",
            Self::HandDetector => "hand_detector",
            Self::SaliencyArgmax => "saliency_argmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::CenterOfFrame,
            Self::HandDetector,
            Self::SaliencyArgmax,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
    }
}

/// A narrated temporal segment reduced to its representative frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrationSegment {
    pub video_id: String,
    pub text: String,
    pub frame_id: String,
}

impl NarrationSegment {
    /// Picks the temporal midpoint among the segment's registered frames
    /// (lower middle for even counts). `None` when no frame is registered.
    pub fn from_frames(
        video_id: &str,
        text: &str,
        frames: &[String],
        rec: &Reconstruction,
    ) -> Option<Self> {
        let registered: Vec<&String> = frames.iter().filter(|f| rec.has_frame(f)).collect();
        let mid = registered.get(registered.len().checked_sub(1)? / 2)?;
        Some(Self {
            video_id: video_id.into(),
            text: text.into(),
            frame_id: (*mid).clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub frame_id: String,
    pub pixel: Vec2,
    pub confidence: f64,
}

/// Row-major `height × width` grid of text-frame similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    frame_id: String,
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(
        frame_id: impl Into<String>,
        height: usize,
        width: usize,
        scores: Vec<f64>,
    ) -> Result<Self, GroundingError> {
        if height == 0 || width == 0 || scores.len() != height * width {
            return Err(GroundingError::InvalidInput(format!(
                "saliency grid {height}x{width} with {} scores",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(GroundingError::InvalidInput(
                "non-finite saliency score".into(),
            ));
        }
        Ok(Self {
            frame_id: frame_id.into(),
            height,
            width,
            scores,
        })
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Pixel-space center of the best cell (lowest flat index on ties).
    pub fn argmax_pixel(&self, image_width: u32, image_height: u32) -> Vec2 {
        let best = (0..self.scores.len()).fold(0, |b, i| {
            if self.scores[i] > self.scores[b] {
                i
            } else {
                b
            }
        });
        let (r, c) = (best / self.width, best % self.width);
        Vec2::new(
            (c as f64 + 0.5) * image_width as f64 / self.width as f64,
            (r as f64 + 0.5) * image_height as f64 / self.height as f64,
        )
    }
}

/// 2D anchor for a segment's representative frame, `None` when the
/// strategy's data has nothing for that frame.
pub fn select_anchor(
    segment: &NarrationSegment,
    strategy: AnchorStrategy,
    camera: &CameraModel,
    detections: Option<&[Detection2D]>,
    saliency: Option<&[SaliencyMap]>,
) -> Result<Option<Vec2>, GroundingError> {
    match strategy {
        AnchorStrategy::CenterOfFrame => Ok(Some(Vec2::new(
            camera.width() as f64 / 2.0,
            camera.height() as f64 / 2.0,
        ))),
        AnchorStrategy::HandDetector => {
            let dets = detections.ok_or(GroundingError::MissingStrategyInput(strategy.as_str()))?;
            let best = dets.iter().filter(|d| d.frame_id == segment.frame_id).fold(
                None::<&Detection2D>,
                |b, d| match b {
                    Some(b) if b.confidence >= d.confidence => Some(b),
                    _ => Some(d),
                },
            );
            Ok(best.map(|d| d.pixel))
        }
        AnchorStrategy::SaliencyArgmax => {
            let maps = saliency.ok_or(GroundingError::MissingStrategyInput(strategy.as_str()))?;
            Ok(maps
                .iter()
                .find(|m| m.frame_id == segment.frame_id)
                .map(|m| m.argmax_pixel(camera.width(), camera.height())))
        }
    }
}

/// Nearest visible surface point under `pixel`: among points in front of the
/// camera projecting within `radius_px`, the one of least depth (lowest index
/// on ties).
pub fn backproject_to_surface(
    pixel: &Vec2,
    camera: &CameraModel,
    points: &[Vec3],
    radius_px: f64,
) -> Option<Vec3> {
    let mut best: Option<(f64, Vec3)> = None;
    for p in points {
        let Ok((q, depth)) = camera.project(p) else {
            continue;
        };
        if (q - pixel).norm() <= radius_px && best.is_none_or(|(d, _)| depth < d) {
            best = Some((depth, *p));
        }
    }
    best.map(|(_, p)| p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub text: String,
    pub voxel_label: usize,
    pub anchor_strategy: AnchorStrategy,
    pub world_point: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    UnknownVideo,
    Unregistered,
    UnknownFrame,
    NoAnchor,
    NoSurfacePoint,
    OutsideBbox,
    InactiveVoxel,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::UnknownVideo => "unknown_video",
            Self::Unregistered => "unregistered",
            Self::UnknownFrame => "unknown_frame",
            Self::NoAnchor => "no_anchor",
            Self::NoSurfacePoint => "no_surface_point",
            Self::OutsideBbox => "outside_bbox",
            Self::InactiveVoxel => "inactive_voxel",
        }
    }
}

/// Everything anchoring needs besides the segments themselves.
#[derive(Debug, Clone, Copy)]
pub struct AnchorContext<'a> {
    pub reconstructions: &'a BTreeMap<String, Reconstruction>,
    /// Video id → transform into the common reference frame.
    pub to_reference: &'a BTreeMap<String, SimilarityTransform3>,
    pub detections: &'a BTreeMap<String, Vec<Detection2D>>,
    pub saliency: &'a BTreeMap<String, Vec<SaliencyMap>>,
    pub radius_px: f64,
}

/// A segment whose anchor reached the model surface, in reference coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredSegment {
    pub segment_index: usize,
    pub point: Vec3,
}

fn anchor_one(
    seg: &NarrationSegment,
    strategy: AnchorStrategy,
    ctx: &AnchorContext,
) -> Result<Result<Vec3, DropReason>, GroundingError> {
    let Some(rec) = ctx.reconstructions.get(&seg.video_id) else {
        return Ok(Err(DropReason::UnknownVideo));
    };
    let Some(to_ref) = ctx.to_reference.get(&seg.video_id) else {
        return Ok(Err(DropReason::Unregistered));
    };
    let Some(camera) = rec.camera(&seg.frame_id) else {
        return Ok(Err(DropReason::UnknownFrame));
    };
    let dets = ctx.detections.get(&seg.video_id).map(Vec::as_slice);
    let sal = ctx.saliency.get(&seg.video_id).map(Vec::as_slice);
    // A video without a detection/saliency file simply has no anchors for the
    // strategy; only a wholly absent input set is an error.
    let dets = dets.or(if ctx.detections.is_empty() {
        None
    } else {
        Some(&[])
    });
    let sal = sal.or(if ctx.saliency.is_empty() {
        None
    } else {
        Some(&[])
    });
    let Some(pixel) = select_anchor(seg, strategy, camera, dets, sal)? else {
        return Ok(Err(DropReason::NoAnchor));
    };
    let pts: Vec<Vec3> = rec.point_coords().copied().collect();
    Ok(
        match backproject_to_surface(&pixel, camera, &pts, ctx.radius_px) {
            Some(p) => Ok(to_ref.apply(&p)),
            None => Err(DropReason::NoSurfacePoint),
        },
    )
}

/// Anchors every segment and lifts it to the reference frame.
pub fn anchor_segments(
    segments: &[NarrationSegment],
    strategy: AnchorStrategy,
    ctx: &AnchorContext,
) -> Result<(Vec<AnchoredSegment>, BTreeMap<DropReason, usize>), GroundingError> {
    let results = par::map(segments, |s| anchor_one(s, strategy, ctx));
    let mut anchored = Vec::new();
    let mut dropped = BTreeMap::new();
    for (i, r) in results.into_iter().enumerate() {
        match r? {
            Ok(point) => anchored.push(AnchoredSegment {
                segment_index: i,
                point,
            }),
            Err(reason) => *dropped.entry(reason).or_insert(0) += 1,
        }
    }
    Ok((anchored, dropped))
}

/// Training pairs plus per-reason counts of dropped segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairGeneration {
    pub pairs: Vec<TrainingPair>,
    pub dropped: BTreeMap<DropReason, usize>,
}

/// Assigns voxel labels to already-anchored segments.
pub fn label_anchored(
    segments: &[NarrationSegment],
    anchored: &[AnchoredSegment],
    strategy: AnchorStrategy,
    grid: &VoxelGrid,
) -> PairGeneration {
    let mut out = PairGeneration::default();
    for a in anchored {
        let label = match grid.voxel_of(&a.point) {
            None => Err(DropReason::OutsideBbox),
            Some(v) => grid.label_of_voxel(v).ok_or(DropReason::InactiveVoxel),
        };
        match label {
            Ok(voxel_label) => out.pairs.push(TrainingPair {
                text: segments[a.segment_index].text.clone(),
                voxel_label,
                anchor_strategy: strategy,
                world_point: a.point,
            }),
            Err(r) => *out.dropped.entry(r).or_insert(0) += 1,
        }
    }
    out
}

/// Anchor → surface point → reference frame → voxel label, per segment.
pub fn generate_training_pairs(
    segments: &[NarrationSegment],
    strategy: AnchorStrategy,
    grid: &VoxelGrid,
    ctx: &AnchorContext,
) -> Result<PairGeneration, GroundingError> {
    let (anchored, mut dropped) = anchor_segments(segments, strategy, ctx)?;
    let mut out = label_anchored(segments, &anchored, strategy, grid);
    for (r, n) in std::mem::take(&mut out.dropped) {
        *dropped.entry(r).or_insert(0) += n;
    }
    out.dropped = dropped;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraModel {
        // Camera at the origin looking down +z.
        CameraModel::pinhole(
            500.0,
            Vec2::new(320.0, 240.0),
            Mat3::identity(),
            Vec3::zeros(),
            640,
            480,
        )
        .unwrap()
    }

    fn seg(frame: &str) -> NarrationSegment {
        NarrationSegment {
            video_id: "v".into(),
            text: "open the hood".into(),
            frame_id: frame.into(),
        }
    }

    #[test]
    fn center_anchor() {
        let a =
            select_anchor(&seg("f"), AnchorStrategy::CenterOfFrame, &cam(), None, None).unwrap();
        assert_eq!(a, Some(Vec2::new(320.0, 240.0)));
    }

    #[test]
    fn hand_anchor_takes_most_confident() {
        let dets = vec![
            Detection2D {
                frame_id: "f".into(),
                pixel: Vec2::new(10.0, 10.0),
                confidence: 0.4,
            },
            Detection2D {
                frame_id: "f".into(),
                pixel: Vec2::new(50.0, 60.0),
                confidence: 0.9,
            },
            Detection2D {
                frame_id: "g".into(),
                pixel: Vec2::new(1.0, 1.0),
                confidence: 1.0,
            },
        ];
        let a = select_anchor(
            &seg("f"),
            AnchorStrategy::HandDetector,
            &cam(),
            Some(&dets),
            None,
        )
        .unwrap();
        assert_eq!(a, Some(Vec2::new(50.0, 60.0)));
        let none = select_anchor(
            &seg("h"),
            AnchorStrategy::HandDetector,
            &cam(),
            Some(&dets),
            None,
        )
        .unwrap();
        assert_eq!(none, None);
        assert_eq!(
            select_anchor(&seg("f"), AnchorStrategy::HandDetector, &cam(), None, None),
            Err(GroundingError::MissingStrategyInput("hand_detector"))
        );
    }

    #[test]
    fn saliency_anchor_scales_cell_center() {
        // 8 rows × 14 columns; peak at row 3, column 9.
        let mut scores = vec![0.0; 8 * 14];
        scores[3 * 14 + 9] = 2.0;
        let map = SaliencyMap::new("f", 8, 14, scores).unwrap();
        let a = select_anchor(
            &seg("f"),
            AnchorStrategy::SaliencyArgmax,
            &cam(),
            None,
            Some(&[map]),
        )
        .unwrap()
        .unwrap();
        let cell_w = 640.0 / 14.0;
        let cell_h = 480.0 / 8.0;
        assert!(
            (a - Vec2::new(9.0 * cell_w + cell_w / 2.0, 3.0 * cell_h + cell_h / 2.0)).norm()
                < 1e-12
        );
        let flat = SaliencyMap::new("f", 2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(flat.argmax_pixel(640, 480), Vec2::new(160.0, 120.0));
        assert!(SaliencyMap::new("f", 2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn representative_frame_is_registered_midpoint() {
        let frames: Vec<(String, CameraModel)> = ["a", "b", "c", "d"]
            .iter()
            .map(|f| (f.to_string(), cam()))
            .collect();
        let rec = Reconstruction::new("v", vec![], frames, vec![]).unwrap();
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            NarrationSegment::from_frames("v", "t", &names(&["a", "b", "c"]), &rec)
                .unwrap()
                .frame_id,
            "b"
        );
        assert_eq!(
            NarrationSegment::from_frames("v", "t", &names(&["x", "a", "y", "c", "d"]), &rec)
                .unwrap()
                .frame_id,
            "c"
        );
        assert_eq!(
            NarrationSegment::from_frames("v", "t", &names(&["a", "d"]), &rec)
                .unwrap()
                .frame_id,
            "a"
        );
        assert!(NarrationSegment::from_frames("v", "t", &names(&["x"]), &rec).is_none());
    }

    #[test]
    fn backprojection_picks_nearest_visible() {
        let c = cam();
        let p = Vec3::new(0.2, -0.1, 2.0);
        let px = c.project(&p).unwrap().0;
        assert_eq!(backproject_to_surface(&px, &c, &[p], 5.0), Some(p));
        let near = Vec3::new(0.1, 0.05, 1.0);
        let far = near * 5.0;
        let behind = -near;
        let px = c.project(&near).unwrap().0;
        assert_eq!(
            backproject_to_surface(&px, &c, &[far, behind, near], 5.0),
            Some(near)
        );
        assert_eq!(
            backproject_to_surface(&Vec2::new(0.0, 0.0), &c, &[near], 5.0),
            None
        );
    }

    #[test]
    fn backprojection_matches_exhaustive_ray_oracle() {
        // Dense noisy plane z = 3 + 0.1x; the answer must be the cloud point
        // closest to the ray's plane hit among those near the ray.
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let pts: Vec<Vec3> = (0..80000)
            .map(|_| {
                let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5));
                Vec3::new(x, y, 3.0 + 0.1 * x + rng.random_range(-0.002..0.002))
            })
            .collect();
        let c = cam();
        for _ in 0..20 {
            let px = Vec2::new(rng.random_range(50.0..590.0), rng.random_range(50.0..430.0));
            let got = backproject_to_surface(&px, &c, &pts, 5.0).unwrap();
            let dir = Vec3::new((px.x - 320.0) / 500.0, (px.y - 240.0) / 500.0, 1.0);
            // Ray z = 3 + 0.1 x with x = dir.x·s, z = s.
            let s = 3.0 / (1.0 - 0.1 * dir.x);
            let hit = dir * s;
            // Pixel radius 5 at depth 3 spans 0.03 world units.
            assert!((got - hit).norm() < 0.05, "{got} vs {hit}");
            let ray_dist = |q: &Vec3| (q - dir.normalize() * q.dot(&dir.normalize())).norm();
            assert!(ray_dist(&got) < 5.0 * 3.1 / 500.0);
        }
    }

    fn ctx_fixture() -> (
        BTreeMap<String, Reconstruction>,
        BTreeMap<String, SimilarityTransform3>,
        Vec<Vec3>,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let pts: Vec<Vec3> = (0..30000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    2.0,
                )
            })
            .collect();
        let points = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u64, *p))
            .collect();
        let rec = Reconstruction::new("v", points, vec![("f".into(), cam())], vec![]).unwrap();
        let recs = BTreeMap::from([("v".to_string(), rec)]);
        let t = SimilarityTransform3::new(2.0, Mat3::identity(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        (recs, BTreeMap::from([("v".to_string(), t)]), pts)
    }

    #[test]
    fn pair_generation_labels_and_drops() {
        let (recs, to_ref, pts) = ctx_fixture();
        let empty_d = BTreeMap::new();
        let empty_s = BTreeMap::new();
        let ctx = AnchorContext {
            reconstructions: &recs,
            to_reference: &to_ref,
            detections: &empty_d,
            saliency: &empty_s,
            radius_px: 5.0,
        };
        let reg: Vec<Vec3> = pts.iter().map(|p| to_ref["v"].apply(p)).collect();
        let center_hit = to_ref["v"].apply(&Vec3::new(0.0, 0.0, 2.0));
        let (anchored, _) =
            anchor_segments(&[seg("f")], AnchorStrategy::CenterOfFrame, &ctx).unwrap();
        let grid = build(&reg, &[anchored[0].point]);
        let segs = vec![
            seg("f"),
            seg("missing"),
            NarrationSegment {
                video_id: "w".into(),
                ..seg("f")
            },
        ];
        let out =
            generate_training_pairs(&segs, AnchorStrategy::CenterOfFrame, &grid, &ctx).unwrap();
        assert_eq!(out.pairs.len(), 1);
        let pair = &out.pairs[0];
        assert_eq!(pair.text, "open the hood");
        assert_eq!(
            grid.voxel_of(&pair.world_point)
                .and_then(|v| grid.label_of_voxel(v)),
            Some(pair.voxel_label)
        );
        assert!((pair.world_point - center_hit).norm() < 0.05);
        assert_eq!(
            out.dropped,
            BTreeMap::from([(DropReason::UnknownVideo, 1), (DropReason::UnknownFrame, 1)])
        );

        // A grid that does not contain the anchor, and one whose only active voxel is elsewhere.
        let away = super::super::VoxelGrid::new(
            Vec3::new(10.0, 10.0, 10.0),
            Vec3::new(11.0, 11.0, 11.0),
            2,
            vec![0],
        )
        .unwrap();
        let out = generate_training_pairs(&segs[..1], AnchorStrategy::CenterOfFrame, &away, &ctx)
            .unwrap();
        assert_eq!(out.dropped, BTreeMap::from([(DropReason::OutsideBbox, 1)]));
        let far_corner = to_ref["v"].apply(&Vec3::new(0.9, 0.9, 2.0));
        let inactive = build(&reg, &[far_corner]);
        let out =
            generate_training_pairs(&segs[..1], AnchorStrategy::CenterOfFrame, &inactive, &ctx)
                .unwrap();
        assert_eq!(
            out.dropped,
            BTreeMap::from([(DropReason::InactiveVoxel, 1)])
        );
    }

    fn build(reg: &[Vec3], training: &[Vec3]) -> VoxelGrid {
        super::super::build_voxel_grid(reg, 10, training, 1).unwrap()
    }

    #[test]
    fn hand_strategy_without_detections_drops_with_no_anchor() {
        let (recs, to_ref, _) = ctx_fixture();
        let dets = BTreeMap::from([("other".to_string(), vec![])]);
        let empty_s = BTreeMap::new();
        let ctx = AnchorContext {
            reconstructions: &recs,
            to_reference: &to_ref,
            detections: &dets,
            saliency: &empty_s,
            radius_px: 5.0,
        };
        let (anchored, dropped) =
            anchor_segments(&[seg("f")], AnchorStrategy::HandDetector, &ctx).unwrap();
        assert!(anchored.is_empty());
        assert_eq!(dropped, BTreeMap::from([(DropReason::NoAnchor, 1)]));
        let none = BTreeMap::new();
        let ctx = AnchorContext {
            detections: &none,
            ..ctx
        };
        assert!(anchor_segments(&[seg("f")], AnchorStrategy::HandDetector, &ctx).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            AnchorStrategy::CenterOfFrame,
            AnchorStrategy::HandDetector,
            AnchorStrategy::SaliencyArgmax,
        ] {
            assert_eq!(AnchorStrategy::parse(s.as_str()), Some(s));
        }
    }
}
