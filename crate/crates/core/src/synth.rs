//! Seeded synthetic scenes with planted ground truth.
//!
//! Each group ("car model") is a gently curved height-field surface split
//! into unit strips along x. Video `j` of a group sees strips `2j..2j+4`, so
//! consecutive videos share two strips and videos two apart share none. Every
//! video is expressed in its own frame through a planted similarity
//! `W_m: world → model`; the world unit is one metre.
//!
//! Cross-video matching frames come in dedicated pairs (one per shared strip)
//! whose global descriptors are near-duplicates. A configurable fraction of
//! the common features in each pair have their descriptors permuted on one
//! side, which makes mutual nearest-neighbour matching return exactly that
//! many wrong correspondences. Dense flow between every pair of matching
//! frames of different videos is obtained by ray casting the true surface.
//!
//! The generator optionally plants a low-overlap pair (video 0 and video 2
//! of a group share only a handful of points), keypoint annotations, and
//! narration with hand detections and saliency maps aimed at named objects.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Rotation3, Unit};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    CameraModel, Mat3, Observation, Reconstruction, SimilarityTransform3, Vec2, Vec3,
};
use crate::grounding::{Detection2D, GroundingQuery, SaliencyMap};
use crate::io::{
    write_annotations, write_detections, write_features, write_file, write_flows,
    write_global_descriptors, write_narration, write_queries, write_reconstruction, write_saliency,
    Dataset, IoError, Manifest, NarrationRecord, VideoData, VideoEntry,
};
use crate::matching::{FlowField, GlobalDescriptor, LocalFeatureSet};
use crate::par;
use crate::sampling::{labeled_seed, normal, random_rotation};
use crate::transfer::KeypointAnnotation2D;

const STRIP_DEPTH: f64 = 0.8;
const SALIENCY_ROWS: usize = 8;
const SALIENCY_COLS: usize = 14;
const IMAGE_MARGIN_PX: f64 = 12.0;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic scene configuration: {0}")]
    InvalidConfig(String),
    #[error("could not place a camera for {0} after many attempts")]
    CameraPlacement(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("internal construction error: {0}")]
    Internal(String),
}

/// A named object placed at fractional coordinates `(u, v)` of a group's surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub videos: usize,
    /// Videos per group; `0` puts every video in one group.
    pub videos_per_group: usize,
    pub points_per_strip: usize,
    pub pixel_noise: f64,
    pub outlier_fraction: f64,
    pub descriptor_dim: usize,
    pub global_dim: usize,
    pub flow_grid: [usize; 2],
    pub image_size: [u32; 2],
    pub focal: f64,
    pub camera_height: f64,
    /// Log-uniform range of the planted per-video scale.
    pub scale_range: [f64; 2],
    pub low_overlap: bool,
    pub low_overlap_points: usize,
    pub keypoints: usize,
    pub annotation_views: usize,
    pub annotation_distance: f64,
    pub objects: Vec<ObjectSpec>,
    /// Per-group displacement of every object, in metres.
    pub object_jitter: f64,
    pub object_cluster_points: usize,
    pub object_cluster_radius: f64,
    pub segments_per_video: usize,
    pub frames_per_segment: usize,
    pub distractor_fraction: f64,
    pub templates: Vec<String>,
    pub verbs: Vec<String>,
    pub distractors: Vec<String>,
    pub query_templates: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let objects = [
            ("oil cap", 0.12, 0.30),
            ("dipstick", 0.30, 0.75),
            ("battery", 0.48, 0.25),
            ("air filter", 0.62, 0.70),
            ("coolant reservoir", 0.78, 0.35),
            ("fuse box", 0.92, 0.72),
        ]
        .iter()
        .map(|&(name, u, v)| ObjectSpec {
            name: name.into(),
            u,
            v,
        })
        .collect();
        Self {
            seed: 0,
            videos: 5,
            videos_per_group: 0,
            points_per_strip: 120,
            pixel_noise: 1.0,
            outlier_fraction: 0.2,
            descriptor_dim: 32,
            global_dim: 64,
            flow_grid: [41, 31],
            image_size: [640, 480],
            focal: 500.0,
            camera_height: 1.2,
            scale_range: [0.5, 2.0],
            low_overlap: true,
            low_overlap_points: 6,
            keypoints: 8,
            annotation_views: 3,
            annotation_distance: 2.0,
            objects,
            object_jitter: 0.08,
            object_cluster_points: 150,
            object_cluster_radius: 0.05,
            segments_per_video: 0,
            frames_per_segment: 3,
            distractor_fraction: 0.1,
            templates: s(&[
                "now {verb} the {object}",
                "{verb} the {object} carefully",
                "next we {verb} the {object}",
                "you need to {verb} the {object} here",
            ]),
            verbs: s(&[
                "check", "remove", "open", "inspect", "clean", "loosen", "replace",
            ]),
            distractors: s(&[
                "okay let's get started",
                "make sure the engine is cold",
                "grab a rag and some gloves",
                "that is all for today",
            ]),
            query_templates: s(&["{object}", "where is the {object}", "show me the {object}"]),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        for (name, x) in [
            ("outlier_fraction", self.outlier_fraction),
            ("distractor_fraction", self.distractor_fraction),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return bad(format!("{name} must lie in [0, 1], got {x}"));
            }
        }
        if self.videos == 0 {
            return bad("at least one video is required".into());
        }
        if self.points_per_strip == 0 || self.descriptor_dim == 0 || self.global_dim == 0 {
            return bad("points_per_strip, descriptor_dim and global_dim must be positive".into());
        }
        if !(self.pixel_noise.is_finite() && self.pixel_noise >= 0.0) {
            return bad("pixel_noise must be non-negative".into());
        }
        if self.flow_grid.iter().any(|&n| n < 2) || self.image_size.iter().any(|&n| n < 64) {
            return bad("flow grid needs two nodes per axis and images at least 64 px".into());
        }
        if !(self.focal > 0.0 && self.camera_height > 0.0 && self.annotation_distance > 0.0) {
            return bad("focal, camera_height and annotation_distance must be positive".into());
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("scale_range must be positive and ordered".into());
        }
        if self.keypoints > 0 && self.annotation_views < 2 {
            return bad("keypoints need at least two annotation views".into());
        }
        if self.segments_per_video > 0 {
            if self.frames_per_segment == 0 || self.templates.is_empty() || self.verbs.is_empty() {
                return bad("narration needs frames, templates and verbs".into());
            }
            if self.distractor_fraction > 0.0 && self.distractors.is_empty() {
                return bad("distractor_fraction > 0 needs distractor texts".into());
            }
        }
        let mut names = BTreeSet::new();
        for o in &self.objects {
            if !((0.0..=1.0).contains(&o.u) && (0.0..=1.0).contains(&o.v)) {
                return bad(format!("object {} lies outside the unit square", o.name));
            }
            if !names.insert(&o.name) || o.name.trim().is_empty() {
                return bad(format!(
                    "object names must be unique and non-empty ({:?})",
                    o.name
                ));
            }
        }
        Ok(())
    }

    fn group_size(&self) -> usize {
        if self.videos_per_group == 0 {
            self.videos
        } else {
            self.videos_per_group
        }
    }

    /// Triangulation noise of an annotated keypoint expressed in metres: the
    /// pixel noise back-projected at the annotation distance.
    pub fn noise_equivalent_3d(&self) -> f64 {
        self.pixel_noise * self.annotation_distance / self.focal
    }
}

/// Height of the world surface.
pub fn surface_height(x: f64, y: f64) -> f64 {
    0.08 * (1.3 * x + 0.5).sin() + 0.05 * (2.1 * y + 0.3 * x).cos()
}

fn surface_point(x: f64, y: f64) -> Vec3 {
    Vec3::new(x, y, surface_height(x, y))
}

/// First intersection of a ray with the (unbounded) surface.
fn ray_hit(origin: &Vec3, dir: &Vec3) -> Option<Vec3> {
    let f = |t: f64| {
        let p = origin + t * dir;
        p.z - surface_height(p.x, p.y)
    };
    if f(0.0) <= 0.0 {
        return None;
    }
    let step = 0.02;
    let mut t0 = 0.0;
    let mut t1 = step;
    while f(t1) > 0.0 {
        t0 = t1;
        t1 += step;
        if t1 > 50.0 {
            return None;
        }
    }
    for _ in 0..60 {
        let m = 0.5 * (t0 + t1);
        if f(m) > 0.0 {
            t0 = m;
        } else {
            t1 = m;
        }
    }
    Some(origin + 0.5 * (t0 + t1) * dir)
}

/// World→camera rotation looking from `eye` at `target`, rolled about the optical axis.
fn look_at(eye: &Vec3, target: &Vec3, roll: f64) -> Mat3 {
    let z = (target - eye).normalize();
    let helper = if z.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let x0 = helper.cross(&z).normalize();
    let y0 = z.cross(&x0);
    let (s, c) = roll.sin_cos();
    let x = c * x0 + s * y0;
    let y = z.cross(&x);
    Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

fn mul_rot(r: &Mat3, axis: Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner() * r
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedVideo {
    pub id: String,
    pub group: String,
    /// `W_m`: world → this video's frame.
    pub scale: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub metric_scale_cm: f64,
}

impl PlantedVideo {
    pub fn world_to_model(&self) -> SimilarityTransform3 {
        SimilarityTransform3::new(
            self.scale,
            Mat3::from_row_slice(&self.rotation),
            Vec3::from(self.translation),
        )
        .expect("planted transforms are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedKeypoint {
    pub group: String,
    pub name: String,
    pub world: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedObject {
    pub group: String,
    pub name: String,
    pub world: [f64; 3],
    /// Position in the frame of the group's reference (smallest id) video.
    pub reference: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFramePair {
    pub video_a: String,
    pub video_b: String,
    pub frame_a: String,
    pub frame_b: String,
    /// World points seen by both frames.
    pub common_points: usize,
    /// Of those, how many carry permuted descriptors in `frame_b`.
    pub corrupted: usize,
    pub low_overlap: bool,
}

/// Everything planted in a scene, written to `gt/truth.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub pixel_noise: f64,
    /// Annotation pixel noise back-projected to metres.
    pub noise_equivalent_3d_m: f64,
    pub groups: BTreeMap<String, Vec<String>>,
    pub videos: Vec<PlantedVideo>,
    pub keypoints: Vec<PlantedKeypoint>,
    pub objects: Vec<PlantedObject>,
    pub frame_pairs: Vec<PlantedFramePair>,
    pub low_overlap_pairs: Vec<[String; 2]>,
}

impl GroundTruth {
    pub fn video(&self, id: &str) -> Option<&PlantedVideo> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Planted transform mapping `from` coordinates into `to` coordinates.
    pub fn relative(&self, from: &str, to: &str) -> Option<SimilarityTransform3> {
        let a = self.video(from)?.world_to_model();
        let b = self.video(to)?.world_to_model();
        Some(b.compose(&a.inverse()))
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("ground truth is representable in TOML")
    }

    pub fn parse(content: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(content)
    }
}

/// One video's generated data.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub entry: VideoEntry,
    pub reconstruction: Reconstruction,
    pub features: Vec<LocalFeatureSet>,
    pub global_descriptors: Vec<GlobalDescriptor>,
    pub flows: Vec<FlowField>,
    pub narration: Vec<NarrationRecord>,
    pub detections: Vec<Detection2D>,
    pub saliency: Vec<SaliencyMap>,
    pub annotations: Vec<KeypointAnnotation2D>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub config: SynthConfig,
    pub videos: Vec<SyntheticVideo>,
    pub truth: GroundTruth,
    pub queries: Vec<GroundingQuery>,
}

/// A camera in world coordinates plus the world points it images.
struct WorldFrame {
    id: String,
    camera: CameraModel,
    /// (point id, world position) imaged as features.
    points: Vec<(u64, Vec3)>,
    /// Matching-frame pair key and side (0 = a, 1 = b); `None` for other frames.
    pair: Option<(usize, u8)>,
}

struct GroupLayout {
    name: String,
    index: usize,
    members: Vec<usize>,
    strips: usize,
    /// strip → (point id, world position)
    strip_points: Vec<Vec<(u64, Vec3)>>,
    objects: Vec<(String, Vec3)>,
    keypoints: Vec<(String, Vec3)>,
}

fn video_id(i: usize) -> String {
    format!("v{i:02}")
}

const KEYPOINT_NAMES: &[&str] = &[
    "front_left_mount",
    "front_right_mount",
    "oil_cap_rim",
    "dipstick_handle",
    "battery_plus",
    "battery_minus",
    "coolant_cap",
    "washer_cap",
    "air_box_clip",
    "fuse_cover",
    "hood_latch",
    "strut_top",
];

fn keypoint_name(k: usize) -> String {
    KEYPOINT_NAMES
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("keypoint_{k}"))
}

fn build_group(cfg: &SynthConfig, index: usize, members: Vec<usize>) -> GroupLayout {
    let name = format!("car{index}");
    let g = members.len();
    let strips = 2 * g + 2;
    let width = strips as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(labeled_seed(cfg.seed, &format!("layout/{name}")));
    let base = index as u64 * 10_000_000;
    let mut strip_points: Vec<Vec<(u64, Vec3)>> = (0..strips)
        .map(|s| {
            (0..cfg.points_per_strip)
                .map(|k| {
                    let x = s as f64 + rng.random_range(0.0..1.0);
                    let y = rng.random_range(0.0..STRIP_DEPTH);
                    (base + s as u64 * 100_000 + k as u64, surface_point(x, y))
                })
                .collect()
        })
        .collect();
    let margin = cfg.object_cluster_radius + 0.02;
    let objects: Vec<(String, Vec3)> = cfg
        .objects
        .iter()
        .map(|o| {
            let x =
                (o.u * width + cfg.object_jitter * normal(&mut rng)).clamp(margin, width - margin);
            let y = (o.v * STRIP_DEPTH + cfg.object_jitter * normal(&mut rng))
                .clamp(margin, STRIP_DEPTH - margin);
            (o.name.clone(), surface_point(x, y))
        })
        .collect();
    for (o, (_, c)) in objects.iter().enumerate() {
        let s = (c.x.floor() as usize).min(strips - 1);
        for k in 0..cfg.object_cluster_points {
            let r = cfg.object_cluster_radius * rng.random_range(0.0_f64..1.0).sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let (x, y) = (c.x + r * a.cos(), c.y + r * a.sin());
            let id = base + 9_000_000 + o as u64 * 10_000 + k as u64;
            strip_points[s].push((id, surface_point(x.clamp(s as f64, s as f64 + 1.0), y)));
        }
    }
    let keypoints = (0..cfg.keypoints)
        .map(|k| {
            let x = rng.random_range(0.3..width - 0.3);
            let y = rng.random_range(0.15..STRIP_DEPTH - 0.15);
            (keypoint_name(k), surface_point(x, y))
        })
        .collect();
    GroupLayout {
        name,
        index,
        members,
        strips,
        strip_points,
        objects,
        keypoints,
    }
}

impl GroupLayout {
    /// Strips seen by the member at position `j`.
    fn window(&self, j: usize) -> std::ops::Range<usize> {
        2 * j..(2 * j + 4).min(self.strips)
    }

    fn strip_of(&self, x: f64) -> usize {
        (x.floor().max(0.0) as usize).min(self.strips - 1)
    }
}

/// Overhead camera imaging all of `pts`, placed above `center`.
fn overhead_camera(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    center: &Vec3,
    pts: &[(u64, Vec3)],
    what: &str,
) -> Result<CameraModel, SynthError> {
    let [w, h] = cfg.image_size;
    for _ in 0..2000 {
        let eye = center
            + Vec3::new(
                rng.random_range(-0.08..0.08),
                rng.random_range(-0.06..0.06),
                cfg.camera_height + rng.random_range(-0.1..0.1),
            );
        let yaw = if rng.random_bool(0.5) {
            0.0
        } else {
            std::f64::consts::PI
        } + rng.random_range(-0.25..0.25);
        let down = Mat3::from_rows(&[
            Vec3::new(1.0, 0.0, 0.0).transpose(),
            Vec3::new(0.0, -1.0, 0.0).transpose(),
            Vec3::new(0.0, 0.0, -1.0).transpose(),
        ]);
        let mut r = mul_rot(&down, Vec3::z(), yaw);
        let tilt_axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            0.0,
        );
        if tilt_axis.norm() > 1e-3 {
            r = mul_rot(&r, tilt_axis, rng.random_range(0.0..0.12));
        }
        let cam = CameraModel::pinhole(
            cfg.focal,
            Vec2::new(w as f64 / 2.0, h as f64 / 2.0),
            r,
            -(r * eye),
            w,
            h,
        )
        .map_err(|e| SynthError::Internal(e.to_string()))?;
        let inside = pts.iter().all(|(_, p)| match cam.project(p) {
            Ok((px, depth)) => {
                depth > 0.0
                    && px.x >= IMAGE_MARGIN_PX
                    && px.y >= IMAGE_MARGIN_PX
                    && px.x <= w as f64 - IMAGE_MARGIN_PX
                    && px.y <= h as f64 - IMAGE_MARGIN_PX
            }
            Err(_) => false,
        });
        if inside {
            return Ok(cam);
        }
    }
    Err(SynthError::CameraPlacement(what.into()))
}

/// Camera at `distance` from `target` looking at it from the given elevation range.
fn orbit_camera(
    cfg: &SynthConfig,
    target: &Vec3,
    distance: f64,
    azimuth: f64,
    elevation: f64,
    roll: f64,
) -> Result<CameraModel, SynthError> {
    let [w, h] = cfg.image_size;
    let dir = Vec3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    );
    let eye = target + distance * dir;
    let r = look_at(&eye, target, roll);
    CameraModel::pinhole(
        cfg.focal,
        Vec2::new(w as f64 / 2.0, h as f64 / 2.0),
        r,
        -(r * eye),
        w,
        h,
    )
    .map_err(|e| SynthError::Internal(e.to_string()))
}

struct PairPlan {
    a: usize,
    b: usize,
    strip: usize,
    low_overlap: bool,
}

struct VideoPlan {
    index: usize,
    group: usize,
    points: Vec<(u64, Vec3)>,
    world_to_model: SimilarityTransform3,
    frames: Vec<WorldFrame>,
    narration: Vec<NarrationRecord>,
    detections: Vec<Detection2D>,
    saliency: Vec<SaliencyMap>,
    annotations: Vec<KeypointAnnotation2D>,
}

/// Generates a complete scene. The output depends only on the configuration.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticScene, SynthError> {
    cfg.validate()?;
    let gsize = cfg.group_size();
    let groups: Vec<GroupLayout> = (0..cfg.videos.div_ceil(gsize))
        .map(|gi| {
            build_group(
                cfg,
                gi,
                (gi * gsize..((gi + 1) * gsize).min(cfg.videos)).collect(),
            )
        })
        .collect();

    // Matching-frame pairs: consecutive members share two strips.
    let mut pairs = Vec::new();
    for g in &groups {
        for j in 0..g.members.len().saturating_sub(1) {
            for strip in [2 * j + 2, 2 * j + 3] {
                pairs.push(PairPlan {
                    a: g.members[j],
                    b: g.members[j + 1],
                    strip,
                    low_overlap: false,
                });
            }
        }
        if cfg.low_overlap && g.members.len() >= 3 {
            pairs.push(PairPlan {
                a: g.members[0],
                b: g.members[2],
                strip: 4,
                low_overlap: true,
            });
        }
    }

    let group_of: Vec<(usize, usize)> = groups
        .iter()
        .flat_map(|g| {
            g.members
                .iter()
                .enumerate()
                .map(move |(pos, &_v)| (g.index, pos))
        })
        .collect();

    let plans: Vec<Result<VideoPlan, SynthError>> = par::map_range(cfg.videos, |v| {
        plan_video(cfg, &groups[group_of[v].0], v, group_of[v].1, &pairs)
    });
    let plans: Vec<VideoPlan> = plans.into_iter().collect::<Result<_, _>>()?;

    // Descriptors per world point and pair codes for global descriptors.
    let pair_codes: Vec<Vec<f64>> = (0..pairs.len())
        .map(|k| {
            unit_gaussian(
                &mut ChaCha8Rng::seed_from_u64(labeled_seed(cfg.seed, &format!("pair-code/{k}"))),
                cfg.global_dim,
            )
        })
        .collect();

    // Corruption per pair: which common points get permuted descriptors in frame b.
    let mut frame_pairs = Vec::new();
    let mut corrupted_of: BTreeMap<usize, BTreeMap<u64, u64>> = BTreeMap::new();
    for (k, p) in pairs.iter().enumerate() {
        let fa = frame_of_pair(&plans[p.a], k, 0);
        let fb = frame_of_pair(&plans[p.b], k, 1);
        let ids_a: BTreeSet<u64> = fa.points.iter().map(|(id, _)| *id).collect();
        let mut common: Vec<u64> = fb
            .points
            .iter()
            .map(|(id, _)| *id)
            .filter(|id| ids_a.contains(id))
            .collect();
        common.sort_unstable();
        let count = (cfg.outlier_fraction * common.len() as f64).round() as usize;
        let count = if count == 1 { 0 } else { count };
        let mut rng = ChaCha8Rng::seed_from_u64(labeled_seed(cfg.seed, &format!("corrupt/{k}")));
        common.shuffle(&mut rng);
        // Ordered along x and shifted by half the set, each corrupted feature
        // takes the descriptor of a point far from it: a derangement whose
        // wrong matches a geometric check can reject.
        let world: BTreeMap<u64, Vec3> = fb.points.iter().copied().collect();
        let mut chosen: Vec<u64> = common[..count].to_vec();
        chosen.sort_by(|x, y| world[x].x.total_cmp(&world[y].x).then(x.cmp(y)));
        let shift = count.div_ceil(2);
        let sources: BTreeMap<u64, u64> = (0..count)
            .map(|i| (chosen[i], chosen[(i + shift) % count]))
            .collect();
        frame_pairs.push(PlantedFramePair {
            video_a: video_id(p.a),
            video_b: video_id(p.b),
            frame_a: fa.id.clone(),
            frame_b: fb.id.clone(),
            common_points: common.len(),
            corrupted: count,
            low_overlap: p.low_overlap,
        });
        corrupted_of.insert(k, sources);
    }

    let videos: Vec<Result<SyntheticVideo, SynthError>> = par::map(&plans, |plan| {
        finish_video(
            cfg,
            plan,
            &plans,
            &groups[plan.group],
            &pair_codes,
            &corrupted_of,
        )
    });
    let videos: Vec<SyntheticVideo> = videos.into_iter().collect::<Result<_, _>>()?;

    let planted: Vec<PlantedVideo> = plans
        .iter()
        .map(|p| {
            let t = &p.world_to_model;
            let r = t.rotation();
            PlantedVideo {
                id: video_id(p.index),
                group: groups[p.group].name.clone(),
                scale: t.scale(),
                rotation: [
                    r[(0, 0)],
                    r[(0, 1)],
                    r[(0, 2)],
                    r[(1, 0)],
                    r[(1, 1)],
                    r[(1, 2)],
                    r[(2, 0)],
                    r[(2, 1)],
                    r[(2, 2)],
                ],
                translation: [t.translation().x, t.translation().y, t.translation().z],
                metric_scale_cm: 100.0 / t.scale(),
            }
        })
        .collect();

    let mut objects = Vec::new();
    let mut queries = Vec::new();
    let mut keypoints = Vec::new();
    for g in &groups {
        let reference = &plans[g.members[0]].world_to_model;
        for (name, w) in &g.objects {
            let r = reference.apply(w);
            objects.push(PlantedObject {
                group: g.name.clone(),
                name: name.clone(),
                world: [w.x, w.y, w.z],
                reference: [r.x, r.y, r.z],
            });
            if cfg.segments_per_video > 0 {
                for t in &cfg.query_templates {
                    queries.push(GroundingQuery {
                        model_id: g.name.clone(),
                        text: t.replace("{object}", name),
                        gt_point: r,
                        class: Some(name.clone()),
                    });
                }
            }
        }
        for (name, w) in &g.keypoints {
            keypoints.push(PlantedKeypoint {
                group: g.name.clone(),
                name: name.clone(),
                world: [w.x, w.y, w.z],
            });
        }
    }

    let truth = GroundTruth {
        seed: cfg.seed,
        pixel_noise: cfg.pixel_noise,
        noise_equivalent_3d_m: cfg.noise_equivalent_3d(),
        groups: groups
            .iter()
            .map(|g| {
                (
                    g.name.clone(),
                    g.members.iter().map(|&m| video_id(m)).collect(),
                )
            })
            .collect(),
        videos: planted,
        keypoints,
        objects,
        frame_pairs,
        low_overlap_pairs: pairs
            .iter()
            .filter(|p| p.low_overlap)
            .map(|p| [video_id(p.a), video_id(p.b)])
            .collect(),
    };
    Ok(SyntheticScene {
        config: cfg.clone(),
        videos,
        truth,
        queries,
    })
}

fn frame_of_pair(plan: &VideoPlan, pair: usize, side: u8) -> &WorldFrame {
    plan.frames
        .iter()
        .find(|f| f.pair == Some((pair, side)))
        .expect("every pair has a frame on each side")
}

fn plan_video(
    cfg: &SynthConfig,
    g: &GroupLayout,
    v: usize,
    position: usize,
    pairs: &[PairPlan],
) -> Result<VideoPlan, SynthError> {
    let id = video_id(v);
    let mut rng = ChaCha8Rng::seed_from_u64(labeled_seed(cfg.seed, &format!("video/{id}")));
    let [lo, hi] = cfg.scale_range;
    let scale = if hi > lo {
        rng.random_range(lo.ln()..hi.ln()).exp()
    } else {
        lo
    };
    let world_to_model = SimilarityTransform3::new(
        scale,
        random_rotation(&mut rng),
        Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        ),
    )
    .map_err(|e| SynthError::Internal(e.to_string()))?;

    let window = g.window(position);
    let mut points: Vec<(u64, Vec3)> = window
        .clone()
        .flat_map(|s| g.strip_points[s].iter().copied())
        .collect();
    // The low-overlap partner sees a few points of strip 4 only.
    let mut extra: Vec<(u64, Vec3)> = Vec::new();
    if let Some(p) = pairs.iter().find(|p| p.low_overlap && p.a == v) {
        let strip = &g.strip_points[p.strip];
        let center = Vec3::new(p.strip as f64 + 0.5, STRIP_DEPTH / 2.0, 0.0);
        let mut by_dist: Vec<&(u64, Vec3)> = strip
            .iter()
            .filter(|(id, _)| id % 10_000_000 < 9_000_000)
            .collect();
        by_dist.sort_by(|x, y| {
            let dx = (x.1.xy() - center.xy()).norm();
            let dy = (y.1.xy() - center.xy()).norm();
            dx.total_cmp(&dy).then(x.0.cmp(&y.0))
        });
        extra = by_dist
            .into_iter()
            .take(cfg.low_overlap_points)
            .copied()
            .collect();
        points.extend(extra.iter().copied());
    }

    let mut frames = Vec::new();
    for (k, p) in pairs.iter().enumerate() {
        let side = if p.a == v {
            0
        } else if p.b == v {
            1
        } else {
            continue;
        };
        let partner = video_id(if side == 0 { p.b } else { p.a });
        let seen: Vec<(u64, Vec3)> = if p.low_overlap && side == 0 {
            extra.clone()
        } else {
            g.strip_points[p.strip].clone()
        };
        let fid = format!("{id}_m_{partner}_s{}", p.strip);
        let center = Vec3::new(p.strip as f64 + 0.5, STRIP_DEPTH / 2.0, 0.0);
        let all_strip = &g.strip_points[p.strip];
        let camera = overhead_camera(cfg, &mut rng, &center, all_strip, &fid)?;
        frames.push(WorldFrame {
            id: fid,
            camera,
            points: seen,
            pair: Some((k, side)),
        });
    }

    let mut annotations = Vec::new();
    if !g.keypoints.is_empty() {
        let mut ann_frames = Vec::new();
        for (k, (_, target)) in g.keypoints.iter().enumerate() {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for i in 0..cfg.annotation_views {
                let azimuth = phase
                    + std::f64::consts::TAU * i as f64 / cfg.annotation_views as f64
                    + rng.random_range(-0.3..0.3);
                let elevation = rng.random_range(0.8..1.2);
                let camera = orbit_camera(
                    cfg,
                    target,
                    cfg.annotation_distance,
                    azimuth,
                    elevation,
                    rng.random_range(-0.2..0.2),
                )?;
                ann_frames.push(WorldFrame {
                    id: format!("{id}_a_{k}_{i}"),
                    camera,
                    points: Vec::new(),
                    pair: None,
                });
            }
        }
        for f in &ann_frames {
            for (name, kp) in &g.keypoints {
                if let Ok((px, depth)) = f.camera.project(kp) {
                    let noisy =
                        px + Vec2::new(normal(&mut rng), normal(&mut rng)) * cfg.pixel_noise;
                    if depth > 0.0 && f.camera.contains(&noisy) {
                        annotations.push(KeypointAnnotation2D {
                            video_id: id.clone(),
                            frame_id: f.id.clone(),
                            keypoint_name: name.clone(),
                            pixel: noisy,
                        });
                    }
                }
            }
        }
        frames.extend(ann_frames);
    }

    let mut narration = Vec::new();
    let mut detections = Vec::new();
    let mut saliency = Vec::new();
    if cfg.segments_per_video > 0 {
        let x_range = (window.start as f64, window.end as f64);
        let visible: Vec<&(String, Vec3)> = g
            .objects
            .iter()
            .filter(|(_, c)| g.window(position).contains(&g.strip_of(c.x)))
            .collect();
        let [w, h] = cfg.image_size;
        for s in 0..cfg.segments_per_video {
            let distractor = visible.is_empty() || rng.random_bool(cfg.distractor_fraction);
            let (text, target) = if distractor {
                let t = cfg.distractors[rng.random_range(0..cfg.distractors.len())].clone();
                let p = surface_point(
                    rng.random_range(x_range.0 + 0.2..x_range.1 - 0.2),
                    rng.random_range(0.1..STRIP_DEPTH - 0.1),
                );
                (t, p)
            } else {
                let (name, c) = visible[rng.random_range(0..visible.len())];
                let t = cfg.templates[rng.random_range(0..cfg.templates.len())]
                    .replace("{verb}", &cfg.verbs[rng.random_range(0..cfg.verbs.len())])
                    .replace("{object}", name);
                let jitter = Vec3::new(normal(&mut rng), normal(&mut rng), 0.0) * 0.015;
                (t, surface_point(c.x + jitter.x, c.y + jitter.y))
            };
            let mut ids = Vec::new();
            for i in 0..cfg.frames_per_segment {
                let fid = format!("{id}_n_{s}_{i}");
                let camera = orbit_camera(
                    cfg,
                    &target,
                    rng.random_range(0.8..1.2),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.95..1.45),
                    rng.random_range(-0.2..0.2),
                )?;
                let center = Vec2::new(w as f64 / 2.0, h as f64 / 2.0);
                if distractor {
                    let px = Vec2::new(
                        rng.random_range(0.0..w as f64),
                        rng.random_range(0.0..h as f64),
                    );
                    detections.push(Detection2D {
                        frame_id: fid.clone(),
                        pixel: px,
                        confidence: rng.random_range(0.3..0.9),
                    });
                } else {
                    let noisy = center + Vec2::new(normal(&mut rng), normal(&mut rng)) * 2.0;
                    detections.push(Detection2D {
                        frame_id: fid.clone(),
                        pixel: noisy,
                        confidence: rng.random_range(0.7..1.0),
                    });
                }
                let decoy = Vec2::new(
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                );
                detections.push(Detection2D {
                    frame_id: fid.clone(),
                    pixel: decoy,
                    confidence: rng.random_range(0.05..0.5),
                });
                let mut scores = Vec::with_capacity(SALIENCY_ROWS * SALIENCY_COLS);
                for r in 0..SALIENCY_ROWS {
                    for c in 0..SALIENCY_COLS {
                        let cell = Vec2::new(
                            (c as f64 + 0.5) * w as f64 / SALIENCY_COLS as f64,
                            (r as f64 + 0.5) * h as f64 / SALIENCY_ROWS as f64,
                        );
                        let peak = if distractor {
                            0.0
                        } else {
                            (-(cell - center).norm_squared() / (2.0 * 40.0 * 40.0)).exp()
                        };
                        scores.push(peak + 0.05 * rng.random_range(0.0..1.0));
                    }
                }
                saliency.push(
                    SaliencyMap::new(fid.clone(), SALIENCY_ROWS, SALIENCY_COLS, scores)
                        .map_err(|e| SynthError::Internal(e.to_string()))?,
                );
                frames.push(WorldFrame {
                    id: fid.clone(),
                    camera,
                    points: Vec::new(),
                    pair: None,
                });
                ids.push(fid);
            }
            narration.push(NarrationRecord {
                video_id: id.clone(),
                frames: ids,
                text,
            });
        }
    }

    Ok(VideoPlan {
        index: v,
        group: g.index,
        points,
        world_to_model,
        frames,
        narration,
        detections,
        saliency,
        annotations,
    })
}

fn finish_video(
    cfg: &SynthConfig,
    plan: &VideoPlan,
    plans: &[VideoPlan],
    group: &GroupLayout,
    pair_codes: &[Vec<f64>],
    corrupted_of: &BTreeMap<usize, BTreeMap<u64, u64>>,
) -> Result<SyntheticVideo, SynthError> {
    let id = video_id(plan.index);
    let internal = |e: &dyn std::fmt::Display| SynthError::Internal(e.to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(labeled_seed(cfg.seed, &format!("finish/{id}")));
    let w2m = &plan.world_to_model;
    let sigma3 = cfg.pixel_noise * cfg.camera_height / cfg.focal;
    let model_points: Vec<(u64, Vec3)> = plan
        .points
        .iter()
        .map(|(pid, p)| {
            let noisy =
                p + Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * sigma3;
            (*pid, w2m.apply(&noisy))
        })
        .collect();

    let descriptor = |pid: u64| {
        unit_gaussian(
            &mut ChaCha8Rng::seed_from_u64(labeled_seed(cfg.seed, &format!("desc/{pid}"))),
            cfg.descriptor_dim,
        )
    };

    let mut features = Vec::new();
    let mut globals = Vec::new();
    let mut observations = Vec::new();
    for f in plan.frames.iter().filter(|f| f.pair.is_some()) {
        let (k, side) = f.pair.expect("filtered");
        let mut order: Vec<usize> = (0..f.points.len()).collect();
        order.shuffle(&mut rng);
        let ids: Vec<u64> = order.iter().map(|&i| f.points[i].0).collect();
        // Descriptor source per feature: itself, or a permuted corrupted partner.
        let source: Vec<u64> = if side == 1 {
            ids.iter()
                .map(|id| corrupted_of[&k].get(id).copied().unwrap_or(*id))
                .collect()
        } else {
            ids.clone()
        };
        let mut desc = DMatrix::zeros(cfg.descriptor_dim, ids.len());
        let mut positions = Vec::with_capacity(ids.len());
        for (row, &i) in order.iter().enumerate() {
            let (pid, p) = f.points[i];
            let (px, _) = f.camera.project(&p).map_err(|e| internal(&e))?;
            let pixel = px + Vec2::new(normal(&mut rng), normal(&mut rng)) * cfg.pixel_noise;
            positions.push(pixel);
            observations.push(Observation {
                frame_id: f.id.clone(),
                keypoint_index: row as u32,
                pixel,
                point_id: pid,
            });
            let d = descriptor(source[row]);
            for (c, x) in d.iter().enumerate() {
                desc[(c, row)] = x + 0.05 * normal(&mut rng);
            }
        }
        features
            .push(LocalFeatureSet::new(f.id.clone(), desc, positions).map_err(|e| internal(&e))?);
        let code = &pair_codes[k];
        let scale = 0.3 / (cfg.global_dim as f64).sqrt();
        let g: Vec<f64> = code.iter().map(|x| x + scale * normal(&mut rng)).collect();
        globals.push(GlobalDescriptor::new(f.id.clone(), g).map_err(|e| internal(&e))?);
    }

    // Flow from each matching frame to every matching frame of other videos in the group.
    let [w, h] = cfg.image_size;
    let [gw, gh] = cfg.flow_grid;
    let mut flows = Vec::new();
    for f in plan.frames.iter().filter(|f| f.pair.is_some()) {
        let origin = f.camera.center();
        for &other in &group.members {
            if other == plan.index {
                continue;
            }
            for t in plans[other].frames.iter().filter(|t| t.pair.is_some()) {
                let flow = FlowField::from_fn(f.id.clone(), t.id.clone(), w, h, gw, gh, |px| {
                    let ray = f.camera.backproject_ray(&px).ok()?;
                    let hit = ray_hit(&origin, &ray.direction)?;
                    let (q, depth) = t.camera.project(&hit).ok()?;
                    // Targets beyond the image border stay valid, as dense flow does.
                    (depth > 0.0).then_some(q)
                })
                .map_err(|e| internal(&e))?;
                flows.push(flow);
            }
        }
    }

    let frames: Vec<(String, CameraModel)> = plan
        .frames
        .iter()
        .map(|f| (f.id.clone(), f.camera.transformed(w2m)))
        .collect();
    let reconstruction = Reconstruction::new(id.clone(), model_points, frames, observations)
        .map_err(|e| internal(&e))?;

    let dir = PathBuf::from(&id);
    let mut entry = VideoEntry::new(id.clone());
    entry.group = group.name.clone();
    entry.metric_scale_cm = 100.0 / w2m.scale();
    entry.reconstruction = Some(dir.join("model.rec"));
    entry.features = Some(dir.join("features.lfd"));
    entry.global_descriptors = Some(dir.join("global.gdv"));
    entry.flow = Some(dir.join("flow.flo2"));
    if !plan.annotations.is_empty() {
        entry.annotations = Some(dir.join("keypoints.kp2"));
    }
    if !plan.narration.is_empty() {
        entry.narration = Some(dir.join("narration.nar"));
        entry.detections = Some(dir.join("hands.det"));
        entry.saliency = Some(dir.join("saliency.sal"));
    }
    Ok(SyntheticVideo {
        entry,
        reconstruction,
        features,
        global_descriptors: globals,
        flows,
        narration: plan.narration.clone(),
        detections: plan.detections.clone(),
        saliency: plan.saliency.clone(),
        annotations: plan.annotations.clone(),
    })
}

impl SyntheticScene {
    pub fn manifest(&self) -> Manifest {
        Manifest::new(self.videos.iter().map(|v| v.entry.clone()).collect())
    }

    /// The scene as a loaded dataset, without touching the filesystem.
    pub fn dataset(&self) -> Dataset {
        let videos = self
            .videos
            .iter()
            .map(|v| {
                let opt = |present: bool| present.then_some(());
                let data = VideoData {
                    entry: v.entry.clone(),
                    reconstruction: Some(v.reconstruction.clone()),
                    features: Some(v.features.clone()),
                    global_descriptors: Some(v.global_descriptors.clone()),
                    flows: Some(v.flows.clone()),
                    narration: opt(v.entry.narration.is_some()).map(|_| v.narration.clone()),
                    detections: opt(v.entry.detections.is_some()).map(|_| v.detections.clone()),
                    saliency: opt(v.entry.saliency.is_some()).map(|_| v.saliency.clone()),
                    annotations: opt(v.entry.annotations.is_some()).map(|_| v.annotations.clone()),
                };
                (v.entry.id.clone(), data)
            })
            .collect();
        Dataset {
            root: PathBuf::new(),
            videos,
            discarded: Vec::new(),
        }
    }

    /// Writes the manifest, all per-video files and the `gt/` bundle under
    /// `dir`. Returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, SynthError> {
        let results: Vec<Result<(), IoError>> = par::map(&self.videos, |v| {
            let path =
                |p: &Option<PathBuf>| dir.join(p.as_ref().expect("entry lists every written file"));
            write_reconstruction(&path(&v.entry.reconstruction), &v.reconstruction)?;
            write_features(&path(&v.entry.features), &v.features)?;
            write_global_descriptors(&path(&v.entry.global_descriptors), &v.global_descriptors)?;
            write_flows(&path(&v.entry.flow), &v.flows)?;
            if v.entry.annotations.is_some() {
                write_annotations(&path(&v.entry.annotations), &v.annotations)?;
            }
            if v.entry.narration.is_some() {
                write_narration(&path(&v.entry.narration), &v.narration)?;
                write_detections(&path(&v.entry.detections), &v.detections)?;
                write_saliency(&path(&v.entry.saliency), &v.saliency)?;
            }
            Ok(())
        });
        results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let manifest = dir.join("manifest.toml");
        write_file(&manifest, self.manifest().render())?;
        write_file(&dir.join("gt").join("truth.toml"), self.truth.render())?;
        if !self.queries.is_empty() {
            write_queries(&dir.join("gt").join("queries.gq"), &self.queries)?;
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{fit_similarity_umeyama, lift_matches};
    use crate::matching::{flow_filter, mutual_nn_match};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            videos: 3,
            points_per_strip: 60,
            keypoints: 4,
            object_cluster_points: 30,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small(4)).unwrap();
        let b = generate(&small(4)).unwrap();
        assert_eq!(a.truth, b.truth);
        for (x, y) in a.videos.iter().zip(&b.videos) {
            assert_eq!(x.reconstruction, y.reconstruction);
            assert_eq!(x.features, y.features);
            assert_eq!(x.flows, y.flows);
        }
        let c = generate(&small(5)).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn rejects_fractions_outside_unit_interval() {
        for bad in [-0.1, 1.5, f64::NAN] {
            let cfg = SynthConfig {
                outlier_fraction: bad,
                ..small(0)
            };
            assert!(matches!(generate(&cfg), Err(SynthError::InvalidConfig(_))));
        }
        let cfg = SynthConfig {
            distractor_fraction: 2.0,
            ..small(0)
        };
        assert!(matches!(cfg.validate(), Err(SynthError::InvalidConfig(_))));
    }

    fn data_of<'a>(s: &'a SyntheticScene, id: &str) -> &'a SyntheticVideo {
        s.videos.iter().find(|v| v.entry.id == id).unwrap()
    }

    #[test]
    fn raw_matches_carry_exactly_the_planted_corruption() {
        let cfg = SynthConfig {
            outlier_fraction: 0.3,
            ..small(7)
        };
        let s = generate(&cfg).unwrap();
        assert!(!s.truth.frame_pairs.is_empty());
        for fp in &s.truth.frame_pairs {
            let (va, vb) = (data_of(&s, &fp.video_a), data_of(&s, &fp.video_b));
            let fa = va
                .features
                .iter()
                .find(|f| f.frame_id() == fp.frame_a)
                .unwrap();
            let fb = vb
                .features
                .iter()
                .find(|f| f.frame_id() == fp.frame_b)
                .unwrap();
            let raw = mutual_nn_match(fa, fb).unwrap();
            let pid = |rec: &Reconstruction, frame: &str, idx: usize| {
                rec.frame_observations(frame)
                    .find(|o| o.keypoint_index as usize == idx)
                    .unwrap()
                    .point_id
            };
            let wrong = raw
                .matches
                .iter()
                .filter(|m| {
                    pid(&va.reconstruction, &fp.frame_a, m.index_a)
                        != pid(&vb.reconstruction, &fp.frame_b, m.index_b)
                })
                .count();
            assert_eq!(raw.len(), fp.common_points, "{fp:?}");
            assert_eq!(wrong, fp.corrupted, "{fp:?}");
            let expect = (0.3 * fp.common_points as f64).round() as usize;
            assert_eq!(fp.corrupted, if expect == 1 { 0 } else { expect });
        }
    }

    #[test]
    fn noise_free_correspondences_recover_planted_transforms() {
        let cfg = SynthConfig {
            pixel_noise: 0.0,
            outlier_fraction: 0.25,
            ..small(11)
        };
        let s = generate(&cfg).unwrap();
        for fp in s.truth.frame_pairs.iter().filter(|f| !f.low_overlap) {
            let (va, vb) = (data_of(&s, &fp.video_a), data_of(&s, &fp.video_b));
            let fa = va
                .features
                .iter()
                .find(|f| f.frame_id() == fp.frame_a)
                .unwrap();
            let fb = vb
                .features
                .iter()
                .find(|f| f.frame_id() == fp.frame_b)
                .unwrap();
            let flow = va
                .flows
                .iter()
                .find(|f| f.source_frame_id() == fp.frame_a && f.target_frame_id() == fp.frame_b)
                .unwrap();
            let kept = flow_filter(&mutual_nn_match(fa, fb).unwrap(), flow, 8.0).unwrap();
            assert_eq!(kept.len(), fp.common_points - fp.corrupted);
            let corr = lift_matches(&kept, &va.reconstruction, &vb.reconstruction, 2.0).unwrap();
            let src: Vec<Vec3> = corr.iter().map(|c| c.point_a).collect();
            let dst: Vec<Vec3> = corr.iter().map(|c| c.point_b).collect();
            let fit = fit_similarity_umeyama(&src, &dst).unwrap();
            let planted = s.truth.relative(&fp.video_a, &fp.video_b).unwrap();
            assert!(
                fit.max_abs_diff(&planted) < 1e-7,
                "{}",
                fit.max_abs_diff(&planted)
            );
        }
    }

    #[test]
    fn flow_agrees_with_projected_geometry() {
        let s = generate(&SynthConfig {
            pixel_noise: 0.0,
            ..small(3)
        })
        .unwrap();
        let truth = &s.truth;
        let v0 = data_of(&s, "v00");
        let v1 = data_of(&s, "v01");
        let fp = truth
            .frame_pairs
            .iter()
            .find(|f| f.video_a == "v00" && f.video_b == "v01")
            .unwrap();
        let flow = v0
            .flows
            .iter()
            .find(|f| f.source_frame_id() == fp.frame_a && f.target_frame_id() == fp.frame_b)
            .unwrap();
        let mut worst: f64 = 0.0;
        let to_b = truth.relative("v00", "v01").unwrap();
        let cam_b = v1.reconstruction.camera(&fp.frame_b).unwrap();
        for o in v0.reconstruction.frame_observations(&fp.frame_a) {
            let p = to_b.apply(v0.reconstruction.point(o.point_id).unwrap());
            let (expect, _) = cam_b.project(&p).unwrap();
            if let Some(q) = flow.sample(&o.pixel) {
                worst = worst.max((q - expect).norm());
            }
        }
        assert!(worst < 1.0, "flow interpolation error {worst}");
    }

    #[test]
    fn truth_round_trips_through_toml() {
        let s = generate(&small(2)).unwrap();
        let back = GroundTruth::parse(&s.truth.render()).unwrap();
        assert_eq!(back, s.truth);
    }

    #[test]
    fn narration_targets_objects() {
        let cfg = SynthConfig {
            videos: 1,
            segments_per_video: 20,
            keypoints: 0,
            ..small(9)
        };
        let s = generate(&cfg).unwrap();
        let v = &s.videos[0];
        assert_eq!(v.narration.len(), 20);
        assert_eq!(
            s.queries.len(),
            cfg.objects.len() * cfg.query_templates.len()
        );
        for seg in &v.narration {
            assert_eq!(seg.frames.len(), 3);
            assert!(seg.frames.iter().all(|f| v.reconstruction.has_frame(f)));
        }
    }
}
