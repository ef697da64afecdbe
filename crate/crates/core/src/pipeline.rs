//! End-to-end stages over a loaded dataset: retrieval and matching, flow
//! filtering, lifting and graph construction, registration, keypoint
//! transfer with its evaluation, and grounding data preparation.
//!
//! Videos are only compared within their group. Every stage is a plain
//! function of the dataset and configuration; all randomness is derived from
//! `PipelineConfig::seed`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{
    build_alignment_graph, lift_matches, path_transform, register_all, AlignError, AlignmentGraph,
    Correspondence3D, EdgeFailure, RansacConfig, Registration,
};
use crate::geometry::{Keypoints3D, Reconstruction, SimilarityTransform3, Vec3};
use crate::grounding::{
    anchor_segments, build_voxel_grid, evaluate_grounding, label_anchored, train_grounding,
    AnchorContext, AnchorStrategy, DropReason, GroundingError, GroundingEvaluation, GroundingModel,
    GroundingQuery, NarrationSegment, TrainConfig, TrainReport, TrainingTask, VoxelGrid,
    DEFAULT_DIVISIONS, DEFAULT_N_V, DEFAULT_RADIUS_PX,
};
use crate::io::{Dataset, DatasetErrors, IoError, LoadOptions};
use crate::matching::{
    flow_filter, mutual_nn_match, retrieve_frame_pairs, FramePair, MatchError, MatchSet,
};
use crate::par;
use crate::sampling::labeled_seed;
use crate::transfer::{
    check_consistency, mean_pck_over_pairs, pck_3d, transfer_keypoints, triangulate_keypoints,
    PckCurve, TransferError, TriangulatedKeypoints, DEFAULT_CONSISTENCY_RATIO,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Dataset(#[from] DatasetErrors),
    #[error("matching {context}: {source}")]
    Matching { context: String, source: MatchError },
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl PipelineError {
    /// Errors that indicate a bug rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Self::Internal(_))
    }
}

/// How grounding PCK thresholds are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdUnit {
    Centimetres,
    VoxelDiagonals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingSettings {
    pub strategy: AnchorStrategy,
    pub radius_px: f64,
    pub divisions: usize,
    pub n_v: usize,
    pub train: TrainConfig,
    pub thresholds: Vec<f64>,
    pub threshold_unit: ThresholdUnit,
}

impl Default for GroundingSettings {
    fn default() -> Self {
        Self {
            strategy: AnchorStrategy::CenterOfFrame,
            radius_px: DEFAULT_RADIUS_PX,
            divisions: DEFAULT_DIVISIONS,
            n_v: DEFAULT_N_V,
            train: TrainConfig::default(),
            thresholds: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0],
            threshold_unit: ThresholdUnit::Centimetres,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Frame pairs retrieved per video pair.
    pub retrieval_pairs: usize,
    pub flow_filter: bool,
    pub flow_tolerance_px: f64,
    pub assoc_radius_px: f64,
    pub ransac: RansacConfig,
    pub pck_thresholds_cm: Vec<f64>,
    pub consistency_ratio: f64,
    pub min_points: usize,
    pub frames_per_video: usize,
    pub grounding: GroundingSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let load = LoadOptions::default();
        Self {
            seed: 0,
            retrieval_pairs: 4,
            flow_filter: true,
            flow_tolerance_px: 8.0,
            assoc_radius_px: crate::alignment::DEFAULT_ASSOC_RADIUS,
            ransac: RansacConfig::default(),
            pck_thresholds_cm: (1..=20).map(f64::from).collect(),
            consistency_ratio: DEFAULT_CONSISTENCY_RATIO,
            min_points: load.min_points,
            frames_per_video: load.frames_per_video,
            grounding: GroundingSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.retrieval_pairs == 0 {
            return bad("retrieval_pairs must be at least 1");
        }
        if !(self.flow_tolerance_px > 0.0 && self.assoc_radius_px > 0.0) {
            return bad("flow_tolerance_px and assoc_radius_px must be positive");
        }
        if self.consistency_ratio.is_nan() || self.consistency_ratio <= 0.0 {
            return bad("consistency_ratio must be positive");
        }
        if self.grounding.divisions == 0 || self.grounding.n_v == 0 {
            return bad("grounding divisions and n_v must be positive");
        }
        self.ransac.validate()?;
        self.grounding.train.validate()?;
        Ok(())
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            min_points: self.min_points,
            frames_per_video: self.frames_per_video,
        }
    }

    /// RANSAC settings with the seed derived from the pipeline seed.
    pub fn seeded_ransac(&self) -> RansacConfig {
        RansacConfig {
            seed: labeled_seed(self.seed, "ransac"),
            ..self.ransac.clone()
        }
    }

    pub fn seeded_train(&self) -> TrainConfig {
        TrainConfig {
            seed: labeled_seed(self.seed, "train"),
            ..self.grounding.train.clone()
        }
    }

    pub fn chance_seed(&self) -> u64 {
        labeled_seed(self.seed, "chance")
    }
}

/// Matches between two videos of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatches {
    pub video_a: String,
    pub video_b: String,
    pub retrieved: Vec<FramePair>,
    pub raw: Vec<MatchSet>,
    /// Equal to `raw` when flow filtering is disabled.
    pub filtered: Vec<MatchSet>,
}

/// Ordered `(a, b)` pairs with `a < b` inside each group, restricted to
/// videos that have everything matching needs.
fn matchable_pairs(ds: &Dataset) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for members in ds.groups().values() {
        let ready: Vec<&String> = members
            .iter()
            .filter(|id| {
                let v = &ds.videos[*id];
                let ok = v.reconstruction.is_some() && v.global_descriptors.is_some() && v.features.is_some();
                if !ok {
                    log::warn!("video {id}: no reconstruction, global descriptors or features; skipped for matching");
                }
                ok
            })
            .collect();
        for (i, a) in ready.iter().enumerate() {
            for b in &ready[i + 1..] {
                out.push(((*a).clone(), (*b).clone()));
            }
        }
    }
    out
}

fn match_pair(
    ds: &Dataset,
    a: &str,
    b: &str,
    cfg: &PipelineConfig,
) -> Result<PairMatches, PipelineError> {
    let (va, vb) = (&ds.videos[a], &ds.videos[b]);
    let ctx = |what: String| {
        move |source| PipelineError::Matching {
            context: what,
            source,
        }
    };
    let ga = va.global_descriptors.as_deref().unwrap_or_default();
    let gb = vb.global_descriptors.as_deref().unwrap_or_default();
    let retrieved =
        retrieve_frame_pairs(ga, gb, cfg.retrieval_pairs).map_err(ctx(format!("{a} / {b}")))?;
    let mut raw = Vec::with_capacity(retrieved.len());
    let mut filtered = Vec::with_capacity(retrieved.len());
    for fp in &retrieved {
        let fa = va.features_of(&fp.frame_a).ok_or_else(|| {
            PipelineError::MissingInput(format!(
                "local features for frame {} of video {a}",
                fp.frame_a
            ))
        })?;
        let fb = vb.features_of(&fp.frame_b).ok_or_else(|| {
            PipelineError::MissingInput(format!(
                "local features for frame {} of video {b}",
                fp.frame_b
            ))
        })?;
        let m = mutual_nn_match(fa, fb).map_err(ctx(format!("{} / {}", fp.frame_a, fp.frame_b)))?;
        if cfg.flow_filter {
            let flow = va.flow_to(&fp.frame_a, &fp.frame_b).ok_or_else(|| {
                PipelineError::MissingInput(format!(
                    "flow from {} to {} in video {a}",
                    fp.frame_a, fp.frame_b
                ))
            })?;
            filtered.push(
                flow_filter(&m, flow, cfg.flow_tolerance_px)
                    .map_err(ctx(format!("{} / {}", fp.frame_a, fp.frame_b)))?,
            );
        } else {
            filtered.push(m.clone());
        }
        raw.push(m);
    }
    Ok(PairMatches {
        video_a: a.into(),
        video_b: b.into(),
        retrieved,
        raw,
        filtered,
    })
}

/// Retrieval, mutual nearest-neighbour matching and flow filtering for every
/// video pair of every group.
pub fn match_videos(ds: &Dataset, cfg: &PipelineConfig) -> Result<Vec<PairMatches>, PipelineError> {
    cfg.validate()?;
    let pairs = matchable_pairs(ds);
    par::map(&pairs, |(a, b)| match_pair(ds, a, b, cfg))
        .into_iter()
        .collect()
}

fn reconstruction<'a>(ds: &'a Dataset, id: &str) -> Result<&'a Reconstruction, PipelineError> {
    ds.videos
        .get(id)
        .and_then(|v| v.reconstruction.as_ref())
        .ok_or_else(|| PipelineError::MissingInput(format!("reconstruction of video {id}")))
}

/// Distinct 3D-3D correspondences per video pair from the filtered matches.
pub fn lift_all(
    ds: &Dataset,
    matches: &[PairMatches],
    cfg: &PipelineConfig,
) -> Result<BTreeMap<(String, String), Vec<Correspondence3D>>, PipelineError> {
    let lifted = par::map(matches, |pm| -> Result<_, PipelineError> {
        let (ra, rb) = (
            reconstruction(ds, &pm.video_a)?,
            reconstruction(ds, &pm.video_b)?,
        );
        // The same track pair reached through several frame pairs is one
        // correspondence; duplicates would inflate inlier counts.
        let mut seen = std::collections::HashSet::new();
        let mut corr = Vec::new();
        for set in &pm.filtered {
            for c in lift_matches(set, ra, rb, cfg.assoc_radius_px)? {
                let key: [u64; 6] = [
                    c.point_a.x,
                    c.point_a.y,
                    c.point_a.z,
                    c.point_b.x,
                    c.point_b.y,
                    c.point_b.z,
                ]
                .map(f64::to_bits);
                if seen.insert(key) {
                    corr.push(c);
                }
            }
        }
        Ok(((pm.video_a.clone(), pm.video_b.clone()), corr))
    });
    lifted.into_iter().collect()
}

/// Alignment graph over every reconstruction; edges only join videos of the same group.
pub fn build_graph(
    ds: &Dataset,
    matches: &[PairMatches],
    cfg: &PipelineConfig,
) -> Result<(AlignmentGraph, Vec<EdgeFailure>), PipelineError> {
    let pairwise = lift_all(ds, matches, cfg)?;
    let nodes: Vec<String> = ds
        .videos
        .iter()
        .filter(|(_, v)| v.reconstruction.is_some())
        .map(|(id, _)| id.clone())
        .collect();
    let diagonals: HashMap<String, f64> = ds
        .videos
        .iter()
        .filter_map(|(id, v)| {
            let (lo, hi) = v.reconstruction.as_ref()?.bounds()?;
            Some((id.clone(), (hi - lo).norm()))
        })
        .collect();
    Ok(build_alignment_graph(
        &nodes,
        &pairwise,
        &cfg.seeded_ransac(),
        &diagonals,
    )?)
}

/// Registers each group to its reference: `reference` for the group that
/// contains it, the smallest id for every other group.
pub fn register_groups(
    ds: &Dataset,
    graph: &AlignmentGraph,
    reference: Option<&str>,
) -> Result<BTreeMap<String, Registration>, PipelineError> {
    if let Some(r) = reference {
        if !graph.contains(r) {
            return Err(AlignError::UnknownReference(r.to_string()).into());
        }
    }
    let mut out = BTreeMap::new();
    for (group, members) in ds.groups() {
        let members: Vec<String> = members.into_iter().filter(|m| graph.contains(m)).collect();
        let Some(first) = members.first() else {
            continue;
        };
        let reference = reference
            .filter(|r| members.iter().any(|m| m == r))
            .unwrap_or(first);
        let mut reg = register_all(graph, reference)?;
        reg.transforms.retain(|id, _| members.contains(id));
        reg.unregistered.retain(|id| members.contains(id));
        out.insert(group, reg);
    }
    Ok(out)
}

/// Keypoints triangulated in every video with annotations.
pub fn triangulate_all(ds: &Dataset) -> BTreeMap<String, TriangulatedKeypoints> {
    let ids: Vec<&String> = ds
        .videos
        .iter()
        .filter(|(_, v)| v.reconstruction.is_some() && v.annotations.is_some())
        .map(|(id, _)| id)
        .collect();
    let tri = par::map(&ids, |id| {
        let v = &ds.videos[*id];
        triangulate_keypoints(
            v.annotations.as_deref().unwrap_or_default(),
            v.reconstruction.as_ref().expect("filtered"),
        )
    });
    ids.into_iter().cloned().zip(tri).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Compose transforms along the preferred shortest path.
    Graph,
    /// Only a direct edge between source and target.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferredKeypoints {
    pub source: String,
    pub target: String,
    pub keypoints: Keypoints3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferFailure {
    pub source: String,
    pub target: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransferRun {
    pub transfers: Vec<TransferredKeypoints>,
    pub failures: Vec<TransferFailure>,
}

fn source_transform(
    graph: &AlignmentGraph,
    mode: TransferMode,
    s: &str,
    t: &str,
) -> Result<SimilarityTransform3, String> {
    match mode {
        TransferMode::Graph => path_transform(graph, s, t).map_err(|e| e.to_string()),
        TransferMode::Direct => graph
            .edge_transform(s, t)
            .ok_or_else(|| format!("no direct edge between {s} and {t}")),
    }
}

/// Transfers each annotated video's keypoints to every other video of its
/// group (or only those from `source` when given).
pub fn transfer_all(
    ds: &Dataset,
    graph: &AlignmentGraph,
    triangulated: &BTreeMap<String, TriangulatedKeypoints>,
    mode: TransferMode,
    source: Option<&str>,
) -> Result<TransferRun, PipelineError> {
    if let Some(s) = source {
        if !ds.videos.contains_key(s) {
            return Err(PipelineError::MissingInput(format!(
                "unknown source video {s}"
            )));
        }
        if !triangulated.contains_key(s) {
            return Err(PipelineError::MissingInput(format!(
                "video {s} has no keypoint annotations"
            )));
        }
    }
    let mut run = TransferRun::default();
    for members in ds.groups().values() {
        for s in members
            .iter()
            .filter(|s| source.is_none_or(|x| x == s.as_str()))
        {
            let Some(k_src) = triangulated.get(s).and_then(|t| t.keypoints.as_ref()) else {
                continue;
            };
            for t in members.iter().filter(|t| *t != s && graph.contains(t)) {
                let result = if graph.contains(s) {
                    source_transform(graph, mode, s, t)
                } else {
                    Err(format!("{s} is not in the graph"))
                };
                match result {
                    Ok(tr) => run.transfers.push(TransferredKeypoints {
                        source: s.clone(),
                        target: t.clone(),
                        keypoints: transfer_keypoints(k_src, &tr),
                    }),
                    Err(reason) => run.failures.push(TransferFailure {
                        source: s.clone(),
                        target: t.clone(),
                        reason,
                    }),
                }
            }
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairPck {
    pub source: String,
    pub target: String,
    pub curve: PckCurve,
    /// Whether a prediction existed; missing predictions score zero.
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPair {
    pub source: String,
    pub target: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferEvaluation {
    pub pairs: Vec<PairPck>,
    pub skipped: Vec<SkippedPair>,
    pub mean: Option<PckCurve>,
}

/// PCK of transferred keypoints against the ground truth `S_GT · K_src`,
/// where `S_GT` is fit between the two videos' own triangulations. Pairs
/// whose annotations disagree beyond the consistency ratio are skipped.
pub fn evaluate_transfer(
    ds: &Dataset,
    triangulated: &BTreeMap<String, TriangulatedKeypoints>,
    predictions: &[TransferredKeypoints],
    cfg: &PipelineConfig,
) -> Result<TransferEvaluation, PipelineError> {
    let thresholds = &cfg.pck_thresholds_cm;
    let zero = PckCurve::new(thresholds.clone(), vec![0.0; thresholds.len()])?;
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for members in ds.groups().values() {
        for s in members {
            let Some(k_src) = triangulated.get(s).and_then(|t| t.keypoints.as_ref()) else {
                continue;
            };
            for t in members.iter().filter(|t| *t != s) {
                let Some(k_tgt) = triangulated.get(t).and_then(|x| x.keypoints.as_ref()) else {
                    continue;
                };
                let skip = |reason: String| SkippedPair {
                    source: s.clone(),
                    target: t.clone(),
                    reason,
                };
                let report = match check_consistency(k_src, k_tgt, cfg.consistency_ratio) {
                    Ok(r) => r,
                    Err(e) => {
                        skipped.push(skip(e.to_string()));
                        continue;
                    }
                };
                if !report.admitted {
                    skipped.push(skip(format!(
                        "annotation residual {:.4} exceeds {} of diameter {:.4}",
                        report.rms, cfg.consistency_ratio, report.diameter
                    )));
                    continue;
                }
                let gt = transfer_keypoints(k_src, &report.transform);
                let pred = predictions
                    .iter()
                    .find(|p| &p.source == s && &p.target == t);
                let curve = match pred {
                    Some(p) => pck_3d(
                        &p.keypoints,
                        &gt,
                        thresholds,
                        ds.videos[t].entry.metric_scale_cm,
                    )?,
                    None => zero.clone(),
                };
                pairs.push(PairPck {
                    source: s.clone(),
                    target: t.clone(),
                    curve,
                    predicted: pred.is_some(),
                });
            }
        }
    }
    let curves: Vec<PckCurve> = pairs.iter().map(|p| p.curve.clone()).collect();
    let mean = if curves.is_empty() {
        None
    } else {
        Some(mean_pck_over_pairs(&curves)?)
    };
    Ok(TransferEvaluation {
        pairs,
        skipped,
        mean,
    })
}

/// Everything needed to train and evaluate grounding.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingData {
    pub grids: BTreeMap<String, VoxelGrid>,
    pub tasks: BTreeMap<String, TrainingTask>,
    pub dropped: BTreeMap<String, BTreeMap<DropReason, usize>>,
    /// Centimetres per reference-frame unit, per group.
    pub metric_scales: BTreeMap<String, f64>,
}

/// Anchors every narrated segment, builds one voxel grid per group over its
/// registered points and labels the anchored segments.
pub fn prepare_grounding(
    ds: &Dataset,
    registrations: &BTreeMap<String, Registration>,
    settings: &GroundingSettings,
) -> Result<GroundingData, PipelineError> {
    let reconstructions = ds.reconstructions();
    let detections = ds
        .videos
        .iter()
        .filter_map(|(id, v)| Some((id.clone(), v.detections.clone()?)))
        .collect();
    let saliency = ds
        .videos
        .iter()
        .filter_map(|(id, v)| Some((id.clone(), v.saliency.clone()?)))
        .collect();
    let mut data = GroundingData {
        grids: BTreeMap::new(),
        tasks: BTreeMap::new(),
        dropped: BTreeMap::new(),
        metric_scales: BTreeMap::new(),
    };
    for (group, members) in ds.groups() {
        let mut segments = Vec::new();
        for id in &members {
            let v = &ds.videos[id];
            let (Some(rec), Some(nar)) = (&v.reconstruction, &v.narration) else {
                continue;
            };
            for r in nar {
                match NarrationSegment::from_frames(id, &r.text, &r.frames, rec) {
                    Some(s) => segments.push(s),
                    None => {
                        *data
                            .dropped
                            .entry(group.clone())
                            .or_default()
                            .entry(DropReason::UnknownFrame)
                            .or_insert(0) += 1
                    }
                }
            }
        }
        if segments.is_empty() {
            continue;
        }
        let Some(reg) = registrations.get(&group) else {
            return Err(PipelineError::MissingInput(format!(
                "registration for group {group}"
            )));
        };
        let ctx = AnchorContext {
            reconstructions: &reconstructions,
            to_reference: &reg.transforms,
            detections: &detections,
            saliency: &saliency,
            radius_px: settings.radius_px,
        };
        let (anchored, dropped) = anchor_segments(&segments, settings.strategy, &ctx)?;
        let registered: Vec<Vec3> = reg
            .transforms
            .iter()
            .filter_map(|(id, t)| {
                Some(
                    reconstructions
                        .get(id)?
                        .point_coords()
                        .map(|p| t.apply(p))
                        .collect::<Vec<_>>(),
                )
            })
            .flatten()
            .collect();
        let anchors: Vec<Vec3> = anchored.iter().map(|a| a.point).collect();
        let grid = build_voxel_grid(&registered, settings.divisions, &anchors, settings.n_v)?;
        let generated = label_anchored(&segments, &anchored, settings.strategy, &grid);
        let drops = data.dropped.entry(group.clone()).or_default();
        for (r, n) in dropped.into_iter().chain(generated.dropped) {
            *drops.entry(r).or_insert(0) += n;
        }
        let scale = ds.videos[&reg.reference].entry.metric_scale_cm;
        data.metric_scales.insert(group.clone(), scale);
        data.tasks.insert(
            group.clone(),
            TrainingTask {
                n_v: grid.n_v(),
                pairs: generated.pairs,
            },
        );
        data.grids.insert(group, grid);
    }
    Ok(data)
}

/// Trains one shared encoder with a head per group that has training pairs.
pub fn train(
    data: &GroundingData,
    cfg: &PipelineConfig,
) -> Result<(GroundingModel, TrainReport), PipelineError> {
    let tasks: BTreeMap<String, TrainingTask> = data
        .tasks
        .iter()
        .filter(|(_, t)| !t.pairs.is_empty())
        .map(|(k, t)| (k.clone(), t.clone()))
        .collect();
    if tasks.is_empty() {
        return Err(GroundingError::EmptyTrainingSet.into());
    }
    Ok(train_grounding(&tasks, &cfg.seeded_train())?)
}

/// Grounding PCK against the chance baseline. Thresholds follow the
/// configured unit; for voxel diagonals each group's distances are divided
/// by its grid's voxel diagonal.
pub fn evaluate_queries(
    queries: &[GroundingQuery],
    model: &GroundingModel,
    grids: &BTreeMap<String, VoxelGrid>,
    metric_scales: &BTreeMap<String, f64>,
    cfg: &PipelineConfig,
) -> Result<GroundingEvaluation, PipelineError> {
    let scales: BTreeMap<String, f64> = match cfg.grounding.threshold_unit {
        ThresholdUnit::Centimetres => metric_scales.clone(),
        ThresholdUnit::VoxelDiagonals => grids
            .iter()
            .map(|(k, g)| (k.clone(), 1.0 / g.voxel_diagonal()))
            .collect(),
    };
    Ok(evaluate_grounding(
        queries,
        model,
        grids,
        &cfg.grounding.thresholds,
        &scales,
        cfg.chance_seed(),
    )?)
}
