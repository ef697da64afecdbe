//! Dataset manifest and validated loading.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::text::NarrationRecord;
use super::{
    read_annotations, read_detections, read_features, read_flows, read_global_descriptors,
    read_narration, read_reconstruction, read_saliency, read_string, DatasetErrors, IoError,
    SUPPORTED_VERSIONS,
};
use crate::geometry::Reconstruction;
use crate::grounding::{Detection2D, SaliencyMap};
use crate::matching::{FlowField, GlobalDescriptor, LocalFeatureSet};
use crate::par;
use crate::transfer::KeypointAnnotation2D;

pub const MANIFEST_VERSION: u32 = 1;

fn default_group() -> String {
    "default".into()
}

fn default_scale() -> f64 {
    1.0
}

/// One video. Every data file is optional; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    /// Car model the video shows; videos are only aligned within a group.
    #[serde(default = "default_group")]
    pub group: String,
    /// Centimetres per reconstruction unit.
    #[serde(default = "default_scale")]
    pub metric_scale_cm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_descriptors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narration: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
}

impl VideoEntry {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            group: default_group(),
            metric_scale_cm: 1.0,
            reconstruction: None,
            features: None,
            global_descriptors: None,
            flow: None,
            narration: None,
            detections: None,
            saliency: None,
            annotations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(default)]
    pub videos: Vec<VideoEntry>,
}

impl Manifest {
    pub fn new(videos: Vec<VideoEntry>) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            videos,
        }
    }

    pub fn parse(file: &str, content: &str) -> Result<Self, IoError> {
        let parse_err = |e: toml::de::Error| IoError::Parse {
            file: file.into(),
            line: e
                .span()
                .map(|s| content[..s.start].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_string(),
        };
        let table: toml::Table = content.parse().map_err(parse_err)?;
        let version = table.get("format_version").and_then(|v| v.as_integer());
        if !version.is_some_and(|v| SUPPORTED_VERSIONS.iter().any(|&s| s as i64 == v)) {
            return Err(IoError::UnsupportedVersion {
                file: file.into(),
                format: "manifest".into(),
                found: table
                    .get("format_version")
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "(missing)".into()),
                supported: SUPPORTED_VERSIONS.to_vec(),
            });
        }
        let m: Manifest = toml::from_str(content).map_err(parse_err)?;
        let mut seen = HashSet::new();
        for v in &m.videos {
            if v.id.is_empty() || v.id.contains(['\t', '\n', '\r', '/']) {
                return Err(IoError::invariant(
                    file,
                    None,
                    format!("invalid video id {:?}", v.id),
                ));
            }
            if !seen.insert(&v.id) {
                return Err(IoError::invariant(
                    file,
                    None,
                    format!("duplicate video id {}", v.id),
                ));
            }
            if !(v.metric_scale_cm.is_finite() && v.metric_scale_cm > 0.0) {
                return Err(IoError::invariant(
                    file,
                    None,
                    format!("video {}: metric_scale_cm must be positive", v.id),
                ));
            }
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("manifest is always representable in TOML")
    }
}

/// Ingestion settings for the upstream reconstruction stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    /// Reconstructions with fewer points are discarded as too small.
    pub min_points: usize,
    /// Frames sampled per video by the reconstruction stage; more registered
    /// frames than this only triggers a warning.
    pub frames_per_video: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            min_points: 50,
            frames_per_video: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoData {
    pub entry: VideoEntry,
    pub reconstruction: Option<Reconstruction>,
    pub features: Option<Vec<LocalFeatureSet>>,
    pub global_descriptors: Option<Vec<GlobalDescriptor>>,
    pub flows: Option<Vec<FlowField>>,
    pub narration: Option<Vec<NarrationRecord>>,
    pub detections: Option<Vec<Detection2D>>,
    pub saliency: Option<Vec<SaliencyMap>>,
    pub annotations: Option<Vec<KeypointAnnotation2D>>,
}

impl VideoData {
    pub fn features_of(&self, frame: &str) -> Option<&LocalFeatureSet> {
        self.features
            .as_ref()?
            .iter()
            .find(|f| f.frame_id() == frame)
    }

    pub fn flow_to(&self, source: &str, target: &str) -> Option<&FlowField> {
        self.flows
            .as_ref()?
            .iter()
            .find(|f| f.source_frame_id() == source && f.target_frame_id() == target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub videos: BTreeMap<String, VideoData>,
    /// Videos dropped because their reconstruction was too small.
    pub discarded: Vec<String>,
}

impl Dataset {
    /// Video ids grouped by car model.
    pub fn groups(&self) -> BTreeMap<String, Vec<String>> {
        let mut g: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (id, v) in &self.videos {
            g.entry(v.entry.group.clone()).or_default().push(id.clone());
        }
        g
    }

    pub fn reconstructions(&self) -> BTreeMap<String, Reconstruction> {
        self.videos
            .iter()
            .filter_map(|(id, v)| v.reconstruction.clone().map(|r| (id.clone(), r)))
            .collect()
    }
}

fn load_opt<T>(
    root: &Path,
    p: &Option<PathBuf>,
    errors: &mut Vec<IoError>,
    f: impl FnOnce(&Path) -> Result<T, IoError>,
) -> Option<T> {
    let path = root.join(p.as_ref()?);
    f(&path).map_err(|e| errors.push(e)).ok()
}

fn load_video(root: &Path, entry: &VideoEntry) -> (VideoData, Vec<IoError>) {
    let mut errs = Vec::new();
    let data = VideoData {
        entry: entry.clone(),
        reconstruction: load_opt(root, &entry.reconstruction, &mut errs, read_reconstruction),
        features: load_opt(root, &entry.features, &mut errs, read_features),
        global_descriptors: load_opt(
            root,
            &entry.global_descriptors,
            &mut errs,
            read_global_descriptors,
        ),
        flows: load_opt(root, &entry.flow, &mut errs, read_flows),
        narration: load_opt(root, &entry.narration, &mut errs, read_narration),
        detections: load_opt(root, &entry.detections, &mut errs, read_detections),
        saliency: load_opt(root, &entry.saliency, &mut errs, read_saliency),
        annotations: load_opt(root, &entry.annotations, &mut errs, read_annotations),
    };
    (data, errs)
}

fn file_of(root: &Path, p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| root.join(p).display().to_string())
        .unwrap_or_default()
}

/// Checks references between a video's files.
fn cross_check(root: &Path, v: &VideoData, errs: &mut Vec<IoError>) {
    let e = &v.entry;
    let mut fail =
        |p: &Option<PathBuf>, m: String| errs.push(IoError::invariant(&file_of(root, p), None, m));
    let Some(rec) = &v.reconstruction else {
        for (p, present) in [
            (&e.features, v.features.is_some()),
            (&e.flow, v.flows.is_some()),
            (&e.narration, v.narration.is_some()),
        ] {
            if present {
                fail(
                    p,
                    format!("video {} has no reconstruction to reference", e.id),
                );
            }
        }
        return;
    };
    if rec.id() != e.id {
        fail(
            &e.reconstruction,
            format!(
                "reconstruction id {} differs from video id {}",
                rec.id(),
                e.id
            ),
        );
    }
    let mut seen = HashSet::new();
    for f in v.features.iter().flatten() {
        match rec.camera(f.frame_id()) {
            None => fail(
                &e.features,
                format!("features for unknown frame {}", f.frame_id()),
            ),
            Some(cam) => {
                if let Some(p) = f.positions().iter().find(|p| !cam.contains(p)) {
                    fail(
                        &e.features,
                        format!(
                            "frame {}: feature position ({}, {}) outside the image",
                            f.frame_id(),
                            p.x,
                            p.y
                        ),
                    );
                }
            }
        }
        if !seen.insert(f.frame_id()) {
            fail(
                &e.features,
                format!("duplicate feature set for frame {}", f.frame_id()),
            );
        }
    }
    for g in v.global_descriptors.iter().flatten() {
        if !rec.has_frame(&g.frame_id) {
            fail(
                &e.global_descriptors,
                format!("descriptor for unknown frame {}", g.frame_id),
            );
        }
    }
    for f in v.flows.iter().flatten() {
        match rec.camera(f.source_frame_id()) {
            None => fail(
                &e.flow,
                format!("flow from unknown frame {}", f.source_frame_id()),
            ),
            Some(cam) if (cam.width(), cam.height()) != f.source_size() => fail(
                &e.flow,
                format!(
                    "flow from {} records size {:?}, frame is {}x{}",
                    f.source_frame_id(),
                    f.source_size(),
                    cam.width(),
                    cam.height()
                ),
            ),
            _ => {}
        }
    }
    for s in v.narration.iter().flatten() {
        if s.video_id != e.id {
            fail(
                &e.narration,
                format!("segment for video {} in the file of {}", s.video_id, e.id),
            );
        }
    }
    for d in v.detections.iter().flatten() {
        match rec.camera(&d.frame_id) {
            None => fail(
                &e.detections,
                format!("detection in unknown frame {}", d.frame_id),
            ),
            Some(cam) if !cam.contains(&d.pixel) => fail(
                &e.detections,
                format!("detection in frame {} outside the image", d.frame_id),
            ),
            _ => {}
        }
    }
    for m in v.saliency.iter().flatten() {
        if !rec.has_frame(m.frame_id()) {
            fail(
                &e.saliency,
                format!("saliency map for unknown frame {}", m.frame_id()),
            );
        }
    }
    for a in v.annotations.iter().flatten() {
        if a.video_id != e.id {
            fail(
                &e.annotations,
                format!(
                    "annotation for video {} in the file of {}",
                    a.video_id, e.id
                ),
            );
        }
    }
}

/// Loads and validates everything a manifest references. Every problem found
/// is reported, each with its file and, where known, line.
pub fn load_dataset(manifest_path: &Path, opts: &LoadOptions) -> Result<Dataset, DatasetErrors> {
    let content = read_string(manifest_path).map_err(|e| DatasetErrors(vec![e]))?;
    let manifest = Manifest::parse(&manifest_path.display().to_string(), &content)
        .map_err(|e| DatasetErrors(vec![e]))?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let loaded = par::map(&manifest.videos, |e| load_video(&root, e));
    let mut errors = Vec::new();
    let mut videos = BTreeMap::new();
    for (data, errs) in loaded {
        errors.extend(errs);
        cross_check(&root, &data, &mut errors);
        videos.insert(data.entry.id.clone(), data);
    }
    // Flow targets must be frames of some other video.
    let frames: HashSet<(&str, &str)> = videos
        .iter()
        .flat_map(|(id, v)| {
            v.reconstruction.iter().flat_map(move |r| {
                r.frames()
                    .iter()
                    .map(move |(f, _)| (id.as_str(), f.as_str()))
            })
        })
        .collect();
    for (id, v) in &videos {
        for f in v.flows.iter().flatten() {
            if !frames
                .iter()
                .any(|(vid, fr)| vid != id && *fr == f.target_frame_id())
            {
                errors.push(IoError::invariant(
                    &file_of(&root, &v.entry.flow),
                    None,
                    format!("flow targets unknown frame {}", f.target_frame_id()),
                ));
            }
        }
    }
    if !errors.is_empty() {
        return Err(DatasetErrors(errors));
    }
    let mut discarded = Vec::new();
    videos.retain(|id, v| {
        let Some(rec) = &v.reconstruction else {
            return true;
        };
        if rec.frames().len() > opts.frames_per_video {
            log::warn!(
                "video {id}: {} registered frames exceeds the configured {} per video",
                rec.frames().len(),
                opts.frames_per_video
            );
        }
        if rec.points().len() < opts.min_points {
            log::warn!(
                "video {id}: discarding reconstruction with {} points (< {})",
                rec.points().len(),
                opts.min_points
            );
            discarded.push(id.clone());
            return false;
        }
        true
    });
    Ok(Dataset {
        root,
        videos,
        discarded,
    })
}
