//! Tab-separated text formats.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use super::{read_string, write_file, IoError, FORMAT_VERSION, SUPPORTED_VERSIONS};
use crate::alignment::{AlignmentGraph, EdgeEstimate};
use crate::geometry::{
    CameraModel, Keypoints3D, Mat3, Observation, Reconstruction, SimilarityTransform3, Vec2, Vec3,
};
use crate::grounding::{Detection2D, GroundingQuery, SaliencyMap};
use crate::matching::{GlobalDescriptor, Match, MatchSet, MatchStage};
use crate::transfer::{KeypointAnnotation2D, PckCurve};

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Checks that a string can be written as one tab-separated field.
pub(crate) fn field<'a>(what: &str, s: &'a str) -> Result<&'a str, IoError> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        return Err(IoError::Unserializable {
            what: what.into(),
            message: format!("{s:?} is empty or contains a tab or newline"),
        });
    }
    Ok(s)
}

pub(crate) struct TextWriter {
    out: String,
}

impl TextWriter {
    pub(crate) fn new(format: &str, columns: &[(&str, &str)]) -> Self {
        let mut out = format!("# {format} {FORMAT_VERSION}\n");
        for (tag, cols) in columns {
            out.push_str(&format!("# {tag}\t{cols}\n"));
        }
        Self { out }
    }

    pub(crate) fn row(&mut self, tag: &str, fields: impl IntoIterator<Item = String>) {
        self.out.push_str(tag);
        for f in fields {
            self.out.push('\t');
            self.out.push_str(&f);
        }
        self.out.push('\n');
    }

    pub(crate) fn finish(self) -> String {
        self.out
    }
}

/// One data line of a text file.
pub(crate) struct Record<'a> {
    pub file: &'a str,
    pub line: usize,
    pub tag: &'a str,
    pub fields: Vec<&'a str>,
}

impl<'a> Record<'a> {
    pub(crate) fn err(&self, message: impl std::fmt::Display) -> IoError {
        IoError::Parse {
            file: self.file.into(),
            line: self.line,
            message: message.to_string(),
        }
    }

    pub(crate) fn invariant(&self, message: impl std::fmt::Display) -> IoError {
        IoError::invariant(self.file, Some(self.line), message)
    }

    pub(crate) fn expect_len(&self, n: usize) -> Result<(), IoError> {
        if self.fields.len() != n {
            return Err(self.err(format!(
                "{} record needs {n} fields, found {}",
                self.tag,
                self.fields.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_min_len(&self, n: usize) -> Result<(), IoError> {
        if self.fields.len() < n {
            return Err(self.err(format!(
                "{} record needs at least {n} fields, found {}",
                self.tag,
                self.fields.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn str(&self, i: usize) -> &'a str {
        self.fields[i]
    }

    pub(crate) fn parse<T: std::str::FromStr>(&self, i: usize, what: &str) -> Result<T, IoError> {
        self.fields[i]
            .parse()
            .map_err(|_| self.err(format!("bad {what} {:?}", self.fields[i])))
    }

    pub(crate) fn f64(&self, i: usize) -> Result<f64, IoError> {
        let x: f64 = self.parse(i, "number")?;
        if !x.is_finite() {
            return Err(self.err(format!("non-finite number {:?}", self.fields[i])));
        }
        Ok(x)
    }

    pub(crate) fn f64s(&self, from: usize, n: usize) -> Result<Vec<f64>, IoError> {
        (from..from + n).map(|i| self.f64(i)).collect()
    }

    pub(crate) fn vec3(&self, from: usize) -> Result<Vec3, IoError> {
        Ok(Vec3::new(
            self.f64(from)?,
            self.f64(from + 1)?,
            self.f64(from + 2)?,
        ))
    }

    pub(crate) fn vec2(&self, from: usize) -> Result<Vec2, IoError> {
        Ok(Vec2::new(self.f64(from)?, self.f64(from + 1)?))
    }
}

/// Validates the `# <format> <version>` header and splits data lines.
pub(crate) fn records<'a>(
    file: &'a str,
    content: &'a str,
    format: &str,
) -> Result<Vec<Record<'a>>, IoError> {
    let mut lines = content.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    let mut words = header.strip_prefix('#').unwrap_or("").split_whitespace();
    if words.next() != Some(format) {
        return Err(IoError::Parse {
            file: file.into(),
            line: 1,
            message: format!("expected header '# {format} <version>'"),
        });
    }
    let version = words.next().unwrap_or("");
    if !version
        .parse::<u32>()
        .is_ok_and(|v| SUPPORTED_VERSIONS.contains(&v))
    {
        return Err(IoError::UnsupportedVersion {
            file: file.into(),
            format: format.into(),
            found: version.into(),
            supported: SUPPORTED_VERSIONS.to_vec(),
        });
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut parts = l.split('\t');
        let tag = parts.next().unwrap_or("");
        out.push(Record {
            file,
            line: i + 1,
            tag,
            fields: parts.collect(),
        });
    }
    Ok(out)
}

fn unknown(r: &Record) -> IoError {
    r.err(format!("unknown record tag {:?}", r.tag))
}

fn load<T>(
    path: &Path,
    parse: impl FnOnce(&str, &str) -> Result<T, IoError>,
) -> Result<T, IoError> {
    let content = read_string(path)?;
    parse(&path.display().to_string(), &content)
}

fn matrix_fields(m: &Mat3) -> impl Iterator<Item = String> + '_ {
    (0..3).flat_map(move |r| (0..3).map(move |c| fmt_f64(m[(r, c)])))
}

fn matrix_at(r: &Record, from: usize) -> Result<Mat3, IoError> {
    let v = r.f64s(from, 9)?;
    Ok(Mat3::from_row_slice(&v))
}

// ---------------------------------------------------------------- reconstruction

pub const REC_FORMAT: &str = "vidalign-rec";

pub fn render_reconstruction(rec: &Reconstruction) -> Result<String, IoError> {
    let mut w = TextWriter::new(
        REC_FORMAT,
        &[
            ("R", "reconstruction_id"),
            ("P", "point_id\tx\ty\tz"),
            ("F", "frame_id\twidth\theight\tk00..k22 (9, row-major)\tr00..r22 (9, row-major)\ttx\tty\ttz"),
            ("O", "frame_id\tkeypoint_index\tu\tv\tpoint_id"),
        ],
    );
    w.row("R", [field("reconstruction id", rec.id())?.to_string()]);
    for (id, p) in rec.points() {
        w.row(
            "P",
            [id.to_string(), fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)],
        );
    }
    for (fid, cam) in rec.frames() {
        let mut f = vec![
            field("frame id", fid)?.to_string(),
            cam.width().to_string(),
            cam.height().to_string(),
        ];
        f.extend(matrix_fields(cam.intrinsics()));
        f.extend(matrix_fields(cam.rotation()));
        f.extend(cam.translation().iter().map(|x| fmt_f64(*x)));
        w.row("F", f);
    }
    for o in rec.observations() {
        w.row(
            "O",
            [
                o.frame_id.clone(),
                o.keypoint_index.to_string(),
                fmt_f64(o.pixel.x),
                fmt_f64(o.pixel.y),
                o.point_id.to_string(),
            ],
        );
    }
    Ok(w.finish())
}

pub fn parse_reconstruction(file: &str, content: &str) -> Result<Reconstruction, IoError> {
    let mut id = None;
    let mut points = Vec::new();
    let mut point_ids = HashSet::new();
    let mut frames = Vec::new();
    let mut frame_ids = HashSet::new();
    let mut observations = Vec::new();
    let recs = records(file, content, REC_FORMAT)?;
    for r in &recs {
        match r.tag {
            "R" => {
                r.expect_len(1)?;
                if id.replace(r.str(0).to_string()).is_some() {
                    return Err(r.invariant("duplicate R record"));
                }
            }
            "P" => {
                r.expect_len(4)?;
                let pid: u64 = r.parse(0, "point id")?;
                if !point_ids.insert(pid) {
                    return Err(r.invariant(format!("duplicate point id {pid}")));
                }
                points.push((pid, r.vec3(1)?));
            }
            "F" => {
                r.expect_len(24)?;
                let fid = r.str(0).to_string();
                let cam = CameraModel::new(
                    matrix_at(r, 3)?,
                    matrix_at(r, 12)?,
                    r.vec3(21)?,
                    r.parse(1, "width")?,
                    r.parse(2, "height")?,
                )
                .map_err(|e| r.invariant(format!("frame {fid}: {e}")))?;
                if !frame_ids.insert(fid.clone()) {
                    return Err(r.invariant(format!("duplicate frame id {fid}")));
                }
                frames.push((fid, cam));
            }
            "O" => {
                r.expect_len(5)?;
                observations.push((
                    r.line,
                    Observation {
                        frame_id: r.str(0).to_string(),
                        keypoint_index: r.parse(1, "keypoint index")?,
                        pixel: r.vec2(2)?,
                        point_id: r.parse(4, "point id")?,
                    },
                ));
            }
            _ => return Err(unknown(r)),
        }
    }
    for (line, o) in &observations {
        if !point_ids.contains(&o.point_id) {
            return Err(IoError::invariant(
                file,
                Some(*line),
                format!("observation references unknown point_id {}", o.point_id),
            ));
        }
        if !frame_ids.contains(&o.frame_id) {
            return Err(IoError::invariant(
                file,
                Some(*line),
                format!("observation references unknown frame {}", o.frame_id),
            ));
        }
    }
    let id = id.ok_or_else(|| IoError::invariant(file, None, "missing R record"))?;
    Reconstruction::new(
        id,
        points,
        frames,
        observations.into_iter().map(|(_, o)| o).collect(),
    )
    .map_err(|e| IoError::invariant(file, None, e))
}

pub fn read_reconstruction(path: &Path) -> Result<Reconstruction, IoError> {
    load(path, parse_reconstruction)
}

pub fn write_reconstruction(path: &Path, rec: &Reconstruction) -> Result<(), IoError> {
    write_file(path, render_reconstruction(rec)?)
}

// ---------------------------------------------------------------- global descriptors

pub const GDV_FORMAT: &str = "vidalign-gdv";

pub fn render_global_descriptors(descs: &[GlobalDescriptor]) -> Result<String, IoError> {
    let mut w = TextWriter::new(GDV_FORMAT, &[("G", "frame_id\tdim\tv1..v_dim")]);
    for d in descs {
        let mut f = vec![
            field("frame id", &d.frame_id)?.to_string(),
            d.vector.len().to_string(),
        ];
        f.extend(d.vector.iter().map(|x| fmt_f64(*x)));
        w.row("G", f);
    }
    Ok(w.finish())
}

pub fn parse_global_descriptors(
    file: &str,
    content: &str,
) -> Result<Vec<GlobalDescriptor>, IoError> {
    records(file, content, GDV_FORMAT)?
        .iter()
        .map(|r| {
            if r.tag != "G" {
                return Err(unknown(r));
            }
            r.expect_min_len(2)?;
            let dim: usize = r.parse(1, "dimension")?;
            r.expect_len(2 + dim)?;
            GlobalDescriptor::new(r.str(0), r.f64s(2, dim)?).map_err(|e| r.invariant(e))
        })
        .collect()
}

pub fn read_global_descriptors(path: &Path) -> Result<Vec<GlobalDescriptor>, IoError> {
    load(path, parse_global_descriptors)
}

pub fn write_global_descriptors(path: &Path, descs: &[GlobalDescriptor]) -> Result<(), IoError> {
    write_file(path, render_global_descriptors(descs)?)
}

// ---------------------------------------------------------------- matches

pub const M2D_FORMAT: &str = "vidalign-m2d";

pub fn render_matches(sets: &[MatchSet]) -> Result<String, IoError> {
    let mut w = TextWriter::new(
        M2D_FORMAT,
        &[
            (
                "S",
                "frame_a\tframe_b\tstage\tcount (M records that follow)",
            ),
            ("M", "index_a\tindex_b\tu_a\tv_a\tu_b\tv_b"),
        ],
    );
    for s in sets {
        w.row(
            "S",
            [
                field("frame id", &s.frame_a)?.into(),
                field("frame id", &s.frame_b)?.into(),
                s.stage.as_str().into(),
                s.matches.len().to_string(),
            ],
        );
        for m in &s.matches {
            w.row(
                "M",
                [
                    m.index_a.to_string(),
                    m.index_b.to_string(),
                    fmt_f64(m.pixel_a.x),
                    fmt_f64(m.pixel_a.y),
                    fmt_f64(m.pixel_b.x),
                    fmt_f64(m.pixel_b.y),
                ],
            );
        }
    }
    Ok(w.finish())
}

pub fn parse_matches(file: &str, content: &str) -> Result<Vec<MatchSet>, IoError> {
    let mut sets: Vec<(usize, usize, MatchSet)> = Vec::new();
    for r in records(file, content, M2D_FORMAT)? {
        match r.tag {
            "S" => {
                r.expect_len(4)?;
                let stage = MatchStage::parse(r.str(2))
                    .ok_or_else(|| r.err(format!("unknown stage {:?}", r.str(2))))?;
                let count: usize = r.parse(3, "count")?;
                sets.push((
                    r.line,
                    count,
                    MatchSet {
                        frame_a: r.str(0).into(),
                        frame_b: r.str(1).into(),
                        matches: vec![],
                        stage,
                    },
                ));
            }
            "M" => {
                r.expect_len(6)?;
                let (_, _, set) = sets
                    .last_mut()
                    .ok_or_else(|| r.err("M record before any S record"))?;
                set.matches.push(Match {
                    index_a: r.parse(0, "index")?,
                    index_b: r.parse(1, "index")?,
                    pixel_a: r.vec2(2)?,
                    pixel_b: r.vec2(4)?,
                });
            }
            _ => return Err(unknown(&r)),
        }
    }
    sets.into_iter()
        .map(|(line, count, set)| {
            if set.matches.len() != count {
                return Err(IoError::invariant(
                    file,
                    Some(line),
                    format!("set declares {count} matches, found {}", set.matches.len()),
                ));
            }
            set.validate()
                .map_err(|e| IoError::invariant(file, Some(line), e))?;
            Ok(set)
        })
        .collect()
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchSet>, IoError> {
    load(path, parse_matches)
}

pub fn write_matches(path: &Path, sets: &[MatchSet]) -> Result<(), IoError> {
    write_file(path, render_matches(sets)?)
}

// ---------------------------------------------------------------- alignment graph

pub const AGR_FORMAT: &str = "vidalign-agr";

pub fn render_graph(graph: &AlignmentGraph) -> Result<String, IoError> {
    let mut w = TextWriter::new(
        AGR_FORMAT,
        &[
            ("N", "node_id"),
            ("E", "from\tto\tscale\tr00..r22 (9, row-major)\ttx\tty\ttz\tinlier_count\ttotal_count\tinlier_rms (maps from-frame points into the to-frame)"),
        ],
    );
    for n in graph.nodes() {
        w.row("N", [field("node id", n)?.to_string()]);
    }
    for e in graph.edges() {
        let mut f = vec![
            e.from_id.clone(),
            e.to_id.clone(),
            fmt_f64(e.transform.scale()),
        ];
        f.extend(matrix_fields(e.transform.rotation()));
        f.extend(e.transform.translation().iter().map(|x| fmt_f64(*x)));
        f.extend([
            e.inlier_count.to_string(),
            e.total_count.to_string(),
            fmt_f64(e.inlier_rms),
        ]);
        w.row("E", f);
    }
    Ok(w.finish())
}

pub(crate) fn transform_at(r: &Record, from: usize) -> Result<SimilarityTransform3, IoError> {
    SimilarityTransform3::new(r.f64(from)?, matrix_at(r, from + 1)?, r.vec3(from + 10)?)
        .map_err(|e| r.invariant(e))
}

pub fn parse_graph(file: &str, content: &str) -> Result<AlignmentGraph, IoError> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for r in records(file, content, AGR_FORMAT)? {
        match r.tag {
            "N" => {
                r.expect_len(1)?;
                nodes.push(r.str(0).to_string());
            }
            "E" => {
                r.expect_len(18)?;
                edges.push(EdgeEstimate {
                    from_id: r.str(0).into(),
                    to_id: r.str(1).into(),
                    transform: transform_at(&r, 2)?,
                    inlier_count: r.parse(15, "inlier count")?,
                    total_count: r.parse(16, "total count")?,
                    inlier_rms: r.f64(17)?,
                });
            }
            _ => return Err(unknown(&r)),
        }
    }
    AlignmentGraph::new(nodes, edges).map_err(|e| IoError::invariant(file, None, e))
}

pub fn read_graph(path: &Path) -> Result<AlignmentGraph, IoError> {
    load(path, parse_graph)
}

pub fn write_graph(path: &Path, graph: &AlignmentGraph) -> Result<(), IoError> {
    write_file(path, render_graph(graph)?)
}

// ---------------------------------------------------------------- 2D keypoint annotations

pub const KP2_FORMAT: &str = "vidalign-kp2";

pub fn render_annotations(anns: &[KeypointAnnotation2D]) -> Result<String, IoError> {
    let mut w = TextWriter::new(
        KP2_FORMAT,
        &[("A", "video_id\tframe_id\tkeypoint_name\tu\tv")],
    );
    for a in anns {
        w.row(
            "A",
            [
                field("video id", &a.video_id)?.into(),
                field("frame id", &a.frame_id)?.into(),
                field("keypoint name", &a.keypoint_name)?.into(),
                fmt_f64(a.pixel.x),
                fmt_f64(a.pixel.y),
            ],
        );
    }
    Ok(w.finish())
}

pub fn parse_annotations(file: &str, content: &str) -> Result<Vec<KeypointAnnotation2D>, IoError> {
    records(file, content, KP2_FORMAT)?
        .iter()
        .map(|r| {
            if r.tag != "A" {
                return Err(unknown(r));
            }
            r.expect_len(5)?;
            Ok(KeypointAnnotation2D {
                video_id: r.str(0).into(),
                frame_id: r.str(1).into(),
                keypoint_name: r.str(2).into(),
                pixel: r.vec2(3)?,
            })
        })
        .collect()
}

pub fn read_annotations(path: &Path) -> Result<Vec<KeypointAnnotation2D>, IoError> {
    load(path, parse_annotations)
}

pub fn write_annotations(path: &Path, anns: &[KeypointAnnotation2D]) -> Result<(), IoError> {
    write_file(path, render_annotations(anns)?)
}

// ---------------------------------------------------------------- 3D keypoints

pub const KP3_FORMAT: &str = "vidalign-kp3";

/// 3D keypoints expressed in the frame of reconstruction `frame_of`.
pub fn render_keypoints3d(frame_of: &str, kps: &Keypoints3D) -> Result<String, IoError> {
    let mut w = TextWriter::new(
        KP3_FORMAT,
        &[
            ("V", "reconstruction_id (coordinate frame)"),
            ("K", "name\tx\ty\tz"),
        ],
    );
    w.row("V", [field("reconstruction id", frame_of)?.to_string()]);
    for (n, p) in kps.iter() {
        w.row(
            "K",
            [
                field("keypoint name", n)?.to_string(),
                fmt_f64(p.x),
                fmt_f64(p.y),
                fmt_f64(p.z),
            ],
        );
    }
    Ok(w.finish())
}

pub fn parse_keypoints3d(file: &str, content: &str) -> Result<(String, Keypoints3D), IoError> {
    let mut frame = None;
    let (mut names, mut coords) = (Vec::new(), Vec::new());
    for r in records(file, content, KP3_FORMAT)? {
        match r.tag {
            "V" => {
                r.expect_len(1)?;
                frame = Some(r.str(0).to_string());
            }
            "K" => {
                r.expect_len(4)?;
                names.push(r.str(0).to_string());
                coords.push(r.vec3(1)?);
            }
            _ => return Err(unknown(&r)),
        }
    }
    let frame = frame.ok_or_else(|| IoError::invariant(file, None, "missing V record"))?;
    let kps = Keypoints3D::new(names, coords).map_err(|e| IoError::invariant(file, None, e))?;
    Ok((frame, kps))
}

pub fn read_keypoints3d(path: &Path) -> Result<(String, Keypoints3D), IoError> {
    load(path, parse_keypoints3d)
}

pub fn write_keypoints3d(path: &Path, frame_of: &str, kps: &Keypoints3D) -> Result<(), IoError> {
    write_file(path, render_keypoints3d(frame_of, kps)?)
}

// ---------------------------------------------------------------- narration

pub const NAR_FORMAT: &str = "vidalign-nar";

/// A narrated temporal segment as stored on disk: its frames in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrationRecord {
    pub video_id: String,
    pub frames: Vec<String>,
    pub text: String,
}

pub fn render_narration(segs: &[NarrationRecord]) -> Result<String, IoError> {
    let mut w = TextWriter::new(
        NAR_FORMAT,
        &[(
            "S",
            "video_id\tframe_ids (comma-separated, temporal order)\ttext",
        )],
    );
    for s in segs {
        for f in &s.frames {
            if field("frame id", f)?.contains(',') {
                return Err(IoError::Unserializable {
                    what: "frame id".into(),
                    message: format!("{f:?} contains a comma"),
                });
            }
        }
        if s.frames.is_empty() {
            return Err(IoError::Unserializable {
                what: "narration segment".into(),
                message: "no frames".into(),
            });
        }
        w.row(
            "S",
            [
                field("video id", &s.video_id)?.into(),
                s.frames.join(","),
                field("narration text", &s.text)?.into(),
            ],
        );
    }
    Ok(w.finish())
}

pub fn parse_narration(file: &str, content: &str) -> Result<Vec<NarrationRecord>, IoError> {
    records(file, content, NAR_FORMAT)?
        .iter()
        .map(|r| {
            if r.tag != "S" {
                return Err(unknown(r));
            }
            r.expect_len(3)?;
            if r.str(2).trim().is_empty() {
                return Err(r.invariant("empty narration text"));
            }
            Ok(NarrationRecord {
                video_id: r.str(0).into(),
                frames: r.str(1).split(',').map(String::from).collect(),
                text: r.str(2).into(),
            })
        })
        .collect()
}

pub fn read_narration(path: &Path) -> Result<Vec<NarrationRecord>, IoError> {
    load(path, parse_narration)
}

pub fn write_narration(path: &Path, segs: &[NarrationRecord]) -> Result<(), IoError> {
    write_file(path, render_narration(segs)?)
}

// ---------------------------------------------------------------- detections

pub const DET_FORMAT: &str = "vidalign-det";

pub fn render_detections(dets: &[Detection2D]) -> Result<String, IoError> {
    let mut w = TextWriter::new(DET_FORMAT, &[("D", "frame_id\tu\tv\tconfidence")]);
    for d in dets {
        w.row(
            "D",
            [
                field("frame id", &d.frame_id)?.into(),
                fmt_f64(d.pixel.x),
                fmt_f64(d.pixel.y),
                fmt_f64(d.confidence),
            ],
        );
    }
    Ok(w.finish())
}

pub fn parse_detections(file: &str, content: &str) -> Result<Vec<Detection2D>, IoError> {
    records(file, content, DET_FORMAT)?
        .iter()
        .map(|r| {
            if r.tag != "D" {
                return Err(unknown(r));
            }
            r.expect_len(4)?;
            let confidence = r.f64(3)?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(r.invariant(format!("confidence {confidence} outside [0, 1]")));
            }
            Ok(Detection2D {
                frame_id: r.str(0).into(),
                pixel: r.vec2(1)?,
                confidence,
            })
        })
        .collect()
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection2D>, IoError> {
    load(path, parse_detections)
}

pub fn write_detections(path: &Path, dets: &[Detection2D]) -> Result<(), IoError> {
    write_file(path, render_detections(dets)?)
}

// ---------------------------------------------------------------- saliency

pub const SAL_FORMAT: &str = "vidalign-sal";

pub fn render_saliency(maps: &[SaliencyMap]) -> Result<String, IoError> {
    let mut w = TextWriter::new(
        SAL_FORMAT,
        &[(
            "M",
            "frame_id\theight\twidth\tscores (height·width, row-major)",
        )],
    );
    for m in maps {
        let mut f = vec![
            field("frame id", m.frame_id())?.to_string(),
            m.height().to_string(),
            m.width().to_string(),
        ];
        f.extend(m.scores().iter().map(|x| fmt_f64(*x)));
        w.row("M", f);
    }
    Ok(w.finish())
}

pub fn parse_saliency(file: &str, content: &str) -> Result<Vec<SaliencyMap>, IoError> {
    records(file, content, SAL_FORMAT)?
        .iter()
        .map(|r| {
            if r.tag != "M" {
                return Err(unknown(r));
            }
            r.expect_min_len(3)?;
            let (h, w): (usize, usize) = (r.parse(1, "height")?, r.parse(2, "width")?);
            r.expect_len(3 + h * w)?;
            SaliencyMap::new(r.str(0), h, w, r.f64s(3, h * w)?).map_err(|e| r.invariant(e))
        })
        .collect()
}

pub fn read_saliency(path: &Path) -> Result<Vec<SaliencyMap>, IoError> {
    load(path, parse_saliency)
}

pub fn write_saliency(path: &Path, maps: &[SaliencyMap]) -> Result<(), IoError> {
    write_file(path, render_saliency(maps)?)
}

// ---------------------------------------------------------------- PCK results

pub const PCK_FORMAT: &str = "vidalign-pck";

/// A per-class row: values of the chance baseline and the method at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub class: String,
    pub threshold_cm: f64,
    pub queries: usize,
    pub chance: f64,
    pub method: f64,
}

/// Named PCK curves plus an optional per-class table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PckReport {
    pub curves: BTreeMap<String, PckCurve>,
    pub classes: Vec<ClassRow>,
}

pub fn render_pck(report: &PckReport) -> Result<String, IoError> {
    let mut w = TextWriter::new(
        PCK_FORMAT,
        &[
            ("C", "curve_name\tthreshold_cm\tvalue"),
            ("K", "class\tthreshold_cm\tqueries\tchance\tmethod"),
        ],
    );
    for (name, c) in &report.curves {
        for (t, v) in c.thresholds().iter().zip(c.values()) {
            w.row(
                "C",
                [field("curve name", name)?.into(), fmt_f64(*t), fmt_f64(*v)],
            );
        }
    }
    for k in &report.classes {
        w.row(
            "K",
            [
                field("class", &k.class)?.into(),
                fmt_f64(k.threshold_cm),
                k.queries.to_string(),
                fmt_f64(k.chance),
                fmt_f64(k.method),
            ],
        );
    }
    Ok(w.finish())
}

pub fn parse_pck(file: &str, content: &str) -> Result<PckReport, IoError> {
    let mut raw: BTreeMap<String, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut classes = Vec::new();
    for r in records(file, content, PCK_FORMAT)? {
        match r.tag {
            "C" => {
                r.expect_len(3)?;
                let e = raw
                    .entry(r.str(0).into())
                    .or_insert((r.line, vec![], vec![]));
                e.1.push(r.f64(1)?);
                e.2.push(r.f64(2)?);
            }
            "K" => {
                r.expect_len(5)?;
                classes.push(ClassRow {
                    class: r.str(0).into(),
                    threshold_cm: r.f64(1)?,
                    queries: r.parse(2, "query count")?,
                    chance: r.f64(3)?,
                    method: r.f64(4)?,
                });
            }
            _ => return Err(unknown(&r)),
        }
    }
    let curves = raw
        .into_iter()
        .map(|(n, (line, t, v))| {
            PckCurve::new(t, v)
                .map(|c| (n, c))
                .map_err(|e| IoError::invariant(file, Some(line), e))
        })
        .collect::<Result<_, _>>()?;
    Ok(PckReport { curves, classes })
}

pub fn read_pck(path: &Path) -> Result<PckReport, IoError> {
    load(path, parse_pck)
}

pub fn write_pck(path: &Path, report: &PckReport) -> Result<(), IoError> {
    write_file(path, render_pck(report)?)
}

// ---------------------------------------------------------------- grounding queries

pub const GQ_FORMAT: &str = "vidalign-gq";

pub fn render_queries(queries: &[GroundingQuery]) -> Result<String, IoError> {
    let mut w = TextWriter::new(
        GQ_FORMAT,
        &[("Q", "model_id\tclass (- for none)\tx\ty\tz\ttext")],
    );
    for q in queries {
        let class = match &q.class {
            Some(c) if c == "-" => {
                return Err(IoError::Unserializable {
                    what: "class".into(),
                    message: "'-' is reserved".into(),
                })
            }
            Some(c) => field("class", c)?.to_string(),
            None => "-".into(),
        };
        w.row(
            "Q",
            [
                field("model id", &q.model_id)?.into(),
                class,
                fmt_f64(q.gt_point.x),
                fmt_f64(q.gt_point.y),
                fmt_f64(q.gt_point.z),
                field("query text", &q.text)?.into(),
            ],
        );
    }
    Ok(w.finish())
}

pub fn parse_queries(file: &str, content: &str) -> Result<Vec<GroundingQuery>, IoError> {
    records(file, content, GQ_FORMAT)?
        .iter()
        .map(|r| {
            if r.tag != "Q" {
                return Err(unknown(r));
            }
            r.expect_len(6)?;
            let class = (r.str(1) != "-").then(|| r.str(1).to_string());
            Ok(GroundingQuery {
                model_id: r.str(0).into(),
                class,
                gt_point: r.vec3(2)?,
                text: r.str(5).into(),
            })
        })
        .collect()
}

pub fn read_queries(path: &Path) -> Result<Vec<GroundingQuery>, IoError> {
    load(path, parse_queries)
}

pub fn write_queries(path: &Path, queries: &[GroundingQuery]) -> Result<(), IoError> {
    write_file(path, render_queries(queries)?)
}
