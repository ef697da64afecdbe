//! Text sidecars with little-endian binary blobs: local features and flow.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::text::{field, records, TextWriter};
use super::{read_bytes, read_string, write_file, IoError};
use crate::geometry::Vec2;
use crate::matching::{FlowField, LocalFeatureSet};

pub const LFD_FORMAT: &str = "vidalign-lfd";
pub const FLO_FORMAT: &str = "vidalign-flo2";

fn push_f64s(blob: &mut Vec<u8>, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        blob.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    file: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn at(file: &'a str, bytes: &'a [u8], pos: usize) -> Self {
        Self { file, bytes, pos }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IoError::Binary {
                file: self.file.into(),
                offset: self.pos,
                message: format!("blob ends before {n} more bytes"),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| IoError::Binary {
            file: self.file.into(),
            offset: self.pos,
            message: "size overflow".into(),
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn blob_path(sidecar: &Path) -> PathBuf {
    let mut name = sidecar
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".bin");
    sidecar.with_file_name(name)
}

fn blob_name(sidecar: &Path) -> String {
    blob_path(sidecar)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Sidecar text and blob bytes for a feature archive whose blob is named `blob`.
pub fn render_features(blob: &str, sets: &[LocalFeatureSet]) -> Result<(String, Vec<u8>), IoError> {
    let mut w = TextWriter::new(
        LFD_FORMAT,
        &[
            ("B", "blob_file (same directory; f64 little-endian)"),
            ("E", "frame_id\tdim\tcount\tbyte_offset (count·dim descriptor values, feature-major, then count (u, v) pairs)"),
        ],
    );
    w.row("B", [field("blob name", blob)?.to_string()]);
    let mut bytes = Vec::new();
    for s in sets {
        w.row(
            "E",
            [
                field("frame id", s.frame_id())?.to_string(),
                s.dim().to_string(),
                s.len().to_string(),
                bytes.len().to_string(),
            ],
        );
        push_f64s(&mut bytes, s.descriptors().as_slice().iter().copied());
        push_f64s(&mut bytes, s.positions().iter().flat_map(|p| [p.x, p.y]));
    }
    Ok((w.finish(), bytes))
}

/// Parses a feature sidecar against its blob; returns the sets and the blob name.
pub fn parse_features(
    file: &str,
    sidecar: &str,
    blob: &[u8],
) -> Result<Vec<LocalFeatureSet>, IoError> {
    let mut out = Vec::new();
    for r in records(file, sidecar, LFD_FORMAT)? {
        match r.tag {
            "B" => r.expect_len(1)?,
            "E" => {
                r.expect_len(4)?;
                let (dim, count, offset): (usize, usize, usize) = (
                    r.parse(1, "dimension")?,
                    r.parse(2, "count")?,
                    r.parse(3, "offset")?,
                );
                let mut c = Cursor::at(file, blob, offset);
                let desc = c.f64s(dim * count).map_err(|e| r.invariant(e))?;
                let pos = c.f64s(2 * count).map_err(|e| r.invariant(e))?;
                let positions = pos.chunks_exact(2).map(|p| Vec2::new(p[0], p[1])).collect();
                let set =
                    LocalFeatureSet::new(r.str(0), DMatrix::from_vec(dim, count, desc), positions)
                        .map_err(|e| r.invariant(e))?;
                out.push(set);
            }
            _ => return Err(r.err(format!("unknown record tag {:?}", r.tag))),
        }
    }
    Ok(out)
}

fn sidecar_blob(file: &str, sidecar: &str, format: &str) -> Result<String, IoError> {
    let recs = records(file, sidecar, format)?;
    let b = recs
        .iter()
        .find(|r| r.tag == "B")
        .ok_or_else(|| IoError::invariant(file, None, "missing B record"))?;
    b.expect_len(1)?;
    Ok(b.str(0).to_string())
}

pub fn read_features(path: &Path) -> Result<Vec<LocalFeatureSet>, IoError> {
    let file = path.display().to_string();
    let sidecar = read_string(path)?;
    let blob = read_bytes(&path.with_file_name(sidecar_blob(&file, &sidecar, LFD_FORMAT)?))?;
    parse_features(&file, &sidecar, &blob)
}

/// Writes `path` and its blob `path + ".bin"`.
pub fn write_features(path: &Path, sets: &[LocalFeatureSet]) -> Result<(), IoError> {
    let (text, blob) = render_features(&blob_name(path), sets)?;
    write_file(&blob_path(path), blob)?;
    write_file(path, text)
}

pub fn render_flows(blob: &str, flows: &[FlowField]) -> Result<(String, Vec<u8>), IoError> {
    let mut w = TextWriter::new(
        FLO_FORMAT,
        &[
            ("B", "blob_file (same directory; little-endian)"),
            (
                "E",
                "source_frame\ttarget_frame\tsource_width\tsource_height\tgrid_width\tgrid_height\tbyte_offset (grid_h·grid_w (x, y) f64 pairs row-major, then grid_h·grid_w u8 validity flags)",
            ),
        ],
    );
    w.row("B", [field("blob name", blob)?.to_string()]);
    let mut bytes = Vec::new();
    for f in flows {
        let (sw, sh) = f.source_size();
        let (gw, gh) = f.grid_size();
        w.row(
            "E",
            [
                field("frame id", f.source_frame_id())?.to_string(),
                field("frame id", f.target_frame_id())?.to_string(),
                sw.to_string(),
                sh.to_string(),
                gw.to_string(),
                gh.to_string(),
                bytes.len().to_string(),
            ],
        );
        push_f64s(&mut bytes, f.mapping().iter().flat_map(|m| [m.x, m.y]));
        bytes.extend(f.valid_mask().iter().map(|&v| v as u8));
    }
    Ok((w.finish(), bytes))
}

pub fn parse_flows(file: &str, sidecar: &str, blob: &[u8]) -> Result<Vec<FlowField>, IoError> {
    let mut out = Vec::new();
    for r in records(file, sidecar, FLO_FORMAT)? {
        match r.tag {
            "B" => r.expect_len(1)?,
            "E" => {
                r.expect_len(7)?;
                let (gw, gh): (usize, usize) =
                    (r.parse(4, "grid width")?, r.parse(5, "grid height")?);
                let n = gw.checked_mul(gh).ok_or_else(|| r.err("grid too large"))?;
                let mut c = Cursor::at(file, blob, r.parse(6, "offset")?);
                let xy = c.f64s(2 * n).map_err(|e| r.invariant(e))?;
                let mask = c.take(n).map_err(|e| r.invariant(e))?;
                if let Some(bad) = mask.iter().find(|&&m| m > 1) {
                    return Err(r.invariant(format!("validity flag {bad} is neither 0 nor 1")));
                }
                let flow = FlowField::new(
                    r.str(0),
                    r.str(1),
                    r.parse(2, "source width")?,
                    r.parse(3, "source height")?,
                    gw,
                    gh,
                    xy.chunks_exact(2).map(|p| Vec2::new(p[0], p[1])).collect(),
                    mask.iter().map(|&m| m == 1).collect(),
                )
                .map_err(|e| r.invariant(e))?;
                out.push(flow);
            }
            _ => return Err(r.err(format!("unknown record tag {:?}", r.tag))),
        }
    }
    Ok(out)
}

pub fn read_flows(path: &Path) -> Result<Vec<FlowField>, IoError> {
    let file = path.display().to_string();
    let sidecar = read_string(path)?;
    let blob = read_bytes(&path.with_file_name(sidecar_blob(&file, &sidecar, FLO_FORMAT)?))?;
    parse_flows(&file, &sidecar, &blob)
}

/// Writes `path` and its blob `path + ".bin"`.
pub fn write_flows(path: &Path, flows: &[FlowField]) -> Result<(), IoError> {
    let (text, blob) = render_flows(&blob_name(path), flows)?;
    write_file(&blob_path(path), blob)?;
    write_file(path, text)
}
