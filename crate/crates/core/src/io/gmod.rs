//! Self-describing binary checkpoint of a trained grounding model and its grids.

use std::collections::BTreeMap;
use std::path::Path;

use super::{read_bytes, write_file, IoError, FORMAT_VERSION, SUPPORTED_VERSIONS};
use crate::geometry::Vec3;
use crate::grounding::{GroundingModel, Head, TextEncoder, VoxelGrid};

pub const GMOD_MAGIC: &[u8; 8] = b"VIDAGMOD";

/// A model together with the voxel grid of every head.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GroundingModel,
    pub grids: BTreeMap<String, VoxelGrid>,
}

impl Checkpoint {
    pub fn new(model: GroundingModel, grids: BTreeMap<String, VoxelGrid>) -> Result<Self, IoError> {
        let bad = |m: String| IoError::Unserializable {
            what: "checkpoint".into(),
            message: m,
        };
        if !model.heads().keys().eq(grids.keys()) {
            return Err(bad("heads and grids cover different model ids".into()));
        }
        for (id, h) in model.heads() {
            if h.n_v() != grids[id].n_v() {
                return Err(bad(format!(
                    "head {id} has {} voxels, its grid {}",
                    h.n_v(),
                    grids[id].n_v()
                )));
            }
        }
        Ok(Self { model, grids })
    }
}

struct Out(Vec<u8>);

impl Out {
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        xs.iter().for_each(|x| self.f64(*x));
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let enc = ck.model.encoder();
    let mut o = Out(GMOD_MAGIC.to_vec());
    o.u32(FORMAT_VERSION);
    o.u32(enc.vocab_buckets());
    o.u64(enc.dim() as u64);
    o.u64(enc.seed());
    o.f64(enc.init_scale());
    o.u32(ck.model.heads().len() as u32);
    for (id, h) in ck.model.heads() {
        let g = &ck.grids[id];
        o.u32(id.len() as u32);
        o.0.extend_from_slice(id.as_bytes());
        o.u64(h.n_v() as u64);
        o.f64s(g.bbox_min().as_slice());
        o.f64s(g.bbox_max().as_slice());
        o.u64(g.divisions() as u64);
        g.active_voxels().iter().for_each(|&v| o.u64(v as u64));
        o.f64s(h.weights());
        o.f64s(h.bias());
    }
    o.u64(enc.rows().len() as u64);
    for (b, row) in enc.rows() {
        o.u32(*b);
        o.f64s(row);
    }
    o.0
}

struct In<'a> {
    file: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn err(&self, m: impl Into<String>) -> IoError {
        IoError::Binary {
            file: self.file.into(),
            offset: self.pos,
            message: m.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.bytes.len().saturating_sub(self.pos) < n {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn size(&mut self) -> Result<usize, IoError> {
        let v = self.u64()?;
        // Any count larger than the remaining bytes is corrupt.
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| self.err(format!("implausible count {v}")))
    }
    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn vec3(&mut self) -> Result<Vec3, IoError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

pub fn decode_checkpoint(file: &str, bytes: &[u8]) -> Result<Checkpoint, IoError> {
    let mut r = In {
        file,
        bytes,
        pos: 0,
    };
    if r.take(8)? != GMOD_MAGIC {
        return Err(IoError::Binary {
            file: file.into(),
            offset: 0,
            message: "not a grounding checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32()?;
    if !SUPPORTED_VERSIONS.contains(&version) {
        return Err(IoError::UnsupportedVersion {
            file: file.into(),
            format: "vidalign-gmod".into(),
            found: version.to_string(),
            supported: SUPPORTED_VERSIONS.to_vec(),
        });
    }
    let vocab = r.u32()?;
    let dim = r.size()?;
    let seed = r.u64()?;
    let init_scale = r.f64()?;
    let n_heads = r.u32()? as usize;
    let mut heads = BTreeMap::new();
    let mut grids = BTreeMap::new();
    for _ in 0..n_heads {
        let len = r.u32()? as usize;
        let id =
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.err("model id is not UTF-8"))?;
        let n_v = r.size()?;
        let (lo, hi) = (r.vec3()?, r.vec3()?);
        let divisions = r.size()?;
        let active = (0..n_v).map(|_| r.size()).collect::<Result<Vec<_>, _>>()?;
        let grid = VoxelGrid::new(lo, hi, divisions, active).map_err(|e| r.err(e.to_string()))?;
        let weights = r.f64s(
            n_v.checked_mul(dim)
                .ok_or_else(|| r.err("head too large"))?,
        )?;
        let bias = r.f64s(n_v)?;
        let head = Head::from_parts(n_v, dim, weights, bias).map_err(|e| r.err(e.to_string()))?;
        if heads.insert(id.clone(), head).is_some() {
            return Err(r.err(format!("duplicate model id {id}")));
        }
        grids.insert(id, grid);
    }
    let n_rows = r.size()?;
    let mut rows = BTreeMap::new();
    for _ in 0..n_rows {
        let b = r.u32()?;
        rows.insert(b, r.f64s(dim)?);
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    let encoder = TextEncoder::from_rows(vocab, dim, seed, init_scale, rows)
        .map_err(|e| r.err(e.to_string()))?;
    let model = GroundingModel::new(encoder, heads).map_err(|e| r.err(e.to_string()))?;
    Checkpoint::new(model, grids)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    decode_checkpoint(&path.display().to_string(), &read_bytes(path)?)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), IoError> {
    write_file(path, encode_checkpoint(ck))
}
