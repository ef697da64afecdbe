//! Cross-video frame retrieval, mutual nearest-neighbour matching of local
//! features, and filtering of the matches against a dense flow field.
//!
//! Descriptors, global image vectors and flow grids are produced upstream
//! and consumed here as plain data.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::Vec2;
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("feature set for frame {0} is empty")]
    EmptyFeatureSet(String),
    #[error("descriptor list is empty")]
    EmptyDescriptorList,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expected {expected:?} matches, got {got:?}")]
    StageMismatch {
        expected: MatchStage,
        got: MatchStage,
    },
    #[error(
        "flow maps {flow_source} -> {flow_target} but matches are {match_source} -> {match_target}"
    )]
    FlowFrameMismatch {
        flow_source: String,
        flow_target: String,
        match_source: String,
        match_target: String,
    },
    #[error("invalid features for frame {frame}: {reason}")]
    InvalidFeatures { frame: String, reason: String },
    #[error("invalid flow field: {0}")]
    InvalidFlow(String),
    #[error("invalid match set: {0}")]
    InvalidMatches(String),
}

/// Local features of one frame: `d × n` descriptors and `n` pixel positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureSet {
    frame_id: String,
    descriptors: DMatrix<f64>,
    positions: Vec<Vec2>,
}

impl LocalFeatureSet {
    pub fn new(
        frame_id: impl Into<String>,
        descriptors: DMatrix<f64>,
        positions: Vec<Vec2>,
    ) -> Result<Self, MatchError> {
        let frame_id = frame_id.into();
        let bad = |reason: String| MatchError::InvalidFeatures {
            frame: frame_id.clone(),
            reason,
        };
        if descriptors.ncols() != positions.len() {
            return Err(bad(format!(
                "{} descriptors but {} positions",
                descriptors.ncols(),
                positions.len()
            )));
        }
        if descriptors.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite descriptor entry".into()));
        }
        if let Some(j) = (0..descriptors.ncols()).find(|&j| descriptors.column(j).norm() == 0.0) {
            return Err(bad(format!("descriptor {j} is zero")));
        }
        if positions
            .iter()
            .any(|p| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(bad("non-finite position".into()));
        }
        Ok(Self {
            frame_id,
            descriptors,
            positions,
        })
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn descriptors(&self) -> &DMatrix<f64> {
        &self.descriptors
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.descriptors.nrows()
    }

    fn normalized(&self) -> DMatrix<f64> {
        let mut d = self.descriptors.clone();
        for mut c in d.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        d
    }
}

/// Image-level descriptor of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub frame_id: String,
    pub vector: Vec<f64>,
}

impl GlobalDescriptor {
    pub fn new(frame_id: impl Into<String>, vector: Vec<f64>) -> Result<Self, MatchError> {
        let frame_id = frame_id.into();
        if vector.is_empty()
            || vector.iter().any(|x| !x.is_finite())
            || vector.iter().all(|&x| x == 0.0)
        {
            return Err(MatchError::InvalidParameter(format!(
                "global descriptor of {frame_id} must be finite and nonzero"
            )));
        }
        Ok(Self { frame_id, vector })
    }

    fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchStage {
    RawMutual,
    FlowFiltered,
}

impl MatchStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchStage::RawMutual => "raw_mutual",
            MatchStage::FlowFiltered => "flow_filtered",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw_mutual" => Some(MatchStage::RawMutual),
            "flow_filtered" => Some(MatchStage::FlowFiltered),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub pixel_a: Vec2,
    pub pixel_b: Vec2,
}

/// One-to-one 2D-2D correspondences between two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub frame_a: String,
    pub frame_b: String,
    pub matches: Vec<Match>,
    pub stage: MatchStage,
}

impl MatchSet {
    /// Checks the one-to-one invariant.
    pub fn validate(&self) -> Result<(), MatchError> {
        let mut seen_a = std::collections::HashSet::new();
        let mut seen_b = std::collections::HashSet::new();
        for m in &self.matches {
            if !seen_a.insert(m.index_a) || !seen_b.insert(m.index_b) {
                return Err(MatchError::InvalidMatches(format!(
                    "{} -> {} is not one-to-one at ({}, {})",
                    self.frame_a, self.frame_b, m.index_a, m.index_b
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// Index of the minimum, lowest index on ties.
fn argmin(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Pairs `(i, j)` that are each other's nearest neighbour under Euclidean
/// distance between L2-normalized descriptors.
pub fn mutual_nn_match(a: &LocalFeatureSet, b: &LocalFeatureSet) -> Result<MatchSet, MatchError> {
    if a.is_empty() {
        return Err(MatchError::EmptyFeatureSet(a.frame_id.clone()));
    }
    if b.is_empty() {
        return Err(MatchError::EmptyFeatureSet(b.frame_id.clone()));
    }
    if a.dim() != b.dim() {
        return Err(MatchError::InvalidParameter(format!(
            "descriptor dimensions differ ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.normalized(), b.normalized());
    // Squared distances, one row per feature of `a`; both directions read the
    // same matrix so ties resolve consistently.
    let rows: Vec<Vec<f64>> = par::map_range(na.ncols(), |i| {
        let ai = na.column(i);
        (0..nb.ncols())
            .map(|j| (ai - nb.column(j)).norm_squared())
            .collect()
    });
    let forward: Vec<usize> = rows
        .iter()
        .map(|r| argmin(r.iter().copied()).expect("b nonempty"))
        .collect();
    let backward: Vec<usize> = (0..nb.ncols())
        .map(|j| argmin(rows.iter().map(|r| r[j])).expect("a nonempty"))
        .collect();
    let matches = forward
        .iter()
        .enumerate()
        .filter(|&(i, &j)| backward[j] == i)
        .map(|(i, &j)| Match {
            index_a: i,
            index_b: j,
            pixel_a: a.positions[i],
            pixel_b: b.positions[j],
        })
        .collect();
    Ok(MatchSet {
        frame_a: a.frame_id.clone(),
        frame_b: b.frame_id.clone(),
        matches,
        stage: MatchStage::RawMutual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub frame_a: String,
    pub frame_b: String,
    pub similarity: f64,
}

/// The `n_m` most similar cross-video frame pairs by cosine similarity,
/// best first. Equal similarities keep row-major `(a, b)` order.
pub fn retrieve_frame_pairs(
    video_a: &[GlobalDescriptor],
    video_b: &[GlobalDescriptor],
    n_m: usize,
) -> Result<Vec<FramePair>, MatchError> {
    if video_a.is_empty() || video_b.is_empty() {
        return Err(MatchError::EmptyDescriptorList);
    }
    if n_m == 0 {
        return Err(MatchError::InvalidParameter(
            "n_m must be at least 1".into(),
        ));
    }
    let dim = video_a[0].vector.len();
    if video_a.iter().chain(video_b).any(|d| d.vector.len() != dim) {
        return Err(MatchError::InvalidParameter(
            "global descriptor dimensions differ".into(),
        ));
    }
    let mut scored: Vec<(usize, usize, f64)> = par::map(video_a, |da| {
        let na = da.norm();
        video_b
            .iter()
            .map(|db| {
                da.vector
                    .iter()
                    .zip(&db.vector)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    / (na * db.norm())
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .enumerate()
    .flat_map(|(i, row)| row.into_iter().enumerate().map(move |(j, s)| (i, j, s)))
    .collect();
    scored.sort_by(|x, y| y.2.total_cmp(&x.2));
    scored.truncate(n_m);
    Ok(scored
        .into_iter()
        .map(|(i, j, s)| FramePair {
            frame_a: video_a[i].frame_id.clone(),
            frame_b: video_b[j].frame_id.clone(),
            similarity: s,
        })
        .collect())
}

/// Dense 2D→2D mapping from a source frame into a target frame, sampled on a
/// regular grid that spans the source image.
///
/// Grid node `(r, c)` sits at source pixel `(c·sx, r·sy)` with
/// `sx = (W − 1)/(grid_width − 1)` and likewise for `sy`; a grid at native
/// resolution therefore has one node per integer pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    source_frame_id: String,
    target_frame_id: String,
    source_width: u32,
    source_height: u32,
    grid_width: usize,
    grid_height: usize,
    mapping: Vec<Vec2>,
    valid: Vec<bool>,
}

impl FlowField {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source_frame_id: impl Into<String>,
        target_frame_id: impl Into<String>,
        source_width: u32,
        source_height: u32,
        grid_width: usize,
        grid_height: usize,
        mapping: Vec<Vec2>,
        valid: Vec<bool>,
    ) -> Result<Self, MatchError> {
        if source_width == 0 || source_height == 0 || grid_width == 0 || grid_height == 0 {
            return Err(MatchError::InvalidFlow(
                "dimensions must be positive".into(),
            ));
        }
        let n = grid_width * grid_height;
        if mapping.len() != n || valid.len() != n {
            return Err(MatchError::InvalidFlow(format!(
                "expected {n} grid nodes, got {} mappings and {} mask entries",
                mapping.len(),
                valid.len()
            )));
        }
        if mapping
            .iter()
            .zip(&valid)
            .any(|(m, &v)| v && !(m.x.is_finite() && m.y.is_finite()))
        {
            return Err(MatchError::InvalidFlow(
                "valid node with non-finite mapping".into(),
            ));
        }
        // Invalid nodes carry no mapping; zero them so equal fields compare equal.
        let mut mapping = mapping;
        mapping
            .iter_mut()
            .zip(&valid)
            .filter(|(_, &v)| !v)
            .for_each(|(m, _)| *m = Vec2::zeros());
        Ok(Self {
            source_frame_id: source_frame_id.into(),
            target_frame_id: target_frame_id.into(),
            source_width,
            source_height,
            grid_width,
            grid_height,
            mapping,
            valid,
        })
    }

    /// Flow sampled from `f` at every grid node; `None` marks invalid nodes.
    pub fn from_fn(
        source_frame_id: impl Into<String>,
        target_frame_id: impl Into<String>,
        source_width: u32,
        source_height: u32,
        grid_width: usize,
        grid_height: usize,
        f: impl Fn(Vec2) -> Option<Vec2>,
    ) -> Result<Self, MatchError> {
        let spacing = |size: u32, nodes: usize| {
            if nodes > 1 {
                (size as f64 - 1.0) / (nodes as f64 - 1.0)
            } else {
                0.0
            }
        };
        let (sx, sy) = (
            spacing(source_width, grid_width),
            spacing(source_height, grid_height),
        );
        let mut mapping = Vec::with_capacity(grid_width * grid_height);
        let mut valid = Vec::with_capacity(grid_width * grid_height);
        for r in 0..grid_height {
            for c in 0..grid_width {
                match f(Vec2::new(c as f64 * sx, r as f64 * sy)) {
                    Some(m) if m.x.is_finite() && m.y.is_finite() => {
                        mapping.push(m);
                        valid.push(true);
                    }
                    _ => {
                        mapping.push(Vec2::zeros());
                        valid.push(false);
                    }
                }
            }
        }
        Self::new(
            source_frame_id,
            target_frame_id,
            source_width,
            source_height,
            grid_width,
            grid_height,
            mapping,
            valid,
        )
    }

    pub fn source_frame_id(&self) -> &str {
        &self.source_frame_id
    }

    pub fn target_frame_id(&self) -> &str {
        &self.target_frame_id
    }

    pub fn source_size(&self) -> (u32, u32) {
        (self.source_width, self.source_height)
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.grid_width, self.grid_height)
    }

    pub fn mapping(&self) -> &[Vec2] {
        &self.mapping
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    fn node_coord(pixel: f64, size: u32, nodes: usize) -> (usize, f64) {
        if nodes == 1 {
            return (0, 0.0);
        }
        let spacing = (size as f64 - 1.0) / (nodes as f64 - 1.0);
        let g = if spacing > 0.0 {
            (pixel / spacing).clamp(0.0, (nodes - 1) as f64)
        } else {
            0.0
        };
        let base = (g.floor() as usize).min(nodes - 2);
        (base, g - base as f64)
    }

    /// Bilinearly interpolated target pixel for a source pixel.
    ///
    /// Returns `None` outside the source image or when any node carrying
    /// positive interpolation weight is invalid.
    pub fn sample(&self, pixel: &Vec2) -> Option<Vec2> {
        if !(pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.source_width as f64
            && pixel.y < self.source_height as f64)
        {
            return None;
        }
        let (c0, fx) = Self::node_coord(pixel.x, self.source_width, self.grid_width);
        let (r0, fy) = Self::node_coord(pixel.y, self.source_height, self.grid_height);
        let mut acc = Vec2::zeros();
        for (dr, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dc, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wx * wy;
                if w <= 0.0 {
                    continue;
                }
                let idx = (r0 + dr) * self.grid_width + c0 + dc;
                if !self.valid[idx] {
                    return None;
                }
                acc += w * self.mapping[idx];
            }
        }
        Some(acc)
    }
}

/// Keeps matches whose source pixel, carried by the flow, lands within
/// `tolerance_px` of the matched target pixel.
pub fn flow_filter(
    matches: &MatchSet,
    flow: &FlowField,
    tolerance_px: f64,
) -> Result<MatchSet, MatchError> {
    if !(tolerance_px.is_finite() && tolerance_px > 0.0) {
        return Err(MatchError::InvalidParameter(format!(
            "flow tolerance must be positive, got {tolerance_px}"
        )));
    }
    if matches.stage != MatchStage::RawMutual {
        return Err(MatchError::StageMismatch {
            expected: MatchStage::RawMutual,
            got: matches.stage,
        });
    }
    if flow.source_frame_id != matches.frame_a || flow.target_frame_id != matches.frame_b {
        return Err(MatchError::FlowFrameMismatch {
            flow_source: flow.source_frame_id.clone(),
            flow_target: flow.target_frame_id.clone(),
            match_source: matches.frame_a.clone(),
            match_target: matches.frame_b.clone(),
        });
    }
    Ok(MatchSet {
        frame_a: matches.frame_a.clone(),
        frame_b: matches.frame_b.clone(),
        matches: filter_consistent(&matches.matches, flow, tolerance_px),
        stage: MatchStage::FlowFiltered,
    })
}

fn filter_consistent(matches: &[Match], flow: &FlowField, tolerance_px: f64) -> Vec<Match> {
    matches
        .iter()
        .filter(|m| {
            flow.sample(&m.pixel_a)
                .is_some_and(|t| (t - m.pixel_b).norm() <= tolerance_px)
        })
        .copied()
        .collect()
}

/// Re-applies the flow check to an already filtered set (idempotence checks).
pub fn refilter(matches: &MatchSet, flow: &FlowField, tolerance_px: f64) -> MatchSet {
    MatchSet {
        matches: filter_consistent(&matches.matches, flow, tolerance_px),
        ..matches.clone()
    }
}
