use std::collections::{HashMap, HashSet};

use super::{all_finite, CameraModel, GeometryError, SimilarityTransform3, Vec2, Vec3};

/// One 2D detection in a frame tied to the 3D point it reconstructs.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame_id: String,
    pub keypoint_index: u32,
    pub pixel: Vec2,
    pub point_id: u64,
}

/// Sparse per-video reconstruction: points, registered cameras and tracks.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    id: String,
    points: Vec<(u64, Vec3)>,
    frames: Vec<(String, CameraModel)>,
    observations: Vec<Observation>,
    point_index: HashMap<u64, usize>,
    frame_index: HashMap<String, usize>,
    by_frame: Vec<Vec<usize>>,
}

impl PartialEq for Reconstruction {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.points == other.points
            && self.frames == other.frames
            && self.observations == other.observations
    }
}

impl Reconstruction {
    pub fn new(
        id: impl Into<String>,
        points: Vec<(u64, Vec3)>,
        frames: Vec<(String, CameraModel)>,
        observations: Vec<Observation>,
    ) -> Result<Self, GeometryError> {
        let id = id.into();
        let invalid = |reason: String| GeometryError::InvalidReconstruction {
            id: id.clone(),
            reason,
        };

        let mut point_index = HashMap::with_capacity(points.len());
        for (i, (pid, p)) in points.iter().enumerate() {
            if !all_finite(p) {
                return Err(invalid(format!("point {pid} has non-finite coordinates")));
            }
            if point_index.insert(*pid, i).is_some() {
                return Err(invalid(format!("duplicate point id {pid}")));
            }
        }
        let mut frame_index = HashMap::with_capacity(frames.len());
        for (i, (fid, _)) in frames.iter().enumerate() {
            if frame_index.insert(fid.clone(), i).is_some() {
                return Err(invalid(format!("duplicate frame id {fid}")));
            }
        }
        let mut by_frame = vec![Vec::new(); frames.len()];
        let mut seen = HashSet::with_capacity(observations.len());
        for (i, obs) in observations.iter().enumerate() {
            let Some(&f) = frame_index.get(&obs.frame_id) else {
                return Err(invalid(format!(
                    "observation {i} references unknown frame {}",
                    obs.frame_id
                )));
            };
            if !point_index.contains_key(&obs.point_id) {
                return Err(invalid(format!(
                    "observation {i} references unknown point {}",
                    obs.point_id
                )));
            }
            if !seen.insert((f, obs.keypoint_index)) {
                return Err(invalid(format!(
                    "duplicate observation ({}, {})",
                    obs.frame_id, obs.keypoint_index
                )));
            }
            if !(obs.pixel.x.is_finite() && obs.pixel.y.is_finite()) {
                return Err(invalid(format!("observation {i} has a non-finite pixel")));
            }
            by_frame[f].push(i);
        }
        Ok(Self {
            id,
            points,
            frames,
            observations,
            point_index,
            frame_index,
            by_frame,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[(u64, Vec3)] {
        &self.points
    }

    pub fn frames(&self) -> &[(String, CameraModel)] {
        &self.frames
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn point(&self, point_id: u64) -> Option<&Vec3> {
        self.point_index.get(&point_id).map(|&i| &self.points[i].1)
    }

    pub fn camera(&self, frame_id: &str) -> Option<&CameraModel> {
        self.frame_index.get(frame_id).map(|&i| &self.frames[i].1)
    }

    pub fn has_frame(&self, frame_id: &str) -> bool {
        self.frame_index.contains_key(frame_id)
    }

    /// Observations recorded in `frame_id`, in file order.
    pub fn frame_observations(&self, frame_id: &str) -> impl Iterator<Item = &Observation> {
        let idx = self
            .frame_index
            .get(frame_id)
            .map(|&f| self.by_frame[f].as_slice())
            .unwrap_or(&[]);
        idx.iter().map(move |&i| &self.observations[i])
    }

    /// Nearest observation in `frame_id` within `radius` pixels of `pixel`.
    pub fn nearest_observation(
        &self,
        frame_id: &str,
        pixel: &Vec2,
        radius: f64,
    ) -> Option<&Observation> {
        let mut best: Option<(&Observation, f64)> = None;
        for obs in self.frame_observations(frame_id) {
            let d = (obs.pixel - pixel).norm();
            if d <= radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((obs, d));
            }
        }
        best.map(|(o, _)| o)
    }

    pub fn point_coords(&self) -> impl Iterator<Item = &Vec3> {
        self.points.iter().map(|(_, p)| p)
    }

    /// Axis-aligned bounds of the point cloud, `None` when empty.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(self.point_coords())
    }

    /// Points and cameras re-expressed through `t` (tracks unchanged).
    pub fn transformed(&self, t: &SimilarityTransform3) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|(id, p)| (*id, t.apply(p)))
                .collect(),
            frames: self
                .frames
                .iter()
                .map(|(f, c)| (f.clone(), c.transformed(t)))
                .collect(),
            ..self.clone()
        }
    }
}

pub(crate) fn bounds_of<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Option<(Vec3, Vec3)> {
    let mut it = pts.into_iter();
    let first = *it.next()?;
    let (mut lo, mut hi) = (first, first);
    for p in it {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Some((lo, hi))
}
