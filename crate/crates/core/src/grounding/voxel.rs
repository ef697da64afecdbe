use std::collections::HashMap;

use super::GroundingError;
use crate::geometry::{all_finite, reconstruction::bounds_of, Vec3};

pub const DEFAULT_DIVISIONS: usize = 20;
pub const DEFAULT_N_V: usize = 500;

/// Uniform partition of an axis-aligned box into `divisions³` voxels, of which
/// `active` carry class labels `0..N_v` in ascending flat-index order.
///
/// Flat index of voxel `(ix, iy, iz)` is `ix + d·(iy + d·iz)`. Bins are
/// half-open `[lo, hi)` except the last bin on each axis, which also holds
/// the upper box face.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    bbox_min: Vec3,
    bbox_max: Vec3,
    divisions: usize,
    active: Vec<usize>,
    label_of: HashMap<usize, usize>,
}

impl VoxelGrid {
    pub fn new(
        bbox_min: Vec3,
        bbox_max: Vec3,
        divisions: usize,
        active: Vec<usize>,
    ) -> Result<Self, GroundingError> {
        let bad = |m: &str| Err(GroundingError::InvalidGrid(m.to_string()));
        if !(all_finite(&bbox_min) && all_finite(&bbox_max)) {
            return bad("non-finite bounds");
        }
        if (0..3).any(|k| bbox_min[k] >= bbox_max[k]) {
            return bad("bbox_min must be below bbox_max on every axis");
        }
        if divisions == 0 {
            return bad("divisions must be at least 1");
        }
        let total = divisions
            .checked_pow(3)
            .ok_or_else(|| GroundingError::InvalidGrid("too many divisions".into()))?;
        if active.is_empty() {
            return bad("no active voxels");
        }
        if active.windows(2).any(|w| w[1] <= w[0]) {
            return bad("active voxels must be sorted and unique");
        }
        if active.last().is_some_and(|&v| v >= total) {
            return bad("active voxel index out of range");
        }
        let label_of = active.iter().enumerate().map(|(l, &v)| (v, l)).collect();
        Ok(Self {
            bbox_min,
            bbox_max,
            divisions,
            active,
            label_of,
        })
    }

    pub fn bbox_min(&self) -> &Vec3 {
        &self.bbox_min
    }

    pub fn bbox_max(&self) -> &Vec3 {
        &self.bbox_max
    }

    pub fn divisions(&self) -> usize {
        self.divisions
    }

    pub fn active_voxels(&self) -> &[usize] {
        &self.active
    }

    pub fn n_v(&self) -> usize {
        self.active.len()
    }

    pub fn total_voxels(&self) -> usize {
        self.divisions.pow(3)
    }

    /// Class label of a flat voxel index, if active.
    pub fn label_of_voxel(&self, flat: usize) -> Option<usize> {
        self.label_of.get(&flat).copied()
    }

    fn edge(&self, axis: usize, i: usize) -> f64 {
        let (lo, hi) = (self.bbox_min[axis], self.bbox_max[axis]);
        if i == self.divisions {
            hi
        } else {
            lo + (hi - lo) * i as f64 / self.divisions as f64
        }
    }

    fn bin(&self, axis: usize, x: f64) -> Option<usize> {
        let (lo, hi) = (self.bbox_min[axis], self.bbox_max[axis]);
        if !(lo..=hi).contains(&x) {
            return None;
        }
        let d = self.divisions;
        let mut i = (((x - lo) / (hi - lo) * d as f64).floor() as usize).min(d - 1);
        // Make the bin agree exactly with `edge`, whatever the rounding above did.
        while i > 0 && x < self.edge(axis, i) {
            i -= 1;
        }
        while i + 1 < d && x >= self.edge(axis, i + 1) {
            i += 1;
        }
        Some(i)
    }

    /// Flat index of the voxel containing `p`, `None` outside the box.
    pub fn voxel_of(&self, p: &Vec3) -> Option<usize> {
        let ix = self.bin(0, p.x)?;
        let iy = self.bin(1, p.y)?;
        let iz = self.bin(2, p.z)?;
        Some(ix + self.divisions * (iy + self.divisions * iz))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.voxel_of(p).is_some()
    }

    fn unflatten(&self, flat: usize) -> [usize; 3] {
        let d = self.divisions;
        [flat % d, (flat / d) % d, flat / (d * d)]
    }

    /// Lower and upper corner of a voxel.
    pub fn voxel_bounds(&self, flat: usize) -> (Vec3, Vec3) {
        let idx = self.unflatten(flat);
        let lo = Vec3::from_fn(|k, _| self.edge(k, idx[k]));
        let hi = Vec3::from_fn(|k, _| self.edge(k, idx[k] + 1));
        (lo, hi)
    }

    pub fn voxel_center(&self, flat: usize) -> Vec3 {
        let (lo, hi) = self.voxel_bounds(flat);
        (lo + hi) / 2.0
    }

    /// Center of the voxel carrying `label`.
    pub fn label_center(&self, label: usize) -> Vec3 {
        self.voxel_center(self.active[label])
    }

    pub fn voxel_diagonal(&self) -> f64 {
        ((self.bbox_max - self.bbox_min) / self.divisions as f64).norm()
    }
}

/// Grid over the bounds of `registered_points` keeping the `n_v` voxels that
/// hold the most `training_points` (ties to the lower flat index). A box axis
/// of zero extent is padded so every voxel has positive size.
pub fn build_voxel_grid(
    registered_points: &[Vec3],
    divisions: usize,
    training_points: &[Vec3],
    n_v: usize,
) -> Result<VoxelGrid, GroundingError> {
    if divisions == 0 || n_v == 0 {
        return Err(GroundingError::InvalidGrid(
            "divisions and n_v must be at least 1".into(),
        ));
    }
    let (mut lo, mut hi) =
        bounds_of(registered_points.iter()).ok_or(GroundingError::EmptyPointCloud)?;
    let span = (hi - lo).max().max(1.0);
    for k in 0..3 {
        if hi[k] <= lo[k] {
            lo[k] -= 1e-3 * span;
            hi[k] += 1e-3 * span;
        }
    }
    let probe = VoxelGrid::new(lo, hi, divisions, vec![0])?;
    let mut counts = vec![0usize; probe.total_voxels()];
    for p in training_points {
        if let Some(v) = probe.voxel_of(p) {
            counts[v] += 1;
        }
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(n_v);
    order.sort_unstable();
    VoxelGrid::new(lo, hi, divisions, order)
}
