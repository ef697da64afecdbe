use std::collections::HashSet;

use super::{all_finite, GeometryError, SimilarityTransform3, Vec3};

/// Named 3D keypoints expressed in one reconstruction's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints3D {
    names: Vec<String>,
    coords: Vec<Vec3>,
}

impl Keypoints3D {
    pub fn new(names: Vec<String>, coords: Vec<Vec3>) -> Result<Self, GeometryError> {
        if names.is_empty() {
            return Err(GeometryError::InvalidKeypoints(
                "need at least one keypoint".into(),
            ));
        }
        if names.len() != coords.len() {
            return Err(GeometryError::InvalidKeypoints(format!(
                "{} names but {} coordinates",
                names.len(),
                coords.len()
            )));
        }
        let mut seen = HashSet::new();
        for (n, c) in names.iter().zip(&coords) {
            if !seen.insert(n.as_str()) {
                return Err(GeometryError::InvalidKeypoints(format!(
                    "duplicate name {n}"
                )));
            }
            if !all_finite(c) {
                return Err(GeometryError::InvalidKeypoints(format!(
                    "{n} is not finite"
                )));
            }
        }
        Ok(Self { names, coords })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn coords(&self) -> &[Vec3] {
        &self.coords
    }

    pub fn get(&self, name: &str) -> Option<&Vec3> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.coords[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vec3)> {
        self.names.iter().map(String::as_str).zip(&self.coords)
    }

    /// Column-wise application of `t`, names preserved.
    pub fn transformed(&self, t: &SimilarityTransform3) -> Self {
        Self {
            names: self.names.clone(),
            coords: self.coords.iter().map(|p| t.apply(p)).collect(),
        }
    }

    /// Pairs of coordinates for names present in both sets, in `self` order.
    pub fn common_with<'a>(&'a self, other: &'a Self) -> Vec<(&'a str, Vec3, Vec3)> {
        self.iter()
            .filter_map(|(n, a)| other.get(n).map(|b| (n, *a, *b)))
            .collect()
    }
}
