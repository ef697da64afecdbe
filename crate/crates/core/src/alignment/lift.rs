use super::AlignError;
use crate::geometry::{Reconstruction, Vec3};
use crate::matching::MatchSet;

/// Default pixel radius for associating a matched feature with an SfM track.
pub const DEFAULT_ASSOC_RADIUS: f64 = 2.0;

/// A 3D-3D correspondence between two reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence3D {
    pub point_a: Vec3,
    pub point_b: Vec3,
    pub frame_a: String,
    pub frame_b: String,
}

/// Lifts 2D-2D matches to 3D by resolving each matched pixel to the nearest
/// observation track within `assoc_radius` in its frame. Matches that do not
/// resolve on both sides are dropped.
pub fn lift_matches(
    matches: &MatchSet,
    rec_a: &Reconstruction,
    rec_b: &Reconstruction,
    assoc_radius: f64,
) -> Result<Vec<Correspondence3D>, AlignError> {
    for (rec, frame) in [(rec_a, &matches.frame_a), (rec_b, &matches.frame_b)] {
        if !rec.has_frame(frame) {
            return Err(AlignError::UnknownFrame {
                reconstruction: rec.id().to_string(),
                frame: frame.clone(),
            });
        }
    }
    let lifted = matches
        .matches
        .iter()
        .filter_map(|m| {
            let oa = rec_a.nearest_observation(&matches.frame_a, &m.pixel_a, assoc_radius)?;
            let ob = rec_b.nearest_observation(&matches.frame_b, &m.pixel_b, assoc_radius)?;
            Some(Correspondence3D {
                point_a: *rec_a.point(oa.point_id)?,
                point_b: *rec_b.point(ob.point_id)?,
                frame_a: matches.frame_a.clone(),
                frame_b: matches.frame_b.clone(),
            })
        })
        .collect();
    Ok(lifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Mat3, Observation, Vec2};
    use crate::matching::{Match, MatchStage};
    use std::collections::HashMap;

    fn rec(id: &str, frame: &str, pts: &[(u64, Vec3)]) -> Reconstruction {
        let cam = CameraModel::pinhole(
            100.0,
            Vec2::new(50.0, 50.0),
            Mat3::identity(),
            Vec3::zeros(),
            100,
            100,
        )
        .unwrap();
        let obs = pts
            .iter()
            .enumerate()
            .map(|(k, (pid, p))| Observation {
                frame_id: frame.into(),
                keypoint_index: k as u32,
                pixel: cam.project(p).unwrap().0,
                point_id: *pid,
            })
            .collect();
        Reconstruction::new(id, pts.to_vec(), vec![(frame.to_string(), cam)], obs).unwrap()
    }

    fn set(pairs: &[(Vec2, Vec2)]) -> MatchSet {
        MatchSet {
            frame_a: "fa".into(),
            frame_b: "fb".into(),
            matches: pairs
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| Match {
                    index_a: i,
                    index_b: i,
                    pixel_a: a,
                    pixel_b: b,
                })
                .collect(),
            stage: MatchStage::FlowFiltered,
        }
    }

    #[test]
    fn exact_hits_and_misses() {
        let a = rec(
            "A",
            "fa",
            &[(1, Vec3::new(0.0, 0.0, 1.0)), (2, Vec3::new(0.2, 0.1, 1.0))],
        );
        let b = rec("B", "fb", &[(7, Vec3::new(0.1, 0.0, 2.0))]);
        let hit = set(&[(Vec2::new(50.0, 50.0), Vec2::new(55.0, 50.0))]);
        let out = lift_matches(&hit, &a, &b, 2.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(
            (out[0].point_a, out[0].point_b),
            (Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.1, 0.0, 2.0))
        );

        let miss = set(&[(Vec2::new(50.0, 50.0), Vec2::new(80.0, 80.0))]);
        assert!(lift_matches(&miss, &a, &b, 2.0).unwrap().is_empty());

        let mut unknown = hit.clone();
        unknown.frame_b = "zz".into();
        assert!(matches!(
            lift_matches(&unknown, &a, &b, 2.0),
            Err(AlignError::UnknownFrame { .. })
        ));
    }

    #[test]
    fn every_tracked_feature_lifts() {
        let pts_a: Vec<(u64, Vec3)> = (0..25)
            .map(|i| {
                (
                    i,
                    Vec3::new((i % 5) as f64 * 0.1 - 0.2, (i / 5) as f64 * 0.1 - 0.2, 1.0),
                )
            })
            .collect();
        let pts_b: Vec<(u64, Vec3)> = pts_a
            .iter()
            .map(|(i, p)| (100 + i, p * 2.0 + Vec3::new(0.0, 0.0, 1.0)))
            .collect();
        let a = rec("A", "fa", &pts_a);
        let b = rec("B", "fb", &pts_b);
        // Lookup-table oracle: point id in A -> expected B coordinates.
        let table: HashMap<u64, Vec3> = pts_a
            .iter()
            .zip(&pts_b)
            .map(|((ia, _), (_, pb))| (*ia, *pb))
            .collect();
        let pairs: Vec<(Vec2, Vec2)> = a
            .observations()
            .iter()
            .zip(b.observations())
            .map(|(x, y)| (x.pixel + Vec2::new(0.5, -0.5), y.pixel))
            .collect();
        let out = lift_matches(&set(&pairs), &a, &b, 2.0).unwrap();
        assert_eq!(out.len(), pairs.len());
        for (c, (id, _)) in out.iter().zip(&pts_a) {
            assert_eq!(c.point_b, table[id]);
        }
    }
}
