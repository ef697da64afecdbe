use nalgebra::{DMatrix, Vector4};

use super::{CameraModel, GeometryError, Vec2, Vec3};

/// Relative singular-value threshold below which the DLT system is rank-deficient.
const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: Vec3,
    /// Mean pixel distance between the observations and the reprojected point.
    pub mean_reprojection_error: f64,
}

/// Linear (DLT) triangulation from two or more views.
///
/// Works on normalized image coordinates `K⁻¹·x` so the stacked system is
/// well conditioned; the solution is the right singular vector of the
/// smallest singular value.
pub fn triangulate(observations: &[(&CameraModel, Vec2)]) -> Result<Triangulation, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::TooFewObservations(observations.len()));
    }
    let mut a = DMatrix::<f64>::zeros(2 * observations.len(), 4);
    for (i, (cam, px)) in observations.iter().enumerate() {
        if !(px.x.is_finite() && px.y.is_finite()) {
            return Err(GeometryError::NonFinite("pixel"));
        }
        let k_inv = cam
            .intrinsics()
            .try_inverse()
            .ok_or(GeometryError::InvalidIntrinsics("singular".into()))?;
        let n = k_inv * Vec3::new(px.x, px.y, 1.0);
        let (x, y) = (n.x / n.z, n.y / n.z);
        let r = cam.rotation();
        let t = cam.translation();
        for c in 0..3 {
            a[(2 * i, c)] = x * r[(2, c)] - r[(0, c)];
            a[(2 * i + 1, c)] = y * r[(2, c)] - r[(1, c)];
        }
        a[(2 * i, 3)] = x * t.z - t.x;
        a[(2 * i + 1, 3)] = y * t.z - t.y;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    let second_smallest = svd.singular_values[order[1]];
    if largest <= 0.0 || second_smallest <= RANK_TOLERANCE * largest {
        return Err(GeometryError::DegenerateGeometry(
            "rank-deficient triangulation system",
        ));
    }
    let h: Vector4<f64> = v_t
        .row(order[0])
        .transpose()
        .fixed_rows::<4>(0)
        .into_owned();
    if h.w.abs() <= 1e-12 * h.norm() {
        return Err(GeometryError::DegenerateGeometry("point at infinity"));
    }
    let point = Vec3::new(h.x / h.w, h.y / h.w, h.z / h.w);

    let mut total = 0.0;
    for (cam, px) in observations {
        let q = cam.projection_matrix() * Vector4::new(point.x, point.y, point.z, 1.0);
        total += (Vec2::new(q.x / q.z, q.y / q.z) - px).norm();
    }
    Ok(Triangulation {
        point,
        mean_reprojection_error: total / observations.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use crate::sampling::small_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn looking_at(center: Vec3, target: Vec3) -> CameraModel {
        let z = (target - center).normalize();
        let x = Vec3::y().cross(&z).normalize();
        let y = z.cross(&x);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        CameraModel::pinhole(600.0, Vec2::new(320.0, 240.0), r, -(r * center), 640, 480).unwrap()
    }

    #[test]
    fn recovers_point_from_two_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let gt = Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let c1 = looking_at(Vec3::new(-1.0, 0.2, -3.0), Vec3::zeros());
            let c2 = looking_at(Vec3::new(1.5, -0.1, -2.5), Vec3::zeros());
            let obs: Vec<(&CameraModel, Vec2)> = [&c1, &c2]
                .into_iter()
                .map(|c| (c, c.project(&gt).unwrap().0))
                .collect();
            let tri = triangulate(&obs).unwrap();
            assert!(
                (tri.point - gt).amax() < 1e-8,
                "{:?} vs {:?}",
                tri.point,
                gt
            );
            assert!(tri.mean_reprojection_error < 1e-6);
        }
    }

    #[test]
    fn single_observation_is_rejected() {
        let c = looking_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros());
        assert_eq!(
            triangulate(&[(&c, Vec2::new(320.0, 240.0))]),
            Err(GeometryError::TooFewObservations(1))
        );
    }

    #[test]
    fn identical_cameras_are_degenerate() {
        let c = looking_at(Vec3::new(0.3, 0.0, -3.0), Vec3::zeros());
        let px = c.project(&Vec3::new(0.1, 0.1, 0.0)).unwrap().0;
        assert!(matches!(
            triangulate(&[(&c, px), (&c, px)]),
            Err(GeometryError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn many_views_with_small_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let gt = Vec3::new(0.2, -0.1, 0.05);
        let cams: Vec<CameraModel> = (0..6)
            .map(|i| {
                let c = looking_at(Vec3::new(i as f64 * 0.4 - 1.0, 0.3, -3.0), Vec3::zeros());
                let r = small_rotation(&mut rng, 0.02) * c.rotation();
                CameraModel::new(*c.intrinsics(), r, -(r * c.center()), 640, 480).unwrap()
            })
            .collect();
        let obs: Vec<_> = cams
            .iter()
            .map(|c| (c, c.project(&gt).unwrap().0))
            .collect();
        assert!((triangulate(&obs).unwrap().point - gt).amax() < 1e-8);
    }
}
