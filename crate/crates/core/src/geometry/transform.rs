use nalgebra::{Matrix4, Rotation3, UnitQuaternion};

use super::{all_finite, validate_rotation, GeometryError, Mat3, Mat4, Vec3};

/// Uniform scale, rotation and translation: `p ↦ s·R·p + t`.
///
/// Maps points expressed in one reconstruction's frame into another's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform3 {
    scale: f64,
    rotation: Mat3,
    translation: Vec3,
}

impl Default for SimilarityTransform3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform3 {
    /// Builds a transform, projecting slightly drifted rotations back onto
    /// SO(3) and rejecting anything further off.
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GeometryError::InvalidScale(scale));
        }
        if !all_finite(&translation) {
            return Err(GeometryError::NonFinite("translation"));
        }
        let rotation = validate_rotation(&rotation)?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_scale(scale: f64) -> Result<Self, GeometryError> {
        Self::new(scale, Mat3::identity(), Vec3::zeros())
    }

    /// Builds from a (w, x, y, z) quaternion, normalizing it first.
    pub fn from_quaternion(
        scale: f64,
        wxyz: [f64; 4],
        translation: Vec3,
    ) -> Result<Self, GeometryError> {
        if !wxyz.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if q.norm() < 1e-12 {
            return Err(GeometryError::NotARotation { deviation: 1.0 });
        }
        let r = UnitQuaternion::from_quaternion(q)
            .to_rotation_matrix()
            .into_inner();
        Self::new(scale, r, translation)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Rotation as a unit quaternion (w, x, y, z) with `w ≥ 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let (w, x, y, z) = (q.w, q.i, q.j, q.k);
        if w < 0.0 {
            [-w, -x, -y, -z]
        } else {
            [w, x, y, z]
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &Self) -> Self {
        Self {
            scale: self.scale * inner.scale,
            rotation: self.rotation * inner.rotation,
            translation: self.scale * (self.rotation * inner.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        Self {
            scale: inv_scale,
            rotation: rt,
            translation: -inv_scale * (rt * self.translation),
        }
    }

    /// 4×4 homogeneous matrix `[sR t; 0 1]`.
    pub fn to_homogeneous(&self) -> Mat4 {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.scale * self.rotation));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Re-projects the rotation onto SO(3); useful after long composition chains.
    pub fn renormalized(&self) -> Self {
        Self {
            rotation: nearest_rotation(&self.rotation),
            ..*self
        }
    }

    /// Rotation angle (radians) of `self.R · other.Rᵀ`.
    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        let rel = self.rotation * other.rotation.transpose();
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Largest componentwise difference across scale, rotation and translation.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let ds = (self.scale - other.scale).abs();
        let dr = (self.rotation - other.rotation).amax();
        let dt = (self.translation - other.translation).amax();
        ds.max(dr).max(dt)
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }
}

/// Nearest proper rotation in the Frobenius sense (`U·diag(1,1,det)·Vᵀ`).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let d = (u * vt).determinant().signum();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    u * fix * vt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_point, random_transform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_leaves_points_alone() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(SimilarityTransform3::identity().apply(&p), p);
    }

    #[test]
    fn scale_and_shift() {
        let t = SimilarityTransform3::new(2.0, Mat3::identity(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(t.apply(&Vec3::new(1.0, 1.0, 1.0)), Vec3::new(3.0, 2.0, 2.0));
    }

    #[test]
    fn apply_matches_homogeneous_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let p = random_point(&mut rng, 10.0);
            let m = t.to_homogeneous();
            let h = m * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            let expected = Vec3::new(h.x / h.w, h.y / h.w, h.z / h.w);
            assert!((t.apply(&p) - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_transform(&mut rng);
        assert!(t
            .compose(&SimilarityTransform3::identity())
            .approx_eq(&t, 0.0));
        assert!(t
            .inverse()
            .compose(&t)
            .approx_eq(&SimilarityTransform3::identity(), 1e-9));
        assert!(t
            .compose(&t.inverse())
            .approx_eq(&SimilarityTransform3::identity(), 1e-9));
    }

    #[test]
    fn compose_is_pointwise_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t1 = random_transform(&mut rng);
        let t2 = random_transform(&mut rng);
        let c = t2.compose(&t1);
        for _ in 0..100 {
            let p = random_point(&mut rng, 5.0);
            let direct = t2.apply(&t1.apply(&p));
            assert!((c.apply(&p) - direct).amax() < 1e-9);
        }
    }

    #[test]
    fn inverse_of_pure_scale() {
        let t = SimilarityTransform3::from_scale(2.0).unwrap();
        let inv = t.inverse();
        assert_eq!(inv.scale(), 0.5);
        assert!(SimilarityTransform3::identity()
            .inverse()
            .approx_eq(&SimilarityTransform3::identity(), 0.0));
    }

    #[test]
    fn rejects_bad_rotations_and_repairs_small_drift() {
        let mut r = Mat3::identity();
        r[(0, 1)] = 1e-8;
        let t = SimilarityTransform3::new(1.0, r, Vec3::zeros()).unwrap();
        assert!(crate::geometry::rotation_deviation(t.rotation()) < 1e-12);
        r[(0, 1)] = 1e-3;
        assert!(matches!(
            SimilarityTransform3::new(1.0, r, Vec3::zeros()),
            Err(GeometryError::NotARotation { .. })
        ));
        let reflection = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(SimilarityTransform3::new(1.0, reflection, Vec3::zeros()).is_err());
        assert!(SimilarityTransform3::new(0.0, Mat3::identity(), Vec3::zeros()).is_err());
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let t = random_transform(&mut rng);
            let q = t.quaternion();
            let back =
                SimilarityTransform3::from_quaternion(t.scale(), q, *t.translation()).unwrap();
            assert!(back.approx_eq(&t, 1e-12));
        }
    }
}
