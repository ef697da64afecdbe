use nalgebra::Matrix3x4;

use super::{
    all_finite, validate_rotation, GeometryError, Mat3, SimilarityTransform3, Vec2, Vec3, MIN_DEPTH,
};

/// Pinhole camera: `x ~ K·(R·X + t)` with image size in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsics: Mat3,
    rotation: Mat3,
    translation: Vec3,
    width: u32,
    height: u32,
}

/// A viewing ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, d: f64) -> Vec3 {
        self.origin + d * self.direction
    }

    /// Perpendicular distance from `p` to the (infinite) line of the ray.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let v = p - self.origin;
        (v - v.dot(&self.direction) * self.direction).norm()
    }
}

impl CameraModel {
    pub fn new(
        intrinsics: Mat3,
        rotation: Mat3,
        translation: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !intrinsics.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if intrinsics[(1, 0)] != 0.0 || intrinsics[(2, 0)] != 0.0 || intrinsics[(2, 1)] != 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "not upper triangular".into(),
            ));
        }
        if intrinsics[(2, 2)] != 1.0 {
            return Err(GeometryError::InvalidIntrinsics("K[2][2] must be 1".into()));
        }
        if intrinsics[(0, 0)] <= 0.0 || intrinsics[(1, 1)] <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(
                "image size must be positive".into(),
            ));
        }
        if !all_finite(&translation) {
            return Err(GeometryError::NonFinite("camera translation"));
        }
        let rotation = validate_rotation(&rotation)?;
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Square-pixel camera without skew.
    pub fn pinhole(
        focal: f64,
        principal: Vec2,
        rotation: Mat3,
        translation: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Mat3::new(
            focal,
            0.0,
            principal.x,
            0.0,
            focal,
            principal.y,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, rotation, translation, width, height)
    }

    pub fn intrinsics(&self) -> &Mat3 {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// `K·[R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        self.intrinsics * rt
    }

    pub fn to_camera_frame(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Pixel position and camera-frame depth of `p`.
    pub fn project(&self, p: &Vec3) -> Result<(Vec2, f64), GeometryError> {
        if !all_finite(p) {
            return Err(GeometryError::NonFinite("point"));
        }
        let pc = self.to_camera_frame(p);
        let depth = pc.z;
        if depth <= MIN_DEPTH {
            return Err(GeometryError::DepthNonPositive { depth });
        }
        let h = self.intrinsics * pc;
        Ok((Vec2::new(h.x / h.z, h.y / h.z), depth))
    }

    pub fn contains(&self, pixel: &Vec2) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }

    /// Ray from the camera center through `pixel`.
    pub fn backproject_ray(&self, pixel: &Vec2) -> Result<Ray, GeometryError> {
        if !self.contains(pixel) {
            return Err(GeometryError::PixelOutOfBounds {
                u: pixel.x,
                v: pixel.y,
                width: self.width,
                height: self.height,
            });
        }
        let k_inv = self
            .intrinsics
            .try_inverse()
            .ok_or(GeometryError::InvalidIntrinsics("singular".into()))?;
        let d_cam = k_inv * Vec3::new(pixel.x, pixel.y, 1.0);
        let direction = (self.rotation.transpose() * d_cam).normalize();
        Ok(Ray {
            origin: self.center(),
            direction,
        })
    }

    /// The same physical camera expressed in the frame reached through `t`.
    ///
    /// If `X' = s·R·X + T`, then `R_c·X + t_c ∝ R_c·Rᵀ·X' + (s·t_c − R_c·Rᵀ·T)`,
    /// and the overall factor `s` cancels in the perspective division.
    pub fn transformed(&self, t: &SimilarityTransform3) -> Self {
        let r = self.rotation * t.rotation().transpose();
        let tr = t.scale() * self.translation - r * t.translation();
        Self {
            rotation: r,
            translation: tr,
            ..self.clone()
        }
    }
}
