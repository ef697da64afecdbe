//! Seeded random draws shared by the synthetic-scene generator and tests.

use nalgebra::{UnitQuaternion, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{Mat3, SimilarityTransform3, Vec3};

/// splitmix64 finalizer; used to derive independent child seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed derived from a base seed and a string label (e.g. a pair of ids).
pub fn labeled_seed(seed: u64, label: &str) -> u64 {
    mix_seed(seed, fnv1a(label.as_bytes()))
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    Vec3::new(normal(rng), normal(rng), normal(rng)) * sigma
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let v = Vector4::new(normal(rng), normal(rng), normal(rng), normal(rng));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(v));
    q.to_rotation_matrix().into_inner()
}

/// Rotation about a uniformly random axis by an angle drawn from `[0, max_angle]`.
pub fn small_rotation<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Mat3 {
    let axis = nalgebra::Unit::new_normalize(normal_vec3(rng, 1.0));
    let angle = rng.random_range(0.0..=max_angle);
    nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner()
}

pub fn random_point<R: Rng + ?Sized>(rng: &mut R, half_extent: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half_extent..half_extent),
        rng.random_range(-half_extent..half_extent),
        rng.random_range(-half_extent..half_extent),
    )
}

/// Random similarity with log-uniform scale in [0.2, 5] and translation in ±10.
pub fn random_transform<R: Rng + ?Sized>(rng: &mut R) -> SimilarityTransform3 {
    let scale = (rng.random_range(0.2_f64.ln()..5.0_f64.ln())).exp();
    random_transform_with_scale(rng, scale)
}

pub fn random_transform_with_scale<R: Rng + ?Sized>(
    rng: &mut R,
    scale: f64,
) -> SimilarityTransform3 {
    SimilarityTransform3::new(scale, random_rotation(rng), random_point(rng, 10.0))
        .expect("sampled rotation is orthonormal")
}
