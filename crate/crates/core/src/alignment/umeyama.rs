use super::AlignError;
use crate::geometry::{Mat3, SimilarityTransform3, Vec3};

/// Relative singular-value floor for rejecting collinear point sets.
const COLLINEAR_TOLERANCE: f64 = 1e-9;

/// Closed-form least-squares similarity `dst ≈ s·R·src + t` (Umeyama 1991).
///
/// Reflections are excluded: when the cross-covariance calls for one, the
/// sign of the weakest singular direction is flipped so `det R = +1`.
pub fn fit_similarity_umeyama(
    src: &[Vec3],
    dst: &[Vec3],
) -> Result<SimilarityTransform3, AlignError> {
    if src.len() != dst.len() {
        return Err(AlignError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(AlignError::TooFewPoints { needed: 3, got: n });
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vec3>() * inv_n;
    let mu_d = dst.iter().sum::<Vec3>() * inv_n;

    let mut cov = Mat3::zeros();
    let mut scatter = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        scatter += cs * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov *= inv_n;
    scatter *= inv_n;
    var_s *= inv_n;

    let spread = scatter.symmetric_eigenvalues();
    let mut spread: Vec<f64> = spread.iter().copied().collect();
    spread.sort_by(|a, b| b.total_cmp(a));
    if spread[0].is_nan() || spread[0] <= 0.0 || spread[1] <= COLLINEAR_TOLERANCE * spread[0] {
        return Err(AlignError::DegenerateConfiguration(
            "source points are collinear",
        ));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if sv[order[1]] <= COLLINEAR_TOLERANCE * sv[order[0]] {
        return Err(AlignError::DegenerateConfiguration(
            "cross-covariance has rank < 2",
        ));
    }
    let weakest = order[2];

    let mut sign = Vec3::repeat(1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        sign[weakest] = -1.0;
    }
    let rotation = u * Mat3::from_diagonal(&sign) * v_t;
    let trace_ds: f64 = (0..3).map(|i| sv[i] * sign[i]).sum();
    let scale = trace_ds / var_s;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(AlignError::DegenerateConfiguration("non-positive scale"));
    }
    let translation = mu_d - scale * (rotation * mu_s);
    Ok(SimilarityTransform3::new(scale, rotation, translation)?)
}
