use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_similarity_umeyama, AlignError, Correspondence3D};
use crate::geometry::{reconstruction::bounds_of, SimilarityTransform3, Vec3};

const SAMPLE_SIZE: usize = 3;
const MAX_REFITS: usize = 5;

/// Inlier residual threshold, absolute or relative to a cloud diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InlierThreshold {
    /// Fraction of the target cloud's bounding-box diagonal.
    Relative(f64),
    /// Distance in target-frame model units.
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub inlier_threshold: InlierThreshold,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub min_inlier_ratio: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: InlierThreshold::Relative(0.02),
            max_iterations: 10_000,
            min_inliers: 12,
            min_inlier_ratio: 0.15,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        let bad = |m: &str| Err(AlignError::InvalidConfig(m.to_string()));
        match self.inlier_threshold {
            InlierThreshold::Relative(x) | InlierThreshold::Absolute(x)
                if !(x.is_finite() && x > 0.0) =>
            {
                return bad("inlier threshold must be positive")
            }
            _ => {}
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_inlier_ratio) {
            return bad("min_inlier_ratio must lie in [0, 1]");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)");
        }
        Ok(())
    }

    /// Absolute threshold given the diagonal of the target cloud.
    pub fn threshold_for(&self, diagonal: f64) -> f64 {
        match self.inlier_threshold {
            InlierThreshold::Relative(f) => f * diagonal,
            InlierThreshold::Absolute(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub transform: SimilarityTransform3,
    /// Per-correspondence inlier flags of the final model.
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub total: usize,
    /// RMS residual over the inliers, in target-frame units.
    pub inlier_rms: f64,
    pub threshold: f64,
    pub iterations: usize,
    /// Inliers of the best minimal-sample model before refitting.
    pub minimal_sample_inliers: usize,
}

impl RansacFit {
    pub fn inlier_indices(&self) -> Vec<usize> {
        self.inliers
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Iterations needed to draw one all-inlier sample with probability `confidence`.
fn adaptive_bound(inlier_ratio: f64, confidence: f64) -> usize {
    let p_good = inlier_ratio.powi(SAMPLE_SIZE as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

fn score(
    t: &SimilarityTransform3,
    src: &[Vec3],
    dst: &[Vec3],
    threshold: f64,
) -> (Vec<bool>, usize) {
    let flags: Vec<bool> = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (d - t.apply(s)).norm() <= threshold)
        .collect();
    let count = flags.iter().filter(|&&b| b).count();
    (flags, count)
}

fn rms(t: &SimilarityTransform3, src: &[Vec3], dst: &[Vec3], flags: &[bool]) -> f64 {
    let (sum, n) = src
        .iter()
        .zip(dst)
        .zip(flags)
        .filter(|(_, &f)| f)
        .fold((0.0, 0usize), |(s, n), ((a, b), _)| {
            (s + (b - t.apply(a)).norm_squared(), n + 1)
        });
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn subset(points: &[Vec3], flags: &[bool]) -> Vec<Vec3> {
    points
        .iter()
        .zip(flags)
        .filter(|(_, &f)| f)
        .map(|(p, _)| *p)
        .collect()
}

/// Robust similarity fit: RANSAC over 3-point Umeyama fits, followed by
/// least-squares refits on the consensus set.
///
/// A relative threshold is resolved against `target_diagonal`, or against the
/// bounding box of the destination points when no diagonal is given.
pub fn solve_similarity(
    correspondences: &[Correspondence3D],
    cfg: &RansacConfig,
    target_diagonal: Option<f64>,
) -> Result<RansacFit, AlignError> {
    cfg.validate()?;
    let total = correspondences.len();
    let needed = cfg.min_inliers.max(SAMPLE_SIZE);
    if total < needed {
        return Err(AlignError::InsufficientCorrespondences { needed, got: total });
    }
    let src: Vec<Vec3> = correspondences.iter().map(|c| c.point_a).collect();
    let dst: Vec<Vec3> = correspondences.iter().map(|c| c.point_b).collect();
    let diagonal = target_diagonal.unwrap_or_else(|| {
        let (lo, hi) = bounds_of(&dst).expect("nonempty");
        (hi - lo).norm()
    });
    let threshold = cfg.threshold_for(diagonal);
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(AlignError::DegenerateConfiguration("zero inlier threshold"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(SimilarityTransform3, Vec<bool>, usize)> = None;
    let mut limit = cfg.max_iterations;
    let mut iterations = 0;
    while iterations < limit {
        iterations += 1;
        let sample = rand::seq::index::sample(&mut rng, total, SAMPLE_SIZE);
        let s: Vec<Vec3> = sample.iter().map(|i| src[i]).collect();
        let d: Vec<Vec3> = sample.iter().map(|i| dst[i]).collect();
        let Ok(model) = fit_similarity_umeyama(&s, &d) else {
            continue;
        };
        let (flags, count) = score(&model, &src, &dst, threshold);
        if best.as_ref().is_none_or(|(_, _, c)| count > *c) {
            limit = limit
                .min(adaptive_bound(count as f64 / total as f64, cfg.confidence).max(iterations));
            best = Some((model, flags, count));
        }
    }

    let Some((mut model, mut flags, minimal_count)) = best else {
        return Err(AlignError::NoConsensus { inliers: 0, total });
    };
    let mut count = minimal_count;
    for _ in 0..MAX_REFITS {
        if count < SAMPLE_SIZE {
            break;
        }
        let Ok(refit) = fit_similarity_umeyama(&subset(&src, &flags), &subset(&dst, &flags)) else {
            break;
        };
        let (new_flags, new_count) = score(&refit, &src, &dst, threshold);
        if new_count < count {
            break;
        }
        let converged = new_flags == flags;
        model = refit;
        flags = new_flags;
        count = new_count;
        if converged {
            break;
        }
    }

    if count < cfg.min_inliers || (count as f64) < cfg.min_inlier_ratio * total as f64 {
        return Err(AlignError::NoConsensus {
            inliers: count,
            total,
        });
    }
    let inlier_rms = rms(&model, &src, &dst, &flags);
    Ok(RansacFit {
        transform: model,
        inliers: flags,
        inlier_count: count,
        total,
        inlier_rms,
        threshold,
        iterations,
        minimal_sample_inliers: minimal_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_point, random_transform};
    use rand::{Rng, SeedableRng};

    fn corr(a: Vec3, b: Vec3) -> Correspondence3D {
        Correspondence3D {
            point_a: a,
            point_b: b,
            frame_a: "fa".into(),
            frame_b: "fb".into(),
        }
    }

    #[test]
    fn noise_free_all_inliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let planted = random_transform(&mut rng);
        let c: Vec<_> = (0..50)
            .map(|_| {
                let p = random_point(&mut rng, 1.0);
                corr(p, planted.apply(&p))
            })
            .collect();
        let fit = solve_similarity(&c, &RansacConfig::default(), None).unwrap();
        assert_eq!(fit.inlier_count, 50);
        assert!(fit.transform.approx_eq(&planted, 1e-8));
        assert!(fit.inlier_count >= fit.minimal_sample_inliers);
    }

    #[test]
    fn planted_outliers_are_identified() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let planted = random_transform(&mut rng);
        let mut c = Vec::new();
        for _ in 0..30 {
            let p = random_point(&mut rng, 1.0);
            c.push(corr(p, planted.apply(&p)));
        }
        let (lo, hi) = bounds_of(c.iter().map(|x| &x.point_b)).unwrap();
        for _ in 0..20 {
            let p = random_point(&mut rng, 1.0);
            let q = Vec3::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(lo.z..hi.z),
            );
            c.push(corr(p, q));
        }
        let cfg = RansacConfig {
            seed: 7,
            ..Default::default()
        };
        let fit = solve_similarity(&c, &cfg, None).unwrap();
        assert_eq!(fit.inlier_indices(), (0..30).collect::<Vec<_>>());
        assert!(fit.transform.approx_eq(&planted, 1e-8));
    }

    #[test]
    fn pure_noise_has_no_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let c: Vec<_> = (0..10)
            .map(|_| corr(random_point(&mut rng, 1.0), random_point(&mut rng, 1.0)))
            .collect();
        let cfg = RansacConfig {
            min_inliers: 6,
            min_inlier_ratio: 0.5,
            ..Default::default()
        };
        let threshold = {
            let (lo, hi) = bounds_of(c.iter().map(|x| &x.point_b)).unwrap();
            cfg.threshold_for((hi - lo).norm())
        };
        // Exhaustive oracle: best consensus over every minimal sample, plus its refit.
        let src: Vec<Vec3> = c.iter().map(|x| x.point_a).collect();
        let dst: Vec<Vec3> = c.iter().map(|x| x.point_b).collect();
        let mut best = 0;
        for i in 0..10 {
            for j in i + 1..10 {
                for k in j + 1..10 {
                    if let Ok(t) =
                        fit_similarity_umeyama(&[src[i], src[j], src[k]], &[dst[i], dst[j], dst[k]])
                    {
                        best = best.max(score(&t, &src, &dst, threshold).1);
                    }
                }
            }
        }
        assert!(best < cfg.min_inliers, "oracle found a consensus of {best}");
        assert!(matches!(
            solve_similarity(&c, &cfg, None),
            Err(AlignError::NoConsensus { .. })
        ));
    }

    #[test]
    fn too_few_correspondences() {
        let c: Vec<_> = (0..5)
            .map(|i| corr(Vec3::new(i as f64, 0.0, 0.0), Vec3::zeros()))
            .collect();
        assert_eq!(
            solve_similarity(&c, &RansacConfig::default(), None),
            Err(AlignError::InsufficientCorrespondences { needed: 12, got: 5 })
        );
    }

    #[test]
    fn adaptive_bound_values() {
        assert_eq!(adaptive_bound(1.0, 0.999), 1);
        // log(0.001) / log(1 − 0.5³) = 51.7
        assert_eq!(adaptive_bound(0.5, 0.999), 52);
        assert_eq!(adaptive_bound(0.0, 0.999), usize::MAX);
    }

    #[test]
    fn same_seed_same_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let planted = random_transform(&mut rng);
        let c: Vec<_> = (0..40)
            .map(|i| {
                let p = random_point(&mut rng, 1.0);
                if i % 3 == 0 {
                    corr(p, random_point(&mut rng, 10.0))
                } else {
                    corr(p, planted.apply(&p))
                }
            })
            .collect();
        let cfg = RansacConfig {
            seed: 99,
            ..Default::default()
        };
        assert_eq!(
            solve_similarity(&c, &cfg, None).unwrap(),
            solve_similarity(&c, &cfg, None).unwrap()
        );
    }
}
