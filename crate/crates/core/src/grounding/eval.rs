use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ground_query, GroundingError, GroundingModel, VoxelGrid};
use crate::geometry::Vec3;
use crate::par;
use crate::sampling::mix_seed;
use crate::transfer::{pck_from_distances, PckCurve};

/// A text query with the ground-truth location it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingQuery {
    pub model_id: String,
    pub text: String,
    pub gt_point: Vec3,
    /// Object class for the per-class breakdown.
    pub class: Option<String>,
}

/// Center of a uniformly drawn active voxel.
pub fn chance_baseline(grid: &VoxelGrid, seed: u64) -> Vec3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grid.label_center(rng.random_range(0..grid.n_v()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPck {
    pub class: String,
    pub queries: usize,
    pub values: Vec<f64>,
}

fn metric_scale(scales: &BTreeMap<String, f64>, id: &str) -> Result<f64, GroundingError> {
    scales
        .get(id)
        .copied()
        .ok_or_else(|| GroundingError::UnknownModelId(id.into()))
}

fn grid_of<'a>(
    grids: &'a BTreeMap<String, VoxelGrid>,
    id: &str,
) -> Result<&'a VoxelGrid, GroundingError> {
    grids
        .get(id)
        .ok_or_else(|| GroundingError::UnknownModelId(id.into()))
}

fn score(
    queries: &[GroundingQuery],
    predictions: &[Vec3],
    thresholds_cm: &[f64],
    metric_scales: &BTreeMap<String, f64>,
) -> Result<(PckCurve, Vec<ClassPck>), GroundingError> {
    let mut distances = Vec::with_capacity(queries.len());
    let mut by_class: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (q, p) in queries.iter().zip(predictions) {
        let d = metric_scale(metric_scales, &q.model_id)? * (p - q.gt_point).norm();
        distances.push(d);
        if let Some(c) = &q.class {
            by_class.entry(c).or_default().push(d);
        }
    }
    let curve = pck_from_distances(&distances, thresholds_cm)?;
    let classes = by_class
        .into_iter()
        .map(|(c, d)| {
            Ok(ClassPck {
                class: c.to_string(),
                queries: d.len(),
                values: pck_from_distances(&d, thresholds_cm)?.values().to_vec(),
            })
        })
        .collect::<Result<_, GroundingError>>()?;
    Ok((curve, classes))
}

/// Pooled PCK of the model's predictions plus a per-class breakdown.
pub fn evaluate_grounding_pck(
    queries: &[GroundingQuery],
    model: &GroundingModel,
    grids: &BTreeMap<String, VoxelGrid>,
    thresholds_cm: &[f64],
    metric_scales: &BTreeMap<String, f64>,
) -> Result<(PckCurve, Vec<ClassPck>), GroundingError> {
    let predictions = par::map(queries, |q| {
        ground_query(model, &q.model_id, &q.text, grid_of(grids, &q.model_id)?)
            .map(|r| r.predicted_point)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    score(queries, &predictions, thresholds_cm, metric_scales)
}

/// Same table for the chance baseline; query `i` draws with seed `mix(seed, i)`.
pub fn evaluate_chance_pck(
    queries: &[GroundingQuery],
    grids: &BTreeMap<String, VoxelGrid>,
    thresholds_cm: &[f64],
    metric_scales: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<(PckCurve, Vec<ClassPck>), GroundingError> {
    let predictions = queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            Ok(chance_baseline(
                grid_of(grids, &q.model_id)?,
                mix_seed(seed, i as u64),
            ))
        })
        .collect::<Result<Vec<_>, GroundingError>>()?;
    score(queries, &predictions, thresholds_cm, metric_scales)
}

/// Method and chance curves with a per-class table pairing the two.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingEvaluation {
    pub method: PckCurve,
    pub chance: PckCurve,
    /// (class, queries, chance values, method values)
    pub classes: Vec<(String, usize, Vec<f64>, Vec<f64>)>,
}

pub fn evaluate_grounding(
    queries: &[GroundingQuery],
    model: &GroundingModel,
    grids: &BTreeMap<String, VoxelGrid>,
    thresholds_cm: &[f64],
    metric_scales: &BTreeMap<String, f64>,
    chance_seed: u64,
) -> Result<GroundingEvaluation, GroundingError> {
    let (method, m_cls) =
        evaluate_grounding_pck(queries, model, grids, thresholds_cm, metric_scales)?;
    let (chance, c_cls) =
        evaluate_chance_pck(queries, grids, thresholds_cm, metric_scales, chance_seed)?;
    let classes = m_cls
        .into_iter()
        .zip(c_cls)
        .map(|(m, c)| (m.class, m.queries, c.values, m.values))
        .collect();
    Ok(GroundingEvaluation {
        method,
        chance,
        classes,
    })
}
