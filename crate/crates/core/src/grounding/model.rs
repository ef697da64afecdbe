use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GroundingError, TrainingPair, VoxelGrid};
use crate::geometry::Vec3;
use crate::par;
use crate::sampling::{fnv1a, labeled_seed, mix_seed, normal};

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hash bucket of a token in a vocabulary of `vocab_buckets` rows.
pub fn bucket_of(token: &str, vocab_buckets: u32) -> u32 {
    (fnv1a(token.as_bytes()) % vocab_buckets as u64) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Text feature dimension.
    pub dim: usize,
    pub vocab_buckets: u32,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Standard deviation of initial embedding entries; `1/sqrt(dim)` when unset.
    pub init_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 1024,
            vocab_buckets: 1 << 15,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            init_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GroundingError> {
        let bad = |m: &str| Err(GroundingError::InvalidConfig(m.to_string()));
        if self.dim == 0 || self.vocab_buckets == 0 || self.batch_size == 0 {
            return bad("dim, vocab_buckets and batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.init_scale.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
            return bad("init_scale must be positive");
        }
        Ok(())
    }

    pub fn effective_init_scale(&self) -> f64 {
        self.init_scale.unwrap_or(1.0 / (self.dim as f64).sqrt())
    }
}

/// Mean-pooled hashed token embeddings. Rows are created lazily from a
/// per-bucket seed, so untouched buckets cost nothing and still encode
/// deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    vocab_buckets: u32,
    dim: usize,
    seed: u64,
    init_scale: f64,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl TextEncoder {
    pub fn new(
        vocab_buckets: u32,
        dim: usize,
        seed: u64,
        init_scale: f64,
    ) -> Result<Self, GroundingError> {
        Self::from_rows(vocab_buckets, dim, seed, init_scale, BTreeMap::new())
    }

    pub fn from_rows(
        vocab_buckets: u32,
        dim: usize,
        seed: u64,
        init_scale: f64,
        rows: BTreeMap<u32, Vec<f64>>,
    ) -> Result<Self, GroundingError> {
        if vocab_buckets == 0 || dim == 0 || !(init_scale.is_finite() && init_scale >= 0.0) {
            return Err(GroundingError::InvalidInput(
                "encoder needs positive vocabulary, dimension and scale".into(),
            ));
        }
        for (b, r) in &rows {
            if *b >= vocab_buckets || r.len() != dim || r.iter().any(|x| !x.is_finite()) {
                return Err(GroundingError::InvalidInput(format!(
                    "bad embedding row {b}"
                )));
            }
        }
        Ok(Self {
            vocab_buckets,
            dim,
            seed,
            init_scale,
            rows,
        })
    }

    pub fn vocab_buckets(&self) -> u32 {
        self.vocab_buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale
    }

    pub fn rows(&self) -> &BTreeMap<u32, Vec<f64>> {
        &self.rows
    }

    fn initial_row(&self, bucket: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
            labeled_seed(self.seed, "embedding"),
            bucket as u64,
        ));
        (0..self.dim)
            .map(|_| normal(&mut rng) * self.init_scale)
            .collect()
    }

    pub fn buckets(&self, text: &str) -> Vec<u32> {
        tokenize(text)
            .iter()
            .map(|t| bucket_of(t, self.vocab_buckets))
            .collect()
    }

    /// Creates stored rows for every bucket of `text`.
    pub fn materialize(&mut self, text: &str) {
        for b in self.buckets(text) {
            if !self.rows.contains_key(&b) {
                let row = self.initial_row(b);
                self.rows.insert(b, row);
            }
        }
    }

    fn encode_buckets(&self, buckets: &[u32]) -> Vec<f64> {
        let mut f = vec![0.0; self.dim];
        if buckets.is_empty() {
            return f;
        }
        for b in buckets {
            match self.rows.get(b) {
                Some(r) => f.iter_mut().zip(r).for_each(|(a, x)| *a += x),
                None => f
                    .iter_mut()
                    .zip(self.initial_row(*b))
                    .for_each(|(a, x)| *a += x),
            }
        }
        let n = buckets.len() as f64;
        f.iter_mut().for_each(|a| *a /= n);
        f
    }

    /// Text feature vector; an empty token list encodes to zero.
    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.encode_buckets(&self.buckets(text))
    }
}

/// Linear voxel classifier: `logits = W·f + b`, with `W` stored row-major `n_v × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    n_v: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Head {
    pub fn zeros(n_v: usize, dim: usize) -> Self {
        Self {
            n_v,
            dim,
            weights: vec![0.0; n_v * dim],
            bias: vec![0.0; n_v],
        }
    }

    pub fn from_parts(
        n_v: usize,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, GroundingError> {
        if n_v == 0 || weights.len() != n_v * dim || bias.len() != n_v {
            return Err(GroundingError::InvalidInput(format!(
                "head shape mismatch for {n_v} voxels × {dim}"
            )));
        }
        if weights.iter().chain(&bias).any(|x| !x.is_finite()) {
            return Err(GroundingError::InvalidInput(
                "non-finite head parameter".into(),
            ));
        }
        Ok(Self {
            n_v,
            dim,
            weights,
            bias,
        })
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn logits(&self, f: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(f).map(|(x, y)| x * y).sum::<f64>())
            .collect()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// One supervised example: text and voxel label for a given model's head.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Sample {
    pub model_id: String,
    pub text: String,
    pub label: usize,
}

/// Shared encoder plus one head per car model.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingModel {
    encoder: TextEncoder,
    heads: BTreeMap<String, Head>,
}

struct Prepared {
    head: usize,
    buckets: Vec<u32>,
    label: usize,
}

struct SampleGrad {
    loss: f64,
    head: usize,
    feature: Vec<f64>,
    dlogits: Vec<f64>,
    dfeature: Vec<f64>,
}

impl GroundingModel {
    pub fn new(
        encoder: TextEncoder,
        heads: BTreeMap<String, Head>,
    ) -> Result<Self, GroundingError> {
        if let Some((id, _)) = heads.iter().find(|(_, h)| h.dim != encoder.dim) {
            return Err(GroundingError::InvalidInput(format!(
                "head {id} dimension differs from the encoder"
            )));
        }
        Ok(Self { encoder, heads })
    }

    /// Zero-initialised heads with the given voxel counts.
    pub fn untrained(encoder: TextEncoder, n_v_by_model: &BTreeMap<String, usize>) -> Self {
        let dim = encoder.dim;
        let heads = n_v_by_model
            .iter()
            .map(|(id, &n)| (id.clone(), Head::zeros(n, dim)))
            .collect();
        Self { encoder, heads }
    }

    pub fn encoder(&self) -> &TextEncoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut TextEncoder {
        &mut self.encoder
    }

    pub fn heads(&self) -> &BTreeMap<String, Head> {
        &self.heads
    }

    pub fn head(&self, model_id: &str) -> Result<&Head, GroundingError> {
        self.heads
            .get(model_id)
            .ok_or_else(|| GroundingError::UnknownModelId(model_id.into()))
    }

    /// Softmax voxel scores for `text` under `model_id`'s head.
    pub fn scores(&self, model_id: &str, text: &str) -> Result<Vec<f64>, GroundingError> {
        let head = self.head(model_id)?;
        Ok(softmax(&head.logits(&self.encoder.encode(text))))
    }

    /// Flattened parameters: stored embedding rows in bucket order, then each
    /// head (by id) as weights followed by bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.encoder.rows.values().flatten().copied().collect();
        for h in self.heads.values() {
            out.extend(&h.weights);
            out.extend(&h.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), GroundingError> {
        if params.len() != self.parameters().len() {
            return Err(GroundingError::InvalidInput(
                "parameter vector length mismatch".into(),
            ));
        }
        let mut it = params.iter().copied();
        for r in self.encoder.rows.values_mut() {
            r.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        for h in self.heads.values_mut() {
            h.weights
                .iter_mut()
                .chain(h.bias.iter_mut())
                .for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    fn prepare(&self, samples: &[Sample]) -> Result<Vec<Prepared>, GroundingError> {
        let ids: Vec<&String> = self.heads.keys().collect();
        samples
            .iter()
            .map(|s| {
                let head = ids
                    .binary_search(&&s.model_id)
                    .map_err(|_| GroundingError::UnknownModelId(s.model_id.clone()))?;
                let n_v = self.heads[&s.model_id].n_v;
                if s.label >= n_v {
                    return Err(GroundingError::LabelOutOfRange {
                        model: s.model_id.clone(),
                        label: s.label,
                        n_v,
                    });
                }
                Ok(Prepared {
                    head,
                    buckets: self.encoder.buckets(&s.text),
                    label: s.label,
                })
            })
            .collect()
    }

    fn sample_grad(&self, heads: &[&Head], p: &Prepared) -> SampleGrad {
        let feature = self.encoder.encode_buckets(&p.buckets);
        let head = heads[p.head];
        let logits = head.logits(&feature);
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let mut dlogits: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        dlogits[p.label] -= 1.0;
        let mut dfeature = vec![0.0; head.dim];
        for (w, g) in head.weights.chunks_exact(head.dim).zip(&dlogits) {
            dfeature.iter_mut().zip(w).for_each(|(d, x)| *d += g * x);
        }
        SampleGrad {
            loss: lse - logits[p.label],
            head: p.head,
            feature,
            dlogits,
            dfeature,
        }
    }

    fn grads(&self, prepared: &[Prepared], batch: &[usize]) -> Vec<SampleGrad> {
        let heads: Vec<&Head> = self.heads.values().collect();
        par::map(batch, |&i| self.sample_grad(&heads, &prepared[i]))
    }

    /// Summed cross-entropy over `samples` and its gradient in
    /// [`parameters`](Self::parameters) order. Buckets without a stored row
    /// get no gradient entry.
    pub fn loss_and_gradient(&self, samples: &[Sample]) -> Result<(f64, Vec<f64>), GroundingError> {
        let prepared = self.prepare(samples)?;
        let idx: Vec<usize> = (0..prepared.len()).collect();
        let mut acc = GradBuffer::new(self);
        let mut loss = 0.0;
        for (g, p) in self.grads(&prepared, &idx).iter().zip(&prepared) {
            loss += g.loss;
            acc.add(g, &p.buckets);
        }
        Ok((loss, acc.flatten(self)))
    }

    /// Mean per-sample cross-entropy.
    pub fn mean_loss(&self, samples: &[Sample]) -> Result<f64, GroundingError> {
        let prepared = self.prepare(samples)?;
        Ok(self.prepared_loss(&prepared))
    }

    fn prepared_loss(&self, prepared: &[Prepared]) -> f64 {
        let idx: Vec<usize> = (0..prepared.len()).collect();
        self.grads(prepared, &idx)
            .iter()
            .map(|g| g.loss)
            .sum::<f64>()
            / prepared.len().max(1) as f64
    }
}

/// Gradient accumulator shaped like the model.
struct GradBuffer {
    rows: BTreeMap<u32, Vec<f64>>,
    heads: Vec<(Vec<f64>, Vec<f64>)>,
    dim: usize,
}

impl GradBuffer {
    fn new(model: &GroundingModel) -> Self {
        let dim = model.encoder.dim;
        Self {
            rows: model
                .encoder
                .rows
                .keys()
                .map(|&b| (b, vec![0.0; dim]))
                .collect(),
            heads: model
                .heads
                .values()
                .map(|h| (vec![0.0; h.weights.len()], vec![0.0; h.n_v]))
                .collect(),
            dim,
        }
    }

    fn add(&mut self, g: &SampleGrad, buckets: &[u32]) {
        let (w, b) = &mut self.heads[g.head];
        for ((wrow, bk), dl) in w
            .chunks_exact_mut(self.dim)
            .zip(b.iter_mut())
            .zip(&g.dlogits)
        {
            *bk += dl;
            wrow.iter_mut()
                .zip(&g.feature)
                .for_each(|(x, f)| *x += dl * f);
        }
        let share = 1.0 / buckets.len().max(1) as f64;
        for bucket in buckets {
            if let Some(r) = self.rows.get_mut(bucket) {
                r.iter_mut()
                    .zip(&g.dfeature)
                    .for_each(|(x, d)| *x += share * d);
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for v in self
            .rows
            .values_mut()
            .chain(self.heads.iter_mut().flat_map(|(w, b)| [w, b]))
        {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    fn zero(&mut self) {
        self.scale(0.0);
    }

    fn flatten(&self, model: &GroundingModel) -> Vec<f64> {
        let mut out: Vec<f64> = model
            .encoder
            .rows
            .keys()
            .flat_map(|b| self.rows[b].iter().copied())
            .collect();
        for (w, b) in &self.heads {
            out.extend(w);
            out.extend(b);
        }
        out
    }
}

/// Pairs for one car model together with its grid's voxel count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTask {
    pub n_v: usize,
    pub pairs: Vec<TrainingPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample loss on the full training set before training.
    pub initial_loss: f64,
    /// Mean per-sample loss on the full training set after each epoch.
    pub loss_history: Vec<f64>,
    pub samples: usize,
    /// Fraction of training samples whose argmax label is correct.
    pub train_accuracy: f64,
}

/// Joint softmax cross-entropy training of the shared encoder and all heads
/// with mini-batch momentum SGD. Samples are put in canonical order before
/// the seeded per-epoch shuffle, so input order never matters.
pub fn train_grounding(
    tasks: &BTreeMap<String, TrainingTask>,
    cfg: &TrainConfig,
) -> Result<(GroundingModel, TrainReport), GroundingError> {
    cfg.validate()?;
    let mut samples: Vec<Sample> = Vec::new();
    for (id, task) in tasks {
        if task.n_v == 0 {
            return Err(GroundingError::InvalidConfig(format!(
                "model {id} has no voxels"
            )));
        }
        for p in &task.pairs {
            if p.voxel_label >= task.n_v {
                return Err(GroundingError::LabelOutOfRange {
                    model: id.clone(),
                    label: p.voxel_label,
                    n_v: task.n_v,
                });
            }
            samples.push(Sample {
                model_id: id.clone(),
                text: p.text.clone(),
                label: p.voxel_label,
            });
        }
    }
    if samples.is_empty() {
        return Err(GroundingError::EmptyTrainingSet);
    }
    samples.sort();

    let mut encoder = TextEncoder::new(
        cfg.vocab_buckets,
        cfg.dim,
        cfg.seed,
        cfg.effective_init_scale(),
    )?;
    for s in &samples {
        encoder.materialize(&s.text);
    }
    let n_v: BTreeMap<String, usize> = tasks.iter().map(|(id, t)| (id.clone(), t.n_v)).collect();
    let mut model = GroundingModel::untrained(encoder, &n_v);
    let prepared = model.prepare(&samples)?;

    let mut rng = ChaCha8Rng::seed_from_u64(labeled_seed(cfg.seed, "shuffle"));
    let mut grad = GradBuffer::new(&model);
    let mut velocity = GradBuffer::new(&model);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let initial_loss = model.prepared_loss(&prepared);
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.zero();
            for (g, &i) in model.grads(&prepared, batch).iter().zip(batch) {
                grad.add(g, &prepared[i].buckets);
            }
            grad.scale(1.0 / batch.len() as f64);
            step(&mut model, &mut velocity, &grad, cfg);
        }
        loss_history.push(model.prepared_loss(&prepared));
    }
    let idx: Vec<usize> = (0..prepared.len()).collect();
    let correct = model
        .grads(&prepared, &idx)
        .iter()
        .zip(&prepared)
        .filter(|(g, p)| {
            let mut probs = g.dlogits.clone();
            probs[p.label] += 1.0;
            argmax(&probs) == p.label
        })
        .count();
    let report = TrainReport {
        initial_loss,
        loss_history,
        samples: prepared.len(),
        train_accuracy: correct as f64 / prepared.len() as f64,
    };
    Ok((model, report))
}

fn step(
    model: &mut GroundingModel,
    velocity: &mut GradBuffer,
    grad: &GradBuffer,
    cfg: &TrainConfig,
) {
    let update = |theta: &mut [f64], v: &mut [f64], g: &[f64]| {
        for ((t, v), g) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = cfg.momentum * *v + g;
            *t -= cfg.learning_rate * *v;
        }
    };
    for (b, row) in model.encoder.rows.iter_mut() {
        update(row, velocity.rows.get_mut(b).unwrap(), &grad.rows[b]);
    }
    for ((h, (vw, vb)), (gw, gb)) in model
        .heads
        .values_mut()
        .zip(velocity.heads.iter_mut())
        .zip(&grad.heads)
    {
        update(&mut h.weights, vw, gw);
        update(&mut h.bias, vb, gb);
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub scores: Vec<f64>,
    pub label: usize,
    pub predicted_point: Vec3,
}

/// Voxel distribution for a query and the center of its best voxel.
pub fn ground_query(
    model: &GroundingModel,
    model_id: &str,
    text: &str,
    grid: &VoxelGrid,
) -> Result<QueryResult, GroundingError> {
    let head = model.head(model_id)?;
    if head.n_v != grid.n_v() {
        return Err(GroundingError::InvalidInput(format!(
            "head {model_id} has {} voxels, grid has {}",
            head.n_v,
            grid.n_v()
        )));
    }
    let scores = model.scores(model_id, text)?;
    let label = argmax(&scores);
    Ok(QueryResult {
        predicted_point: grid.label_center(label),
        label,
        scores,
    })
}
