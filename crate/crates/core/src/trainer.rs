//! FedAvg training: on-device SGD over shards, server-side weighted
//! averaging of parameter deltas, and test-set evaluation.
//!
//! The trainable bodies are deliberately small — multinomial logistic
//! regression and a one-hidden-layer tanh MLP — so whole experiments run in
//! milliseconds while keeping real convergence dynamics.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::device::DeviceId;
use crate::error::{Result, SimError};
use crate::workload::{BodyKind, BodySpec};

/// Global model parameters plus a round counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub version: u32,
}

impl ModelState {
    pub fn new(params: Vec<f64>) -> Self {
        ModelState { params, version: 0 }
    }
}

/// One participant's contribution: the parameter delta after local training.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub device: DeviceId,
    pub delta: Vec<f64>,
    pub sample_count: usize,
}

/// How the server weighs updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Weight each update by its shard size (standard FedAvg).
    BySamples,
    /// Plain mean of the deltas.
    Uniform,
}

/// A concrete differentiable model.
#[derive(Debug, Clone)]
pub struct TrainableBody {
    pub spec: BodySpec,
}

impl TrainableBody {
    pub fn new(spec: BodySpec) -> Self {
        TrainableBody { spec }
    }

    pub fn param_len(&self) -> usize {
        self.spec.param_count()
    }

    /// Initial parameters. Logistic models start at zero; MLPs need small
    /// random weights to break hidden-unit symmetry.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        match self.spec.kind {
            BodyKind::Logistic => vec![0.0; self.param_len()],
            BodyKind::Mlp { .. } => {
                let mut rng = crate::rng::substream(seed, crate::rng::tag::TRAIN, u64::MAX, 0);
                (0..self.param_len()).map(|_| rng.gen_range(-0.05..0.05)).collect()
            }
        }
    }

    fn logits(&self, params: &[f64], x: &[f64], scratch: &mut Vec<f64>) -> Vec<f64> {
        let d = self.spec.features;
        let c = self.spec.classes;
        match self.spec.kind {
            BodyKind::Logistic => {
                let (w, b) = params.split_at(c * d);
                (0..c)
                    .map(|k| b[k] + w[k * d..(k + 1) * d].iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>())
                    .collect()
            }
            BodyKind::Mlp { hidden } => {
                let (w1, rest) = params.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(c * hidden);
                scratch.clear();
                scratch.extend((0..hidden).map(|h| {
                    (b1[h] + w1[h * d..(h + 1) * d].iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()).tanh()
                }));
                (0..c)
                    .map(|k| b2[k] + w2[k * hidden..(k + 1) * hidden].iter().zip(scratch.iter()).map(|(wi, hi)| wi * hi).sum::<f64>())
                    .collect()
            }
        }
    }

    /// Mean cross-entropy loss over `indices`, with the mean gradient
    /// accumulated into `grad` (which must be zeroed by the caller).
    pub fn loss_and_grad(&self, params: &[f64], data: &Dataset, indices: &[usize], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.param_len());
        let d = self.spec.features;
        let c = self.spec.classes;
        let scale = 1.0 / indices.len() as f64;
        let mut loss = 0.0;
        let mut hidden_buf = Vec::new();
        for &i in indices {
            let x = data.row(i);
            let y = data.labels[i];
            let logits = self.logits(params, x, &mut hidden_buf);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            loss += (sum.ln() + max - logits[y]) * scale;
            // dL/dz = softmax - onehot
            let dz: Vec<f64> = (0..c).map(|k| (exp[k] / sum - f64::from(u8::from(k == y))) * scale).collect();
            match self.spec.kind {
                BodyKind::Logistic => {
                    let (gw, gb) = grad.split_at_mut(c * d);
                    for k in 0..c {
                        let row = &mut gw[k * d..(k + 1) * d];
                        for (g, xi) in row.iter_mut().zip(x) {
                            *g += dz[k] * xi;
                        }
                        gb[k] += dz[k];
                    }
                }
                BodyKind::Mlp { hidden } => {
                    let (w1_len, b1_len, w2_len) = (hidden * d, hidden, c * hidden);
                    let w2 = &params[w1_len + b1_len..w1_len + b1_len + w2_len];
                    let h = &hidden_buf;
                    let mut da = vec![0.0; hidden];
                    for k in 0..c {
                        for j in 0..hidden {
                            da[j] += w2[k * hidden + j] * dz[k];
                        }
                    }
                    for j in 0..hidden {
                        da[j] *= 1.0 - h[j] * h[j];
                    }
                    let (gw1, rest) = grad.split_at_mut(w1_len);
                    let (gb1, rest) = rest.split_at_mut(b1_len);
                    let (gw2, gb2) = rest.split_at_mut(w2_len);
                    for j in 0..hidden {
                        let row = &mut gw1[j * d..(j + 1) * d];
                        for (g, xi) in row.iter_mut().zip(x) {
                            *g += da[j] * xi;
                        }
                        gb1[j] += da[j];
                    }
                    for k in 0..c {
                        let row = &mut gw2[k * hidden..(k + 1) * hidden];
                        for (g, hj) in row.iter_mut().zip(h) {
                            *g += dz[k] * hj;
                        }
                        gb2[k] += dz[k];
                    }
                }
            }
        }
        loss
    }

    /// Mean loss without gradients (used by finite-difference checks).
    pub fn loss(&self, params: &[f64], data: &Dataset, indices: &[usize]) -> f64 {
        let scale = 1.0 / indices.len() as f64;
        let mut hidden_buf = Vec::new();
        indices
            .iter()
            .map(|&i| {
                let logits = self.logits(params, data.row(i), &mut hidden_buf);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
                (sum.ln() + max - logits[data.labels[i]]) * scale
            })
            .sum()
    }

    /// Predicted class; argmax ties break toward the lowest class index.
    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let mut hidden_buf = Vec::new();
        let logits = self.logits(params, x, &mut hidden_buf);
        let mut best = 0;
        for (k, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = k;
            }
        }
        best
    }
}

/// Runs E epochs of seeded minibatch SGD on one shard.
///
/// Each epoch reshuffles the shard; the last short batch is kept. Returns
/// the parameter delta against the untouched global model.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    device: DeviceId,
    body: &TrainableBody,
    global: &ModelState,
    data: &Dataset,
    shard: &[usize],
    batch_size: usize,
    epochs: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<LocalUpdate> {
    if shard.is_empty() {
        return Err(SimError::Contract(format!("device {device}: empty shard")));
    }
    if batch_size == 0 || epochs == 0 {
        return Err(SimError::Contract("B and E must be >= 1".into()));
    }
    let mut params = global.params.clone();
    let mut grad = vec![0.0; body.param_len()];
    let mut order: Vec<usize> = shard.to_vec();
    for _ in 0..epochs {
        order.shuffle(rng);
        for batch in order.chunks(batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = body.loss_and_grad(&params, data, batch, &mut grad);
            if !loss.is_finite() {
                return Err(SimError::TrainingDivergence { device });
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
    }
    let delta: Vec<f64> = params.iter().zip(&global.params).map(|(p, g)| p - g).collect();
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(SimError::TrainingDivergence { device });
    }
    Ok(LocalUpdate { device, delta, sample_count: shard.len() })
}

/// Averages updates into a new model.
///
/// Updates are consumed in device-id order regardless of input order, so
/// the floating-point reduction is permutation invariant.
pub fn aggregate(global: &ModelState, updates: &[LocalUpdate], weighting: Weighting) -> Result<ModelState> {
    if updates.is_empty() {
        return Err(SimError::Contract("aggregate needs at least one update".into()));
    }
    for u in updates {
        if u.delta.len() != global.params.len() {
            return Err(SimError::Contract(format!(
                "device {}: update length {} != model length {}",
                u.device,
                u.delta.len(),
                global.params.len()
            )));
        }
        if u.sample_count == 0 {
            return Err(SimError::Contract(format!("device {}: zero sample count", u.device)));
        }
    }
    let mut ordered: Vec<&LocalUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.device);
    let total_samples: f64 = ordered.iter().map(|u| u.sample_count as f64).sum();
    let mut params = global.params.clone();
    for u in &ordered {
        let w = match weighting {
            Weighting::BySamples => u.sample_count as f64 / total_samples,
            Weighting::Uniform => 1.0 / ordered.len() as f64,
        };
        for (p, d) in params.iter_mut().zip(&u.delta) {
            *p += w * d;
        }
    }
    Ok(ModelState { params, version: global.version + 1 })
}

/// Test accuracy in percent.
pub fn evaluate(body: &TrainableBody, model: &ModelState, test: &Dataset) -> f64 {
    assert!(!test.is_empty(), "test set must be nonempty");
    let correct = (0..test.len())
        .filter(|&i| body.predict(&model.params, test.row(i)) == test.labels[i])
        .count();
    correct as f64 / test.len() as f64 * 100.0
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"FLCK";

/// Writes the model as a 16-byte header (magic, version, length) followed by
/// little-endian f32 parameters.
pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&model.version.to_le_bytes())?;
    out.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for p in &model.params {
        out.write_all(&(*p as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SimError::Parse(format!("{}: not a model checkpoint", path.display())));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    let mut long = [0u8; 8];
    input.read_exact(&mut long)?;
    let len = u64::from_le_bytes(long) as usize;
    let mut params = Vec::with_capacity(len);
    for _ in 0..len {
        input.read_exact(&mut word)?;
        params.push(f32::from_le_bytes(word) as f64);
    }
    Ok(ModelState { params, version })
}
