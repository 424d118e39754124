//! Synthetic imaging data, non-IID client shards, a 784-128-64-4 MLP and
//! plain FedAvg.

use std::io::{self, Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::Rng;

pub const SIDE: usize = 28;
pub const FEATURES: usize = SIDE * SIDE;
pub const CLASSES: usize = 4;
pub const LAYERS: [usize; 4] = [FEATURES, 128, 64, CLASSES];
pub const PARAM_COUNT: usize = 108_996;

const DATASET_MAGIC: &[u8; 8] = b"ZKFLDATA";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FlError {
    #[error("shard of client {0} is empty")]
    EmptyShard(usize),
    #[error("update has {got} parameters, model has {expected}")]
    Length { expected: usize, got: usize },
    #[error("need at least one client")]
    NoClients,
    #[error("dirichlet concentration must be positive, got {0}")]
    Alpha(f64),
    #[error("malformed dataset file: {0}")]
    Format(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Knobs of the class-conditional generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub samples: usize,
    /// Pixel-wise std-dev of the smoothed class-mean fields.
    pub mean_scale: f64,
    /// Pixel-wise std-dev of the smoothed per-sample noise.
    pub noise_scale: f64,
    /// Std-dev, in pixels, of the 2-D Gaussian smoothing kernel.
    pub smoothing: f64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { samples: 1000, mean_scale: 14.0, noise_scale: 7.0, smoothing: 1.5, test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Separable Gaussian kernel normalised to unit energy so smoothed white
/// noise keeps unit variance away from the border.
fn smoothing_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let energy = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.into_iter().map(|v| v / energy).collect()
}

fn smooth(field: &[f64], kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; FEATURES];
        for y in 0..SIDE as i64 {
            for x in 0..SIDE as i64 {
                let mut acc = 0.0;
                for (j, &w) in kernel.iter().enumerate() {
                    let o = j as i64 - r;
                    let (sx, sy) = if horizontal { (x + o, y) } else { (x, y + o) };
                    if (0..SIDE as i64).contains(&sx) && (0..SIDE as i64).contains(&sy) {
                        acc += w * src[(sy * SIDE as i64 + sx) as usize];
                    }
                }
                out[(y * SIDE as i64 + x) as usize] = acc;
            }
        }
        out
    };
    pass(&pass(field, true), false)
}

fn normal_field(rng: &mut Rng) -> Vec<f64> {
    (0..FEATURES).map(|_| StandardNormal.sample(rng)).collect()
}

/// Four class-conditional Gaussians on a 28x28 grid with spatially smoothed
/// means and noise, split train/test stratified by class.
pub fn generate_dataset(seed: u64, cfg: &DataConfig) -> Dataset {
    let mut rng = Rng::derive(&Rng::derive_seed(&[0; 32], b"zkfl/fl/dataset", &[seed]), b"gen", &[]);
    let kernel = smoothing_kernel(cfg.smoothing);
    let means: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| smooth(&normal_field(&mut rng), &kernel).into_iter().map(|v| v * cfg.mean_scale).collect())
        .collect();
    let mut features = Array2::zeros((cfg.samples, FEATURES));
    let mut labels = Vec::with_capacity(cfg.samples);
    for mut row in features.axis_iter_mut(Axis(0)) {
        let label = rng.below(CLASSES as u64) as usize;
        let noise = smooth(&normal_field(&mut rng), &kernel);
        for (px, (m, e)) in row.iter_mut().zip(means[label].iter().zip(noise)) {
            *px = m + cfg.noise_scale * e;
        }
        labels.push(label as u8);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..CLASSES as u8 {
        let mut idx: Vec<usize> = (0..cfg.samples).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * cfg.test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Dataset { features, labels, train, test, seed }
}

impl Dataset {
    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut c = [0; CLASSES];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// Header `magic, version, samples, features, seed, n_train, n_test`,
    /// then features (f64), labels (u8), train and test indices (u32), all LE.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), FlError> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        for v in [self.features.nrows(), self.features.ncols()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        for v in [self.train.len(), self.test.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in self.features.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.labels)?;
        for &i in self.train.iter().chain(&self.test) {
            w.write_all(&(i as u32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, FlError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(FlError::Format("bad magic"));
        }
        let mut u32_buf = [0u8; 4];
        let mut next_u32 = |r: &mut dyn Read| -> Result<usize, FlError> {
            r.read_exact(&mut u32_buf)?;
            Ok(u32::from_le_bytes(u32_buf) as usize)
        };
        if next_u32(r)? != DATASET_VERSION as usize {
            return Err(FlError::Format("unsupported version"));
        }
        let (rows, cols) = (next_u32(r)?, next_u32(r)?);
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let (n_train, n_test) = (next_u32(r)?, next_u32(r)?);
        if cols != FEATURES || n_train + n_test != rows {
            return Err(FlError::Format("inconsistent dimensions"));
        }
        let mut raw = vec![0u8; rows * cols * 8];
        r.read_exact(&mut raw)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let features = Array2::from_shape_vec((rows, cols), values).map_err(|_| FlError::Format("shape"))?;
        let mut labels = vec![0u8; rows];
        r.read_exact(&mut labels)?;
        if labels.iter().any(|&l| l as usize >= CLASSES) {
            return Err(FlError::Format("label out of range"));
        }
        let mut idx = Vec::with_capacity(rows);
        for _ in 0..rows {
            let i = next_u32(r)?;
            if i >= rows {
                return Err(FlError::Format("index out of range"));
            }
            idx.push(i);
        }
        let test = idx.split_off(n_train);
        Ok(Self { features, labels, train: idx, test, seed: u64::from_le_bytes(seed) })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client: usize,
    pub indices: Vec<usize>,
}

/// Per class, splits the training indices across clients with proportions
/// drawn from `Dirichlet(alpha)`; redraws if any client ends up empty.
pub fn partition_dirichlet(data: &Dataset, n_clients: usize, alpha: f64, rng: &mut Rng) -> Result<Vec<ClientShard>, FlError> {
    if n_clients == 0 {
        return Err(FlError::NoClients);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| FlError::Alpha(alpha))?;
    loop {
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for class in 0..CLASSES as u8 {
            let mut idx: Vec<usize> = data.train.iter().copied().filter(|&i| data.labels[i] == class).collect();
            idx.shuffle(rng);
            let g: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = g.iter().sum();
            let mut start = 0;
            let mut cum = 0.0;
            for (c, gi) in g.iter().enumerate() {
                cum += gi / total;
                let end = if c + 1 == n_clients { idx.len() } else { ((cum * idx.len() as f64).round() as usize).min(idx.len()) };
                shards[c].extend_from_slice(&idx[start..end.max(start)]);
                start = end.max(start);
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            return Ok(shards
                .into_iter()
                .enumerate()
                .map(|(client, mut indices)| {
                    indices.sort_unstable();
                    ClientShard { client, indices }
                })
                .collect());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub weights: [Array2<f64>; 3],
    pub biases: [Array1<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientUpdate {
    pub delta: Vec<f64>,
    pub client: usize,
    pub round: usize,
}

impl GradientUpdate {
    pub fn norm(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl MlpModel {
    /// He-uniform weights, `U(+-sqrt(6 / fan_in))`; biases `U(+-1 / sqrt(fan_in))`.
    pub fn new(rng: &mut Rng) -> Self {
        let mut layer = |i: usize| {
            let (fan_in, fan_out) = (LAYERS[i], LAYERS[i + 1]);
            let mut u = |bound: f64| (rng.unit_open0() * 2.0 - 1.0) * bound;
            let wb = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| u(wb));
            let bb = 1.0 / (fan_in as f64).sqrt();
            let b = Array1::from_shape_fn(fan_out, |_| u(bb));
            (w, b)
        };
        let (w0, b0) = layer(0);
        let (w1, b1) = layer(1);
        let (w2, b2) = layer(2);
        let model = Self { weights: [w0, w1, w2], biases: [b0, b1, b2] };
        assert_eq!(model.param_count(), PARAM_COUNT);
        model
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Layer by layer: weights row-major, then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self, FlError> {
        if flat.len() != self.param_count() {
            return Err(FlError::Length { expected: self.param_count(), got: flat.len() });
        }
        let mut m = self.clone();
        let mut pos = 0;
        for (w, b) in m.weights.iter_mut().zip(m.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = flat[pos];
                pos += 1;
            }
        }
        Ok(m)
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).pop().expect("three layers")
    }

    /// Activations `[h1, h2, logits]`.
    fn forward(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(3);
        let mut h = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(w) + b;
            if l < 2 {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z.clone());
            h = z;
        }
        acts
    }

    /// Mean cross-entropy over the batch and its gradient, flattened like
    /// [`MlpModel::to_flat`].
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, y: &[u8]) -> (f64, Vec<f64>) {
        let acts = self.forward(x);
        let batch = x.nrows() as f64;
        let (probs, loss) = softmax_xent(&acts[2], y);
        let mut delta = probs;
        for (i, &label) in y.iter().enumerate() {
            delta[[i, label as usize]] -= 1.0;
        }
        delta /= batch;
        let mut grads_w: Vec<Array2<f64>> = Vec::with_capacity(3);
        let mut grads_b: Vec<Array1<f64>> = Vec::with_capacity(3);
        for l in (0..3).rev() {
            let input = if l == 0 { x.to_owned() } else { acts[l - 1].clone() };
            grads_w.push(input.t().dot(&delta));
            grads_b.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                back.zip_mut_with(&acts[l - 1], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads_w.reverse();
        grads_b.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in grads_w.iter().zip(&grads_b) {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        (loss, flat)
    }
}

fn softmax_xent(logits: &Array2<f64>, y: &[u8]) -> (Array2<f64>, f64) {
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (mut row, &label) in probs.axis_iter_mut(Axis(0)).zip(y) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let shifted = row[label as usize] - max;
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        loss += sum.ln() - shifted;
        row /= sum;
    }
    (probs, loss / y.len() as f64)
}

fn gather(data: &Dataset, idx: &[usize]) -> (Array2<f64>, Vec<u8>) {
    let x = data.features.select(Axis(0), idx);
    let y = idx.iter().map(|&i| data.labels[i]).collect();
    (x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { epochs: 3, lr: 0.01, batch: 32 }
    }
}

/// Mini-batch SGD on the shard; returns `w_after - w_before`.
pub fn local_sgd(
    model: &MlpModel,
    data: &Dataset,
    shard: &ClientShard,
    cfg: &SgdConfig,
    round: usize,
    rng: &mut Rng,
) -> Result<GradientUpdate, FlError> {
    if shard.indices.is_empty() {
        return Err(FlError::EmptyShard(shard.client));
    }
    let start = model.to_flat();
    let mut w = start.clone();
    let mut current = model.clone();
    let mut order = shard.indices.clone();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let (x, y) = gather(data, chunk);
            let (_, g) = current.loss_and_gradient(x.view(), &y);
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= cfg.lr * gi;
            }
            current = current.from_flat(&w)?;
        }
    }
    let delta = w.iter().zip(&start).map(|(a, b)| a - b).collect();
    Ok(GradientUpdate { delta, client: shard.client, round })
}

/// `w + eta * delta`.
pub fn apply_update(model: &MlpModel, delta: &[f64], eta: f64) -> Result<MlpModel, FlError> {
    let w: Vec<f64> = model.to_flat().iter().zip(delta).map(|(w, d)| w + eta * d).collect();
    if delta.len() != w.len() || delta.len() != model.param_count() {
        return Err(FlError::Length { expected: model.param_count(), got: delta.len() });
    }
    model.from_flat(&w)
}

/// Unweighted mean of the updates.
pub fn fedavg(updates: &[&[f64]]) -> Result<Vec<f64>, FlError> {
    let first = updates.first().ok_or(FlError::NoClients)?;
    let mut acc = vec![0.0; first.len()];
    for u in updates {
        if u.len() != acc.len() {
            return Err(FlError::Length { expected: acc.len(), got: u.len() });
        }
        for (a, v) in acc.iter_mut().zip(u.iter()) {
            *a += v;
        }
    }
    let n = updates.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Test-split accuracy and mean cross-entropy.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> (f64, f64) {
    evaluate_on(model, data, &data.test)
}

pub fn evaluate_on(model: &MlpModel, data: &Dataset, idx: &[usize]) -> (f64, f64) {
    if idx.is_empty() {
        return (0.0, 0.0);
    }
    let (x, y) = gather(data, idx);
    let logits = model.logits(x.view());
    let (_, loss) = softmax_xent(&logits, &y);
    let correct = logits
        .axis_iter(Axis(0))
        .zip(&y)
        .filter(|(row, &label)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            best.0 == label as usize
        })
        .count();
    (correct as f64 / idx.len() as f64, loss)
}
