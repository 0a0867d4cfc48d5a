//! The fixed `input → hidden (ReLU) → classes` network, flattened as
//! `[W1, b1, W2, b2]` with row-major weight matrices.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::SimDataset;
use crate::error::Result;
use crate::model::ModelVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpShape {
    pub fn dim(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    pub fn layer_spans(&self) -> Vec<(usize, usize)> {
        let sizes = [
            self.hidden * self.input + self.hidden,
            self.output * self.hidden + self.output,
        ];
        let mut off = 0;
        sizes
            .iter()
            .map(|&s| {
                let span = (off, s);
                off += s;
                span
            })
            .collect()
    }

    /// Uniform Glorot weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelVector> {
        let mut v = Vec::with_capacity(self.dim());
        let a1 = (6.0 / (self.input + self.hidden) as f64).sqrt();
        v.extend((0..self.hidden * self.input).map(|_| rng.random_range(-a1..a1)));
        v.extend(std::iter::repeat_n(0.0, self.hidden));
        let a2 = (6.0 / (self.hidden + self.output) as f64).sqrt();
        v.extend((0..self.output * self.hidden).map(|_| rng.random_range(-a2..a2)));
        v.extend(std::iter::repeat_n(0.0, self.output));
        ModelVector::new(v, self.layer_spans())
    }

    fn offsets(&self) -> [usize; 4] {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        [0, b1, w2, b2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        #[serde(default = "adam_lr")]
        lr: f64,
        #[serde(default = "adam_beta1")]
        beta1: f64,
        #[serde(default = "adam_beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn adam_lr() -> f64 {
    0.001
}
fn adam_beta1() -> f64 {
    0.9
}
fn adam_beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            lr: adam_lr(),
            beta1: adam_beta1(),
            beta2: adam_beta2(),
            eps: adam_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 16,
            optimizer: Optimizer::default(),
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelVector,
    /// Mean cross-entropy of each epoch, measured as the epoch runs.
    pub epoch_losses: Vec<f64>,
    /// Set when the shard had no examples and `start` came back unchanged.
    pub empty_shard: bool,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

struct Scratch {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dz: Vec<f64>,
    dh: Vec<f64>,
}

impl Scratch {
    fn new(s: &MlpShape) -> Self {
        Self {
            hidden: vec![0.0; s.hidden],
            logits: vec![0.0; s.output],
            dz: vec![0.0; s.output],
            dh: vec![0.0; s.hidden],
        }
    }
}

fn forward(s: &MlpShape, w: &[f64], x: &[f64], sc: &mut Scratch) {
    let [_, ob1, ow2, ob2] = s.offsets();
    for h in 0..s.hidden {
        let row = &w[h * s.input..(h + 1) * s.input];
        let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[ob1 + h];
        sc.hidden[h] = z.max(0.0);
    }
    for o in 0..s.output {
        let row = &w[ow2 + o * s.hidden..ow2 + (o + 1) * s.hidden];
        sc.logits[o] = row.iter().zip(&sc.hidden).map(|(a, b)| a * b).sum::<f64>() + w[ob2 + o];
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Accumulates the gradient of one example into `g`; returns its loss.
fn backward(s: &MlpShape, w: &[f64], x: &[f64], y: usize, sc: &mut Scratch, g: &mut [f64]) -> f64 {
    let [_, ob1, ow2, ob2] = s.offsets();
    forward(s, w, x, sc);
    let lse = log_sum_exp(&sc.logits);
    for o in 0..s.output {
        sc.dz[o] = (sc.logits[o] - lse).exp() - if o == y { 1.0 } else { 0.0 };
    }
    sc.dh.fill(0.0);
    for o in 0..s.output {
        let d = sc.dz[o];
        g[ob2 + o] += d;
        let base = ow2 + o * s.hidden;
        for h in 0..s.hidden {
            g[base + h] += d * sc.hidden[h];
            sc.dh[h] += d * w[base + h];
        }
    }
    for h in 0..s.hidden {
        if sc.hidden[h] <= 0.0 {
            continue;
        }
        let d = sc.dh[h];
        g[ob1 + h] += d;
        let row = &mut g[h * s.input..(h + 1) * s.input];
        for (gi, xi) in row.iter_mut().zip(x) {
            *gi += d * xi;
        }
    }
    lse - sc.logits[y]
}

/// Trains a copy of `start` on `indices` of `ds`.
pub fn local_train<R: Rng + ?Sized>(
    start: &ModelVector,
    shape: &MlpShape,
    ds: &SimDataset,
    indices: &[usize],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if indices.is_empty() || cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model: start.clone(),
            epoch_losses: Vec::new(),
            empty_shard: indices.is_empty(),
        });
    }
    let dim = shape.dim();
    start.check_dim(&ModelVector::from_values(vec![0.0; dim])?)?;
    let mut w = start.values().to_vec();
    let mut g = vec![0.0; dim];
    let mut m1 = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut sc = Scratch::new(shape);
    let mut order = indices.to_vec();
    let batch = cfg.batch_size.max(1);
    let mut step = 0i32;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            g.fill(0.0);
            for &i in chunk {
                total += backward(shape, &w, ds.features(i), ds.label(i), &mut sc, &mut g);
            }
            let scale = 1.0 / chunk.len() as f64;
            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd { lr } => {
                    for (wi, gi) in w.iter_mut().zip(&g) {
                        *wi -= lr * gi * scale;
                    }
                }
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for j in 0..dim {
                        let gj = g[j] * scale;
                        m1[j] = beta1 * m1[j] + (1.0 - beta1) * gj;
                        m2[j] = beta2 * m2[j] + (1.0 - beta2) * gj * gj;
                        w[j] -= lr * (m1[j] / c1) / ((m2[j] / c2).sqrt() + eps);
                    }
                }
            }
        }
        epoch_losses.push(total / order.len() as f64);
    }
    Ok(TrainOutcome {
        model: start.with_values(w)?,
        epoch_losses,
        empty_shard: false,
    })
}

pub fn predict(shape: &MlpShape, model: &ModelVector, x: &[f64]) -> usize {
    let mut sc = Scratch::new(shape);
    forward(shape, model.values(), x, &mut sc);
    argmax(&sc.logits)
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        // NaN logits never win
        if v > z[best] || z[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Misclassification rate over `ds`.
pub fn error_rate(shape: &MlpShape, model: &ModelVector, ds: &SimDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let mut sc = Scratch::new(shape);
    let wrong = (0..ds.len())
        .filter(|&i| {
            forward(shape, model.values(), ds.features(i), &mut sc);
            argmax(&sc.logits) != ds.label(i)
        })
        .count();
    wrong as f64 / ds.len() as f64
}

/// Mean cross-entropy over `ds`.
pub fn mean_loss(shape: &MlpShape, model: &ModelVector, ds: &SimDataset) -> f64 {
    let mut sc = Scratch::new(shape);
    let total: f64 = (0..ds.len())
        .map(|i| {
            forward(shape, model.values(), ds.features(i), &mut sc);
            log_sum_exp(&sc.logits) - sc.logits[ds.label(i)]
        })
        .sum();
    total / ds.len().max(1) as f64
}
