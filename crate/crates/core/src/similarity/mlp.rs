//! Fully connected Siamese branch (tanh hidden layers, linear output),
//! contrastive loss, manual back-propagation and Adam training.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NodeFeature;
use crate::error::{Error, Result};

pub const DEFAULT_DIMS: [usize; 4] = [4, 64, 32, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    pub layers: Vec<Layer>,
    pub margin: f64,
    pub tau_high: f64,
    pub tau_low: f64,
}

pub fn contrastive_loss(d: f64, same: bool, margin: f64) -> f64 {
    if same {
        0.5 * d * d
    } else {
        0.5 * (margin - d).max(0.0).powi(2)
    }
}

/// Derivative of [`contrastive_loss`] with respect to `d`.
fn contrastive_grad(d: f64, same: bool, margin: f64) -> f64 {
    if same {
        d
    } else {
        -(margin - d).max(0.0)
    }
}

impl SiameseModel {
    /// Xavier-uniform initialization; thresholds at half and 0.8 of the margin.
    pub fn new(dims: &[usize], margin: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        SiameseModel {
            layers,
            margin,
            tau_high: 0.5 * margin,
            tau_low: 0.8 * margin,
        }
    }

    pub fn with_thresholds(mut self, tau_high: f64, tau_low: f64) -> Result<Self> {
        if !(tau_high > 0.0 && tau_high <= tau_low) {
            return Err(Error::InvalidInput(format!(
                "thresholds must satisfy 0 < tau_high <= tau_low, got {tau_high} and {tau_low}"
            )));
        }
        self.tau_high = tau_high;
        self.tau_low = tau_low;
        Ok(self)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let x = acts.last().expect("input");
            let mut y = layer.bias.clone();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                *yo += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                if k < last {
                    *yo = yo.tanh();
                }
            }
            acts.push(y);
        }
        acts
    }

    pub fn embed(&self, f: &NodeFeature) -> Vec<f64> {
        self.forward_trace(&f.coords).pop().expect("output")
    }

    pub fn distance(&self, a: &NodeFeature, b: &NodeFeature) -> f64 {
        euclid(&self.embed(a), &self.embed(b))
    }

    /// Accumulates `scale · ∂(output · upstream)/∂θ` into `grad`.
    fn backward(&self, acts: &[Vec<f64>], upstream: &[f64], scale: f64, grad: &mut [f64]) {
        let mut delta: Vec<f64> = upstream.iter().map(|g| g * scale).collect();
        let mut offset = self.parameter_count();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if k < last {
                // tanh' = 1 - y²
                for (d, y) in delta.iter_mut().zip(&acts[k + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            offset -= layer.weights.len() + layer.bias.len();
            let x = &acts[k];
            let (gw, gb) = grad[offset..offset + layer.weights.len() + layer.bias.len()]
                .split_at_mut(layer.weights.len());
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                for (i, xi) in x.iter().enumerate() {
                    gw[o * layer.inputs + i] += d * xi;
                }
            }
            if k > 0 {
                let mut next = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                delta = next;
            }
        }
    }

    /// Mean loss over `pairs` and its gradient (flattened in layer order,
    /// weights then bias).
    pub fn loss_and_gradient(&self, pairs: &[TrainingPair]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.parameter_count()];
        let mut loss = 0.0;
        let n = pairs.len() as f64;
        for p in pairs {
            let ta = self.forward_trace(&p.a.coords);
            let tb = self.forward_trace(&p.b.coords);
            let (ea, eb) = (ta.last().unwrap(), tb.last().unwrap());
            let d = euclid(ea, eb);
            loss += contrastive_loss(d, p.same, self.margin);
            let dl = contrastive_grad(d, p.same, self.margin);
            if dl == 0.0 {
                continue;
            }
            // ∂d/∂ea = (ea - eb)/d; guard the d = 0 case
            let inv = if d > 1e-12 { 1.0 / d } else { 0.0 };
            let diff: Vec<f64> = ea.iter().zip(eb).map(|(a, b)| (a - b) * inv).collect();
            self.backward(&ta, &diff, dl / n, &mut grad);
            self.backward(&tb, &diff, -dl / n, &mut grad);
        }
        (loss / n, grad)
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("parameter count");
            }
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let dims: Vec<String> = std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .map(|d| d.to_string())
            .collect();
        writeln!(out, "siamese-mlp 1")?;
        writeln!(out, "dims {}", dims.join(" "))?;
        writeln!(out, "margin {}", self.margin)?;
        writeln!(out, "tau {} {}", self.tau_high, self.tau_low)?;
        for l in &self.layers {
            for row in l.weights.chunks(l.inputs) {
                writeln!(out, "{}", join(row))?;
            }
            writeln!(out, "{}", join(&l.bias))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, Vec<String>)> {
            match lines.next() {
                Some((n, line)) => Ok((n, line?.split_whitespace().map(str::to_owned).collect())),
                None => Err(Error::Parse { line: 0, message: format!("checkpoint ends before {what}") }),
            }
        };
        let num = |line: usize, s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse { line, message: format!("bad number `{s}`") })
        };
        let (n, head) = next("header")?;
        if head != ["siamese-mlp", "1"] {
            return Err(Error::Parse { line: n, message: "not a model checkpoint".into() });
        }
        let (n, dims) = next("dims")?;
        if dims.first().map(String::as_str) != Some("dims") || dims.len() < 3 {
            return Err(Error::Parse { line: n, message: "expected `dims` with at least two sizes".into() });
        }
        let dims: Vec<usize> = dims[1..]
            .iter()
            .map(|d| d.parse().map_err(|_| Error::Parse { line: n, message: format!("bad size `{d}`") }))
            .collect::<Result<_>>()?;
        let (n, m) = next("margin")?;
        let margin = match m.as_slice() {
            [k, v] if k == "margin" => num(n, v)?,
            _ => return Err(Error::Parse { line: n, message: "expected `margin <value>`".into() }),
        };
        let (n, t) = next("tau")?;
        let (tau_high, tau_low) = match t.as_slice() {
            [k, a, b] if k == "tau" => (num(n, a)?, num(n, b)?),
            _ => return Err(Error::Parse { line: n, message: "expected `tau <high> <low>`".into() }),
        };
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..outputs {
                let (n, row) = next("weights")?;
                if row.len() != inputs {
                    return Err(Error::Parse { line: n, message: format!("expected {inputs} weights") });
                }
                for v in &row {
                    weights.push(num(n, v)?);
                }
            }
            let (n, row) = next("bias")?;
            if row.len() != outputs {
                return Err(Error::Parse { line: n, message: format!("expected {outputs} biases") });
            }
            let bias = row.iter().map(|v| num(n, v)).collect::<Result<_>>()?;
            layers.push(Layer { inputs, outputs, weights, bias });
        }
        SiameseModel { layers, margin, tau_high: 0.0, tau_low: 0.0 }.with_thresholds(tau_high, tau_low)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub a: NodeFeature,
    pub b: NodeFeature,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 2e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Mini-batch Adam on the mean contrastive loss. Returns the mean training
/// loss before training and after each epoch.
pub fn train(model: &mut SiameseModel, pairs: &[TrainingPair], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.parameters();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut curve = vec![model.loss_and_gradient(pairs).0];
    let mut t = 0i32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<TrainingPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (loss, grad) = model.loss_and_gradient(&batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            t += 1;
            let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
            for k in 0..params.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
                v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
                params[k] -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
            model.set_parameters(&params);
        }
        let loss = model.loss_and_gradient(pairs).0;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        curve.push(loss);
    }
    Ok(curve)
}
