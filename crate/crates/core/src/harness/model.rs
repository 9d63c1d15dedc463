//! Two-layer perceptron used as the per-cell detector head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Flat parameter vector: `W1 (hidden x inputs)`, `b1`, `W2 (classes x hidden)`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Largest absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub inputs: usize,
    pub hidden: usize,
    /// Output classes, background included.
    pub classes: usize,
}

/// One training example: a feature row and its class.
pub type Sample<'a> = (&'a [f64], usize);

impl MlpShape {
    pub fn param_count(&self) -> usize {
        self.hidden * self.inputs + self.hidden + self.classes * self.hidden + self.classes
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        (b1, w2, b2)
    }

    /// Scaled Gaussian init, zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> ModelParams {
        let (b1, w2, b2) = self.offsets();
        let mut p = vec![0.0; self.param_count()];
        let n1 = Normal::new(0.0, 1.0 / (self.inputs as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, 1.0 / (self.hidden as f64).sqrt()).expect("positive std");
        for v in &mut p[..b1] {
            *v = n1.sample(rng);
        }
        for v in &mut p[w2..b2] {
            *v = n2.sample(rng);
        }
        ModelParams(p)
    }

    fn hidden_layer(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let (b1, _, _) = self.offsets();
        for (j, h) in out.iter_mut().enumerate() {
            let row = &params[j * self.inputs..(j + 1) * self.inputs];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params[b1 + j];
            *h = z.tanh();
        }
    }

    fn logits(&self, params: &[f64], hidden: &[f64], out: &mut [f64]) {
        let (_, w2, b2) = self.offsets();
        for (k, o) in out.iter_mut().enumerate() {
            let row = &params[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
            *o = row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>() + params[b2 + k];
        }
    }

    /// Class probabilities for one feature row.
    pub fn predict(&self, params: &ModelParams, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.classes];
        self.hidden_layer(&params.0, x, &mut h);
        self.logits(&params.0, &h, &mut z);
        softmax_in_place(&mut z);
        z
    }

    /// Mean cross-entropy over `samples`.
    pub fn loss(&self, params: &ModelParams, samples: &[Sample<'_>]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let total: f64 = samples
            .iter()
            .map(|(x, y)| -self.predict(params, x)[*y].max(f64::MIN_POSITIVE).ln())
            .sum();
        total / samples.len() as f64
    }

    /// Mean cross-entropy and its gradient, accumulated into `grad` scaled by
    /// `weight`. Returns the unweighted loss.
    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        samples: &[Sample<'_>],
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let p = &params.0;
        let (b1, w2, b2) = self.offsets();
        let scale = weight / samples.len() as f64;
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.classes];
        let mut dh = vec![0.0; self.hidden];
        let mut total = 0.0;
        for (x, y) in samples {
            self.hidden_layer(p, x, &mut h);
            self.logits(p, &h, &mut z);
            let log_norm = log_sum_exp(&z);
            total += log_norm - z[*y];
            // dL/dz = softmax - onehot
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = (*zk - log_norm).exp() - if k == *y { 1.0 } else { 0.0 };
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (k, dz) in z.iter().enumerate() {
                let g = dz * scale;
                grad[b2 + k] += g;
                let row = w2 + k * self.hidden;
                for j in 0..self.hidden {
                    grad[row + j] += g * h[j];
                    dh[j] += dz * p[row + j];
                }
            }
            for j in 0..self.hidden {
                let da = dh[j] * (1.0 - h[j] * h[j]) * scale;
                grad[b1 + j] += da;
                let row = &mut grad[j * self.inputs..(j + 1) * self.inputs];
                for (g, v) in row.iter_mut().zip(x.iter()) {
                    *g += da * v;
                }
            }
        }
        total / samples.len() as f64
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let lse = log_sum_exp(z);
    for v in z.iter_mut() {
        *v = (*v - lse).exp();
    }
}
