//! Activations, normalization and losses.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `sqrt(2/π)` in the tanh form of GELU.
pub const GELU_SQRT_2_OVER_PI: f32 = 0.797_884_6;
/// Cubic coefficient in the tanh form of GELU.
pub const GELU_CUBIC: f32 = 0.044_715;

/// Label value skipped by [`Tensor::cross_entropy`].
pub const IGNORE_INDEX: usize = usize::MAX;

/// Splits a shape around `axis` into (outer, axis extent, inner).
fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::invalid(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn softmax_backward(y: &[f32], g: &[f32], outer: usize, len: usize, inner: usize) -> Vec<f32> {
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let dot: f32 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
            for k in 0..len {
                dx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
            }
        }
    }
    dx
}

impl Tensor {
    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_split("softmax", self.shape(), axis)?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| x[idx(k)]).fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (x[idx(k)] - max).exp();
                    y[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    y[idx(k)] /= total;
                }
            }
        }
        let out = y.clone();
        Tensor::from_op(
            "softmax",
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(softmax_backward(&out, g, outer, len, inner))]),
        )
    }

    /// Row-wise softmax of a 2-D tensor where `keep[j] == false` excludes
    /// column `j` (probability exactly zero, as with a −∞ logit).
    ///
    /// `keep` has one entry per column, or one per element for a per-row mask.
    pub fn masked_softmax(&self, keep: &[bool]) -> Result<Tensor> {
        let (rows, cols) = match *self.shape() {
            [r, c] => (r, c),
            _ => return Err(TensorError::invalid("masked_softmax", "expected a 2-D tensor")),
        };
        let per_row = if keep.len() == cols {
            false
        } else if keep.len() == rows * cols {
            true
        } else {
            return Err(TensorError::shape("masked_softmax", self.shape(), &[keep.len()]));
        };
        let allowed = |r: usize, c: usize| if per_row { keep[r * cols + c] } else { keep[c] };
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let max = (0..cols)
                .filter(|&c| allowed(r, c))
                .map(|c| row[c])
                .fold(f32::NEG_INFINITY, f32::max);
            if max == f32::NEG_INFINITY {
                return Err(TensorError::DegenerateMask { row: r });
            }
            let mut total = 0.0;
            for c in 0..cols {
                if allowed(r, c) {
                    let e = (row[c] - max).exp();
                    y[r * cols + c] = e;
                    total += e;
                }
            }
            y[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v /= total);
        }
        let out = y.clone();
        Tensor::from_op(
            "masked_softmax",
            y,
            vec![rows, cols],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(softmax_backward(&out, g, rows, cols, 1))]),
        )
    }

    /// Normalizes each row over the last axis to zero mean and unit
    /// (population) variance, then applies `gain · x̂ + bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, epsilon: f32) -> Result<Tensor> {
        if !(epsilon > 0.0) {
            return Err(TensorError::invalid("layer_norm", format!("epsilon must be positive, got {epsilon}")));
        }
        let d = *self.shape().last().expect("rank >= 1");
        if gain.numel() != d || bias.numel() != d || gain.rank() != 1 || bias.rank() != 1 {
            return Err(TensorError::shape("layer_norm", self.shape(), gain.shape()));
        }
        let rows = self.numel() / d;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in self.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv = 1.0 / (var + epsilon).sqrt();
            inv_std[r] = inv;
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let data = xhat
            .chunks(d)
            .flat_map(|row| {
                row.iter()
                    .zip(gain.data().iter().zip(bias.data()))
                    .map(|(x, (g, b))| g * x + b)
            })
            .collect();
        let gain_c = gain.clone();
        Tensor::from_op(
            "layer_norm",
            data,
            self.shape().to_vec(),
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g, needs| {
                let gv = gain_c.data();
                let dx = needs[0].then(|| {
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        let dxhat: Vec<f32> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f32>() / d as f32;
                        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f32>() / d as f32;
                        for k in 0..d {
                            dx[r * d + k] = inv_std[r] * (dxhat[k] - mean_d - xr[k] * mean_dx);
                        }
                    }
                    dx
                });
                let dgain = needs[1].then(|| {
                    let mut acc = vec![0.0; d];
                    for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for k in 0..d {
                            acc[k] += gr[k] * xr[k];
                        }
                    }
                    acc
                });
                let dbias = needs[2].then(|| {
                    let mut acc = vec![0.0; d];
                    for gr in g.chunks(d) {
                        acc.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                    acc
                });
                vec![dx, dgain, dbias]
            }),
        )
    }

    /// GELU, tanh form: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| gelu_scalar(x)).collect();
        let x = self.clone();
        Tensor::from_op(
            "gelu",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                vec![Some(
                    g.iter().zip(x.data()).map(|(g, &x)| g * gelu_derivative(x)).collect(),
                )]
            }),
        )
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits[n×c]`, skipping rows labelled [`IGNORE_INDEX`].
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let (n, c) = match *self.shape() {
            [n, c] => (n, c),
            _ => return Err(TensorError::invalid("cross_entropy", "logits must be 2-D")),
        };
        if labels.len() != n {
            return Err(TensorError::shape("cross_entropy", self.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != IGNORE_INDEX && l >= c) {
            return Err(TensorError::invalid("cross_entropy", format!("label {bad} out of range for {c} classes")));
        }
        let active = labels.iter().filter(|&&l| l != IGNORE_INDEX).count();
        if active == 0 {
            return Err(TensorError::EmptyBatch);
        }
        let inv = 1.0 / active as f32;
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0f32;
        for (r, &label) in labels.iter().enumerate() {
            if label == IGNORE_INDEX {
                continue;
            }
            let row = &self.data()[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let total: f32 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + total.ln();
            loss += lse - row[label];
            for k in 0..c {
                probs[r * c + k] = (row[k] - lse).exp();
            }
        }
        let labels = labels.to_vec();
        Tensor::from_op(
            "cross_entropy",
            vec![loss * inv],
            vec![1],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    if label != IGNORE_INDEX {
                        dx[r * c + label] -= 1.0;
                    }
                }
                dx.iter_mut().for_each(|v| *v *= g[0] * inv);
                vec![Some(dx)]
            }),
        )
    }

    /// Mean squared error against a same-shaped target.
    pub fn mse_loss(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(TensorError::shape("mse_loss", self.shape(), target.shape()));
        }
        let n = self.numel();
        let diff: Vec<f32> = self.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f32>() / n as f32;
        Tensor::from_op(
            "mse_loss",
            vec![loss],
            vec![1],
            vec![self.clone(), target.clone()],
            Box::new(move |g, needs| {
                let scale = 2.0 * g[0] / n as f32;
                vec![
                    needs[0].then(|| diff.iter().map(|d| d * scale).collect()),
                    needs[1].then(|| diff.iter().map(|d| -d * scale).collect()),
                ]
            }),
        )
    }

    /// Inverted dropout. `rate == 0` returns the input unchanged.
    pub fn dropout<R: Rng>(&self, rate: f32, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::invalid("dropout", format!("rate must be in [0,1), got {rate}")));
        }
        if rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f32> = (0..self.numel())
            .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep })
            .collect();
        let mask = Tensor::new(mask, self.shape())?;
        self.mul(&mask)
    }
}

pub fn gelu_scalar(x: f32) -> f32 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f32) -> f32 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
