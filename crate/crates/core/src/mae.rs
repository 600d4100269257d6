//! Masked reconstruction objectives: patch-span MAE for pixels and masked
//! token prediction for the subword baseline.

use pixdial_tensor::rng::truncated_normal;
use pixdial_tensor::{ParamId, Tensor, VarStore};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{sinusoidal_table, Block, Dropout, LayerNorm, Linear, INIT_STD};
use crate::error::{Error, Result};
use crate::render::PATCH_PIXELS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanMaskPolicy {
    pub mask_ratio: f64,
    pub max_span_length: usize,
}

impl Default for SpanMaskPolicy {
    fn default() -> Self {
        SpanMaskPolicy {
            mask_ratio: 0.25,
            max_span_length: 6,
        }
    }
}

impl SpanMaskPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask_ratio {} outside (0, 1)", self.mask_ratio)));
        }
        if self.max_span_length == 0 {
            return Err(Error::Config("max_span_length must be positive".into()));
        }
        Ok(())
    }

    /// Patches to mask for a text of `n` patches.
    pub fn target_count(&self, n: usize) -> usize {
        (self.mask_ratio * n as f64).round() as usize
    }
}

/// Span mask over the text patches only (`true` = reconstruct). Spans are
/// drawn with a uniform length in `[1, max_span_length]`, capped at the number
/// still needed, and a start uniform over the positions where the span does
/// not overlap earlier ones; the masked count hits the target exactly.
pub fn sample_span_mask(num_text_patches: usize, policy: &SpanMaskPolicy, rng: &mut impl Rng) -> Result<Vec<bool>> {
    policy.validate()?;
    let n = num_text_patches;
    if n == 0 {
        return Err(Error::Mask("no text patches to mask".into()));
    }
    let target = policy.target_count(n);
    if target >= n {
        return Err(Error::Mask(format!(
            "masking {target} of {n} patches would leave nothing visible"
        )));
    }
    let mut mask = vec![false; n];
    let mut masked = 0;
    while masked < target {
        let mut len = rng.gen_range(1..=policy.max_span_length).min(target - masked);
        let starts = loop {
            let starts: Vec<usize> = (0..=n - len)
                .filter(|&s| mask[s..s + len].iter().all(|m| !m))
                .collect();
            if !starts.is_empty() {
                break starts;
            }
            len -= 1;
        };
        let s = starts[rng.gen_range(0..starts.len())];
        mask[s..s + len].iter_mut().for_each(|m| *m = true);
        masked += len;
    }
    Ok(mask)
}

pub fn masked_rows(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden_dim: 64,
            num_layers: 1,
            num_heads: 4,
            mlp_ratio: 4,
        }
    }
}

/// Light transformer decoder mapping encoder states back to pixels. Owns the
/// learned mask embedding substituted at masked inputs.
#[derive(Clone, Debug)]
pub struct MaeDecoder {
    pub mask_embedding: ParamId,
    pub input: Linear,
    pub layers: Vec<Block>,
    pub norm: LayerNorm,
    pub head: Linear,
    positions: Vec<f32>,
    dim: usize,
}

impl MaeDecoder {
    pub fn new(
        vs: &mut VarStore,
        encoder_dim: usize,
        config: &DecoderConfig,
        max_positions: usize,
        eps: f32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = config.hidden_dim;
        if d == 0 || config.num_heads == 0 || !d.is_multiple_of(config.num_heads) {
            return Err(Error::Config(format!(
                "decoder hidden_dim {d} must be a positive multiple of num_heads {}",
                config.num_heads
            )));
        }
        let mask = Tensor::new(truncated_normal(rng, encoder_dim, INIT_STD), &[encoder_dim])?;
        let mask_embedding = vs.add("mae.mask_embedding", mask)?;
        let input = Linear::new(vs, "mae.decoder.input", encoder_dim, d, rng)?;
        let layers = (0..config.num_layers)
            .map(|i| {
                Block::new(vs, &format!("mae.decoder.layer{i}"), d, config.num_heads, d * config.mlp_ratio, eps, rng)
            })
            .collect::<Result<_>>()?;
        Ok(MaeDecoder {
            mask_embedding,
            input,
            layers,
            norm: LayerNorm::new(vs, "mae.decoder.norm", d, eps)?,
            head: Linear::new(vs, "mae.decoder.head", d, PATCH_PIXELS, rng)?,
            positions: sinusoidal_table(max_positions, d),
            dim: d,
        })
    }

    /// Pixel predictions `[rows.len()×256]` for the masked rows of `encoded`.
    pub fn reconstruct(&self, vs: &VarStore, encoded: &Tensor, rows: &[usize], keep: &[bool]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::Mask("nothing masked, nothing to reconstruct".into()));
        }
        let n = encoded.shape()[0];
        if n * self.dim > self.positions.len() {
            return Err(Error::Data(format!("decoder input of {n} positions is too long")));
        }
        let pos = Tensor::new(self.positions[..n * self.dim].to_vec(), &[n, self.dim])?;
        let mut x = self.input.forward(vs, encoded)?.add(&pos)?;
        let mut dropout = Dropout::off();
        for layer in &self.layers {
            x = layer.forward(vs, &x, keep, &mut dropout)?;
        }
        let x = self.norm.forward(vs, &x)?.gather_rows(rows)?;
        self.head.forward(vs, &x)
    }
}

fn check_mask(rows: usize, mask: &[bool]) -> Result<Vec<usize>> {
    if mask.len() != rows {
        return Err(Error::Mask(format!("mask covers {} rows, tensor has {rows}", mask.len())));
    }
    let idx = masked_rows(mask);
    if idx.is_empty() {
        return Err(Error::Mask("empty mask".into()));
    }
    Ok(idx)
}

/// Mean squared error over the pixels of masked rows only.
pub fn mae_loss(pred: &Tensor, target: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let idx = check_mask(pred.shape()[0], mask)?;
    Ok(pred.gather_rows(&idx)?.mse_loss(&target.gather_rows(&idx)?)?)
}

/// Per-patch standardization of reconstruction targets.
pub fn normalize_patches(pixels: &mut [f32]) {
    for patch in pixels.chunks_mut(PATCH_PIXELS) {
        let n = patch.len() as f32;
        let mean = patch.iter().sum::<f32>() / n;
        let var = patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + 1e-6).sqrt();
        patch.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
}

/// Picks `round(ratio·n)` (at least one) distinct token positions to mask.
pub fn sample_token_mask(num_text: usize, ratio: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if num_text < 2 {
        return Err(Error::Mask(format!("{num_text} tokens are too few to mask")));
    }
    let k = ((ratio * num_text as f64).round() as usize).clamp(1, num_text - 1);
    let mut rows = sample(rng, num_text, k).into_vec();
    rows.sort_unstable();
    Ok(rows)
}

/// Vocabulary classifier over encoder states for masked-token prediction.
#[derive(Clone, Debug)]
pub struct MlmHead {
    pub norm: LayerNorm,
    pub output: Linear,
}

impl MlmHead {
    pub fn new(vs: &mut VarStore, hidden: usize, vocab_size: usize, eps: f32, rng: &mut impl Rng) -> Result<Self> {
        Ok(MlmHead {
            norm: LayerNorm::new(vs, "mlm.norm", hidden, eps)?,
            output: Linear::new(vs, "mlm.output", hidden, vocab_size, rng)?,
        })
    }

    pub fn logits(&self, vs: &VarStore, encoded: &Tensor, rows: &[usize]) -> Result<Tensor> {
        let x = self.norm.forward(vs, &encoded.gather_rows(rows)?)?;
        self.output.forward(vs, &x)
    }
}
