//! Pre-norm transformer encoder shared by every front-end and head.

use pixdial_tensor::rng::{truncated_normal, SeededRng};
use pixdial_tensor::{linear, ParamId, Tensor, TensorError, VarStore};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::PATCH_PIXELS;

pub const INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub patch_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub max_positions: usize,
    pub dropout_rate: f32,
    pub layer_norm_eps: f32,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_dim: PATCH_PIXELS,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            mlp_ratio: 4,
            max_positions: 256,
            dropout_rate: 0.0,
            layer_norm_eps: 1e-5,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// ViT-Base sized preset (12 layers, 768 hidden, 12 heads).
    pub fn full_scale() -> Self {
        EncoderConfig {
            hidden_dim: 768,
            num_layers: 12,
            num_heads: 12,
            max_positions: 529,
            ..Default::default()
        }
    }

    pub fn mlp_dim(&self) -> usize {
        self.hidden_dim * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch_dim != PATCH_PIXELS {
            return bad(format!("patch_dim must be {PATCH_PIXELS}, got {}", self.patch_dim));
        }
        if self.hidden_dim == 0 || self.num_heads == 0 || self.mlp_ratio == 0 {
            return bad("hidden_dim, num_heads and mlp_ratio must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.max_positions < 2 {
            return bad("max_positions must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Parameters in the transformer stack and final norm.
    pub fn stack_parameter_count(&self) -> usize {
        let h = self.hidden_dim;
        let m = self.mlp_dim();
        2 * h + self.num_layers * (4 * h * h + 2 * h * m + m + 9 * h)
    }

    /// Parameters of a pixel model: patch projection plus stack.
    pub fn pixel_parameter_count(&self) -> usize {
        self.patch_dim * self.hidden_dim + self.hidden_dim + self.stack_parameter_count()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(vs: &mut VarStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = Tensor::new(truncated_normal(rng, input * output, INIT_STD), &[input, output])?;
        Ok(Linear {
            weight: vs.add(format!("{name}.weight"), w)?,
            bias: vs.add(format!("{name}.bias"), Tensor::zeros(&[output]))?,
        })
    }

    pub fn forward(&self, vs: &VarStore, x: &Tensor) -> Result<Tensor> {
        Ok(linear(x, vs.get(self.weight), vs.get(self.bias))?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(vs: &mut VarStore, name: &str, dim: usize, eps: f32) -> Result<Self> {
        Ok(LayerNorm {
            gain: vs.add(format!("{name}.gain"), Tensor::ones(&[dim]))?,
            bias: vs.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
            eps,
        })
    }

    pub fn forward(&self, vs: &VarStore, x: &Tensor) -> Result<Tensor> {
        Ok(x.layer_norm(vs.get(self.gain), vs.get(self.bias), self.eps)?)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub num_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(vs: &mut VarStore, name: &str, dim: usize, num_heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(MultiHeadAttention {
            query: Linear::new(vs, &format!("{name}.query"), dim, dim, rng)?,
            key: Linear::new(vs, &format!("{name}.key"), dim, dim, rng)?,
            value: Linear::new(vs, &format!("{name}.value"), dim, dim, rng)?,
            output: Linear::new(vs, &format!("{name}.output"), dim, dim, rng)?,
            num_heads,
        })
    }

    /// Per-head attention probabilities, `[n×n]` each; `keep[j] == false`
    /// removes key `j` from every row.
    pub fn probabilities(&self, vs: &VarStore, x: &Tensor, keep: &[bool]) -> Result<Vec<Tensor>> {
        Ok(self.heads(vs, x, keep)?.into_iter().map(|(p, _)| p).collect())
    }

    fn heads(&self, vs: &VarStore, x: &Tensor, keep: &[bool]) -> Result<Vec<(Tensor, Tensor)>> {
        let dim = x.shape()[1];
        if keep.len() != x.shape()[0] {
            return Err(TensorError::shape("attention", x.shape(), &[keep.len()]).into());
        }
        let d = dim / self.num_heads;
        let q = self.query.forward(vs, x)?;
        let k = self.key.forward(vs, x)?;
        let v = self.value.forward(vs, x)?;
        let scale = 1.0 / (d as f32).sqrt();
        (0..self.num_heads)
            .map(|h| {
                let qh = q.slice_cols(h * d, d)?;
                let kh = k.slice_cols(h * d, d)?;
                let vh = v.slice_cols(h * d, d)?;
                let p = qh.matmul(&kh.transpose()?)?.scale(scale)?.masked_softmax(keep)?;
                Ok((p, vh))
            })
            .collect()
    }

    pub fn forward(&self, vs: &VarStore, x: &Tensor, keep: &[bool]) -> Result<Tensor> {
        let heads: Vec<Tensor> = self
            .heads(vs, x, keep)?
            .into_iter()
            .map(|(p, v)| p.matmul(&v))
            .collect::<std::result::Result<_, _>>()?;
        self.output.forward(vs, &Tensor::concat_cols(&heads)?)
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    pub fn new(
        vs: &mut VarStore,
        name: &str,
        dim: usize,
        num_heads: usize,
        mlp_dim: usize,
        eps: f32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Block {
            norm1: LayerNorm::new(vs, &format!("{name}.norm1"), dim, eps)?,
            attention: MultiHeadAttention::new(vs, &format!("{name}.attention"), dim, num_heads, rng)?,
            norm2: LayerNorm::new(vs, &format!("{name}.norm2"), dim, eps)?,
            fc1: Linear::new(vs, &format!("{name}.mlp.fc1"), dim, mlp_dim, rng)?,
            fc2: Linear::new(vs, &format!("{name}.mlp.fc2"), mlp_dim, dim, rng)?,
        })
    }

    pub fn forward(&self, vs: &VarStore, x: &Tensor, keep: &[bool], dropout: &mut Dropout) -> Result<Tensor> {
        let a = self.attention.forward(vs, &self.norm1.forward(vs, x)?, keep)?;
        let x = x.add(&dropout.apply(&a)?)?;
        let h = self.fc1.forward(vs, &self.norm2.forward(vs, &x)?)?.gelu()?;
        let m = self.fc2.forward(vs, &h)?;
        Ok(x.add(&dropout.apply(&m)?)?)
    }
}

/// Dropout that is active only when given a generator.
pub struct Dropout<'a> {
    rate: f32,
    rng: Option<&'a mut SeededRng>,
}

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f32, rng: Option<&'a mut SeededRng>) -> Self {
        Dropout { rate, rng }
    }

    pub fn apply(&mut self, x: &Tensor) -> Result<Tensor> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => Ok(x.dropout(self.rate, rng)?),
            _ => Ok(x.clone()),
        }
    }
}

/// `table[p][2i] = sin(p / 10000^(2i/d))`, `table[p][2i+1] = cos(…)`.
pub fn sinusoidal_table(positions: usize, dim: usize) -> Vec<f32> {
    let mut table = vec![0.0f32; positions * dim];
    for p in 0..positions {
        for i in (0..dim).step_by(2) {
            let angle = p as f64 / 10000f64.powf(i as f64 / dim as f64);
            table[p * dim + i] = angle.sin() as f32;
            if i + 1 < dim {
                table[p * dim + i + 1] = angle.cos() as f32;
            }
        }
    }
    table
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<Block>,
    pub final_norm: LayerNorm,
    positions: Vec<f32>,
    use_positions: bool,
}

impl Encoder {
    pub fn new(vs: &mut VarStore, config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let eps = config.layer_norm_eps;
        let layers = (0..config.num_layers)
            .map(|i| Block::new(vs, &format!("encoder.layer{i}"), h, config.num_heads, config.mlp_dim(), eps, rng))
            .collect::<Result<_>>()?;
        Ok(Encoder {
            config: config.clone(),
            layers,
            final_norm: LayerNorm::new(vs, "encoder.final_norm", h, eps)?,
            positions: sinusoidal_table(config.max_positions, h),
            use_positions: true,
        })
    }

    /// Test hook: drop the position encoding to expose permutation symmetry.
    pub fn set_use_positions(&mut self, on: bool) {
        self.use_positions = on;
    }

    pub fn position_rows(&self, n: usize) -> Result<Tensor> {
        let h = self.config.hidden_dim;
        self.check_length(n)?;
        Ok(Tensor::new(self.positions[..n * h].to_vec(), &[n, h])?)
    }

    pub fn check_length(&self, n: usize) -> Result<()> {
        if n > self.config.max_positions {
            return Err(Error::Data(format!(
                "input of {n} positions exceeds max_positions {}",
                self.config.max_positions
            )));
        }
        Ok(())
    }

    /// Adds the fixed position encoding to `[n×hidden]` unit embeddings.
    pub fn add_positions(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let pos = self.position_rows(n)?;
        if self.use_positions {
            Ok(x.add(&pos)?)
        } else {
            Ok(x.clone())
        }
    }

    /// Runs the stack over position-encoded embeddings. Rows with
    /// `keep == false` are carried through but never attended to.
    pub fn forward(&self, vs: &VarStore, x: &Tensor, keep: &[bool], rng: Option<&mut SeededRng>) -> Result<Tensor> {
        let mut dropout = Dropout::new(self.config.dropout_rate, rng);
        let mut x = dropout.apply(x)?;
        for layer in &self.layers {
            x = layer.forward(vs, &x, keep, &mut dropout)?;
        }
        self.final_norm.forward(vs, &x)
    }
}
