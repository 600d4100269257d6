//! Self-supervised pretraining loop shared by both front-ends.

use pixdial_tensor::rng::{stream_rng, SeededRng, Stream};
use pixdial_tensor::{clip_grad_norm, AdamW, AdamWConfig, LrSchedule, Tensor, VarStore};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mae::{
    masked_rows, normalize_patches, sample_span_mask, sample_token_mask, DecoderConfig, MaeDecoder, MlmHead,
    SpanMaskPolicy,
};
use crate::model::{Backbone, EncoderInput, InputMask, Units};
use crate::render::PATCH_PIXELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub warmup_steps: usize,
    pub lr_decay: bool,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f32,
    pub mask_ratio: f64,
    pub max_span_length: usize,
    pub mlm_ratio: f64,
    pub normalize_targets: bool,
    pub decoder: DecoderConfig,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            warmup_steps: 20,
            lr_decay: true,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 1.0,
            mask_ratio: 0.25,
            max_span_length: 6,
            mlm_ratio: 0.15,
            normalize_targets: false,
            decoder: DecoderConfig::default(),
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn policy(&self) -> SpanMaskPolicy {
        SpanMaskPolicy {
            mask_ratio: self.mask_ratio,
            max_span_length: self.max_span_length,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.learning_rate,
            warmup_steps: self.warmup_steps,
            total_steps: self.steps,
            decay: self.lr_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be positive".into()));
        }
        if !(self.mlm_ratio > 0.0 && self.mlm_ratio < 1.0) {
            return Err(Error::Config(format!("pretrain.mlm_ratio {} outside (0, 1)", self.mlm_ratio)));
        }
        self.policy().validate()?;
        self.optimizer().validate()?;
        Ok(())
    }
}

/// The reconstruction head paired with a backbone.
#[derive(Clone, Debug)]
pub enum Objective {
    Mae(MaeDecoder),
    Mlm(MlmHead),
}

impl Objective {
    pub fn for_backbone(vs: &mut VarStore, backbone: &Backbone, cfg: &PretrainConfig, rng: &mut SeededRng) -> Result<Self> {
        let enc = &backbone.encoder.config;
        match backbone.vocab() {
            None => Ok(Objective::Mae(MaeDecoder::new(
                vs,
                enc.hidden_dim,
                &cfg.decoder,
                enc.max_positions,
                enc.layer_norm_eps,
                rng,
            )?)),
            Some(vocab) => Ok(Objective::Mlm(MlmHead::new(vs, enc.hidden_dim, vocab.len(), enc.layer_norm_eps, rng)?)),
        }
    }

    /// Whether an input has enough units to be masked under this objective.
    pub fn usable(&self, input: &EncoderInput, cfg: &PretrainConfig) -> bool {
        match self {
            Objective::Mae(_) => {
                let target = cfg.policy().target_count(input.num_text);
                target >= 1 && target < input.num_text
            }
            Objective::Mlm(_) => input.num_text >= 2,
        }
    }

    /// Masks one input and returns its reconstruction loss.
    pub fn sample_loss(
        &self,
        vs: &VarStore,
        backbone: &Backbone,
        input: &EncoderInput,
        cfg: &PretrainConfig,
        mask_rng: &mut SeededRng,
        dropout_rng: Option<&mut SeededRng>,
    ) -> Result<Tensor> {
        match (self, &input.units) {
            (Objective::Mae(decoder), Units::Patches(pixels)) => {
                let rows = masked_rows(&sample_span_mask(input.num_text, &cfg.policy(), mask_rng)?);
                let mask = InputMask::Embedding {
                    rows: &rows,
                    value: vs.get(decoder.mask_embedding),
                };
                let encoded = backbone.encode_with(vs, input, true, mask, dropout_rng)?;
                let pred = decoder.reconstruct(vs, &encoded, &rows, &input.keep(true))?;
                let mut target: Vec<f32> = rows
                    .iter()
                    .flat_map(|&r| pixels[r * PATCH_PIXELS..(r + 1) * PATCH_PIXELS].iter().copied())
                    .collect();
                if cfg.normalize_targets {
                    normalize_patches(&mut target);
                }
                let target = Tensor::new(target, &[rows.len(), PATCH_PIXELS])?;
                Ok(pred.mse_loss(&target)?)
            }
            (Objective::Mlm(head), Units::Tokens(ids)) => {
                let rows = sample_token_mask(input.num_text, cfg.mlm_ratio, mask_rng)?;
                let encoded = backbone.encode_with(vs, input, true, InputMask::Token { rows: &rows }, dropout_rng)?;
                let labels: Vec<usize> = rows.iter().map(|&r| ids[r]).collect();
                Ok(head.logits(vs, &encoded, &rows)?.cross_entropy(&labels)?)
            }
            _ => Err(Error::Data("objective does not match the front-end".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f32,
    pub learning_rate: f32,
}

pub fn loss_csv(curve: &[LossRecord]) -> String {
    let mut s = String::from("step,loss,learning_rate\n");
    for r in curve {
        s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.learning_rate));
    }
    s
}

/// Prepares corpus lines and keeps those the objective can mask.
pub fn prepare_corpus<S: AsRef<str>>(
    backbone: &Backbone,
    objective: &Objective,
    cfg: &PretrainConfig,
    lines: &[S],
) -> Result<Vec<EncoderInput>> {
    let mut inputs = Vec::new();
    for line in lines {
        let input = backbone.prepare_text(line.as_ref())?;
        if objective.usable(&input, cfg) {
            inputs.push(input);
        }
    }
    if inputs.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "corpus has {} usable lines, fewer than one batch of {}",
            inputs.len(),
            cfg.batch_size
        )));
    }
    Ok(inputs)
}

/// Mean objective loss over `inputs` with masks drawn from `seed`, without
/// building a graph. Useful for before/after comparisons on a frozen batch.
pub fn frozen_batch_loss(
    vs: &VarStore,
    backbone: &Backbone,
    objective: &Objective,
    cfg: &PretrainConfig,
    inputs: &[EncoderInput],
    seed: u64,
) -> Result<f32> {
    let frozen = vs.detached();
    let mut rng = stream_rng(seed, Stream::Masking);
    let mut total = 0.0;
    for input in inputs {
        total += objective.sample_loss(&frozen, backbone, input, cfg, &mut rng, None)?.item();
    }
    Ok(total / inputs.len() as f32)
}

/// Runs `cfg.steps` AdamW updates over shuffled mini-batches and returns the
/// per-step loss curve. `on_checkpoint` sees the store after every
/// `checkpoint_every`-th step.
pub fn pretrain(
    vs: &mut VarStore,
    backbone: &Backbone,
    objective: &Objective,
    inputs: &[EncoderInput],
    cfg: &PretrainConfig,
    mut on_checkpoint: impl FnMut(usize, &VarStore) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if inputs.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "{} usable lines cannot fill a batch of {}",
            inputs.len(),
            cfg.batch_size
        )));
    }
    let mut optimizer = AdamW::new(cfg.optimizer(), vs)?;
    let schedule = cfg.schedule();
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut mask_rng = stream_rng(cfg.seed, Stream::Masking);
    let mut dropout_rng = stream_rng(cfg.seed, Stream::Dropout);
    let mut order: Vec<usize> = Vec::new();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        vs.zero_grad();
        let mut total = 0.0f32;
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..inputs.len()).collect();
                order.shuffle(&mut shuffle_rng);
                order.reverse();
            }
            let input = &inputs[order.pop().expect("refilled above")];
            let loss = objective.sample_loss(vs, backbone, input, cfg, &mut mask_rng, Some(&mut dropout_rng))?;
            total += loss.item();
            loss.scale(1.0 / cfg.batch_size as f32)?.backward()?;
        }
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(vs, cfg.grad_clip);
        }
        let lr = schedule.at(step);
        optimizer.step_with_lr(vs, lr)?;
        let loss = total / cfg.batch_size as f32;
        log::debug!("pretrain step {step} loss {loss:.5} lr {lr:.2e}");
        curve.push(LossRecord {
            step,
            loss,
            learning_rate: lr,
        });
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(step + 1, vs)?;
        }
    }
    Ok(curve)
}
