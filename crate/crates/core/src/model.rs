//! Front-ends and the shared backbone.
//!
//! A front-end turns text into an [`EncoderInput`] and then into unit
//! embeddings. Everything downstream of [`Backbone::embed`] is shared, so the
//! pixel and subword models differ only in how embeddings are produced.

use pixdial_tensor::rng::{truncated_normal, SeededRng};
use pixdial_tensor::{ParamId, Tensor, VarStore};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{self, BpeVocab};
use crate::encoder::{Encoder, EncoderConfig, Linear, INIT_STD};
use crate::error::{Error, Result};
use crate::render::{render_text, render_words, Rendering, PATCH_PIXELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontEndKind {
    Pixel,
    Subword,
}

impl FrontEndKind {
    pub fn name(self) -> &'static str {
        match self {
            FrontEndKind::Pixel => "pixel",
            FrontEndKind::Subword => "subword",
        }
    }
}

/// Raw units before embedding.
#[derive(Clone, Debug, PartialEq)]
pub enum Units {
    /// `max_len × 256` pixel rows.
    Patches(Vec<f32>),
    /// `max_len` token ids, PAD-filled.
    Tokens(Vec<usize>),
}

/// Front-end output for one text: units padded to a fixed length, a keep
/// mask over them, and optional word alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    pub units: Units,
    pub max_len: usize,
    /// Text units; the separator sits at this index.
    pub num_text: usize,
    pub word_spans: Option<Vec<(usize, usize)>>,
    pub truncated: bool,
}

impl EncoderInput {
    pub fn from_rendering(r: &Rendering) -> Self {
        EncoderInput {
            units: Units::Patches(r.pixels().to_vec()),
            max_len: r.max_patches(),
            num_text: r.num_text_patches(),
            word_spans: r.word_spans().map(<[_]>::to_vec),
            truncated: r.truncated(),
        }
    }

    /// Text units plus the separator.
    pub fn active_len(&self) -> usize {
        self.num_text + 1
    }

    pub fn keep(&self, trim: bool) -> Vec<bool> {
        let n = if trim { self.active_len() } else { self.max_len };
        (0..n).map(|i| i < self.active_len()).collect()
    }

    /// Pixel rows for units `0..n`, or `None` for token input.
    pub fn patch_rows(&self, n: usize) -> Option<&[f32]> {
        match &self.units {
            Units::Patches(p) => Some(&p[..n * PATCH_PIXELS]),
            Units::Tokens(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PixelFrontEnd {
    pub projection: Linear,
    pub max_patches: usize,
}

#[derive(Clone, Debug)]
pub struct SubwordFrontEnd {
    pub table: ParamId,
    pub vocab: BpeVocab,
    pub max_tokens: usize,
}

#[derive(Clone, Debug)]
pub enum FrontEnd {
    Pixel(PixelFrontEnd),
    Subword(SubwordFrontEnd),
}

impl PixelFrontEnd {
    pub fn new(vs: &mut VarStore, hidden: usize, max_patches: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(PixelFrontEnd {
            projection: Linear::new(vs, "embed.patch", PATCH_PIXELS, hidden, rng)?,
            max_patches,
        })
    }

    /// Projects `[n×256]` patches; rows listed in `masked` are replaced by
    /// `mask_embedding` after projection, so their pixels cannot leak.
    pub fn project(&self, vs: &VarStore, patches: &Tensor, masked: &[usize], mask_embedding: Option<&Tensor>) -> Result<Tensor> {
        let x = self.projection.forward(vs, patches)?;
        match mask_embedding {
            Some(m) if !masked.is_empty() => Ok(x.replace_rows(masked, m)?),
            _ => Ok(x),
        }
    }
}

impl SubwordFrontEnd {
    pub fn new(vs: &mut VarStore, vocab: BpeVocab, hidden: usize, max_tokens: usize, rng: &mut impl Rng) -> Result<Self> {
        let n = vocab.len();
        let table = Tensor::new(truncated_normal(rng, n * hidden, INIT_STD), &[n, hidden])?;
        Ok(SubwordFrontEnd {
            table: vs.add("embed.token", table)?,
            vocab,
            max_tokens,
        })
    }

    pub fn lookup(&self, vs: &VarStore, ids: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::Vocab(format!("token id {bad} out of range")));
        }
        Ok(vs.get(self.table).gather_rows(ids)?)
    }

    fn finish(&self, mut ids: Vec<usize>, spans: Option<Vec<(usize, usize)>>, truncated: bool) -> EncoderInput {
        let num_text = ids.len();
        ids.push(bpe::SEP);
        ids.resize(self.max_tokens, bpe::PAD);
        EncoderInput {
            units: Units::Tokens(ids),
            max_len: self.max_tokens,
            num_text,
            word_spans: spans,
            truncated,
        }
    }

    pub fn prepare_text(&self, text: &str) -> Result<EncoderInput> {
        if self.max_tokens < 2 {
            return Err(Error::Data("max_tokens must be at least 2".into()));
        }
        let mut ids = self.vocab.encode(text);
        let truncated = ids.len() > self.max_tokens - 1;
        ids.truncate(self.max_tokens - 1);
        Ok(self.finish(ids, None, truncated))
    }

    pub fn prepare_words<S: AsRef<str>>(&self, words: &[S]) -> Result<EncoderInput> {
        if words.is_empty() {
            return Err(Error::Data("cannot encode an empty word list".into()));
        }
        if self.max_tokens < 2 {
            return Err(Error::Data("max_tokens must be at least 2".into()));
        }
        let available = self.max_tokens - 1;
        let mut ids = Vec::new();
        let mut spans = Vec::new();
        let mut truncated = false;
        for word in words {
            let mut w = self.vocab.encode_word_ids(word.as_ref());
            if w.is_empty() {
                w.push(bpe::UNK);
            }
            if w.len() > available {
                return Err(Error::OversizedWord {
                    word: word.as_ref().to_string(),
                    needed: w.len(),
                    available,
                });
            }
            if ids.len() + w.len() > available {
                truncated = true;
                break;
            }
            spans.push((ids.len(), ids.len() + w.len() - 1));
            ids.extend(w);
        }
        Ok(self.finish(ids, Some(spans), truncated))
    }
}

/// Masking applied at embedding time during pretraining.
#[derive(Clone, Copy, Debug)]
pub enum InputMask<'a> {
    None,
    /// Replace these rows' projected embeddings with a learned vector.
    Embedding { rows: &'a [usize], value: &'a Tensor },
    /// Replace these token ids with MASK before lookup.
    Token { rows: &'a [usize] },
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub front: FrontEnd,
    pub encoder: Encoder,
}

impl Backbone {
    pub fn pixel(vs: &mut VarStore, config: &EncoderConfig, max_patches: usize, rng: &mut impl Rng) -> Result<Self> {
        check_max_len(config, max_patches)?;
        let front = FrontEnd::Pixel(PixelFrontEnd::new(vs, config.hidden_dim, max_patches, rng)?);
        let encoder = Encoder::new(vs, config, rng)?;
        Ok(Backbone { front, encoder })
    }

    pub fn subword(vs: &mut VarStore, config: &EncoderConfig, vocab: BpeVocab, max_tokens: usize, rng: &mut impl Rng) -> Result<Self> {
        check_max_len(config, max_tokens)?;
        let front = FrontEnd::Subword(SubwordFrontEnd::new(vs, vocab, config.hidden_dim, max_tokens, rng)?);
        let encoder = Encoder::new(vs, config, rng)?;
        Ok(Backbone { front, encoder })
    }

    pub fn kind(&self) -> FrontEndKind {
        match self.front {
            FrontEnd::Pixel(_) => FrontEndKind::Pixel,
            FrontEnd::Subword(_) => FrontEndKind::Subword,
        }
    }

    pub fn vocab(&self) -> Option<&BpeVocab> {
        match &self.front {
            FrontEnd::Subword(s) => Some(&s.vocab),
            FrontEnd::Pixel(_) => None,
        }
    }

    pub fn max_len(&self) -> usize {
        match &self.front {
            FrontEnd::Pixel(p) => p.max_patches,
            FrontEnd::Subword(s) => s.max_tokens,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.config.hidden_dim
    }

    /// Continuous input for sequence tasks and pretraining.
    pub fn prepare_text(&self, text: &str) -> Result<EncoderInput> {
        match &self.front {
            FrontEnd::Pixel(p) => Ok(EncoderInput::from_rendering(&render_text(text, p.max_patches)?)),
            FrontEnd::Subword(s) => s.prepare_text(text),
        }
    }

    /// Word-aligned input for token-level tasks.
    pub fn prepare_words<S: AsRef<str>>(&self, words: &[S]) -> Result<EncoderInput> {
        match &self.front {
            FrontEnd::Pixel(p) => Ok(EncoderInput::from_rendering(&render_words(words, p.max_patches)?)),
            FrontEnd::Subword(s) => s.prepare_words(words),
        }
    }

    /// Unit embeddings plus positions, `[n×hidden]`, where `n` is the active
    /// length when `trim` is set and the padded length otherwise.
    pub fn embed(&self, vs: &VarStore, input: &EncoderInput, trim: bool, mask: InputMask<'_>) -> Result<Tensor> {
        let n = if trim { input.active_len() } else { input.max_len };
        self.encoder.check_length(n)?;
        let x = match (&self.front, &input.units) {
            (FrontEnd::Pixel(p), Units::Patches(pixels)) => {
                let patches = Tensor::new(pixels[..n * PATCH_PIXELS].to_vec(), &[n, PATCH_PIXELS])?;
                match mask {
                    InputMask::None => p.project(vs, &patches, &[], None)?,
                    InputMask::Embedding { rows, value } => p.project(vs, &patches, rows, Some(value))?,
                    InputMask::Token { .. } => {
                        return Err(Error::Data("token masking needs a subword front-end".into()))
                    }
                }
            }
            (FrontEnd::Subword(s), Units::Tokens(ids)) => {
                let mut ids = ids[..n].to_vec();
                match mask {
                    InputMask::None => {}
                    InputMask::Token { rows } => rows.iter().for_each(|&r| ids[r] = bpe::MASK),
                    InputMask::Embedding { .. } => {
                        return Err(Error::Data("embedding masking needs a pixel front-end".into()))
                    }
                }
                s.lookup(vs, &ids)?
            }
            _ => return Err(Error::Data("input units do not match the front-end".into())),
        };
        self.encoder.add_positions(&x)
    }

    pub fn encode_with(
        &self,
        vs: &VarStore,
        input: &EncoderInput,
        trim: bool,
        mask: InputMask<'_>,
        rng: Option<&mut SeededRng>,
    ) -> Result<Tensor> {
        let x = self.embed(vs, input, trim, mask)?;
        self.encoder.forward(vs, &x, &input.keep(trim), rng)
    }

    /// Full-length encoding, `[max_len×hidden]`.
    pub fn encode(&self, vs: &VarStore, input: &EncoderInput) -> Result<Tensor> {
        self.encode_with(vs, input, false, InputMask::None, None)
    }

    /// Encoding of the active prefix only; rows match [`Backbone::encode`]
    /// on the unmasked positions.
    pub fn encode_active(&self, vs: &VarStore, input: &EncoderInput, rng: Option<&mut SeededRng>) -> Result<Tensor> {
        self.encode_with(vs, input, true, InputMask::None, rng)
    }
}

fn check_max_len(config: &EncoderConfig, max_len: usize) -> Result<()> {
    if max_len > config.max_positions {
        return Err(Error::Config(format!(
            "input length {max_len} exceeds max_positions {}",
            config.max_positions
        )));
    }
    if max_len < 2 {
        return Err(Error::Config("input length must be at least 2".into()));
    }
    Ok(())
}

/// Parameter names belonging to the backbone (front-end and encoder).
pub fn is_backbone_param(name: &str) -> bool {
    name.starts_with("embed.") || name.starts_with("encoder.")
}
