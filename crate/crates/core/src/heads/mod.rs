//! Task heads over encoder outputs: UPOS tagging, biaffine parsing and
//! sequence classification.

pub mod decode;

use pixdial_tensor::rng::truncated_normal;
use pixdial_tensor::{Tensor, VarStore};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Upos;
use crate::encoder::{Linear, INIT_STD};
use crate::error::{Error, Result};

pub use decode::{decode_tree, is_single_root_tree, ScoreMatrix};

/// Arc score used for forbidden entries during training; finite so the
/// checked tensor mode accepts it.
pub const MASKED_SCORE: f32 = -1e9;

pub const ROOT_RELATION: &str = "root";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordPooling {
    /// Encoder output at the word's first unit.
    #[default]
    First,
    /// Mean of the encoder outputs over the word's span.
    Mean,
}

/// One row per word from `encoded[units×hidden]`; spans are inclusive.
pub fn word_representations(encoded: &Tensor, spans: &[(usize, usize)], pooling: WordPooling) -> Result<Tensor> {
    if spans.is_empty() {
        return Err(Error::Data("no word spans to pool".into()));
    }
    let rows = encoded.shape()[0];
    if let Some(&(s, e)) = spans.iter().find(|&&(s, e)| s > e || e >= rows) {
        return Err(Error::Data(format!("word span ({s},{e}) outside {rows} encoded rows")));
    }
    match pooling {
        WordPooling::First => {
            let firsts: Vec<usize> = spans.iter().map(|&(s, _)| s).collect();
            Ok(encoded.gather_rows(&firsts)?)
        }
        WordPooling::Mean => {
            let parts = spans
                .iter()
                .map(|&(s, e)| {
                    let idx: Vec<usize> = (s..=e).collect();
                    encoded.gather_rows(&idx)?.mean_rows()
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let hidden = encoded.shape()[1];
            let parts = parts
                .iter()
                .map(|p| p.reshape(&[1, hidden]))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(Tensor::concat_rows(&parts)?)
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of a `[rows×cols]` tensor.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(argmax).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct PosHead {
    pub output: Linear,
}

impl PosHead {
    pub fn new(vs: &mut VarStore, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(PosHead { output: Linear::new(vs, "pos.output", hidden, Upos::COUNT, rng)? })
    }

    pub fn logits(&self, vs: &VarStore, words: &Tensor) -> Result<Tensor> {
        self.output.forward(vs, words)
    }

    pub fn loss(&self, vs: &VarStore, words: &Tensor, gold: &[Upos]) -> Result<Tensor> {
        let labels: Vec<usize> = gold.iter().map(|u| u.index()).collect();
        Ok(self.logits(vs, words)?.cross_entropy(&labels)?)
    }

    pub fn predict(&self, vs: &VarStore, words: &Tensor) -> Result<Vec<Upos>> {
        let logits = self.logits(vs, words)?;
        Ok(argmax_rows(&logits).into_iter().map(|i| Upos::ALL[i]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiaffineConfig {
    pub arc_dim: usize,
    pub label_dim: usize,
}

impl Default for BiaffineConfig {
    fn default() -> Self {
        BiaffineConfig { arc_dim: 64, label_dim: 32 }
    }
}

/// Dozat–Manning style parser head. Word rows are prefixed by a learned root
/// vector so node 0 can act as a head.
#[derive(Clone, Debug)]
pub struct BiaffineHead {
    pub root: pixdial_tensor::ParamId,
    pub arc_head: Linear,
    pub arc_dep: Linear,
    pub label_head: Linear,
    pub label_dep: Linear,
    /// `(arc_dim+1) × arc_dim`
    pub arc_u: pixdial_tensor::ParamId,
    /// `(label_dim+1) × R·(label_dim+1)`, one block per relation.
    pub label_u: pixdial_tensor::ParamId,
    pub relations: Vec<String>,
    pub config: BiaffineConfig,
}

/// Hidden projections shared by the arc and label scorers for one sentence.
pub struct ParseFeatures {
    arc_head: Tensor,
    arc_dep: Tensor,
    label_head: Tensor,
    label_dep: Tensor,
    n: usize,
}

impl ParseFeatures {
    pub fn words(&self) -> usize {
        self.n
    }
}

impl BiaffineHead {
    pub fn new(vs: &mut VarStore, hidden: usize, relations: Vec<String>, config: BiaffineConfig, rng: &mut impl Rng) -> Result<Self> {
        if relations.is_empty() {
            return Err(Error::Data("parser needs at least one relation label".into()));
        }
        let (a, l, r) = (config.arc_dim, config.label_dim, relations.len());
        let root = vs.add("parse.root", Tensor::new(truncated_normal(rng, hidden, INIT_STD), &[1, hidden])?)?;
        let arc_head = Linear::new(vs, "parse.arc_head", hidden, a, rng)?;
        let arc_dep = Linear::new(vs, "parse.arc_dep", hidden, a, rng)?;
        let label_head = Linear::new(vs, "parse.label_head", hidden, l, rng)?;
        let label_dep = Linear::new(vs, "parse.label_dep", hidden, l, rng)?;
        let arc_u = vs.add("parse.arc_u", Tensor::zeros(&[a + 1, a]))?;
        let label_u = vs.add("parse.label_u", Tensor::zeros(&[l + 1, r * (l + 1)]))?;
        Ok(BiaffineHead { root, arc_head, arc_dep, label_head, label_dep, arc_u, label_u, relations, config })
    }

    pub fn relation_index(&self, deprel: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == deprel)
    }

    pub fn features(&self, vs: &VarStore, words: &Tensor) -> Result<ParseFeatures> {
        let n = words.shape()[0];
        if n == 0 {
            return Err(Error::Data("cannot parse an empty sentence".into()));
        }
        let x = Tensor::concat_rows(&[vs.get(self.root).clone(), words.clone()])?;
        Ok(ParseFeatures {
            arc_head: with_bias_column(&self.arc_head.forward(vs, &x)?.gelu()?)?,
            arc_dep: self.arc_dep.forward(vs, &x)?.gelu()?,
            label_head: with_bias_column(&self.label_head.forward(vs, &x)?.gelu()?)?,
            label_dep: with_bias_column(&self.label_dep.forward(vs, &x)?.gelu()?)?,
            n,
        })
    }

    /// `S[h,d] = [a_h;1]ᵀ U a_d` over nodes `0..=n`, as an `(n+1)×(n+1)` tensor.
    pub fn arc_scores(&self, vs: &VarStore, f: &ParseFeatures) -> Result<Tensor> {
        Ok(f.arc_head.matmul(vs.get(self.arc_u))?.matmul(&f.arc_dep.transpose()?)?)
    }

    /// Head logits per word, `[n×(n+1)]`: row `d-1` scores every candidate
    /// head of word `d`, with the self-arc set to [`MASKED_SCORE`].
    pub fn head_logits(&self, vs: &VarStore, f: &ParseFeatures) -> Result<Tensor> {
        let n = f.n;
        let per_dep = self.arc_scores(vs, f)?.transpose()?;
        let words: Vec<usize> = (1..=n).collect();
        let rows = per_dep.gather_rows(&words)?;
        let mask: Vec<bool> = (0..n * (n + 1)).map(|i| i % (n + 1) == i / (n + 1) + 1).collect();
        Ok(rows.masked_fill(&mask, MASKED_SCORE)?)
    }

    /// Relation logits `[n×R]` for word `d` attached to `heads[d-1]`.
    pub fn label_logits(&self, vs: &VarStore, f: &ParseFeatures, heads: &[usize]) -> Result<Tensor> {
        let n = f.n;
        if heads.len() != n || heads.iter().any(|&h| h > n) {
            return Err(Error::Data(format!("{} heads for {n} words", heads.len())));
        }
        let r = self.relations.len();
        let width = self.config.label_dim + 1;
        let words: Vec<usize> = (1..=n).collect();
        let h = f.label_head.gather_rows(heads)?;
        let d = f.label_dep.gather_rows(&words)?;
        let projected = h.matmul(vs.get(self.label_u))?;
        let tiled = Tensor::concat_cols(&vec![d; r])?;
        let mut block_sum = vec![0.0; r * width * r];
        for k in 0..r {
            for j in 0..width {
                block_sum[(k * width + j) * r + k] = 1.0;
            }
        }
        let block_sum = Tensor::new(block_sum, &[r * width, r])?;
        Ok(projected.mul(&tiled)?.matmul(&block_sum)?)
    }

    /// Arc cross-entropy plus relation cross-entropy at the gold arcs.
    pub fn loss(&self, vs: &VarStore, words: &Tensor, heads: &[usize], relations: &[usize]) -> Result<Tensor> {
        let f = self.features(vs, words)?;
        let arc = self.head_logits(vs, &f)?.cross_entropy(heads)?;
        let label = self.label_logits(vs, &f, heads)?.cross_entropy(relations)?;
        Ok(arc.add(&label)?)
    }

    /// Decoding scores with forbidden entries at −∞.
    pub fn score_matrix(&self, vs: &VarStore, f: &ParseFeatures) -> Result<ScoreMatrix> {
        let s = self.arc_scores(vs, f)?;
        let mut m = ScoreMatrix::new(f.n + 1, s.to_vec())?;
        m.mask_invalid();
        Ok(m)
    }

    /// Full label score table `[(n+1)·(n+1)×R]`; row `h·(n+1)+d` holds the
    /// relation scores of arc `h → d`.
    pub fn all_label_scores(&self, vs: &VarStore, f: &ParseFeatures) -> Result<Vec<Vec<f32>>> {
        let size = f.n + 1;
        let r = self.relations.len();
        let width = self.config.label_dim + 1;
        let projected = f.label_head.matmul(vs.get(self.label_u))?;
        let (p, d) = (projected.data(), f.label_dep.data());
        let mut out = Vec::with_capacity(size * size);
        for h in 0..size {
            for dep in 0..size {
                out.push(
                    (0..r)
                        .map(|k| {
                            (0..width)
                                .map(|j| p[h * r * width + k * width + j] * d[dep * width + j])
                                .sum()
                        })
                        .collect(),
                );
            }
        }
        Ok(out)
    }

    /// Tree-decoded heads and the argmax relation along each predicted arc.
    /// When the inventory has a `root` relation, it is assigned to the root
    /// attachment and excluded everywhere else.
    pub fn predict(&self, vs: &VarStore, words: &Tensor) -> Result<(Vec<usize>, Vec<usize>)> {
        let f = self.features(vs, words)?;
        let heads = decode_tree(&self.score_matrix(vs, &f)?)?;
        let logits = self.label_logits(vs, &f, &heads)?;
        let root = self.relation_index(ROOT_RELATION);
        let r = self.relations.len();
        let labels = heads
            .iter()
            .zip(logits.data().chunks(r))
            .map(|(&h, row)| match root {
                Some(k) if h == 0 => k,
                Some(k) if r > 1 => {
                    let mut row = row.to_vec();
                    row[k] = f32::NEG_INFINITY;
                    argmax(&row)
                }
                _ => argmax(row),
            })
            .collect();
        Ok((heads, labels))
    }

    /// Argmax relation along the given (gold) arcs.
    pub fn label_gold_arcs(&self, vs: &VarStore, words: &Tensor, heads: &[usize]) -> Result<Vec<usize>> {
        let f = self.features(vs, words)?;
        Ok(argmax_rows(&self.label_logits(vs, &f, heads)?))
    }
}

fn with_bias_column(x: &Tensor) -> Result<Tensor> {
    let ones = Tensor::ones(&[x.shape()[0], 1]);
    Ok(Tensor::concat_cols(&[x.clone(), ones])?)
}

/// Mean-pooled sequence classifier.
#[derive(Clone, Debug)]
pub struct SequenceHead {
    pub output: Linear,
    pub labels: Vec<String>,
    /// Pool over the separator unit as well as the text units.
    pub include_separator: bool,
}

impl SequenceHead {
    pub fn new(vs: &mut VarStore, hidden: usize, labels: Vec<String>, include_separator: bool, rng: &mut impl Rng) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("classifier needs at least one label".into()));
        }
        let output = Linear::new(vs, "classify.output", hidden, labels.len(), rng)?;
        Ok(SequenceHead { output, labels, include_separator })
    }

    /// Mean over the first `num_text` rows (plus the separator row if
    /// enabled) of `encoded`, then the linear map; returns `[1×classes]`.
    pub fn logits(&self, vs: &VarStore, encoded: &Tensor, num_text: usize) -> Result<Tensor> {
        let rows = num_text + usize::from(self.include_separator);
        if rows == 0 {
            return Err(Error::Data("nothing to pool: empty text without separator".into()));
        }
        let idx: Vec<usize> = (0..rows).collect();
        let hidden = encoded.shape()[1];
        let pooled = encoded.gather_rows(&idx)?.mean_rows()?.reshape(&[1, hidden])?;
        self.output.forward(vs, &pooled)
    }

    pub fn loss(&self, vs: &VarStore, encoded: &Tensor, num_text: usize, label: usize) -> Result<Tensor> {
        Ok(self.logits(vs, encoded, num_text)?.cross_entropy(&[label])?)
    }

    pub fn predict(&self, vs: &VarStore, encoded: &Tensor, num_text: usize) -> Result<usize> {
        Ok(argmax(self.logits(vs, encoded, num_text)?.data()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pixdial_tensor::rng::{stream_rng, Stream};

    fn rows(data: Vec<f32>, n: usize, d: usize) -> Tensor {
        Tensor::new(data, &[n, d]).unwrap()
    }

    #[test]
    fn first_patch_pooling_uses_span_starts() {
        let enc = rows((0..40).map(|v| v as f32).collect(), 10, 4);
        let w = word_representations(&enc, &[(0, 3), (4, 9)], WordPooling::First).unwrap();
        assert_eq!(w.row(0), enc.row(0));
        assert_eq!(w.row(1), enc.row(4));
        let m = word_representations(&enc, &[(0, 1)], WordPooling::Mean).unwrap();
        assert_eq!(m.row(0), &[2.0, 3.0, 4.0, 5.0]);
        assert!(word_representations(&enc, &[], WordPooling::First).is_err());
        assert!(word_representations(&enc, &[(9, 10)], WordPooling::First).is_err());
    }

    #[test]
    fn zero_pos_head_gives_log17() {
        let mut vs = VarStore::new();
        let head = PosHead::new(&mut vs, 4, &mut stream_rng(0, Stream::Init)).unwrap();
        vs.set(head.output.weight, Tensor::zeros(&[4, 17])).unwrap();
        let words = rows(vec![0.3; 8], 2, 4);
        let loss = head.loss(&vs, &words, &[Upos::Noun, Upos::Verb]).unwrap().item();
        assert!((loss - 17f32.ln()).abs() < 1e-5);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    fn parser(relations: usize) -> (VarStore, BiaffineHead) {
        let mut vs = VarStore::new();
        let labels = (0..relations).map(|i| format!("r{i}")).collect();
        let cfg = BiaffineConfig { arc_dim: 3, label_dim: 2 };
        let head = BiaffineHead::new(&mut vs, 4, labels, cfg, &mut stream_rng(3, Stream::Init)).unwrap();
        (vs, head)
    }

    #[test]
    fn zero_biaffine_still_decodes() {
        let (vs, head) = parser(2);
        let words = rows((0..12).map(|v| v as f32 * 0.1).collect(), 3, 4);
        let f = head.features(&vs, &words).unwrap();
        let m = head.score_matrix(&vs, &f).unwrap();
        for h in 0..4 {
            assert_eq!(m.get(h, h), f32::NEG_INFINITY);
            assert_eq!(m.get(h, 0), f32::NEG_INFINITY);
        }
        let (heads, _) = head.predict(&vs, &words).unwrap();
        assert!(is_single_root_tree(&heads));
    }

    #[test]
    fn arc_scores_match_bilinear_form() {
        let (mut vs, head) = parser(1);
        let u: Vec<f32> = (0..12).map(|v| (v as f32 - 5.0) * 0.1).collect();
        vs.set(head.arc_u, Tensor::new(u.clone(), &[4, 3]).unwrap()).unwrap();
        let words = rows((0..8).map(|v| (v as f32 - 3.0) * 0.2).collect(), 2, 4);
        let f = head.features(&vs, &words).unwrap();
        let s = head.arc_scores(&vs, &f).unwrap();
        let (ah, ad) = (f.arc_head.data(), f.arc_dep.data());
        for h in 0..3 {
            for d in 0..3 {
                let mut want = 0.0;
                for i in 0..4 {
                    for j in 0..3 {
                        want += ah[h * 4 + i] * u[i * 3 + j] * ad[d * 3 + j];
                    }
                }
                assert!((s.data()[h * 3 + d] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn label_logits_agree_with_full_table() {
        let (mut vs, head) = parser(3);
        let mut rng = stream_rng(8, Stream::Init);
        vs.set(head.label_u, Tensor::new(truncated_normal(&mut rng, 3 * 9, 1.0), &[3, 9]).unwrap()).unwrap();
        let words = rows(truncated_normal(&mut rng, 12, 1.0), 3, 4);
        let f = head.features(&vs, &words).unwrap();
        let heads = [2, 0, 2];
        let gathered = head.label_logits(&vs, &f, &heads).unwrap();
        let table = head.all_label_scores(&vs, &f).unwrap();
        for (i, &h) in heads.iter().enumerate() {
            let full = &table[h * 4 + i + 1];
            for (k, &expected) in full.iter().enumerate().take(3) {
                assert!((gathered.data()[i * 3 + k] - expected).abs() < 1e-5);
            }
        }
        let labels = head.label_gold_arcs(&vs, &words, &heads).unwrap();
        for (i, &h) in heads.iter().enumerate() {
            assert_eq!(labels[i], argmax(&table[h * 4 + i + 1]));
        }
    }

    #[test]
    fn pooling_ignores_padding_rows() {
        let mut vs = VarStore::new();
        let head = SequenceHead::new(&mut vs, 2, vec!["a".into(), "b".into()], true, &mut stream_rng(1, Stream::Init)).unwrap();
        let short = rows(vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0], 3, 2);
        let long = rows(vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 9.0, 9.0], 4, 2);
        let a = head.logits(&vs, &short, 2).unwrap();
        let b = head.logits(&vs, &long, 2).unwrap();
        assert_eq!(a.data(), b.data());
        let single = head.logits(&vs, &rows(vec![1.0, 2.0], 1, 2), 0).unwrap();
        assert_eq!(a.data(), single.data());
    }
}
