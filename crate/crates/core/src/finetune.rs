//! Supervised fine-tuning for tagging, parsing and classification.

use std::collections::BTreeSet;

use pixdial_tensor::rng::{stream_rng, SeededRng, Stream};
use pixdial_tensor::{clip_grad_norm, AdamW, AdamWConfig, LrSchedule, Tensor, VarStore, IGNORE_INDEX};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSet, LabeledText, Sentence, Upos};
use crate::error::{Error, Result};
use crate::heads::{word_representations, BiaffineConfig, BiaffineHead, PosHead, SequenceHead, WordPooling};
use crate::metrics::{attachment_counts, classification_counts, tagging_counts};
use crate::model::{Backbone, EncoderInput, FrontEndKind};

/// Relation given to words that fell outside the encoder window.
pub const FALLBACK_DEPREL: &str = "dep";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pos,
    Parse,
    Classify,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Pos => "pos",
            Task::Parse => "parse",
            Task::Classify => "classify",
        }
    }

    /// Name of the dev metric driving early stopping.
    pub fn metric(self) -> &'static str {
        match self {
            Task::Pos => "pos_acc",
            Task::Parse => "las",
            Task::Classify => "acc",
        }
    }
}

/// A value that may differ between the pixel and subword front-ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerFrontEnd<T> {
    pub pixel: T,
    pub subword: T,
}

impl<T: Copy> PerFrontEnd<T> {
    pub fn both(v: T) -> Self {
        PerFrontEnd { pixel: v, subword: v }
    }

    pub fn get(&self, kind: FrontEndKind) -> T {
        match kind {
            FrontEndKind::Pixel => self.pixel,
            FrontEndKind::Subword => self.subword,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub task: Task,
    pub max_steps: PerFrontEnd<usize>,
    pub learning_rate: PerFrontEnd<f32>,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub lr_decay: bool,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub grad_clip: f32,
    /// Evaluate on dev every this many steps (and after the last step).
    pub eval_every: usize,
    /// Stop after this many evaluations without dev improvement; 0 disables.
    pub patience: usize,
    pub word_pooling: WordPooling,
    pub pool_separator: bool,
    pub biaffine: BiaffineConfig,
    pub seeds: Vec<u64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            task: Task::Pos,
            max_steps: PerFrontEnd::both(300),
            learning_rate: PerFrontEnd::both(2e-3),
            batch_size: 8,
            warmup_steps: 10,
            lr_decay: false,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 5.0,
            eval_every: 25,
            patience: 5,
            word_pooling: WordPooling::First,
            pool_separator: true,
            biaffine: BiaffineConfig::default(),
            seeds: vec![1],
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("finetune.batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("finetune.eval_every must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("finetune.seeds must list at least one seed".into()));
        }
        if self.biaffine.arc_dim == 0 || self.biaffine.label_dim == 0 {
            return Err(Error::Config("finetune.biaffine dimensions must be positive".into()));
        }
        for kind in [FrontEndKind::Pixel, FrontEndKind::Subword] {
            self.optimizer(kind).validate()?;
        }
        Ok(())
    }

    pub fn optimizer(&self, kind: FrontEndKind) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate.get(kind),
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self, kind: FrontEndKind) -> LrSchedule {
        LrSchedule {
            peak: self.learning_rate.get(kind),
            warmup_steps: self.warmup_steps,
            total_steps: self.max_steps.get(kind),
            decay: self.lr_decay,
        }
    }
}

/// Task data in either shape.
#[derive(Clone, Copy, Debug)]
pub enum TaskData<'a> {
    Treebank(&'a [Sentence]),
    Labeled(&'a [LabeledText]),
}

impl TaskData<'_> {
    pub fn len(&self) -> usize {
        match self {
            TaskData::Treebank(s) => s.len(),
            TaskData::Labeled(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub enum TaskHead {
    Pos(PosHead),
    Parse(BiaffineHead),
    Classify(SequenceHead),
}

/// Backbone plus one task head.
#[derive(Clone, Debug)]
pub struct TaskModel {
    pub backbone: Backbone,
    pub head: TaskHead,
    pub pooling: WordPooling,
}

/// Sorted relation inventory of a treebank.
pub fn relation_inventory(sentences: &[Sentence]) -> Vec<String> {
    let set: BTreeSet<&str> = sentences
        .iter()
        .flat_map(|s| s.tokens.iter().filter_map(|t| t.deprel.as_deref()))
        .collect();
    set.into_iter().map(str::to_string).collect()
}

fn check_task_data(task: Task, data: TaskData<'_>, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("{what} split is empty")));
    }
    match (task, data) {
        (Task::Pos, TaskData::Treebank(s)) => {
            if let Some(i) = s.iter().position(|s| !s.has_upos()) {
                return Err(Error::InvalidSentence(format!("{what} sentence {} lacks UPOS tags", i + 1)));
            }
        }
        (Task::Parse, TaskData::Treebank(s)) => {
            for (i, sentence) in s.iter().enumerate() {
                if !sentence.has_tree() {
                    return Err(Error::InvalidSentence(format!("{what} sentence {} lacks a tree", i + 1)));
                }
                sentence
                    .validate()
                    .map_err(|e| Error::InvalidSentence(format!("{what} sentence {}: {e}", i + 1)))?;
            }
        }
        (Task::Classify, TaskData::Labeled(_)) => {}
        (task, _) => return Err(Error::Data(format!("task {} got the wrong kind of data", task.name()))),
    }
    Ok(())
}

impl TaskModel {
    /// Adds the head for `cfg.task` to `vs`. Parser relations and classifier
    /// labels are taken from `train`.
    pub fn new(vs: &mut VarStore, backbone: Backbone, cfg: &FinetuneConfig, train: TaskData<'_>, rng: &mut impl Rng) -> Result<Self> {
        check_task_data(cfg.task, train, "train")?;
        let hidden = backbone.hidden_dim();
        let head = match (cfg.task, train) {
            (Task::Pos, _) => TaskHead::Pos(PosHead::new(vs, hidden, rng)?),
            (Task::Parse, TaskData::Treebank(s)) => {
                TaskHead::Parse(BiaffineHead::new(vs, hidden, relation_inventory(s), cfg.biaffine, rng)?)
            }
            (Task::Classify, TaskData::Labeled(rows)) => {
                let labels = LabelSet::from_texts(rows).labels().to_vec();
                TaskHead::Classify(SequenceHead::new(vs, hidden, labels, cfg.pool_separator, rng)?)
            }
            _ => unreachable!("checked above"),
        };
        Ok(TaskModel { backbone, head, pooling: cfg.word_pooling })
    }

    /// Rebuilds a model around an existing head (e.g. after loading).
    pub fn from_parts(backbone: Backbone, head: TaskHead, pooling: WordPooling) -> Self {
        TaskModel { backbone, head, pooling }
    }

    pub fn task(&self) -> Task {
        match self.head {
            TaskHead::Pos(_) => Task::Pos,
            TaskHead::Parse(_) => Task::Parse,
            TaskHead::Classify(_) => Task::Classify,
        }
    }

    /// Encodes every item of `data` once; sentences whose words did not all
    /// fit keep the fitting prefix.
    pub fn prepare(&self, data: TaskData<'_>) -> Result<Vec<Example>> {
        match data {
            TaskData::Treebank(sentences) => sentences
                .iter()
                .map(|s| {
                    let input = self.backbone.prepare_words(&s.forms())?;
                    Ok(Example { input, target: Target::Sentence(s.clone()) })
                })
                .collect(),
            TaskData::Labeled(rows) => {
                let labels = match &self.head {
                    TaskHead::Classify(h) => &h.labels,
                    _ => return Err(Error::Data("labeled data needs a classification head".into())),
                };
                rows.iter()
                    .map(|r| {
                        let label = labels
                            .iter()
                            .position(|l| *l == r.label)
                            .ok_or_else(|| Error::UnknownLabel { label: r.label.clone() })?;
                        Ok(Example { input: self.backbone.prepare_text(&r.text)?, target: Target::Label(label) })
                    })
                    .collect()
            }
        }
    }

    fn words(&self, vs: &VarStore, example: &Example, rng: Option<&mut SeededRng>) -> Result<(Tensor, usize)> {
        let encoded = self.backbone.encode_active(vs, &example.input, rng)?;
        let spans = example.input.word_spans.as_deref().unwrap_or(&[]);
        Ok((word_representations(&encoded, spans, self.pooling)?, spans.len()))
    }

    /// Training loss of one example, or `None` when nothing in it is
    /// trainable (e.g. an empty text or no fitted words).
    pub fn loss(&self, vs: &VarStore, example: &Example, rng: Option<&mut SeededRng>) -> Result<Option<Tensor>> {
        match (&self.head, &example.target) {
            (TaskHead::Pos(head), Target::Sentence(s)) => {
                if example.fitted_words() == 0 {
                    return Ok(None);
                }
                let (words, n) = self.words(vs, example, rng)?;
                let gold: Vec<Upos> = s.tokens[..n].iter().map(|t| t.upos.expect("checked")).collect();
                Ok(Some(head.loss(vs, &words, &gold)?))
            }
            (TaskHead::Parse(head), Target::Sentence(s)) => {
                if example.fitted_words() == 0 {
                    return Ok(None);
                }
                let (words, n) = self.words(vs, example, rng)?;
                // Arcs to words outside the window are not scored.
                let heads: Vec<usize> = s.tokens[..n]
                    .iter()
                    .map(|t| t.head.expect("checked"))
                    .map(|h| if h <= n { h } else { IGNORE_INDEX })
                    .collect();
                let f = head.features(vs, &words)?;
                let arc = head.head_logits(vs, &f)?.cross_entropy(&heads)?;
                let kept: Vec<usize> = (0..n).filter(|&i| heads[i] != IGNORE_INDEX).collect();
                if kept.is_empty() {
                    return Ok(Some(arc));
                }
                let rels: Vec<usize> = s.tokens[..n]
                    .iter()
                    .map(|t| head.relation_index(t.deprel.as_deref().expect("checked")).unwrap_or(IGNORE_INDEX))
                    .collect();
                let safe_heads: Vec<usize> = heads.iter().map(|&h| if h == IGNORE_INDEX { 0 } else { h }).collect();
                let rels: Vec<usize> = (0..n).map(|i| if heads[i] == IGNORE_INDEX { IGNORE_INDEX } else { rels[i] }).collect();
                let label = head.label_logits(vs, &f, &safe_heads)?.cross_entropy(&rels)?;
                Ok(Some(arc.add(&label)?))
            }
            (TaskHead::Classify(head), Target::Label(label)) => {
                let encoded = self.backbone.encode_active(vs, &example.input, rng)?;
                Ok(Some(head.loss(vs, &encoded, example.input.num_text, *label)?))
            }
            _ => Err(Error::Data("example does not match the task head".into())),
        }
    }

    /// Predicted annotation for one example.
    pub fn predict(&self, vs: &VarStore, example: &Example) -> Result<Prediction> {
        match (&self.head, &example.target) {
            (TaskHead::Pos(head), Target::Sentence(s)) => {
                let mut out = strip_annotations(s);
                if example.fitted_words() > 0 {
                    let (words, _) = self.words(vs, example, None)?;
                    for (t, tag) in out.tokens.iter_mut().zip(head.predict(vs, &words)?) {
                        t.upos = Some(tag);
                    }
                }
                out.tokens.iter_mut().filter(|t| t.upos.is_none()).for_each(|t| t.upos = Some(Upos::X));
                Ok(Prediction::Sentence(out))
            }
            (TaskHead::Parse(head), Target::Sentence(s)) => {
                let mut out = strip_annotations(s);
                let n = example.fitted_words();
                if n > 0 {
                    let (words, _) = self.words(vs, example, None)?;
                    let (heads, rels) = head.predict(vs, &words)?;
                    for (i, t) in out.tokens.iter_mut().take(n).enumerate() {
                        t.head = Some(heads[i]);
                        t.deprel = Some(head.relations[rels[i]].clone());
                    }
                }
                // Words beyond the window attach to the predicted root word.
                let root = out.tokens.iter().find(|t| t.head == Some(0)).map_or(0, |t| t.id);
                for t in out.tokens.iter_mut().skip(n) {
                    t.head = Some(root);
                    t.deprel = Some(if root == 0 { "root" } else { FALLBACK_DEPREL }.to_string());
                }
                Ok(Prediction::Sentence(out))
            }
            (TaskHead::Classify(head), Target::Label(_)) => {
                let encoded = self.backbone.encode_active(vs, &example.input, None)?;
                Ok(Prediction::Label(head.predict(vs, &encoded, example.input.num_text)?))
            }
            _ => Err(Error::Data("example does not match the task head".into())),
        }
    }

    pub fn predict_all(&self, vs: &VarStore, examples: &[Example]) -> Result<Vec<Prediction>> {
        let frozen = vs.detached();
        examples.iter().map(|e| self.predict(&frozen, e)).collect()
    }

    /// Task metric (percent) over `examples`.
    pub fn evaluate(&self, vs: &VarStore, examples: &[Example]) -> Result<f64> {
        let preds = self.predict_all(vs, examples)?;
        score(self.task(), examples, &preds)
    }
}

/// Copies a sentence with UPOS, head and relation cleared.
pub fn strip_annotations(s: &Sentence) -> Sentence {
    let mut out = s.clone();
    for t in &mut out.tokens {
        t.upos = None;
        t.head = None;
        t.deprel = None;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Sentence(Sentence),
    Label(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Sentence(Sentence),
    Label(usize),
}

#[derive(Clone, Debug)]
pub struct Example {
    pub input: EncoderInput,
    pub target: Target,
}

impl Example {
    pub fn fitted_words(&self) -> usize {
        self.input.word_spans.as_ref().map_or(0, Vec::len)
    }
}

/// Splits predictions into sentences or label indices alongside gold.
pub fn predicted_sentences(preds: &[Prediction]) -> Option<Vec<Sentence>> {
    preds
        .iter()
        .map(|p| match p {
            Prediction::Sentence(s) => Some(s.clone()),
            Prediction::Label(_) => None,
        })
        .collect()
}

pub fn predicted_labels(preds: &[Prediction]) -> Option<Vec<usize>> {
    preds
        .iter()
        .map(|p| match p {
            Prediction::Label(l) => Some(*l),
            Prediction::Sentence(_) => None,
        })
        .collect()
}

fn score(task: Task, examples: &[Example], preds: &[Prediction]) -> Result<f64> {
    let mismatch = || Error::Data("predictions do not match the task".into());
    match task {
        Task::Pos | Task::Parse => {
            let gold: Vec<Sentence> = examples
                .iter()
                .map(|e| match &e.target {
                    Target::Sentence(s) => Ok(s.clone()),
                    Target::Label(_) => Err(mismatch()),
                })
                .collect::<Result<_>>()?;
            let pred = predicted_sentences(preds).ok_or_else(mismatch)?;
            let count = if task == Task::Pos {
                tagging_counts(&gold, &pred)?
            } else {
                attachment_counts(&gold, &pred)?.labeled
            };
            Ok(count.percent().expect("non-empty"))
        }
        Task::Classify => {
            let gold: Vec<usize> = examples
                .iter()
                .map(|e| match e.target {
                    Target::Label(l) => Ok(l),
                    Target::Sentence(_) => Err(mismatch()),
                })
                .collect::<Result<_>>()?;
            let pred = predicted_labels(preds).ok_or_else(mismatch)?;
            Ok(classification_counts(&gold, &pred)?.percent().expect("non-empty"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevPoint {
    pub step: usize,
    pub metric: f64,
    pub train_loss: f32,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Parameters at the best dev evaluation.
    pub best: VarStore,
    pub best_step: usize,
    pub best_metric: f64,
    pub trace: Vec<DevPoint>,
    pub steps_run: usize,
}

pub fn dev_trace_csv(trace: &[DevPoint]) -> String {
    let mut s = String::from("step,dev_metric,train_loss\n");
    for p in trace {
        s.push_str(&format!("{},{:.4},{}\n", p.step, p.metric, p.train_loss));
    }
    s
}

/// AdamW fine-tuning with periodic dev evaluation and early stopping. The
/// store is updated in place; the outcome carries a copy of the best one.
pub fn finetune(
    vs: &mut VarStore,
    model: &TaskModel,
    train: &[Example],
    dev: &[Example],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Data("fine-tuning needs non-empty train and dev splits".into()));
    }
    let kind = model.backbone.kind();
    let max_steps = cfg.max_steps.get(kind);
    let schedule = cfg.schedule(kind);
    let mut optimizer = AdamW::new(cfg.optimizer(kind), vs)?;
    let mut shuffle_rng = stream_rng(seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(seed, Stream::Dropout);
    let mut order: Vec<usize> = Vec::new();

    let initial = model.evaluate(vs, dev)?;
    let mut trace = vec![DevPoint { step: 0, metric: initial, train_loss: f32::NAN }];
    let mut best = (vs.clone(), 0, initial);
    let mut stale = 0;
    let mut window_loss = (0.0f32, 0usize);
    let mut steps_run = 0;
    for step in 0..max_steps {
        vs.zero_grad();
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order.shuffle(&mut shuffle_rng);
                order.reverse();
            }
            batch.push(order.pop().expect("refilled above"));
        }
        let scale = 1.0 / cfg.batch_size as f32;
        for &i in &batch {
            if let Some(loss) = model.loss(vs, &train[i], Some(&mut dropout_rng))? {
                window_loss.0 += loss.item() * scale;
                loss.scale(scale)?.backward()?;
            }
        }
        window_loss.1 += 1;
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(vs, cfg.grad_clip);
        }
        optimizer.step_with_lr(vs, schedule.at(step))?;
        steps_run = step + 1;

        if steps_run % cfg.eval_every == 0 || steps_run == max_steps {
            let metric = model.evaluate(vs, dev)?;
            let train_loss = window_loss.0 / window_loss.1.max(1) as f32;
            window_loss = (0.0, 0);
            log::info!("{} step {steps_run}: dev {} {metric:.2}, train loss {train_loss:.4}", cfg.task.name(), cfg.task.metric());
            trace.push(DevPoint { step: steps_run, metric, train_loss });
            if metric > best.2 {
                best = (vs.clone(), steps_run, metric);
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    log::info!("early stop at step {steps_run}");
                    break;
                }
            }
        }
    }
    Ok(FinetuneOutcome { best: best.0, best_step: best.1, best_metric: best.2, trace, steps_run })
}
