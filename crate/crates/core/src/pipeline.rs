//! End-to-end commands: pretrain, fine-tune, evaluate, report, render.
//!
//! Layout under `paths.out`:
//!
//! ```text
//! <run>/config.json  checkpoint.pxlm  checkpoint_step<N>.pxlm  loss.csv      (pretrain)
//! <run>/config.json  <seed>/{config.json, model.pxlm, dev_trace.csv}         (finetune)
//! <run>/config.json  overall.csv  per_tag.csv  by_distance.csv  summary.csv
//!       comparison.txt  predictions/<run>/<seed>/rate_<r>.{conllu,tsv}       (evaluate)
//! <run>/line_<i>.png  spans.txt                                              (render)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pixdial_tensor::rng::{stream_rng, Stream};
use pixdial_tensor::VarStore;
use serde::{Deserialize, Serialize};

use crate::bpe::{train_bpe, BpeVocab};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::corpus::{
    load_classification_file, make_dialect_eval, read_conllu, read_lines, serialize_conllu, serialize_tsv,
    LabeledText, Sentence,
};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::finetune::{
    dev_trace_csv, finetune, predicted_labels, predicted_sentences, DevPoint, FinetuneConfig, Task, TaskData,
    TaskHead, TaskModel,
};
use crate::heads::{BiaffineConfig, BiaffineHead, PosHead, SequenceHead, WordPooling};
use crate::metrics::{fmt1, fmt_mean_std, mean_std, text_table, EvalReport};
use crate::model::{is_backbone_param, Backbone, FrontEndKind};
use crate::pretrain::{loss_csv, prepare_corpus, pretrain, LossRecord, Objective};
use crate::render::{export_png, render_text, render_words, word_patch_count, Perturber};

pub const PRETRAIN_CHECKPOINT: &str = "checkpoint.pxlm";
pub const MODEL_FILE: &str = "model.pxlm";

/// Everything needed to rebuild a model from a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub front_end: FrontEndKind,
    pub encoder: EncoderConfig,
    pub max_len: usize,
    /// Serialized BPE vocabulary for the subword front-end.
    pub vocab: Option<String>,
    pub head: Option<HeadMeta>,
    pub seed: u64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadMeta {
    pub task: Task,
    pub relations: Vec<String>,
    pub labels: Vec<String>,
    pub word_pooling: WordPooling,
    pub pool_separator: bool,
    pub biaffine: BiaffineConfig,
}

impl ModelMeta {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Checkpoint(format!("bad model metadata: {e}")))
    }

    fn parse_vocab(&self) -> Result<Option<BpeVocab>> {
        self.vocab.as_deref().map(BpeVocab::parse_file_string).transpose()
    }

    /// Backbone with the right shapes; values are placeholders until restored.
    fn backbone(&self, vs: &mut VarStore, seed: u64) -> Result<Backbone> {
        let mut rng = stream_rng(seed, Stream::Init);
        match (self.front_end, self.parse_vocab()?) {
            (FrontEndKind::Pixel, _) => Backbone::pixel(vs, &self.encoder, self.max_len, &mut rng),
            (FrontEndKind::Subword, Some(v)) => Backbone::subword(vs, &self.encoder, v, self.max_len, &mut rng),
            (FrontEndKind::Subword, None) => Err(Error::Checkpoint("subword model without a vocabulary".into())),
        }
    }
}

fn head_meta(model: &TaskModel, cfg: &FinetuneConfig) -> HeadMeta {
    let (relations, labels) = match &model.head {
        TaskHead::Parse(h) => (h.relations.clone(), Vec::new()),
        TaskHead::Classify(h) => (Vec::new(), h.labels.clone()),
        TaskHead::Pos(_) => (Vec::new(), Vec::new()),
    };
    HeadMeta {
        task: model.task(),
        relations,
        labels,
        word_pooling: model.pooling,
        pool_separator: cfg.pool_separator,
        biaffine: cfg.biaffine,
    }
}

/// Rebuilds a fine-tuned model with every parameter restored.
pub fn load_task_model(path: &Path) -> Result<(VarStore, TaskModel, ModelMeta)> {
    let ck = Checkpoint::load(path)?;
    let meta = ModelMeta::from_checkpoint(&ck)?;
    let head_meta = meta
        .head
        .clone()
        .ok_or_else(|| Error::Checkpoint(format!("{} holds no task head", path.display())))?;
    let mut vs = VarStore::new();
    let backbone = meta.backbone(&mut vs, meta.seed)?;
    let mut rng = stream_rng(meta.seed, Stream::Init);
    let hidden = backbone.hidden_dim();
    let head = match head_meta.task {
        Task::Pos => TaskHead::Pos(PosHead::new(&mut vs, hidden, &mut rng)?),
        Task::Parse => TaskHead::Parse(BiaffineHead::new(
            &mut vs,
            hidden,
            head_meta.relations.clone(),
            head_meta.biaffine,
            &mut rng,
        )?),
        Task::Classify => TaskHead::Classify(SequenceHead::new(
            &mut vs,
            hidden,
            head_meta.labels.clone(),
            head_meta.pool_separator,
            &mut rng,
        )?),
    };
    ck.restore_into(&mut vs, |_| true)?;
    if ck.tensors.len() != vs.len() {
        return Err(Error::Checkpoint(format!(
            "{} holds {} tensors but the model has {}",
            path.display(),
            ck.tensors.len(),
            vs.len()
        )));
    }
    Ok((vs, TaskModel::from_parts(backbone, head, head_meta.word_pooling), meta))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = path.as_deref().ok_or_else(|| Error::Config(format!("{key} is not set")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{key} {} does not exist", p.display())));
    }
    Ok(p)
}

#[derive(Clone, Debug)]
pub struct PretrainSummary {
    pub dir: PathBuf,
    pub curve: Vec<LossRecord>,
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainSummary> {
    let corpus_path = require(&cfg.paths.corpus, "paths.corpus")?;
    let dir = cfg.run_dir();
    let lines = read_lines(corpus_path)?;
    let pc = &cfg.pretrain;
    let kind = cfg.model.front_end;
    let max_len = cfg.max_len(kind);
    let mut vs = VarStore::new();
    let mut rng = stream_rng(pc.seed, Stream::Init);
    let (backbone, vocab) = match kind {
        FrontEndKind::Pixel => (Backbone::pixel(&mut vs, &cfg.model.encoder, max_len, &mut rng)?, None),
        FrontEndKind::Subword => {
            let vocab = train_bpe(&lines, cfg.model.vocab_size)?;
            let text = vocab.to_file_string();
            (Backbone::subword(&mut vs, &cfg.model.encoder, vocab, max_len, &mut rng)?, Some(text))
        }
    };
    let objective = Objective::for_backbone(&mut vs, &backbone, pc, &mut rng)?;
    let inputs = prepare_corpus(&backbone, &objective, pc, &lines)?;
    create_dir(&dir)?;
    cfg.write_snapshot(&dir)?;
    if let Some(v) = &vocab {
        write_file(&dir.join("vocab.txt"), v)?;
    }
    let meta = |step: usize| ModelMeta {
        front_end: kind,
        encoder: cfg.model.encoder.clone(),
        max_len,
        vocab: vocab.clone(),
        head: None,
        seed: pc.seed,
        step,
    };
    let to_json = |m: ModelMeta| serde_json::to_value(m).expect("serializable");
    log::info!("pretraining {} front-end on {} lines for {} steps", kind.name(), inputs.len(), pc.steps);
    let curve = pretrain(&mut vs, &backbone, &objective, &inputs, pc, |step, vs| {
        Checkpoint::from_store(to_json(meta(step)), vs).save(dir.join(format!("checkpoint_step{step}.pxlm")))
    })?;
    Checkpoint::from_store(to_json(meta(pc.steps)), &vs).save(dir.join(PRETRAIN_CHECKPOINT))?;
    write_file(&dir.join("loss.csv"), loss_csv(&curve))?;
    Ok(PretrainSummary { dir, curve })
}

/// Loaded task data for either shape.
#[derive(Clone, Debug)]
pub enum Dataset {
    Treebank(Vec<Sentence>),
    Labeled(Vec<LabeledText>),
}

impl Dataset {
    pub fn load(task: Task, path: &Path) -> Result<Self> {
        Ok(match task {
            Task::Pos | Task::Parse => Dataset::Treebank(read_conllu(path)?),
            Task::Classify => Dataset::Labeled(load_classification_file(path)?),
        })
    }

    pub fn as_task_data(&self) -> TaskData<'_> {
        match self {
            Dataset::Treebank(s) => TaskData::Treebank(s),
            Dataset::Labeled(l) => TaskData::Labeled(l),
        }
    }

    pub fn texts(&self) -> Vec<String> {
        match self {
            Dataset::Treebank(s) => s.iter().map(Sentence::text).collect(),
            Dataset::Labeled(l) => l.iter().map(|r| r.text.clone()).collect(),
        }
    }

    /// Copy with perturbed surface text; rate 0 returns an exact copy.
    pub fn perturbed(&self, rate: f64, seed: u64) -> Result<Self> {
        Ok(match self {
            Dataset::Treebank(s) => Dataset::Treebank(make_dialect_eval(s, rate, seed)?),
            Dataset::Labeled(rows) => {
                let perturber = Perturber::default();
                let mut rng = stream_rng(seed, Stream::Perturb);
                let rows = rows
                    .iter()
                    .map(|r| {
                        Ok(LabeledText { text: perturber.perturb(&r.text, rate, &mut rng)?, ..r.clone() })
                    })
                    .collect::<Result<_>>()?;
                Dataset::Labeled(rows)
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub best_metric: f64,
    pub best_step: usize,
    pub trace: Vec<DevPoint>,
}

/// Runs `f` over `items` on up to `available_parallelism` threads and
/// returns results in input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(workers) {
        let results: Vec<Result<R>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|item| s.spawn(|| f(item))).collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

pub fn cmd_finetune(cfg: &RunConfig) -> Result<Vec<SeedRun>> {
    let fc = &cfg.finetune;
    let train = Dataset::load(fc.task, require(&cfg.paths.train, "paths.train")?)?;
    let dev = Dataset::load(fc.task, require(&cfg.paths.dev, "paths.dev")?)?;
    let pretrained = match cfg.paths.pretrained.as_ref() {
        Some(_) => {
            let p = require(&cfg.paths.pretrained, "paths.pretrained")?;
            let ck = Checkpoint::load(p)?;
            let meta = ModelMeta::from_checkpoint(&ck)?;
            if meta.front_end != cfg.model.front_end {
                log::warn!(
                    "model.front_end is {} but the pretrained checkpoint is {}; using the checkpoint",
                    cfg.model.front_end.name(),
                    meta.front_end.name()
                );
            }
            Some((ck, meta))
        }
        None => None,
    };
    let base_meta = match &pretrained {
        Some((_, m)) => m.clone(),
        None => {
            let kind = cfg.model.front_end;
            let vocab = match kind {
                FrontEndKind::Pixel => None,
                FrontEndKind::Subword => {
                    let mut texts = train.texts();
                    if let Some(p) = &cfg.paths.corpus {
                        texts.extend(read_lines(p)?);
                    }
                    Some(train_bpe(&texts, cfg.model.vocab_size)?.to_file_string())
                }
            };
            ModelMeta {
                front_end: kind,
                encoder: cfg.model.encoder.clone(),
                max_len: cfg.max_len(kind),
                vocab,
                head: None,
                seed: 0,
                step: 0,
            }
        }
    };
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    cfg.write_snapshot(&dir)?;
    let run_seed = |&seed: &u64| -> Result<SeedRun> {
        let seed_dir = dir.join(seed.to_string());
        create_dir(&seed_dir)?;
        let mut seed_cfg = cfg.clone();
        seed_cfg.finetune.seeds = vec![seed];
        seed_cfg.write_snapshot(&seed_dir)?;

        let mut vs = VarStore::new();
        let backbone = base_meta.backbone(&mut vs, seed)?;
        if let Some((ck, _)) = &pretrained {
            let n = ck.restore_into(&mut vs, is_backbone_param)?;
            log::info!("seed {seed}: restored {n} backbone tensors");
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let model = TaskModel::new(&mut vs, backbone, fc, train.as_task_data(), &mut rng)?;
        let train_ex = model.prepare(train.as_task_data())?;
        let dev_ex = model.prepare(dev.as_task_data())?;
        let truncated = train_ex.iter().filter(|e| e.input.truncated).count();
        if truncated > 0 {
            log::warn!("seed {seed}: {truncated} training items exceed the input window and were cut");
        }
        let outcome = finetune(&mut vs, &model, &train_ex, &dev_ex, fc, seed)?;
        let meta = ModelMeta {
            head: Some(head_meta(&model, fc)),
            seed,
            step: outcome.best_step,
            ..base_meta.clone()
        };
        let meta = serde_json::to_value(meta).expect("serializable");
        Checkpoint::from_store(meta, &outcome.best).save(seed_dir.join(MODEL_FILE))?;
        write_file(&seed_dir.join("dev_trace.csv"), dev_trace_csv(&outcome.trace))?;
        log::info!(
            "seed {seed}: best dev {} {:.2} at step {}",
            fc.task.metric(),
            outcome.best_metric,
            outcome.best_step
        );
        Ok(SeedRun {
            seed,
            dir: seed_dir,
            best_metric: outcome.best_metric,
            best_step: outcome.best_step,
            trace: outcome.trace,
        })
    };
    parallel_map(&fc.seeds, run_seed)
}

/// Seed subdirectories of a fine-tuning run that contain a model.
pub fn seed_dirs(run: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = std::fs::read_dir(run).map_err(|e| Error::io(run, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(run, e))?;
        let name = entry.file_name();
        if let Some(seed) = name.to_str().and_then(|s| s.parse::<u64>().ok()) {
            if entry.path().join(MODEL_FILE).is_file() {
                out.push((seed, entry.path()));
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("no {MODEL_FILE} under {}/<seed>/", run.display())));
    }
    Ok(out)
}

/// One metric value of one evaluated model.
#[derive(Clone, Debug, PartialEq)]
pub struct OverallRow {
    pub run: String,
    pub front_end: String,
    pub seed: u64,
    pub rate: f64,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub run: String,
    pub front_end: String,
    pub rate: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Clone, Debug)]
pub struct EvalOutputs {
    pub dir: PathBuf,
    pub overall: Vec<OverallRow>,
    pub summary: Vec<SummaryRow>,
    pub table: String,
}

/// Values are stored at four decimals so summaries recomputed from the CSV
/// match the ones computed in memory.
fn quantize(v: f64) -> f64 {
    format!("{v:.4}").parse().expect("formatted float")
}

fn rate_label(rate: f64) -> String {
    format!("{rate}")
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalOutputs> {
    if cfg.paths.runs.is_empty() {
        return Err(Error::Config("paths.runs lists no fine-tuning runs".into()));
    }
    let test_path = require(&cfg.paths.test, "paths.test")?;
    let mut jobs = Vec::new();
    for run in &cfg.paths.runs {
        let name = run
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("cannot name run {}", run.display())))?
            .to_string();
        for (seed, dir) in seed_dirs(run)? {
            jobs.push((name.clone(), seed, dir.join(MODEL_FILE)));
        }
    }
    let out_dir = cfg.run_dir();
    create_dir(&out_dir)?;
    cfg.write_snapshot(&out_dir)?;
    let rates = if cfg.eval.perturb_rates.is_empty() { vec![0.0] } else { cfg.eval.perturb_rates.clone() };

    type JobResult = (String, String, u64, Vec<(f64, EvalReport, Vec<u8>, &'static str)>);
    let evaluate_job = |(run, seed, path): &(String, u64, PathBuf)| -> Result<JobResult> {
        let (vs, model, meta) = load_task_model(path)?;
        let task = model.task();
        let clean = Dataset::load(task, test_path)?;
        let mut per_rate = Vec::new();
        for &rate in &rates {
            let data = clean.perturbed(rate, cfg.eval.perturb_seed)?;
            let examples = model.prepare(data.as_task_data())?;
            let (report, export, ext) = match &data {
                Dataset::Treebank(gold) => {
                    let pred = if cfg.eval.gold_debug {
                        gold.clone()
                    } else {
                        predicted_sentences(&model.predict_all(&vs, &examples)?).expect("treebank task")
                    };
                    let report = EvalReport::for_treebank(gold, &pred, &cfg.eval.buckets)?;
                    (report, serialize_conllu(&pred)?.into_bytes(), "conllu")
                }
                Dataset::Labeled(rows) => {
                    let labels = match &model.head {
                        TaskHead::Classify(h) => h.labels.clone(),
                        _ => unreachable!("labeled data implies a classifier"),
                    };
                    let gold: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
                    let pred: Vec<String> = if cfg.eval.gold_debug {
                        gold.clone()
                    } else {
                        predicted_labels(&model.predict_all(&vs, &examples)?)
                            .expect("classification task")
                            .into_iter()
                            .map(|i| labels[i].clone())
                            .collect()
                    };
                    let report = EvalReport::for_labels(&gold, &pred)?;
                    let out_rows: Vec<LabeledText> = rows
                        .iter()
                        .zip(&pred)
                        .map(|(r, p)| LabeledText { label: p.clone(), ..r.clone() })
                        .collect();
                    (report, serialize_tsv(&out_rows).into_bytes(), "tsv")
                }
            };
            per_rate.push((rate, report, export, ext));
        }
        Ok((run.clone(), meta.front_end.name().to_string(), *seed, per_rate))
    };
    let results = parallel_map(&jobs, evaluate_job)?;

    let mut overall = Vec::new();
    let mut per_tag = String::from("run,front_end,seed,rate,upos,correct,total,accuracy\n");
    let mut by_distance = String::from("run,front_end,seed,rate,distance,correct,total,las\n");
    for (run, front, seed, per_rate) in &results {
        for (rate, report, export, ext) in per_rate {
            let pred_dir = out_dir.join("predictions").join(run).join(seed.to_string());
            create_dir(&pred_dir)?;
            write_file(&pred_dir.join(format!("rate_{}.{ext}", rate_label(*rate))), export)?;
            for (metric, &value) in &report.overall {
                overall.push(OverallRow {
                    run: run.clone(),
                    front_end: front.clone(),
                    seed: *seed,
                    rate: *rate,
                    metric: metric.clone(),
                    value: quantize(value),
                });
            }
            let prefix = format!("{run},{front},{seed},{}", rate_label(*rate));
            if let Some(csv) = report.per_tag_csv() {
                csv.lines().skip(1).for_each(|l| {
                    let _ = writeln!(per_tag, "{prefix},{l}");
                });
            }
            if let Some(csv) = report.by_distance_csv() {
                csv.lines().skip(1).for_each(|l| {
                    let _ = writeln!(by_distance, "{prefix},{l}");
                });
            }
        }
    }
    write_file(&out_dir.join("overall.csv"), overall_csv(&overall))?;
    write_file(&out_dir.join("per_tag.csv"), per_tag)?;
    write_file(&out_dir.join("by_distance.csv"), by_distance)?;
    let (summary, table) = write_report(&out_dir, &overall)?;
    Ok(EvalOutputs { dir: out_dir, overall, summary, table })
}

pub fn overall_csv(rows: &[OverallRow]) -> String {
    let mut s = String::from("run,front_end,seed,rate,metric,value\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{:.4}", r.run, r.front_end, r.seed, rate_label(r.rate), r.metric, r.value);
    }
    s
}

pub fn parse_overall_csv(text: &str) -> Result<Vec<OverallRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("run,front_end,seed,rate,metric,value") {
        return Err(Error::Data("overall.csv has an unexpected header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = || Error::Data(format!("overall.csv line {}: malformed row", i + 2));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(OverallRow {
                run: f[0].to_string(),
                front_end: f[1].to_string(),
                seed: f[2].parse().map_err(|_| bad())?,
                rate: f[3].parse().map_err(|_| bad())?,
                metric: f[4].to_string(),
                value: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Mean ± std across seeds per (run, rate, metric), in first-seen order.
pub fn summarize(rows: &[OverallRow]) -> Result<Vec<SummaryRow>> {
    let mut groups: Vec<((String, String, String, u64), Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (r.run.clone(), r.front_end.clone(), r.metric.clone(), r.rate.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.value),
            None => groups.push((key, vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|((run, front_end, metric, rate), values)| {
            let (mean, std) = mean_std(&values)?;
            Ok(SummaryRow { run, front_end, rate: f64::from_bits(rate), metric, mean, std, runs: values.len() })
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("run,front_end,rate,metric,mean,std,runs\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.4},{:.4},{}",
            r.run,
            r.front_end,
            rate_label(r.rate),
            r.metric,
            r.mean,
            r.std,
            r.runs
        );
    }
    s
}

/// One row per (run, metric) with a `mean ± std` column per perturbation
/// rate and the relative drop from the lowest to the highest rate.
pub fn comparison_table(rows: &[SummaryRow]) -> String {
    let mut rates: Vec<f64> = rows.iter().map(|r| r.rate).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in rows {
        let k = (r.run.clone(), r.front_end.clone(), r.metric.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut header = vec!["run".to_string(), "front_end".into(), "metric".into(), "seeds".into()];
    header.extend(rates.iter().map(|r| format!("rate {}", rate_label(*r))));
    header.push("rel. drop %".into());
    let mut body = Vec::new();
    for (run, front, metric) in &keys {
        let find = |rate: f64| {
            rows.iter()
                .find(|r| &r.run == run && &r.metric == metric && &r.front_end == front && r.rate == rate)
        };
        let seeds = rows
            .iter()
            .filter(|r| &r.run == run && &r.metric == metric)
            .map(|r| r.runs)
            .max()
            .unwrap_or(0);
        let mut row = vec![run.clone(), front.clone(), metric.clone(), seeds.to_string()];
        row.extend(rates.iter().map(|&rate| find(rate).map_or("—".into(), |r| fmt_mean_std((r.mean, r.std)))));
        let drop = match (rates.first().and_then(|&r| find(r)), rates.last().and_then(|&r| find(r))) {
            (Some(lo), Some(hi)) if rates.len() > 1 && lo.mean > 0.0 => fmt1(relative_drop(lo.mean, hi.mean)),
            _ => "—".into(),
        };
        row.push(drop);
        body.push(row);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    text_table(&header, &body)
}

/// Percentage of `clean` lost at `perturbed`.
pub fn relative_drop(clean: f64, perturbed: f64) -> f64 {
    100.0 * (clean - perturbed) / clean
}

fn write_report(dir: &Path, overall: &[OverallRow]) -> Result<(Vec<SummaryRow>, String)> {
    let summary = summarize(overall)?;
    let table = comparison_table(&summary);
    write_file(&dir.join("summary.csv"), summary_csv(&summary))?;
    write_file(&dir.join("comparison.txt"), &table)?;
    Ok((summary, table))
}

/// Rebuilds `summary.csv` and `comparison.txt` from an evaluation
/// directory's `overall.csv` and returns the table.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.run_dir();
    let path = dir.join("overall.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let rows = parse_overall_csv(&text)?;
    Ok(write_report(&dir, &rows)?.1)
}

/// Renders each line (or `text`) to `line_<i>.png` and writes `spans.txt`.
pub fn cmd_render(cfg: &RunConfig, text: Option<&str>) -> Result<Vec<PathBuf>> {
    let lines: Vec<String> = match text {
        Some(t) => t.split('\n').map(str::to_string).collect(),
        None => {
            let p = require(&cfg.paths.input, "paths.input")?;
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            s.lines().map(str::to_string).collect()
        }
    };
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    let max = cfg.render.max_patches;
    let mut dump = String::from("# line\tpatches\ttruncated\tword spans (first-last patch)\tpatches per word\ttext\n");
    let mut written = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let words: Vec<&str> = line.split_whitespace().collect();
        let r = if words.is_empty() { render_text("", max)? } else { render_words(&words, max)? };
        let path = dir.join(format!("line_{i:04}.png"));
        export_png(&r, &path)?;
        written.push(path);
        let spans = r
            .word_spans()
            .unwrap_or(&[])
            .iter()
            .map(|(s, e)| format!("({s},{e})"))
            .collect::<Vec<_>>()
            .join(" ");
        let counts = words.iter().map(|w| word_patch_count(w).to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(dump, "{i}\t{}\t{}\t{spans}\t{counts}\t{line}", r.num_text_patches(), r.truncated());
    }
    write_file(&dir.join("spans.txt"), dump)?;
    Ok(written)
}

/// Per-front-end relative drop between the lowest and highest rate for
/// `metric`, averaged over runs of that front-end.
pub fn drops_by_front_end(summary: &[SummaryRow], metric: &str) -> BTreeMap<String, f64> {
    let mut rates: Vec<f64> = summary.iter().map(|r| r.rate).collect();
    rates.sort_by(f64::total_cmp);
    let (Some(&lo), Some(&hi)) = (rates.first(), rates.last()) else {
        return BTreeMap::new();
    };
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in summary.iter().filter(|r| r.metric == metric && r.rate == lo && r.mean > 0.0) {
        if let Some(h) = summary
            .iter()
            .find(|h| h.run == r.run && h.metric == metric && h.rate == hi)
        {
            acc.entry(r.front_end.clone()).or_default().push(relative_drop(r.mean, h.mean));
        }
    }
    acc.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run: &str, seed: u64, rate: f64, value: f64) -> OverallRow {
        OverallRow {
            run: run.into(),
            front_end: run.into(),
            seed,
            rate,
            metric: "pos_acc".into(),
            value,
        }
    }

    #[test]
    fn overall_csv_round_trips() {
        let rows = vec![row("pixel", 1, 0.0, 91.25), row("pixel", 2, 0.1, 80.5)];
        assert_eq!(parse_overall_csv(&overall_csv(&rows)).unwrap(), rows);
        assert!(parse_overall_csv("bad\n").is_err());
    }

    #[test]
    fn summary_and_table() {
        let rows = vec![
            row("pixel", 1, 0.0, 50.0),
            row("pixel", 2, 0.0, 60.0),
            row("pixel", 3, 0.0, 70.0),
            row("pixel", 1, 0.2, 30.0),
            row("pixel", 2, 0.2, 30.0),
            row("pixel", 3, 0.2, 30.0),
        ];
        let s = summarize(&rows).unwrap();
        assert_eq!((s[0].mean, s[0].std, s[0].runs), (60.0, 10.0, 3));
        let t = comparison_table(&s);
        assert!(t.contains("60.0 ± 10.0"), "{t}");
        assert!(t.contains("50.0"), "{t}");
        assert_eq!(drops_by_front_end(&s, "pos_acc")["pixel"], 50.0);
    }
}
