//! Evaluation metrics. Every token counts, punctuation included. Rates are
//! percentages; breakdowns keep integer counts so their totals reconcile
//! exactly with the overall figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Upos};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub correct: usize,
    pub total: usize,
}

impl Count {
    pub fn add(&mut self, hit: bool) {
        self.correct += usize::from(hit);
        self.total += 1;
    }

    /// Percentage, or `None` when nothing was counted.
    pub fn percent(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

fn check_aligned(gold: &[Sentence], pred: &[Sentence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!("{} gold vs {} predicted sentences", gold.len(), pred.len())));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Data(format!(
                "sentence {}: {} gold vs {} predicted tokens",
                i + 1,
                g.len(),
                p.len()
            )));
        }
    }
    if gold.iter().all(Sentence::is_empty) {
        return Err(Error::EmptyEval("no tokens to score".into()));
    }
    Ok(())
}

fn missing(what: &str, sentence: usize, token: usize) -> Error {
    Error::Data(format!("sentence {sentence}, token {token}: missing {what}"))
}

pub fn tagging_counts(gold: &[Sentence], pred: &[Sentence]) -> Result<Count> {
    Ok(per_tag_counts(gold, pred)?.values().fold(Count::default(), |mut acc, c| {
        acc.correct += c.correct;
        acc.total += c.total;
        acc
    }))
}

pub fn tagging_accuracy(gold: &[Sentence], pred: &[Sentence]) -> Result<f64> {
    Ok(tagging_counts(gold, pred)?.percent().expect("non-empty"))
}

/// Counts per gold UPOS tag; all 17 tags are present, absent ones with
/// total 0.
pub fn per_tag_counts(gold: &[Sentence], pred: &[Sentence]) -> Result<BTreeMap<Upos, Count>> {
    check_aligned(gold, pred)?;
    let mut out: BTreeMap<Upos, Count> = Upos::ALL.iter().map(|&u| (u, Count::default())).collect();
    for (si, (g, p)) in gold.iter().zip(pred).enumerate() {
        for (gt, pt) in g.tokens.iter().zip(&p.tokens) {
            let tag = gt.upos.ok_or_else(|| missing("gold UPOS", si + 1, gt.id))?;
            out.get_mut(&tag).expect("all tags").add(pt.upos == Some(tag));
        }
    }
    Ok(out)
}

/// Per-tag accuracy; `None` for tags that never occur in gold.
pub fn per_tag_accuracy(gold: &[Sentence], pred: &[Sentence]) -> Result<BTreeMap<Upos, Option<f64>>> {
    Ok(per_tag_counts(gold, pred)?.into_iter().map(|(k, c)| (k, c.percent())).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttachmentCounts {
    pub unlabeled: Count,
    pub labeled: Count,
}

impl AttachmentCounts {
    pub fn uas(&self) -> Option<f64> {
        self.unlabeled.percent()
    }

    pub fn las(&self) -> Option<f64> {
        self.labeled.percent()
    }
}

/// Gold attachment distance; root attachments use the token id.
pub fn dependency_distance(id: usize, head: usize) -> usize {
    if head == 0 {
        id
    } else {
        id.abs_diff(head)
    }
}

/// Visits each aligned token with its gold distance, head hit and label hit.
fn for_each_attachment(gold: &[Sentence], pred: &[Sentence], mut f: impl FnMut(usize, bool, bool)) -> Result<()> {
    check_aligned(gold, pred)?;
    for (si, (g, p)) in gold.iter().zip(pred).enumerate() {
        for (gt, pt) in g.tokens.iter().zip(&p.tokens) {
            let head = gt.head.ok_or_else(|| missing("gold head", si + 1, gt.id))?;
            let rel = gt.deprel.as_deref().ok_or_else(|| missing("gold deprel", si + 1, gt.id))?;
            let head_ok = pt.head == Some(head);
            let label_ok = head_ok && pt.deprel.as_deref() == Some(rel);
            f(dependency_distance(gt.id, head), head_ok, label_ok);
        }
    }
    Ok(())
}

pub fn attachment_counts(gold: &[Sentence], pred: &[Sentence]) -> Result<AttachmentCounts> {
    let mut c = AttachmentCounts::default();
    for_each_attachment(gold, pred, |_, h, l| {
        c.unlabeled.add(h);
        c.labeled.add(l);
    })?;
    Ok(c)
}

/// `(UAS, LAS)` in percent.
pub fn uas_las(gold: &[Sentence], pred: &[Sentence]) -> Result<(f64, f64)> {
    let c = attachment_counts(gold, pred)?;
    Ok((c.uas().expect("non-empty"), c.las().expect("non-empty")))
}

/// Distance buckets given by ascending lower bounds; the last bucket is
/// open-ended. The default `[1..=7]` yields buckets 1, 2, …, 6, 7+.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistanceBuckets(pub Vec<usize>);

impl Default for DistanceBuckets {
    fn default() -> Self {
        DistanceBuckets((1..=7).collect())
    }
}

impl DistanceBuckets {
    pub fn validate(&self) -> Result<()> {
        let b = &self.0;
        if b.is_empty() || b[0] != 1 || b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("distance buckets must be strictly increasing and start at 1".into()));
        }
        Ok(())
    }

    pub fn index(&self, distance: usize) -> usize {
        self.0.iter().rposition(|&lo| lo <= distance).unwrap_or(0)
    }

    pub fn label(&self, index: usize) -> String {
        let lo = self.0[index];
        match self.0.get(index + 1) {
            None => format!("{lo}+"),
            Some(&next) if next == lo + 1 => lo.to_string(),
            Some(&next) => format!("{lo}-{}", next - 1),
        }
    }
}

/// Attachment counts per distance bucket; buckets with no tokens are absent.
pub fn las_by_distance(
    gold: &[Sentence],
    pred: &[Sentence],
    buckets: &DistanceBuckets,
) -> Result<BTreeMap<usize, AttachmentCounts>> {
    buckets.validate()?;
    let mut out: BTreeMap<usize, AttachmentCounts> = BTreeMap::new();
    for_each_attachment(gold, pred, |dist, h, l| {
        let c = out.entry(buckets.index(dist)).or_default();
        c.unlabeled.add(h);
        c.labeled.add(l);
    })?;
    Ok(out)
}

pub fn classification_counts<T: PartialEq>(gold: &[T], pred: &[T]) -> Result<Count> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!("{} gold vs {} predicted labels", gold.len(), pred.len())));
    }
    if gold.is_empty() {
        return Err(Error::EmptyEval("no labels to score".into()));
    }
    let mut c = Count::default();
    gold.iter().zip(pred).for_each(|(g, p)| c.add(g == p));
    Ok(c)
}

pub fn classification_accuracy<T: PartialEq>(gold: &[T], pred: &[T]) -> Result<f64> {
    Ok(classification_counts(gold, pred)?.percent().expect("non-empty"))
}

/// Mean and sample standard deviation (n−1); the deviation of one run is 0.
pub fn mean_std(runs: &[f64]) -> Result<(f64, f64)> {
    if runs.is_empty() {
        return Err(Error::EmptyEval("no runs to aggregate".into()));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    if runs.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

pub fn fmt1(v: f64) -> String {
    format!("{v:.1}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "—".to_string(), fmt1)
}

/// Metrics of one evaluation run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// Metric name (`pos_acc`, `uas`, `las`, `acc`) → percent.
    pub overall: BTreeMap<String, f64>,
    pub per_tag: Option<BTreeMap<Upos, Count>>,
    pub by_distance: Option<BTreeMap<usize, AttachmentCounts>>,
    pub buckets: DistanceBuckets,
}

impl EvalReport {
    /// Tagging metrics for sentences carrying UPOS; parsing metrics when
    /// gold trees are present.
    pub fn for_treebank(gold: &[Sentence], pred: &[Sentence], buckets: &DistanceBuckets) -> Result<Self> {
        let mut r = EvalReport { buckets: buckets.clone(), ..Default::default() };
        if gold.iter().all(|s| s.is_empty() || s.has_upos()) && pred.iter().all(|s| s.is_empty() || s.has_upos()) {
            let per_tag = per_tag_counts(gold, pred)?;
            let total = tagging_counts(gold, pred)?;
            r.overall.insert("pos_acc".into(), total.percent().expect("non-empty"));
            r.per_tag = Some(per_tag);
        }
        if gold.iter().all(|s| s.is_empty() || s.has_tree()) && pred.iter().all(|s| s.is_empty() || s.has_tree()) {
            let c = attachment_counts(gold, pred)?;
            r.overall.insert("uas".into(), c.uas().expect("non-empty"));
            r.overall.insert("las".into(), c.las().expect("non-empty"));
            r.by_distance = Some(las_by_distance(gold, pred, buckets)?);
        }
        if r.overall.is_empty() {
            return Err(Error::Data("neither UPOS nor trees available to evaluate".into()));
        }
        Ok(r)
    }

    pub fn for_labels<T: PartialEq>(gold: &[T], pred: &[T]) -> Result<Self> {
        let mut r = EvalReport::default();
        r.overall.insert("acc".into(), classification_accuracy(gold, pred)?);
        Ok(r)
    }

    pub fn overall_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in &self.overall {
            let _ = writeln!(s, "{k},{}", fmt1(*v));
        }
        s
    }

    pub fn per_tag_csv(&self) -> Option<String> {
        let per_tag = self.per_tag.as_ref()?;
        let mut s = String::from("upos,correct,total,accuracy\n");
        for (tag, c) in per_tag {
            let _ = writeln!(s, "{tag},{},{},{}", c.correct, c.total, fmt_opt(c.percent()));
        }
        Some(s)
    }

    pub fn by_distance_csv(&self) -> Option<String> {
        let by = self.by_distance.as_ref()?;
        let mut s = String::from("distance,correct,total,las\n");
        for (&b, c) in by {
            let las = c.las().expect("present buckets are non-empty");
            let _ = writeln!(s, "{},{},{},{}", self.buckets.label(b), c.labeled.correct, c.labeled.total, fmt1(las));
        }
        Some(s)
    }
}

/// Per-metric mean and standard deviation over runs; metrics missing from
/// any run are dropped.
pub fn aggregate(runs: &[BTreeMap<String, f64>]) -> Result<BTreeMap<String, (f64, f64)>> {
    let first = runs.first().ok_or_else(|| Error::EmptyEval("no runs to aggregate".into()))?;
    let mut out = BTreeMap::new();
    for key in first.keys() {
        let values: Option<Vec<f64>> = runs.iter().map(|r| r.get(key).copied()).collect();
        if let Some(values) = values {
            out.insert(key.clone(), mean_std(&values)?);
        }
    }
    Ok(out)
}

/// Left-aligned first column, right-aligned others, padded to the widest cell.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            let pad = width[i] - c.chars().count();
            if i > 0 {
                s.push_str("  ");
            }
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(width.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub fn fmt_mean_std((mean, std): (f64, f64)) -> String {
    format!("{} ± {}", fmt1(mean), fmt1(std))
}
