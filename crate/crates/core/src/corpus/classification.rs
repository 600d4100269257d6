use std::path::Path;

use pixdial_tensor::rng::{stream_rng, Stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
    #[serde(default)]
    pub variety: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// `text⇥label[⇥variety]` per line.
    Tsv,
    /// One JSON object per line with `text`, `label` and optional `variety`.
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => DataFormat::Jsonl,
            _ => DataFormat::Tsv,
        }
    }
}

pub fn load_classification(text: &str, format: DataFormat) -> Result<Vec<LabeledText>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Data(format!("line {}: {msg}", i + 1));
        let record = match format {
            DataFormat::Tsv => {
                let cols: Vec<&str> = line.split('\t').collect();
                if !(2..=3).contains(&cols.len()) {
                    return Err(bad(format!("expected 2 or 3 tab-separated fields, found {}", cols.len())));
                }
                LabeledText {
                    text: cols[0].to_string(),
                    label: cols[1].to_string(),
                    variety: cols.get(2).map(|s| s.to_string()).unwrap_or_default(),
                }
            }
            DataFormat::Jsonl => serde_json::from_str(line).map_err(|e| bad(e.to_string()))?,
        };
        if record.label.is_empty() {
            return Err(bad("empty label".into()));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_classification_file(path: impl AsRef<Path>) -> Result<Vec<LabeledText>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_classification(&text, DataFormat::from_path(path))
}

pub fn serialize_tsv(rows: &[LabeledText]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{}\t{}\n", r.text, r.label, r.variety))
        .collect()
}

/// Closed, sorted label inventory fixed at training time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new(mut labels: Vec<String>) -> Self {
        labels.sort();
        labels.dedup();
        LabelSet { labels }
    }

    pub fn from_texts(rows: &[LabeledText]) -> Self {
        Self::new(rows.iter().map(|r| r.label.clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| Error::UnknownLabel { label: label.to_string() })
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }
}

/// Seeded 80:10:10 partition. Dev and test get `floor(n/10)` items each and
/// train takes the rest.
pub fn split_80_10_10<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split));
    let tenth = items.len() / 10;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    let dev = pick(&order[..tenth]);
    let test = pick(&order[tenth..2 * tenth]);
    let train = pick(&order[2 * tenth..]);
    (train, dev, test)
}
