//! Character-level byte-pair encoding for the subword front-end.
//!
//! Words are maximal runs of non-whitespace; each whitespace character is a
//! token of its own, so decoding is plain concatenation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<sep>", "<mask>"];

const HEADER: &str = "PXBPE v1";
const MERGE_JOINER: char = '\u{2581}';

/// Characters always present in the base inventory, so clean German text
/// never falls back to UNK even when the training corpus lacks a letter.
fn guaranteed_chars() -> impl Iterator<Item = char> {
    (0x20u8..=0x7E).map(char::from).chain("\t\näöüÄÖÜß".chars())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeVocab {
    base: Vec<String>,
    merges: Vec<(String, String)>,
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeVocab {
    pub fn from_parts(base: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut symbols: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut ids = HashMap::new();
        for s in &base {
            if s.chars().count() != 1 {
                return Err(Error::Vocab(format!("base symbol {s:?} is not a single character")));
            }
            if ids.insert(s.clone(), symbols.len()).is_some() {
                return Err(Error::Vocab(format!("duplicate base symbol {s:?}")));
            }
            symbols.push(s.clone());
        }
        let mut ranks = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            if !ids.contains_key(l) || !ids.contains_key(r) {
                return Err(Error::Vocab(format!("merge {rank} uses a symbol not yet defined: {l:?} {r:?}")));
            }
            ranks.insert((l.clone(), r.clone()), rank);
            let joined = format!("{l}{r}");
            if !ids.contains_key(&joined) {
                ids.insert(joined.clone(), symbols.len());
                symbols.push(joined);
            }
        }
        Ok(BpeVocab {
            base,
            merges,
            symbols,
            ids,
            ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn base(&self) -> &[String] {
        &self.base
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    fn encode_word(&self, word: &str, out: &mut Vec<usize>) {
        let mut parts: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((_, i)) = best else { break };
            let right = parts.remove(i + 1);
            parts[i].push_str(&right);
        }
        out.extend(parts.iter().map(|p| self.id(p).unwrap_or(UNK)));
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for segment in segments(text) {
            match segment {
                Segment::Space(c) => out.push(self.id(&c.to_string()).unwrap_or(UNK)),
                Segment::Word(w) => self.encode_word(w, &mut out),
            }
        }
        out
    }

    /// Tokens for a single word (no whitespace handling).
    pub fn encode_word_ids(&self, word: &str) -> Vec<usize> {
        let mut out = Vec::new();
        self.encode_word(word, &mut out);
        out
    }

    /// Concatenates symbols; PAD is dropped, UNK becomes U+FFFD and the other
    /// specials print their names.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            match id {
                PAD => {}
                UNK => out.push('\u{FFFD}'),
                _ => out.push_str(
                    self.symbol(id)
                        .ok_or_else(|| Error::Vocab(format!("id {id} out of range 0..{}", self.len())))?,
                ),
            }
        }
        Ok(out)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!("{HEADER}\n[base]\n");
        for b in &self.base {
            s.push_str(&escape(b));
            s.push('\n');
        }
        s.push_str("[merges]\n");
        for (l, r) in &self.merges {
            s.push_str(&format!("{}{MERGE_JOINER}{}\n", escape(l), escape(r)));
        }
        s
    }

    pub fn parse_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Vocab(format!("missing {HEADER:?} header")));
        }
        if lines.next() != Some("[base]") {
            return Err(Error::Vocab("missing [base] section".into()));
        }
        let mut base = Vec::new();
        let mut merges = Vec::new();
        let mut in_merges = false;
        for line in lines {
            if !in_merges && line == "[merges]" {
                in_merges = true;
            } else if in_merges {
                let (l, r) = line
                    .split_once(MERGE_JOINER)
                    .ok_or_else(|| Error::Vocab(format!("malformed merge line {line:?}")))?;
                merges.push((unescape(l)?, unescape(r)?));
            } else {
                base.push(unescape(line)?);
            }
        }
        if !in_merges {
            return Err(Error::Vocab("missing [merges] section".into()));
        }
        BpeVocab::from_parts(base, merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_file_string(&text)
    }
}

enum Segment<'a> {
    Space(char),
    Word(&'a str),
}

fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Segment::Word(&text[s..i]));
            }
            out.push(Segment::Space(c));
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Segment::Word(&text[s..]));
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            ' ' => out.push_str("\\s"),
            MERGE_JOINER => out.push_str("\\u"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next() {
            Some('\\') => '\\',
            Some('n') => '\n',
            Some('t') => '\t',
            Some('r') => '\r',
            Some('s') => ' ',
            Some('u') => MERGE_JOINER,
            other => return Err(Error::Vocab(format!("bad escape \\{other:?} in {s:?}"))),
        });
    }
    Ok(out)
}

/// Symbols the vocabulary starts from for this corpus (excluding specials).
pub fn base_inventory<S: AsRef<str>>(corpus: &[S]) -> Vec<String> {
    let chars: BTreeSet<char> = corpus
        .iter()
        .flat_map(|line| line.as_ref().chars())
        .chain(guaranteed_chars())
        .collect();
    chars.into_iter().map(String::from).collect()
}

/// Greedy most-frequent-pair merging within words. Ties go to the
/// lexicographically smallest pair; training stops at `vocab_size` ids or
/// when no pair occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<BpeVocab> {
    let mut words: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for seg in segments(line.as_ref()) {
            if let Segment::Word(w) = seg {
                *words.entry(w).or_default() += 1;
            }
        }
    }
    if words.is_empty() {
        return Err(Error::Vocab("cannot train on an empty corpus".into()));
    }
    let base = base_inventory(corpus);
    let minimum = SPECIALS.len() + base.len();
    if vocab_size < minimum {
        return Err(Error::Vocab(format!(
            "vocab_size {vocab_size} is below the base inventory size {minimum}"
        )));
    }
    let mut split: Vec<(Vec<String>, usize)> = words
        .into_iter()
        .map(|(w, n)| (w.chars().map(String::from).collect(), n))
        .collect();
    let mut known: BTreeSet<String> = base.iter().cloned().collect();
    let mut merges = Vec::new();
    let mut size = minimum;
    while size < vocab_size {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (parts, n) in &split {
            for w in parts.windows(2) {
                *counts.entry((&w[0], &w[1])).or_default() += n;
            }
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
        let Some((pair, count)) = counts.into_iter().fold(None, |best: Option<((&str, &str), usize)>, (p, c)| {
            match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((p, c)),
            }
        }) else {
            break;
        };
        if count < 2 {
            break;
        }
        let (l, r) = (pair.0.to_string(), pair.1.to_string());
        let joined = format!("{l}{r}");
        for (parts, _) in &mut split {
            let mut i = 0;
            while i + 1 < parts.len() {
                if parts[i] == l && parts[i + 1] == r {
                    parts[i] = joined.clone();
                    parts.remove(i + 1);
                }
                i += 1;
            }
        }
        if known.insert(joined) {
            size += 1;
        }
        merges.push((l, r));
    }
    BpeVocab::from_parts(base, merges)
}

/// Mean tokens per whitespace-separated word.
pub fn tokens_per_word<S: AsRef<str>>(vocab: &BpeVocab, lines: &[S]) -> f64 {
    let mut tokens = 0usize;
    let mut words = 0usize;
    for line in lines {
        for word in line.as_ref().split_whitespace() {
            tokens += vocab.encode_word_ids(word).len();
            words += 1;
        }
    }
    if words == 0 {
        0.0
    } else {
        tokens as f64 / words as f64
    }
}
