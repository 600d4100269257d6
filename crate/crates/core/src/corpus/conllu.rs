//! CoNLL-U reading and writing.
//!
//! Multiword-token ranges (`1-2`) and empty nodes (`4.1`) are kept verbatim
//! at their original position so canonical files round-trip byte for byte,
//! but they never appear in [`Sentence::tokens`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];
    pub const COUNT: usize = 17;

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Upos> {
        Upos::ALL.get(i).copied()
    }
}

impl FromStr for Upos {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Upos::ALL
            .iter()
            .copied()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| format!("unknown UPOS tag {s:?}"))
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One syntactic word. Columns the toolkit does not interpret are kept as
/// their raw strings (`_` when unset).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: Option<Upos>,
    pub xpos: String,
    pub feats: String,
    pub head: Option<usize>,
    pub deprel: Option<String>,
    pub deps: String,
    pub misc: String,
}

impl Token {
    pub fn new(id: usize, form: impl Into<String>) -> Self {
        Token {
            id,
            form: form.into(),
            lemma: "_".into(),
            upos: None,
            xpos: "_".into(),
            feats: "_".into(),
            head: None,
            deprel: None,
            deps: "_".into(),
            misc: "_".into(),
        }
    }

    pub fn annotated(id: usize, form: &str, upos: Upos, head: usize, deprel: &str) -> Self {
        Token {
            upos: Some(upos),
            head: Some(head),
            deprel: Some(deprel.to_string()),
            ..Token::new(id, form)
        }
    }
}

/// A line kept verbatim: a multiword range or an empty node, placed after
/// `after` regular tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawLine {
    pub after: usize,
    pub line: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
    pub raw_lines: Vec<RawLine>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence {
            tokens,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    pub fn text(&self) -> String {
        self.forms().join(" ")
    }

    pub fn has_upos(&self) -> bool {
        !self.tokens.is_empty() && self.tokens.iter().all(|t| t.upos.is_some())
    }

    pub fn has_tree(&self) -> bool {
        !self.tokens.is_empty() && self.tokens.iter().all(|t| t.head.is_some() && t.deprel.is_some())
    }

    /// Heads indexed by word (0-based word `i` is token id `i + 1`).
    pub fn heads(&self) -> Option<Vec<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    /// Checks ids, head ranges and, when fully annotated, tree shape.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("sentence has no tokens".into());
        }
        for (i, t) in self.tokens.iter().enumerate() {
            if t.id != i + 1 {
                return Err(format!("token ids must run 1..{n}; found {} at position {}", t.id, i + 1));
            }
            if t.form.is_empty() {
                return Err(format!("token {} has an empty form", t.id));
            }
            if let Some(h) = t.head {
                if h > n {
                    return Err(format!("token {} has head {h} beyond sentence length {n}", t.id));
                }
                if h == t.id {
                    return Err(format!("token {} is its own head", t.id));
                }
            }
        }
        for r in &self.raw_lines {
            if r.after > n {
                return Err(format!("raw line {:?} placed after token {} of {n}", r.line, r.after));
            }
        }
        if self.has_tree() {
            let roots: Vec<&Token> = self.tokens.iter().filter(|t| t.head == Some(0)).collect();
            if roots.len() != 1 {
                return Err(format!("expected exactly one root, found {}", roots.len()));
            }
            if roots[0].deprel.as_deref() != Some("root") {
                return Err(format!("token {} attaches to 0 without deprel root", roots[0].id));
            }
            let heads = self.heads().expect("has_tree");
            if let Some(d) = find_cycle(&heads) {
                return Err(format!("head chain from token {d} never reaches the root"));
            }
        }
        Ok(())
    }
}

/// Returns a token id whose head chain does not reach 0, if any.
fn find_cycle(heads: &[usize]) -> Option<usize> {
    let n = heads.len();
    (1..=n).find(|&start| {
        let mut node = start;
        for _ in 0..=n {
            if node == 0 {
                return false;
            }
            node = heads[node - 1];
        }
        true
    })
}

fn opt_str(s: &str) -> Option<String> {
    (s != "_").then(|| s.to_string())
}

fn parse_token(cols: &[&str], lineno: usize) -> Result<Token> {
    let err = |msg: String| Error::Conllu { line: lineno, msg };
    let id: usize = cols[0]
        .parse()
        .ok()
        .filter(|&i| i > 0)
        .ok_or_else(|| err(format!("malformed id {:?}", cols[0])))?;
    let upos = match cols[3] {
        "_" => None,
        s => Some(s.parse::<Upos>().map_err(err)?),
    };
    let head = match cols[6] {
        "_" => None,
        s => Some(s.parse::<usize>().map_err(|_| err(format!("malformed head {s:?}")))?),
    };
    Ok(Token {
        id,
        form: cols[1].to_string(),
        lemma: cols[2].to_string(),
        upos,
        xpos: cols[4].to_string(),
        feats: cols[5].to_string(),
        head,
        deprel: opt_str(cols[7]),
        deps: cols[8].to_string(),
        misc: cols[9].to_string(),
    })
}

fn is_range_id(id: &str) -> bool {
    match id.split_once('-') {
        Some((a, b)) => matches!((a.parse::<usize>(), b.parse::<usize>()), (Ok(a), Ok(b)) if a >= 1 && a < b),
        None => false,
    }
}

fn is_empty_node_id(id: &str) -> bool {
    match id.split_once('.') {
        Some((a, b)) => a.parse::<usize>().is_ok() && b.parse::<usize>().is_ok_and(|b| b >= 1),
        None => false,
    }
}

/// Parses a CoNLL-U document. Any invalid sentence fails the whole parse.
pub fn parse_conllu(text: &str) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut current = Sentence::default();
    let mut first_line = 0;
    let mut token_lines: Vec<usize> = Vec::new();
    let finish = |s: Sentence, first: usize, lines: &[usize], out: &mut Vec<Sentence>| -> Result<()> {
        let n = s.tokens.len();
        for (t, &line) in s.tokens.iter().zip(lines) {
            if matches!(t.head, Some(h) if h > n || h == t.id) {
                return Err(Error::Conllu {
                    line,
                    msg: format!("head {} of token {} is invalid in a {n}-token sentence", t.head.unwrap(), t.id),
                });
            }
        }
        s.validate().map_err(|msg| Error::Conllu { line: first, msg })?;
        out.push(s);
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            if !current.tokens.is_empty() || !current.comments.is_empty() {
                finish(std::mem::take(&mut current), first_line, &token_lines, &mut sentences)?;
                token_lines.clear();
            }
            continue;
        }
        if current.tokens.is_empty() && current.comments.is_empty() && current.raw_lines.is_empty() {
            first_line = lineno;
        }
        if line.starts_with('#') {
            if !current.tokens.is_empty() || !current.raw_lines.is_empty() {
                return Err(Error::Conllu {
                    line: lineno,
                    msg: "comment after token lines".into(),
                });
            }
            current.comments.push(line.to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Conllu {
                line: lineno,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if is_range_id(cols[0]) || is_empty_node_id(cols[0]) {
            current.raw_lines.push(RawLine {
                after: current.tokens.len(),
                line: line.to_string(),
            });
            continue;
        }
        let token = parse_token(&cols, lineno)?;
        if token.id != current.tokens.len() + 1 {
            return Err(Error::Conllu {
                line: lineno,
                msg: format!("expected token id {}, found {}", current.tokens.len() + 1, token.id),
            });
        }
        current.tokens.push(token);
        token_lines.push(lineno);
    }
    if !current.tokens.is_empty() || !current.comments.is_empty() {
        finish(current, first_line, &token_lines, &mut sentences)?;
    }
    Ok(sentences)
}

fn token_line(t: &Token) -> String {
    let or_blank = |o: &Option<String>| o.clone().unwrap_or_else(|| "_".into());
    [
        t.id.to_string(),
        t.form.clone(),
        t.lemma.clone(),
        t.upos.map_or("_".into(), |u| u.as_str().to_string()),
        t.xpos.clone(),
        t.feats.clone(),
        t.head.map_or("_".into(), |h| h.to_string()),
        or_blank(&t.deprel),
        t.deps.clone(),
        t.misc.clone(),
    ]
    .join("\t")
}

/// Canonical serialization: comments, then token lines (with verbatim raw
/// lines in place), then one blank line.
pub fn serialize_conllu(sentences: &[Sentence]) -> Result<String> {
    let mut out = String::new();
    for (k, s) in sentences.iter().enumerate() {
        s.validate()
            .map_err(|msg| Error::InvalidSentence(format!("sentence {}: {msg}", k + 1)))?;
        for c in &s.comments {
            out.push_str(c);
            out.push('\n');
        }
        let mut raw = s.raw_lines.iter().peekable();
        for i in 0..=s.tokens.len() {
            while let Some(r) = raw.next_if(|r| r.after == i) {
                out.push_str(&r.line);
                out.push('\n');
            }
            if let Some(t) = s.tokens.get(i) {
                out.push_str(&token_line(t));
                out.push('\n');
            }
        }
        out.push('\n');
    }
    Ok(out)
}
