//! Treebank and classification data.

pub mod classification;
pub mod conllu;
pub mod dialect;
pub mod synthetic;

use std::path::Path;

pub use classification::{
    load_classification, load_classification_file, serialize_tsv, split_80_10_10, DataFormat, LabelSet, LabeledText,
};
pub use conllu::{parse_conllu, serialize_conllu, RawLine, Sentence, Token, Upos};
pub use dialect::make_dialect_eval;

use crate::error::{Error, Result};

pub fn read_conllu(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(&text).map_err(|e| match e {
        Error::Conllu { line, msg } => Error::Data(format!("{}:{line}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_conllu(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize_conllu(sentences)?).map_err(|e| Error::io(path, e))
}

/// Non-empty lines of a UTF-8 text file.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}
