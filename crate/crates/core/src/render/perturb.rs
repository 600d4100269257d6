//! Character-level orthographic noise used as a stand-in for dialect spelling.

use std::collections::BTreeMap;

use pixdial_tensor::rng::{stream_rng, Stream};
use rand::Rng;

use crate::error::{Error, Result};

static DEFAULT_TABLE: &str = include_str!("../../data/confusion_v1.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PerturbOp {
    Substitute,
    Duplicate,
    Delete,
}

impl PerturbOp {
    pub const ALL: [PerturbOp; 3] = [PerturbOp::Substitute, PerturbOp::Duplicate, PerturbOp::Delete];
}

/// Replacement candidates per source character, in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionTable {
    entries: BTreeMap<char, Vec<String>>,
}

impl ConfusionTable {
    pub fn shipped() -> Self {
        Self::parse(DEFAULT_TABLE).expect("shipped confusion table is well-formed")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Data(format!("confusion table line {}: {msg}", i + 1));
            let (src, rest) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let mut chars = src.chars();
            let ch = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => return Err(bad("source must be one character")),
            };
            let subs: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            if subs.is_empty() {
                return Err(bad("no replacements"));
            }
            if entries.insert(ch, subs).is_some() {
                return Err(bad("duplicate source character"));
            }
        }
        Ok(ConfusionTable { entries })
    }

    pub fn substitutes(&self, ch: char) -> &[String] {
        self.entries.get(&ch).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Perturber {
    pub table: ConfusionTable,
    pub ops: Vec<PerturbOp>,
}

impl Default for Perturber {
    fn default() -> Self {
        Perturber {
            table: ConfusionTable::shipped(),
            ops: PerturbOp::ALL.to_vec(),
        }
    }
}

impl Perturber {
    pub fn with_ops(ops: &[PerturbOp]) -> Self {
        Perturber {
            ops: ops.to_vec(),
            ..Default::default()
        }
    }

    /// Each character is hit with probability `rate`; a hit applies one op
    /// drawn uniformly from those applicable to it. Characters without table
    /// entries cannot be substituted.
    pub fn perturb(&self, text: &str, rate: f64, rng: &mut impl Rng) -> Result<String> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Data(format!("perturbation rate {rate} outside [0, 1]")));
        }
        let mut out = String::with_capacity(text.len() + 8);
        for ch in text.chars() {
            if rate == 0.0 || rng.gen::<f64>() >= rate {
                out.push(ch);
                continue;
            }
            let subs = self.table.substitutes(ch);
            let applicable: Vec<PerturbOp> = self
                .ops
                .iter()
                .copied()
                .filter(|op| *op != PerturbOp::Substitute || !subs.is_empty())
                .collect();
            if applicable.is_empty() {
                out.push(ch);
                continue;
            }
            match applicable[rng.gen_range(0..applicable.len())] {
                PerturbOp::Substitute => out.push_str(&subs[rng.gen_range(0..subs.len())]),
                PerturbOp::Duplicate => {
                    out.push(ch);
                    out.push(ch);
                }
                PerturbOp::Delete => {}
            }
        }
        Ok(out)
    }
}

/// Perturbs with the shipped table and all three ops, seeded on its own stream.
pub fn perturb_text(text: &str, rate: f64, seed: u64) -> Result<String> {
    let mut rng = stream_rng(seed, Stream::Perturb);
    Perturber::default().perturb(text, rate, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_identity() {
        assert_eq!(perturb_text("Grüß Gott", 0.0, 3).unwrap(), "Grüß Gott");
    }

    #[test]
    fn delete_only_at_full_rate_erases() {
        let p = Perturber::with_ops(&[PerturbOp::Delete]);
        let mut rng = stream_rng(0, Stream::Perturb);
        assert_eq!(p.perturb("abc", 1.0, &mut rng).unwrap(), "");
    }

    #[test]
    fn duplicate_only_doubles() {
        let p = Perturber::with_ops(&[PerturbOp::Duplicate]);
        let mut rng = stream_rng(0, Stream::Perturb);
        assert_eq!(p.perturb("ab", 1.0, &mut rng).unwrap(), "aabb");
    }

    #[test]
    fn seeded_and_reproducible() {
        let a = perturb_text("Herzlich willkommen in der Stadt", 0.3, 11).unwrap();
        let b = perturb_text("Herzlich willkommen in der Stadt", 0.3, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, "Herzlich willkommen in der Stadt");
    }

    #[test]
    fn rejects_invalid_rate() {
        assert!(perturb_text("a", 1.5, 0).is_err());
        assert!(perturb_text("a", f64::NAN, 0).is_err());
    }

    #[test]
    fn shipped_table_substitutes_render() {
        let table = ConfusionTable::shipped();
        assert!(table.substitutes('a').contains(&"ä".to_string()));
        let atlas = super::super::GlyphAtlas::embedded();
        for ch in "aeiouäöüß".chars() {
            for s in table.substitutes(ch) {
                assert!(s.chars().all(|c| atlas.contains(c)), "{s}");
            }
        }
    }
}
