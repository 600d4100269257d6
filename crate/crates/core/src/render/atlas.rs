use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const GLYPH_ROWS: usize = 16;
pub const GLYPH_COLS: usize = 8;

const MAGIC: &[u8; 4] = b"PXFA";
const RECORD_BYTES: usize = 4 + 2 * GLYPH_ROWS;

/// Atlas format version shipped with this build.
pub const ATLAS_VERSION: u32 = 1;

static EMBEDDED_BYTES: &[u8] = include_bytes!("../../assets/atlas_v1.pxfa");

/// A 16×8 binary bitmap. Row `r` is stored MSB-first: bit 7 is column 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Glyph {
    rows: [u8; GLYPH_ROWS],
}

impl Glyph {
    pub const fn from_rows(rows: [u8; GLYPH_ROWS]) -> Self {
        Glyph { rows }
    }

    pub fn rows(&self) -> &[u8; GLYPH_ROWS] {
        &self.rows
    }

    pub fn ink(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < GLYPH_ROWS && col < GLYPH_COLS);
        self.rows[row] & (0x80 >> col) != 0
    }

    pub fn is_blank(&self) -> bool {
        self.rows.iter().all(|&r| r == 0)
    }
}

/// Filled box inset by two rows and one column, so it never looks like a
/// blank cell or the all-ink separator.
pub const FALLBACK_GLYPH: Glyph = {
    let mut rows = [0u8; GLYPH_ROWS];
    let mut r = 2;
    while r < GLYPH_ROWS - 2 {
        rows[r] = 0b0111_1110;
        r += 1;
    }
    Glyph { rows }
};

#[derive(Clone, Debug)]
pub struct GlyphAtlas {
    glyphs: BTreeMap<char, Glyph>,
}

impl GlyphAtlas {
    /// The atlas compiled into the binary.
    pub fn embedded() -> &'static GlyphAtlas {
        static ATLAS: OnceLock<GlyphAtlas> = OnceLock::new();
        ATLAS.get_or_init(|| {
            GlyphAtlas::from_bytes(EMBEDDED_BYTES).expect("embedded atlas is well-formed")
        })
    }

    pub fn embedded_bytes() -> &'static [u8] {
        EMBEDDED_BYTES
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(Error::Atlas("missing PXFA header".into()));
        }
        let count = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        let body = &bytes[6..];
        if body.len() != count * RECORD_BYTES {
            return Err(Error::Atlas(format!(
                "{count} glyphs need {} payload bytes, found {}",
                count * RECORD_BYTES,
                body.len()
            )));
        }
        let mut glyphs = BTreeMap::new();
        for record in body.chunks_exact(RECORD_BYTES) {
            let cp = u32::from_le_bytes(record[..4].try_into().unwrap());
            let ch = char::from_u32(cp)
                .ok_or_else(|| Error::Atlas(format!("invalid code point {cp:#x}")))?;
            let mut rows = [0u8; GLYPH_ROWS];
            for (r, pair) in record[4..].chunks_exact(2).enumerate() {
                if pair[1] != 0 {
                    return Err(Error::Atlas(format!("{ch:?}: reserved byte set in row {r}")));
                }
                rows[r] = pair[0];
            }
            if glyphs.insert(ch, Glyph { rows }).is_some() {
                return Err(Error::Atlas(format!("duplicate glyph {ch:?}")));
            }
        }
        Ok(GlyphAtlas { glyphs })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(self.glyphs.len() as u16).to_le_bytes());
        for (&ch, glyph) in &self.glyphs {
            out.extend_from_slice(&(ch as u32).to_le_bytes());
            for &row in &glyph.rows {
                out.extend_from_slice(&[row, 0]);
            }
        }
        out
    }

    pub fn get(&self, ch: char) -> Option<&Glyph> {
        self.glyphs.get(&ch)
    }

    /// Bitmap for `ch`, or the fallback box when unmapped.
    pub fn glyph(&self, ch: char) -> &Glyph {
        self.glyphs.get(&ch).unwrap_or(&FALLBACK_GLYPH)
    }

    pub fn contains(&self, ch: char) -> bool {
        self.glyphs.contains_key(&ch)
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.glyphs.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_basic_latin_and_german_letters() {
        let atlas = GlyphAtlas::embedded();
        for cp in 0x20u32..=0x7E {
            assert!(atlas.contains(char::from_u32(cp).unwrap()), "{cp:#x}");
        }
        for ch in "äöüÄÖÜß".chars() {
            assert!(atlas.contains(ch), "{ch}");
            assert!(!atlas.glyph(ch).is_blank(), "{ch}");
        }
        assert!(atlas.glyph(' ').is_blank());
    }

    #[test]
    fn bytes_round_trip() {
        let atlas = GlyphAtlas::embedded();
        assert_eq!(atlas.to_bytes(), GlyphAtlas::embedded_bytes());
    }

    #[test]
    fn rejects_bad_header_and_length() {
        assert!(GlyphAtlas::from_bytes(b"PXFB\0\0").is_err());
        let mut bytes = GlyphAtlas::embedded_bytes().to_vec();
        bytes.pop();
        assert!(GlyphAtlas::from_bytes(&bytes).is_err());
    }

    #[test]
    fn fallback_differs_from_blank_and_full() {
        assert!(!FALLBACK_GLYPH.is_blank());
        assert!(FALLBACK_GLYPH.rows().iter().any(|&r| r != 0xFF));
        assert_eq!(GlyphAtlas::embedded().glyph('\u{4E00}'), &FALLBACK_GLYPH);
    }
}
