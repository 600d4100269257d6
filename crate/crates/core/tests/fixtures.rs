//! Shipped data files must match what their generators produce today.

use std::path::Path;

use font8x8::legacy::{BASIC_LEGACY, LATIN_LEGACY};
use pixdial::corpus::synthetic::fixture_files;
use pixdial::render::{Glyph, GlyphAtlas, ATLAS_VERSION, GLYPH_ROWS};

/// font8x8 stores each row LSB-first; the atlas wants MSB-first with every
/// row doubled to reach 16 rows.
fn doubled(src: &[u8; 8]) -> [u8; GLYPH_ROWS] {
    let mut rows = [0u8; GLYPH_ROWS];
    for (r, byte) in src.iter().enumerate() {
        rows[2 * r] = byte.reverse_bits();
        rows[2 * r + 1] = byte.reverse_bits();
    }
    rows
}

fn expected_glyphs() -> Vec<(char, Glyph)> {
    let basic = (0x20u32..=0x7E).map(|cp| (cp, &BASIC_LEGACY[cp as usize]));
    let latin = (0xA0u32..=0xFF).map(|cp| (cp, &LATIN_LEGACY[cp as usize - 0xA0]));
    basic
        .chain(latin)
        .map(|(cp, bits)| (char::from_u32(cp).unwrap(), Glyph::from_rows(doubled(bits))))
        .collect()
}

#[test]
fn embedded_atlas_matches_font_source() {
    assert_eq!(ATLAS_VERSION, 1);
    let atlas = GlyphAtlas::embedded();
    let expected = expected_glyphs();
    assert_eq!(atlas.len(), expected.len());
    for (ch, glyph) in &expected {
        assert_eq!(atlas.get(*ch), Some(glyph), "glyph {ch:?}");
    }
    let rebuilt = GlyphAtlas::from_bytes(&atlas.to_bytes()).unwrap();
    assert_eq!(rebuilt.to_bytes(), GlyphAtlas::embedded_bytes());
}

#[test]
fn german_letters_have_ink() {
    let atlas = GlyphAtlas::embedded();
    for ch in "äöüÄÖÜßéè".chars() {
        assert!(!atlas.glyph(ch).is_blank(), "{ch:?}");
    }
    assert!(atlas.glyph(' ').is_blank());
}

#[test]
fn shipped_fixtures_are_reproducible() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/v1");
    for (name, contents) in fixture_files().unwrap() {
        let shipped = std::fs::read_to_string(dir.join(name)).unwrap();
        assert!(shipped == contents, "{name} differs from its generator output");
    }
}
