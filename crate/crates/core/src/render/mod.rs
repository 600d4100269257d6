//! Text rasterization into fixed-size grayscale patches.
//!
//! Glyphs are 16 rows by 8 columns, so every patch holds two glyph cells.
//! Ink is 1.0 and background 0.0, which makes padding the zero tensor.

mod atlas;
mod perturb;

use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

pub use atlas::{Glyph, GlyphAtlas, ATLAS_VERSION, FALLBACK_GLYPH, GLYPH_COLS, GLYPH_ROWS};
pub use perturb::{perturb_text, ConfusionTable, PerturbOp, Perturber};

use crate::error::{Error, Result};

pub const PATCH_SIZE: usize = 16;
pub const PATCH_PIXELS: usize = PATCH_SIZE * PATCH_SIZE;
pub const CELLS_PER_PATCH: usize = PATCH_SIZE / GLYPH_COLS;

/// Gray level of the one-pixel rule drawn between patches in PNG exports.
pub const PNG_RULE_GRAY: u8 = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    pixels: Vec<f32>,
    max_patches: usize,
    num_text_patches: usize,
    word_spans: Option<Vec<(usize, usize)>>,
    source_text: String,
    truncated: bool,
}

impl Rendering {
    /// All patches, row-major, `max_patches × 256`. Within a patch, pixel
    /// `(y, x)` sits at `y * 16 + x`.
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn patch(&self, index: usize) -> &[f32] {
        &self.pixels[index * PATCH_PIXELS..(index + 1) * PATCH_PIXELS]
    }

    pub fn max_patches(&self) -> usize {
        self.max_patches
    }

    pub fn num_text_patches(&self) -> usize {
        self.num_text_patches
    }

    pub fn separator_index(&self) -> usize {
        self.num_text_patches
    }

    /// Text patches plus the separator.
    pub fn num_active(&self) -> usize {
        self.num_text_patches + 1
    }

    pub fn attention_mask(&self) -> Vec<u8> {
        (0..self.max_patches)
            .map(|i| u8::from(i <= self.separator_index()))
            .collect()
    }

    pub fn keep_mask(&self) -> Vec<bool> {
        (0..self.max_patches)
            .map(|i| i <= self.separator_index())
            .collect()
    }

    pub fn word_spans(&self) -> Option<&[(usize, usize)]> {
        self.word_spans.as_deref()
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// Lays out glyph cells (`None` = blank half patch) followed by the separator.
fn rasterize(atlas: &GlyphAtlas, cells: &[Option<char>], max_patches: usize) -> (Vec<f32>, usize) {
    let num_text = cells.len().div_ceil(CELLS_PER_PATCH);
    debug_assert!(num_text < max_patches);
    let mut pixels = vec![0.0f32; max_patches * PATCH_PIXELS];
    for (k, cell) in cells.iter().enumerate() {
        let Some(ch) = cell else { continue };
        let glyph = atlas.glyph(*ch);
        let base = (k / CELLS_PER_PATCH) * PATCH_PIXELS;
        let x0 = (k % CELLS_PER_PATCH) * GLYPH_COLS;
        for y in 0..GLYPH_ROWS {
            for x in 0..GLYPH_COLS {
                if glyph.ink(y, x) {
                    pixels[base + y * PATCH_SIZE + x0 + x] = 1.0;
                }
            }
        }
    }
    let sep = num_text * PATCH_PIXELS;
    pixels[sep..sep + PATCH_PIXELS].fill(1.0);
    (pixels, num_text)
}

fn check_capacity(max_patches: usize) -> Result<()> {
    if max_patches < 2 {
        return Err(Error::Data(format!(
            "max_patches must be at least 2, got {max_patches}"
        )));
    }
    Ok(())
}

/// Continuous rendering: glyphs at an 8-pixel advance, two per patch.
pub fn render_text(text: &str, max_patches: usize) -> Result<Rendering> {
    render_text_with(GlyphAtlas::embedded(), text, max_patches)
}

pub fn render_text_with(atlas: &GlyphAtlas, text: &str, max_patches: usize) -> Result<Rendering> {
    check_capacity(max_patches)?;
    let capacity = (max_patches - 1) * CELLS_PER_PATCH;
    let mut cells: Vec<Option<char>> = text.chars().map(Some).collect();
    let truncated = cells.len() > capacity;
    cells.truncate(capacity);
    let (pixels, num_text_patches) = rasterize(atlas, &cells, max_patches);
    Ok(Rendering {
        pixels,
        max_patches,
        num_text_patches,
        word_spans: None,
        source_text: text.to_string(),
        truncated,
    })
}

/// Patches a word occupies when it starts on a patch boundary. An empty word
/// still owns one blank patch so it has a representation.
pub fn word_patch_count(word: &str) -> usize {
    word.chars().count().div_ceil(CELLS_PER_PATCH).max(1)
}

/// Word-aligned rendering: every word starts on a fresh patch.
pub fn render_words<S: AsRef<str>>(words: &[S], max_patches: usize) -> Result<Rendering> {
    render_words_with(GlyphAtlas::embedded(), words, max_patches)
}

pub fn render_words_with<S: AsRef<str>>(
    atlas: &GlyphAtlas,
    words: &[S],
    max_patches: usize,
) -> Result<Rendering> {
    check_capacity(max_patches)?;
    if words.is_empty() {
        return Err(Error::Data("cannot render an empty word list".into()));
    }
    let available = max_patches - 1;
    let mut cells: Vec<Option<char>> = Vec::new();
    let mut spans = Vec::with_capacity(words.len());
    let mut truncated = false;
    for word in words {
        let word = word.as_ref();
        let needed = word_patch_count(word);
        if needed > available {
            return Err(Error::OversizedWord {
                word: word.to_string(),
                needed,
                available,
            });
        }
        let start = cells.len() / CELLS_PER_PATCH;
        if start + needed > available {
            truncated = true;
            break;
        }
        cells.extend(word.chars().map(Some));
        cells.resize((start + needed) * CELLS_PER_PATCH, None);
        spans.push((start, start + needed - 1));
    }
    let (pixels, num_text_patches) = rasterize(atlas, &cells, max_patches);
    let source: Vec<&str> = words.iter().map(|w| w.as_ref()).collect();
    Ok(Rendering {
        pixels,
        max_patches,
        num_text_patches,
        word_spans: Some(spans),
        source_text: source.join(" "),
        truncated,
    })
}

/// Grayscale raster of the text patches and separator in one row, with a
/// one-pixel gray rule between neighbouring patches.
pub fn to_image(r: &Rendering) -> (u32, u32, Vec<u8>) {
    let n = r.num_active();
    let width = n * PATCH_SIZE + (n - 1);
    let mut buf = vec![0u8; width * PATCH_SIZE];
    for p in 0..n {
        let patch = r.patch(p);
        let x0 = p * (PATCH_SIZE + 1);
        for y in 0..PATCH_SIZE {
            for x in 0..PATCH_SIZE {
                let ink = patch[y * PATCH_SIZE + x];
                buf[y * width + x0 + x] = (255.0 * (1.0 - ink)).round() as u8;
            }
            if p + 1 < n {
                buf[y * width + x0 + PATCH_SIZE] = PNG_RULE_GRAY;
            }
        }
    }
    (width as u32, PATCH_SIZE as u32, buf)
}

pub fn png_bytes(r: &Rendering) -> Result<Vec<u8>> {
    let (w, h, buf) = to_image(r);
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&buf, w, h, ExtendedColorType::L8)
        .map_err(|e| Error::Data(format!("png encoding failed: {e}")))?;
    Ok(out)
}

pub fn export_png(r: &Rendering, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = png_bytes(r)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell_matches(r: &Rendering, patch: usize, half: usize, ch: char) -> bool {
        let glyph = GlyphAtlas::embedded().glyph(ch);
        let p = r.patch(patch);
        (0..GLYPH_ROWS).all(|y| {
            (0..GLYPH_COLS).all(|x| {
                let v = p[y * PATCH_SIZE + half * GLYPH_COLS + x];
                v == if glyph.ink(y, x) { 1.0 } else { 0.0 }
            })
        })
    }

    #[test]
    fn empty_text_is_separator_only() {
        let r = render_text("", 8).unwrap();
        assert_eq!(r.num_text_patches(), 0);
        assert_eq!(r.separator_index(), 0);
        assert_eq!(r.attention_mask(), vec![1, 0, 0, 0, 0, 0, 0, 0]);
        assert!(r.patch(0).iter().all(|&v| v == 1.0));
        assert!(r.pixels()[PATCH_PIXELS..].iter().all(|&v| v == 0.0));
        assert!(!r.truncated());
    }

    #[test]
    fn two_glyphs_share_a_patch() {
        let r = render_text("ab", 8).unwrap();
        assert_eq!(r.num_text_patches(), 1);
        assert!(cell_matches(&r, 0, 0, 'a'));
        assert!(cell_matches(&r, 0, 1, 'b'));
    }

    #[test]
    fn eight_glyphs_make_four_patches() {
        let r = render_text("Herzlich", 16).unwrap();
        assert_eq!(r.num_text_patches(), 4);
        assert_eq!(r.separator_index(), 4);
    }

    #[test]
    fn overflow_is_flagged() {
        let r = render_text("abcdefg", 3).unwrap();
        assert!(r.truncated());
        assert_eq!(r.num_text_patches(), 2);
        assert!(render_text("x", 1).is_err());
    }

    #[test]
    fn word_spans_follow_patch_boundaries() {
        let r = render_words(&["ab"], 8).unwrap();
        assert_eq!(r.word_spans().unwrap(), &[(0, 0)]);
        let r = render_words(&["Herzlich", "willkommen!"], 16).unwrap();
        assert_eq!(r.word_spans().unwrap(), &[(0, 3), (4, 9)]);
        let r = render_words(&["a", "b"], 8).unwrap();
        assert_eq!(r.word_spans().unwrap(), &[(0, 0), (1, 1)]);
        assert!(cell_matches(&r, 1, 0, 'b'));
        assert!(cell_matches(&r, 0, 1, ' '));
    }

    #[test]
    fn word_overflow_drops_tail_and_oversize_errors() {
        let r = render_words(&["abcd", "ef", "gh"], 4).unwrap();
        assert_eq!(r.word_spans().unwrap(), &[(0, 1), (2, 2)]);
        assert!(r.truncated());
        let err = render_words(&["abcdefg"], 4).unwrap_err();
        assert!(matches!(err, Error::OversizedWord { needed: 4, available: 3, .. }));
        assert!(render_words::<&str>(&[], 4).is_err());
    }

    #[test]
    fn png_layout() {
        let (w, h, buf) = to_image(&render_text("", 4).unwrap());
        assert_eq!((w, h), (16, 16));
        assert!(buf.iter().all(|&v| v == 0));
        let (w, _, buf) = to_image(&render_text("ab", 4).unwrap());
        assert_eq!(w, 33);
        assert!((0..16).all(|y| buf[y * 33 + 16] == PNG_RULE_GRAY));
        let bytes = png_bytes(&render_text("ab", 4).unwrap()).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
