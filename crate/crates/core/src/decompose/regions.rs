//! Splitting a card into title-word, cover-grid and category regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{ImpressionCard, LayoutConfig, PixelBox, RgbImage};

/// Where a cue came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum CueTag {
    TitleWord(usize),
    ImageRegion(usize),
    Category,
}

impl std::fmt::Display for CueTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CueTag::TitleWord(i) => write!(f, "word{i}"),
            CueTag::ImageRegion(i) => write!(f, "image{i}"),
            CueTag::Category => write!(f, "category"),
        }
    }
}

/// Tags in cue order for a card with `n_words` rendered words.
pub fn cue_tags(n_words: usize) -> Vec<CueTag> {
    (0..n_words)
        .map(CueTag::TitleWord)
        .chain((0..9).map(CueTag::ImageRegion))
        .chain(std::iter::once(CueTag::Category))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub tag: CueTag,
    pub bbox: PixelBox,
    pub crop: RgbImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub news_id: String,
    pub words: Vec<Region>,
    pub image: Vec<Region>,
    pub category: Region,
}

impl RegionSet {
    /// Regions in cue order: words, image grid row-major, category.
    pub fn iter(&self) -> impl Iterator<Item = &Region> {
        self.words.iter().chain(self.image.iter()).chain(std::iter::once(&self.category))
    }

    pub fn len(&self) -> usize {
        self.words.len() + self.image.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn crop_box(img: &RgbImage, b: &PixelBox) -> RgbImage {
    let (x0, y0, x1, y1) = b.pixel_span();
    img.crop(x0, y0, x1, y1)
}

/// 3x3 grid over an integer box; remainders go to the last row and column.
pub fn grid_3x3(b: &PixelBox) -> Vec<PixelBox> {
    let (x0, y0, x1, y1) = b.pixel_span();
    let (w, h) = (x1 - x0, y1 - y0);
    let (cw, ch) = (w / 3, h / 3);
    let mut out = Vec::with_capacity(9);
    for r in 0..3 {
        let ry0 = y0 + r * ch;
        let ry1 = if r == 2 { y1 } else { ry0 + ch };
        for c in 0..3 {
            let cx0 = x0 + c * cw;
            let cx1 = if c == 2 { x1 } else { cx0 + cw };
            out.push(PixelBox::new(cx0 as f64, ry0 as f64, cx1 as f64, ry1 as f64));
        }
    }
    out
}

fn assemble(
    card_pixels: &RgbImage,
    news_id: &str,
    word_boxes: Vec<PixelBox>,
    image_box: &PixelBox,
    category_box: PixelBox,
) -> RegionSet {
    let words = word_boxes
        .into_iter()
        .enumerate()
        .map(|(i, bbox)| Region {
            tag: CueTag::TitleWord(i),
            crop: crop_box(card_pixels, &bbox),
            bbox,
        })
        .collect();
    let image = grid_3x3(image_box)
        .into_iter()
        .enumerate()
        .map(|(i, bbox)| Region {
            tag: CueTag::ImageRegion(i),
            crop: crop_box(card_pixels, &bbox),
            bbox,
        })
        .collect();
    RegionSet {
        news_id: news_id.to_string(),
        words,
        image,
        category: Region {
            tag: CueTag::Category,
            crop: crop_box(card_pixels, &category_box),
            bbox: category_box,
        },
    }
}

/// Uses the card's own layout metadata.
pub fn split_regions(card: &ImpressionCard) -> RegionSet {
    let words = card.title_layout.words().map(|w| w.bbox).collect();
    assemble(&card.pixels, &card.news_id, words, &card.image_box, card.category_box)
}

fn is_ink(p: [u8; 3], bg: [u8; 3]) -> bool {
    p.iter().zip(bg).any(|(&a, b)| a.abs_diff(b) > 64)
}

/// Runs of `true` as half-open `[start, end)` ranges, joining gaps shorter than `min_gap`.
fn runs(mask: &[bool], min_gap: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if !mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < mask.len() && mask[i] {
            i += 1;
        }
        match out.last_mut() {
            Some(last) if start - last.1 < min_gap => last.1 = i,
            _ => out.push((start, i)),
        }
    }
    out
}

/// Recovers regions from a bare raster by ink profiling.
///
/// The title column is everything right of the cover; its row profile gives
/// text bands, the band starting at or below the category anchor is the
/// category and the rest are title lines. Each title band's column profile
/// separates words at gaps of at least one glyph advance. Edges are snapped
/// to the glyph cell grid of `cfg`.
pub fn split_regions_raster(pixels: &RgbImage, news_id: &str, cfg: &LayoutConfig) -> Result<RegionSet> {
    if (pixels.width(), pixels.height()) != (cfg.card_w, cfg.card_h) {
        return Err(Error::Decomposition(format!(
            "raster is {}x{}, layout expects {}x{}",
            pixels.width(),
            pixels.height(),
            cfg.card_w,
            cfg.card_h
        )));
    }
    let bg = cfg.background;
    let (_, _, image_x1, _) = cfg.image_pixels();
    let col_x0 = image_x1;

    let row_has_ink: Vec<bool> = (0..pixels.height())
        .map(|y| (col_x0..pixels.width()).any(|x| is_ink(pixels.pixel(x, y), bg)))
        .collect();
    // bands inside one glyph row never break for more than two grid rows
    let bands = runs(&row_has_ink, (cfg.line_spacing / 2.0).max(1.0) as usize);
    let (cat_x, cat_y) = cfg.category_anchor;
    let title_bands: Vec<(usize, usize)> = bands.iter().copied().filter(|b| (b.0 as f64) < cat_y - 0.5).collect();
    if title_bands.is_empty() {
        return Err(Error::Decomposition(format!("no title rows found on card {news_id}")));
    }

    let adv = cfg.title_advance;
    let pitch = cfg.line_pitch();
    let mut word_boxes = Vec::new();
    for &(y0, y1) in &title_bands {
        let line = ((y0 as f64 + 0.5 - cfg.title_top) / pitch).floor().max(0.0);
        let top = cfg.title_top + line * pitch;
        let cols: Vec<bool> = (0..pixels.width())
            .map(|x| x >= col_x0 && (y0..y1).any(|y| is_ink(pixels.pixel(x, y), bg)))
            .collect();
        for (x0, x1) in runs(&cols, adv.ceil() as usize) {
            let first = ((x0 as f64 + 0.5 - cfg.title_anchor_x) / adv).floor();
            let last = ((x1 as f64 - 0.5 - cfg.title_anchor_x) / adv).floor();
            word_boxes.push(PixelBox::new(
                cfg.title_anchor_x + first * adv,
                top,
                cfg.title_anchor_x + (last + 1.0) * adv,
                top + cfg.title_font_px,
            ));
        }
    }

    let cat_adv = cfg.category_advance;
    let cat_band = bands.iter().find(|b| (b.0 as f64) >= cat_y - 0.5);
    let category_box = match cat_band {
        Some(&(y0, y1)) => {
            let xs: Vec<usize> = (col_x0..pixels.width())
                .filter(|&x| (y0..y1).any(|y| is_ink(pixels.pixel(x, y), bg)))
                .collect();
            let last = xs.last().copied().unwrap_or(col_x0);
            let cells = ((last as f64 - 0.5 - cat_x) / cat_adv).floor() + 1.0;
            PixelBox::new(cat_x, cat_y, cat_x + cells.max(0.0) * cat_adv, cat_y + cfg.category_font_px)
        }
        None => PixelBox::new(cat_x, cat_y, cat_x, cat_y + cfg.category_font_px),
    };

    Ok(assemble(pixels, news_id, word_boxes, &cfg.image_box, category_box))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NewsRecord;
    use crate::render::render_card;

    fn news(title: &str, category: &str) -> NewsRecord {
        NewsRecord {
            news_id: "N7".into(),
            category: category.into(),
            subcategory: String::new(),
            title: title.into(),
            abstract_text: String::new(),
            url: String::new(),
            title_entities: "[]".into(),
            abstract_entities: "[]".into(),
            cover: None,
        }
    }

    #[test]
    fn counts_for_six_words() {
        let card = render_card(&news("one two three four five six", "sports"), None, &LayoutConfig::default()).unwrap();
        let r = split_regions(&card);
        assert_eq!(r.words.len(), 6);
        assert_eq!(r.image.len(), 9);
        assert_eq!(r.len(), 16);
    }

    #[test]
    fn grid_tiles_image_box() {
        let cfg = LayoutConfig::default();
        let cells = grid_3x3(&cfg.image_box);
        let area: f64 = cells.iter().map(|c| c.width() * c.height()).sum();
        assert_eq!(area, cfg.image_box.width() * cfg.image_box.height());
        for (i, a) in cells.iter().enumerate() {
            assert!(cfg.image_box.contains_box(a));
            for b in &cells[i + 1..] {
                assert!(!a.intersects(b));
            }
        }
        let widths: Vec<f64> = cells.iter().map(PixelBox::width).collect();
        let heights: Vec<f64> = cells.iter().map(PixelBox::height).collect();
        let spread = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread(&widths) <= 2.0 && spread(&heights) <= 2.0);
    }

    #[test]
    fn blank_cover_still_has_nine_regions() {
        let card = render_card(&news("hello", "x"), None, &LayoutConfig::default()).unwrap();
        let r = split_regions(&card);
        assert_eq!(r.image.len(), 9);
        assert!(r.image.iter().all(|g| g.crop.as_bytes().iter().all(|&b| b == 255)));
    }

    #[test]
    fn raster_fallback_matches_metadata() {
        let cfg = LayoutConfig::default();
        for (title, cat) in [
            ("Quick brown fox jumps over the lazy dog again and again", "lifestyle"),
            ("I'll be there: 10.5% off | sale!", "finance"),
            ("single", "a"),
            ("mmmmmmmmmmmmmmmmmmmmmmmmmmmmmmmm wwww", "sports"),
        ] {
            let cover = RgbImage::filled(10, 10, [250, 250, 250]);
            let card = render_card(&news(title, cat), Some(&cover), &cfg).unwrap();
            let meta = split_regions(&card);
            let fb = split_regions_raster(&card.pixels, "N7", &cfg).unwrap();
            assert_eq!(fb.words.len(), meta.words.len(), "{title}");
            for (a, b) in fb.words.iter().zip(&meta.words) {
                for (u, v) in [(a.bbox.x0, b.bbox.x0), (a.bbox.x1, b.bbox.x1), (a.bbox.y0, b.bbox.y0), (a.bbox.y1, b.bbox.y1)] {
                    assert!((u - v).abs() <= 2.0, "{title}: {:?} vs {:?}", a.bbox, b.bbox);
                }
            }
            let boxes = |r: &RegionSet| r.image.iter().map(|g| g.bbox).collect::<Vec<_>>();
            assert_eq!(boxes(&fb), boxes(&meta));
            assert_eq!(fb.category.bbox, meta.category.bbox, "{title}");
        }
    }

    #[test]
    fn raster_without_text_fails() {
        let cfg = LayoutConfig::default();
        let blank = RgbImage::filled(cfg.card_w, cfg.card_h, [255, 255, 255]);
        assert!(matches!(split_regions_raster(&blank, "N0", &cfg), Err(Error::Decomposition(_))));
    }
}
