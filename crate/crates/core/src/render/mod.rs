//! Deterministic impression-card rendering.
//!
//! A card is a white canvas with the cover pasted into the image box, the
//! title laid out in fixed-advance cells to its right and the category label
//! underneath. Every box the model later consumes is computed exactly, never
//! measured back from pixels.

pub mod font;
pub mod layout;
pub mod raster;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::NewsRecord;
use crate::error::{Error, Result};
pub use layout::{layout_title, LayoutConfig, LineLayout, PixelBox, TitleLayout, WordBox};
pub use raster::{write_pgm, Rgb, RgbImage, BLACK, WHITE};

/// Display string used for a news item with an empty title.
pub const EMPTY_TITLE_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq)]
pub struct ImpressionCard {
    pub news_id: String,
    pub pixels: RgbImage,
    pub title_layout: TitleLayout,
    pub image_box: PixelBox,
    pub category_box: PixelBox,
    pub category_text: String,
    pub has_cover: bool,
    /// Set when a cover was supplied but could not be decoded.
    pub cover_warning: Option<String>,
}

/// Layout sidecar written next to each rendered card.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardMetadata {
    pub news_id: String,
    pub width: usize,
    pub height: usize,
    pub lines: Vec<LineLayout>,
    pub dropped_tokens: usize,
    pub image_box: PixelBox,
    pub category_box: PixelBox,
    pub category_text: String,
    pub has_cover: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cover_warning: Option<String>,
}

impl ImpressionCard {
    pub fn metadata(&self) -> CardMetadata {
        CardMetadata {
            news_id: self.news_id.clone(),
            width: self.pixels.width(),
            height: self.pixels.height(),
            lines: self.title_layout.lines.clone(),
            dropped_tokens: self.title_layout.dropped,
            image_box: self.image_box,
            category_box: self.category_box,
            category_text: self.category_text.clone(),
            has_cover: self.has_cover,
            cover_warning: self.cover_warning.clone(),
        }
    }

    pub fn from_parts(pixels: RgbImage, meta: CardMetadata) -> Result<Self> {
        if (pixels.width(), pixels.height()) != (meta.width, meta.height) {
            return Err(Error::format("card metadata", "raster size disagrees with sidecar"));
        }
        Ok(Self {
            news_id: meta.news_id,
            pixels,
            title_layout: TitleLayout {
                lines: meta.lines,
                dropped: meta.dropped_tokens,
            },
            image_box: meta.image_box,
            category_box: meta.category_box,
            category_text: meta.category_text,
            has_cover: meta.has_cover,
            cover_warning: meta.cover_warning,
        })
    }

    /// Writes `<dir>/<id>.png` and `<dir>/<id>.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.pixels.save(&dir.join(format!("{}.png", self.news_id)))?;
        let json_path = dir.join(format!("{}.json", self.news_id));
        let json = serde_json::to_vec_pretty(&self.metadata()).expect("metadata serializes");
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(dir: &Path, news_id: &str) -> Result<Self> {
        let pixels = RgbImage::load(&dir.join(format!("{news_id}.png")))?;
        let json_path = dir.join(format!("{news_id}.json"));
        let bytes = std::fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let meta: CardMetadata =
            serde_json::from_slice(&bytes).map_err(|e| Error::format("card metadata", e.to_string()))?;
        Self::from_parts(pixels, meta)
    }
}

/// Whitespace-separated title words as they appear on the card.
pub fn display_tokens(title: &str) -> Vec<String> {
    let toks: Vec<String> = title.split_whitespace().map(str::to_string).collect();
    if toks.is_empty() {
        vec![EMPTY_TITLE_TOKEN.to_string()]
    } else {
        toks
    }
}

pub fn render_card(news: &NewsRecord, cover: Option<&RgbImage>, cfg: &LayoutConfig) -> Result<ImpressionCard> {
    cfg.validate()?;
    let mut pixels = RgbImage::filled(cfg.card_w, cfg.card_h, cfg.background);

    let (ix0, iy0, ix1, iy1) = cfg.image_pixels();
    if let Some(cover) = cover {
        let resized = cover.resize_nearest(ix1 - ix0, iy1 - iy0);
        pixels.blit(&resized, ix0, iy0);
    }

    let tokens = display_tokens(&news.title);
    let title_layout = layout_title(&tokens, cfg)?;
    for word in title_layout.words() {
        font::draw_text(
            &mut pixels,
            &word.token,
            word.bbox.x0,
            word.bbox.y0,
            cfg.title_advance,
            cfg.title_font_px,
            raster::BLACK,
        );
    }

    let category_text: String = news.category.chars().take(cfg.category_max_chars()).collect();
    let (cx, cy) = cfg.category_anchor;
    let category_box = PixelBox::new(
        cx,
        cy,
        cx + category_text.chars().count() as f64 * cfg.category_advance,
        cy + cfg.category_font_px,
    );
    font::draw_text(
        &mut pixels,
        &category_text,
        cx,
        cy,
        cfg.category_advance,
        cfg.category_font_px,
        raster::BLACK,
    );

    Ok(ImpressionCard {
        news_id: news.news_id.clone(),
        pixels,
        title_layout,
        image_box: cfg.image_box,
        category_box,
        category_text,
        has_cover: cover.is_some(),
        cover_warning: None,
    })
}

/// Renders from encoded cover bytes. Bytes that fail to decode are treated
/// as a missing cover and recorded in `cover_warning`.
pub fn render_card_from_bytes(news: &NewsRecord, cover: Option<&[u8]>, cfg: &LayoutConfig) -> Result<ImpressionCard> {
    match cover.map(RgbImage::decode) {
        None => render_card(news, None, cfg),
        Some(Ok(img)) => render_card(news, Some(&img), cfg),
        Some(Err(e)) => {
            let mut card = render_card(news, None, cfg)?;
            card.cover_warning = Some(e.to_string());
            Ok(card)
        }
    }
}

/// Cover file for `news_id` in `dir`: `<id>.png` first, then `<id>.ppm`.
pub fn find_cover(dir: &Path, news_id: &str) -> Option<PathBuf> {
    ["png", "ppm"]
        .iter()
        .map(|ext| dir.join(format!("{news_id}.{ext}")))
        .find(|p| p.is_file())
}

/// Renders `news`, looking up its cover in `images` when given.
pub fn render_with_cover_dir(news: &NewsRecord, images: Option<&Path>, cfg: &LayoutConfig) -> Result<ImpressionCard> {
    let path = news
        .cover
        .clone()
        .or_else(|| images.and_then(|d| find_cover(d, &news.news_id)));
    match path {
        None => render_card(news, None, cfg),
        Some(p) => {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            render_card_from_bytes(news, Some(&bytes), cfg)
        }
    }
}
