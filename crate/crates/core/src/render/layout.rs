use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in card pixel coordinates, `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains_box(&self, other: &PixelBox) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    pub fn intersects(&self, other: &PixelBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// Integer pixel range whose centers lie inside the box.
    pub fn pixel_span(&self) -> (usize, usize, usize, usize) {
        let c = |v: f64| (v - 0.5).ceil().max(0.0) as usize;
        (c(self.x0), c(self.y0), c(self.x1), c(self.y1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub card_w: usize,
    pub card_h: usize,
    pub background: [u8; 3],
    /// Cover region; covers are resized to exactly this box.
    pub image_box: PixelBox,
    pub title_anchor_x: f64,
    pub title_top: f64,
    pub title_font_px: f64,
    pub title_advance: f64,
    pub line_spacing: f64,
    pub max_lines: usize,
    pub max_chars_per_line: usize,
    pub category_anchor: (f64, f64),
    pub category_font_px: f64,
    pub category_advance: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            card_w: 615,
            card_h: 195,
            background: [255, 255, 255],
            image_box: PixelBox::new(15.0, 15.0, 215.0, 180.0),
            title_anchor_x: 227.725,
            title_top: 15.0,
            title_font_px: 27.0,
            // 27 cells of 13 px end at x = 578.725, inside the 615 px card
            title_advance: 13.0,
            line_spacing: 10.5,
            max_lines: 3,
            max_chars_per_line: 27,
            category_anchor: (227.725, 142.5),
            category_font_px: 24.0,
            category_advance: 11.0,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<()> {
        let card = self.card_box();
        let bad = |m: &str| Err(Error::Config(format!("layout: {m}")));
        if !card.contains_box(&self.image_box) || self.image_box.width() < 3.0 || self.image_box.height() < 3.0 {
            return bad("image box must lie inside the card and hold a 3x3 grid");
        }
        if self.max_lines == 0 || self.max_chars_per_line == 0 {
            return bad("max_lines and max_chars_per_line must be positive");
        }
        if self.title_anchor_x < self.image_box.x1 {
            return bad("title column overlaps the image box");
        }
        let title_right = self.title_anchor_x + self.max_chars_per_line as f64 * self.title_advance;
        if title_right > card.x1 || self.title_bottom() > card.y1 {
            return bad("title block does not fit the card");
        }
        let (cx, cy) = self.category_anchor;
        if cx < 0.0 || cy < 0.0 || cx >= card.x1 || cy + self.category_font_px > card.y1 {
            return bad("category anchor outside the card");
        }
        Ok(())
    }

    pub fn card_box(&self) -> PixelBox {
        PixelBox::new(0.0, 0.0, self.card_w as f64, self.card_h as f64)
    }

    pub fn line_pitch(&self) -> f64 {
        self.title_font_px + self.line_spacing
    }

    pub fn title_bottom(&self) -> f64 {
        self.title_top + (self.max_lines - 1) as f64 * self.line_pitch() + self.title_font_px
    }

    /// Image box rounded to whole pixels.
    pub fn image_pixels(&self) -> (usize, usize, usize, usize) {
        self.image_box.pixel_span()
    }

    pub fn category_max_chars(&self) -> usize {
        ((self.card_w as f64 - self.category_anchor.0) / self.category_advance).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub token: String,
    pub bbox: PixelBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineLayout {
    pub words: Vec<WordBox>,
    pub bbox: PixelBox,
}

impl LineLayout {
    /// Characters on the line, counting one space between words.
    pub fn char_count(&self) -> usize {
        let letters: usize = self.words.iter().map(|w| w.token.chars().count()).sum();
        letters + self.words.len().saturating_sub(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TitleLayout {
    pub lines: Vec<LineLayout>,
    /// Tokens that did not fit in `max_lines`.
    pub dropped: usize,
}

impl TitleLayout {
    pub fn words(&self) -> impl Iterator<Item = &WordBox> {
        self.lines.iter().flat_map(|l| l.words.iter())
    }

    pub fn word_count(&self) -> usize {
        self.lines.iter().map(|l| l.words.len()).sum()
    }
}

/// Greedy line filling. A token that would push a line past the character
/// budget (words separated by one space) opens the next line; tokens after
/// the last line are dropped; a token longer than the budget keeps its prefix.
pub fn layout_title<S: AsRef<str>>(tokens: &[S], cfg: &LayoutConfig) -> Result<TitleLayout> {
    if tokens.is_empty() {
        return Err(Error::EmptyTitle);
    }
    let budget = cfg.max_chars_per_line;
    let mut lines: Vec<Vec<String>> = vec![Vec::new()];
    let mut used = 0usize;
    let mut dropped = 0usize;
    for (i, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        if tok.is_empty() || tok.chars().any(char::is_whitespace) {
            return Err(Error::Contract(format!("title token {i} is empty or contains whitespace")));
        }
        let tok: String = tok.chars().take(budget).collect();
        let len = tok.chars().count();
        let needed = if used == 0 { len } else { used + 1 + len };
        if needed <= budget {
            lines.last_mut().expect("non-empty").push(tok);
            used = needed;
        } else if lines.len() < cfg.max_lines {
            lines.push(vec![tok]);
            used = len;
        } else {
            dropped = tokens.len() - i;
            break;
        }
    }

    let adv = cfg.title_advance;
    let lines = lines
        .into_iter()
        .enumerate()
        .map(|(li, words)| {
            let y0 = cfg.title_top + li as f64 * cfg.line_pitch();
            let y1 = y0 + cfg.title_font_px;
            let mut col = 0usize;
            let words: Vec<WordBox> = words
                .into_iter()
                .map(|token| {
                    let len = token.chars().count();
                    let x0 = cfg.title_anchor_x + col as f64 * adv;
                    col += len + 1;
                    WordBox {
                        bbox: PixelBox::new(x0, y0, x0 + len as f64 * adv, y1),
                        token,
                    }
                })
                .collect();
            let bbox = PixelBox::new(
                words[0].bbox.x0,
                y0,
                words.last().expect("non-empty").bbox.x1,
                y1,
            );
            LineLayout { words, bbox }
        })
        .collect();
    Ok(TitleLayout { lines, dropped })
}
