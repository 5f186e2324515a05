//! Seeded synthetic MIND-format corpora with a planted click signal.
//!
//! Every news item gets a latent class. Users get a class too, and a click is
//! drawn from [`SynthConfig::click_probability`]: likely when the classes
//! match, rare otherwise, with a separate rate for news without a cover. The
//! signal mode decides where the news class is visible:
//!
//! * `visual`: the cover color. Titles are drawn from a shared filler pool
//!   independently of the class, so they carry no label information.
//! * `text`: a class keyword in the title; cover colors are random.
//! * `mixed`: both.
//!
//! News is split into a training pool and a held-out pool; dev impressions
//! only show held-out candidates, and a share of users appears in dev only.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mind::{write_behaviors_tsv, write_news_tsv, BehaviorRecord, NewsRecord};
use crate::error::{Error, Result};
use crate::render::raster::{Rgb, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Text,
    Visual,
    Mixed,
}

impl std::str::FromStr for Signal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Signal::Text),
            "visual" => Ok(Signal::Visual),
            "mixed" => Ok(Signal::Mixed),
            other => Err(Error::Config(format!("unknown signal {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_news: usize,
    pub signal: Signal,
    pub seed: u64,
    pub n_classes: usize,
    pub history_len: usize,
    pub train_impressions_per_user: usize,
    pub dev_impressions_per_user: usize,
    pub candidates_per_impression: usize,
    /// Share of news without a cover image.
    pub blank_fraction: f64,
    /// Share of news held out for dev candidates.
    pub heldout_news_fraction: f64,
    /// Share of users absent from the training behaviors.
    pub unseen_user_fraction: f64,
    pub p_match: f64,
    pub p_mismatch: f64,
    pub p_blank: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 100,
            n_news: 200,
            signal: Signal::Mixed,
            seed: 7,
            n_classes: 4,
            history_len: 8,
            train_impressions_per_user: 3,
            dev_impressions_per_user: 2,
            candidates_per_impression: 8,
            blank_fraction: 0.1,
            heldout_news_fraction: 0.3,
            unseen_user_fraction: 0.2,
            p_match: 0.98,
            p_mismatch: 0.005,
            p_blank: 0.05,
        }
    }
}

pub const PALETTE: [Rgb; 6] = [
    [220, 40, 40],
    [40, 160, 60],
    [40, 70, 220],
    [230, 200, 30],
    [160, 60, 200],
    [30, 190, 200],
];

pub const KEYWORDS: [&str; 6] = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"];

const CATEGORIES: [&str; 4] = ["news", "sports", "finance", "lifestyle"];

const ONSETS: [&str; 8] = ["b", "k", "l", "m", "n", "p", "r", "t"];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

const COVER_W: usize = 64;
const COVER_H: usize = 48;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_users < 4 || self.n_news < 20 {
            return bad("need at least 4 users and 20 news");
        }
        if self.n_classes < 2 || self.n_classes > PALETTE.len() {
            return bad("n_classes must be in 2..=6");
        }
        if self.candidates_per_impression < 2 || self.history_len == 0 {
            return bad("need at least 2 candidates and a non-empty history");
        }
        for p in [self.p_match, self.p_mismatch, self.p_blank] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must be in [0, 1]");
            }
        }
        for f in [self.blank_fraction, self.heldout_news_fraction, self.unseen_user_fraction] {
            if !(0.0..1.0).contains(&f) {
                return bad("fractions must be in [0, 1)");
            }
        }
        Ok(())
    }

    /// Click probability for a user of `user_class` shown news of
    /// `news_class`, with `has_cover` telling whether it shows a cover.
    pub fn click_probability(&self, user_class: usize, news_class: usize, has_cover: bool) -> f64 {
        let visible = match self.signal {
            Signal::Visual => has_cover,
            Signal::Text | Signal::Mixed => true,
        };
        if !visible {
            self.p_blank
        } else if user_class == news_class {
            self.p_match
        } else {
            self.p_mismatch
        }
    }

    /// Parses `key = value` lines; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Config(format!("{k}: bad number {v:?}")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| Error::Config(format!("{k}: bad integer {v:?}")));
            match k {
                "n_users" => cfg.n_users = int(v)?,
                "n_news" => cfg.n_news = int(v)?,
                "signal" => cfg.signal = v.parse()?,
                "seed" => cfg.seed = v.parse().map_err(|_| Error::Config(format!("seed: bad integer {v:?}")))?,
                "n_classes" => cfg.n_classes = int(v)?,
                "history_len" => cfg.history_len = int(v)?,
                "train_impressions_per_user" => cfg.train_impressions_per_user = int(v)?,
                "dev_impressions_per_user" => cfg.dev_impressions_per_user = int(v)?,
                "candidates_per_impression" => cfg.candidates_per_impression = int(v)?,
                "blank_fraction" => cfg.blank_fraction = num(v)?,
                "heldout_news_fraction" => cfg.heldout_news_fraction = num(v)?,
                "unseen_user_fraction" => cfg.unseen_user_fraction = num(v)?,
                "p_match" => cfg.p_match = num(v)?,
                "p_mismatch" => cfg.p_mismatch = num(v)?,
                "p_blank" => cfg.p_blank = num(v)?,
                other => return Err(Error::Config(format!("unknown synth key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub news: Vec<NewsRecord>,
    pub covers: BTreeMap<String, RgbImage>,
    pub train: Vec<BehaviorRecord>,
    pub dev: Vec<BehaviorRecord>,
    pub news_class: BTreeMap<String, usize>,
    pub user_class: BTreeMap<String, usize>,
    /// Ids of news only used as dev candidates.
    pub heldout_news: Vec<String>,
}

impl SyntheticCorpus {
    pub fn has_cover(&self, news_id: &str) -> bool {
        self.covers.contains_key(news_id)
    }

    /// The generator's own click probability for `(user, news)`.
    pub fn click_probability(&self, user_id: &str, news_id: &str) -> Option<f64> {
        let u = *self.user_class.get(user_id)?;
        let n = *self.news_class.get(news_id)?;
        Some(self.config.click_probability(u, n, self.has_cover(news_id)))
    }

    /// Writes `train/` and `dev/` MIND directories plus `images/<id>.png`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["train", "dev", "images"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_news_tsv(&self.news, &dir.join("train/news.tsv"))?;
        write_news_tsv(&self.news, &dir.join("dev/news.tsv"))?;
        write_behaviors_tsv(&self.train, &dir.join("train/behaviors.tsv"))?;
        write_behaviors_tsv(&self.dev, &dir.join("dev/behaviors.tsv"))?;
        for (id, img) in &self.covers {
            img.save(&dir.join("images").join(format!("{id}.png")))?;
        }
        Ok(())
    }
}

fn filler_words() -> Vec<String> {
    let mut out = Vec::new();
    for a in ONSETS {
        for b in NUCLEI {
            out.push(format!("{a}{b}{}", ONSETS[(a.len() + b.len() * 3) % ONSETS.len()]));
        }
    }
    out.sort();
    out.dedup();
    out
}

fn make_cover(color: Rgb, rng: &mut ChaCha8Rng) -> RgbImage {
    let mut img = RgbImage::filled(COVER_W, COVER_H, color);
    // a gray block at a random spot, so covers of one class are not identical
    let bw = rng.random_range(8..20);
    let bh = rng.random_range(6..16);
    let bx = rng.random_range(0..COVER_W - bw);
    let by = rng.random_range(0..COVER_H - bh);
    let shade = rng.random_range(60..200u8);
    for y in by..by + bh {
        for x in bx..bx + bw {
            img.put(x, y, [shade, shade, shade]);
        }
    }
    img
}

/// One Bernoulli click draw.
pub fn draw_click(rng: &mut impl Rng, p: f64) -> u8 {
    u8::from(rng.random_bool(p))
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let filler = filler_words();

    let mut news = Vec::with_capacity(cfg.n_news);
    let mut covers = BTreeMap::new();
    let mut news_class = BTreeMap::new();
    for i in 0..cfg.n_news {
        let id = format!("N{}", i + 1);
        let class = rng.random_range(0..cfg.n_classes);
        let has_cover = !rng.random_bool(cfg.blank_fraction);

        let len = rng.random_range(4..=7);
        let mut words: Vec<String> = (0..len).map(|_| filler[rng.random_range(0..filler.len())].clone()).collect();
        if matches!(cfg.signal, Signal::Text | Signal::Mixed) {
            let at = rng.random_range(0..=words.len());
            words.insert(at, KEYWORDS[class].to_string());
        }
        let mut title = words.join(" ");
        if let Some(first) = title.get_mut(0..1) {
            first.make_ascii_uppercase();
        }

        let color_class = match cfg.signal {
            Signal::Visual | Signal::Mixed => class,
            Signal::Text => rng.random_range(0..cfg.n_classes),
        };
        let cover = make_cover(PALETTE[color_class], &mut rng);
        if has_cover {
            covers.insert(id.clone(), cover);
        }
        let category = CATEGORIES[rng.random_range(0..CATEGORIES.len())];
        news.push(NewsRecord {
            news_id: id.clone(),
            category: category.to_string(),
            subcategory: format!("{category}{}", rng.random_range(1..=3)),
            title,
            abstract_text: String::new(),
            url: format!("https://example.invalid/{id}"),
            title_entities: "[]".into(),
            abstract_entities: "[]".into(),
            cover: None,
        });
        news_class.insert(id, class);
    }

    let n_heldout = ((cfg.n_news as f64) * cfg.heldout_news_fraction).round() as usize;
    let n_pool = cfg.n_news - n_heldout;
    let pool: Vec<&NewsRecord> = news[..n_pool].iter().collect();
    let heldout: Vec<&NewsRecord> = news[n_pool..].iter().collect();
    if heldout.len() < cfg.candidates_per_impression && cfg.dev_impressions_per_user > 0 {
        return Err(Error::Config("held-out pool smaller than one impression".into()));
    }

    let n_unseen = ((cfg.n_users as f64) * cfg.unseen_user_fraction).round() as usize;
    let n_seen = cfg.n_users - n_unseen;
    let mut user_class = BTreeMap::new();
    let mut users = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let id = format!("U{}", u + 1);
        user_class.insert(id.clone(), rng.random_range(0..cfg.n_classes));
        users.push(id);
    }

    let click = |rng: &mut ChaCha8Rng, user: &str, n: &NewsRecord| -> u8 {
        let p = cfg.click_probability(user_class[user], news_class[&n.news_id], covers.contains_key(&n.news_id));
        draw_click(rng, p)
    };

    let mut histories = BTreeMap::new();
    for user in &users {
        let mut hist = Vec::with_capacity(cfg.history_len);
        let mut attempts = 0;
        while hist.len() < cfg.history_len && attempts < 10_000 {
            attempts += 1;
            let n = pool[rng.random_range(0..pool.len())];
            if click(&mut rng, user, n) == 1 && !hist.contains(&n.news_id) {
                hist.push(n.news_id.clone());
            }
        }
        histories.insert(user.clone(), hist);
    }

    let impression = |rng: &mut ChaCha8Rng, user: &str, from: &[&NewsRecord]| -> Vec<(String, u8)> {
        let hist = &histories[user];
        let eligible: Vec<&NewsRecord> = from.iter().copied().filter(|n| !hist.contains(&n.news_id)).collect();
        let k = cfg.candidates_per_impression.min(eligible.len());
        let mut last = Vec::new();
        for _ in 0..200 {
            let picked: Vec<&NewsRecord> = eligible.choose_multiple(rng, k).copied().collect();
            last = picked.iter().map(|n| (n.news_id.clone(), click(rng, user, n))).collect::<Vec<_>>();
            let pos = last.iter().filter(|c| c.1 == 1).count();
            if pos > 0 && pos < last.len() {
                break;
            }
        }
        last
    };

    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut minute = 0u32;
    let mut stamp = || {
        minute += 1;
        format!("11/{:02}/2019 {}:{:02}:00 AM", 9 + minute / 600, 1 + (minute / 60) % 11, minute % 60)
    };
    for user in users.iter().take(n_seen) {
        for _ in 0..cfg.train_impressions_per_user {
            let candidates = impression(&mut rng, user, &pool);
            train.push(BehaviorRecord {
                impression_id: (train.len() + 1).to_string(),
                user_id: user.clone(),
                timestamp: stamp(),
                history: histories[user].clone(),
                candidates,
            });
        }
    }
    for user in &users {
        for _ in 0..cfg.dev_impressions_per_user {
            let candidates = impression(&mut rng, user, &heldout);
            dev.push(BehaviorRecord {
                impression_id: (dev.len() + 1).to_string(),
                user_id: user.clone(),
                timestamp: stamp(),
                history: histories[user].clone(),
                candidates,
            });
        }
    }

    let heldout_news = heldout.iter().map(|n| n.news_id.clone()).collect();
    Ok(SyntheticCorpus {
        config: cfg.clone(),
        news,
        covers,
        train,
        dev,
        news_class,
        user_class,
        heldout_news,
    })
}
