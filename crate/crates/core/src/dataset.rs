//! Glue between parsed corpora, extracted features and the model: the
//! encoder-ready news table and checkpoint metadata.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{NewsRecord, Vocab};
use crate::decompose::{split_regions, FeatureExtractor, FeatureFile, NewsFeatures};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NewsInput, NrmsIm};
use crate::params::{load_checkpoint, save_checkpoint};
use crate::render::{find_cover, render_with_cover_dir, ImpressionCard, LayoutConfig};

/// Renders, decomposes and embeds every news item. Output order follows `news`.
pub fn extract_features(
    news: &[NewsRecord],
    images: Option<&Path>,
    layout: &LayoutConfig,
    fx: &FeatureExtractor,
) -> Result<FeatureFile> {
    let items: Vec<NewsFeatures> = news
        .par_iter()
        .map(|n| {
            let card = render_with_cover_dir(n, images, layout)?;
            let cues = fx.extract_cues(&split_regions(&card))?;
            let global = fx.extract_global(&card)?;
            Ok(NewsFeatures {
                cues: cues.vectors,
                global: global.0,
            })
        })
        .collect::<Result<_>>()?;
    let mut file = FeatureFile::new(fx.region_dim(), fx.global_dim());
    for (n, f) in news.iter().zip(items) {
        file.insert(n.news_id.clone(), f)?;
    }
    Ok(file)
}

/// Like [`extract_features`] but reads cards saved by [`ImpressionCard::save`].
pub fn extract_features_from_cards(news: &[NewsRecord], cards: &Path, fx: &FeatureExtractor) -> Result<FeatureFile> {
    let items: Vec<NewsFeatures> = news
        .par_iter()
        .map(|n| {
            let card = ImpressionCard::load(cards, &n.news_id)?;
            Ok(NewsFeatures {
                cues: fx.extract_cues(&split_regions(&card))?.vectors,
                global: fx.extract_global(&card)?.0,
            })
        })
        .collect::<Result<_>>()?;
    let mut file = FeatureFile::new(fx.region_dim(), fx.global_dim());
    for (n, f) in news.iter().zip(items) {
        file.insert(n.news_id.clone(), f)?;
    }
    Ok(file)
}

/// Whether a news item has a cover, either named in the record or found in `images`.
pub fn has_cover(news: &NewsRecord, images: Option<&Path>) -> bool {
    news.cover.as_ref().is_some_and(|p| p.is_file()) || images.is_some_and(|d| find_cover(d, &news.news_id).is_some())
}

#[derive(Clone, Debug)]
pub struct NewsEntry {
    pub input: NewsInput<f32>,
    pub has_cover: bool,
}

/// Encoder inputs for every known news id.
#[derive(Clone, Debug, Default)]
pub struct NewsTable {
    entries: HashMap<String, NewsEntry>,
}

impl NewsTable {
    pub fn build(
        news: &[NewsRecord],
        vocab: &Vocab,
        features: &FeatureFile,
        covers: impl Fn(&NewsRecord) -> bool,
        max_title: usize,
    ) -> Result<Self> {
        let mut entries = HashMap::with_capacity(news.len());
        for n in news {
            let f = features
                .items
                .get(&n.news_id)
                .ok_or_else(|| Error::FeatureMissing(n.news_id.clone()))?;
            let mut tokens = vocab.encode(&n.title);
            tokens.truncate(max_title);
            let input = NewsInput {
                tokens,
                cues: f.cues.clone(),
                global: f.global.clone(),
                impression: true,
            };
            entries.insert(n.news_id.clone(), NewsEntry { input, has_cover: covers(n) });
        }
        Ok(Self { entries })
    }

    pub fn get(&self, id: &str) -> Result<&NewsEntry> {
        self.entries.get(id).ok_or_else(|| Error::MissingNews(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }
}

/// How the features a checkpoint was trained on were produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExtractorSpec {
    Projection { seed: u64, d_c: usize, d_g: usize },
    Precomputed { d_c: usize, d_g: usize },
}

impl ExtractorSpec {
    /// Rebuilds a projection extractor; precomputed specs need their file.
    pub fn projection(&self) -> Option<FeatureExtractor> {
        match *self {
            Self::Projection { seed, d_c, d_g } => Some(FeatureExtractor::projection(seed, d_c, d_g)),
            Self::Precomputed { .. } => None,
        }
    }
}

/// Sidecar stored next to a checkpoint as `<ckpt>.meta.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub extractor: ExtractorSpec,
    /// Users present in the training split, sorted.
    pub train_users: BTreeSet<String>,
}

pub fn meta_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn save_model(ckpt: &Path, model: &NrmsIm<f32>, meta: &CheckpointMeta) -> Result<()> {
    save_checkpoint(&model.params, ckpt)?;
    let path = meta_path(ckpt);
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::format("checkpoint metadata", e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_model(ckpt: &Path) -> Result<(NrmsIm<f32>, CheckpointMeta)> {
    let params = load_checkpoint(ckpt)?;
    let path = meta_path(ckpt);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::format("checkpoint metadata", e.to_string()))?;
    let model = NrmsIm::from_params(meta.model.clone(), params)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};

    #[test]
    fn features_follow_news_order_and_sizes() {
        let corpus = gen_synthetic(&SynthConfig { n_users: 10, n_news: 40, ..SynthConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.write(dir.path()).unwrap();
        let images = dir.path().join("images");
        let fx = FeatureExtractor::projection(1, 8, 12);
        let f = extract_features(&corpus.news, Some(&images), &LayoutConfig::default(), &fx).unwrap();
        let ids: Vec<&str> = corpus.news.iter().map(|n| n.news_id.as_str()).collect();
        assert_eq!(f.order, ids);
        let cards = dir.path().join("cards");
        std::fs::create_dir(&cards).unwrap();
        for n in &corpus.news {
            render_with_cover_dir(n, Some(&images), &LayoutConfig::default()).unwrap().save(&cards).unwrap();
        }
        assert_eq!(extract_features_from_cards(&corpus.news, &cards, &fx).unwrap(), f);
        for n in &corpus.news {
            assert_eq!(has_cover(n, Some(&images)), corpus.has_cover(&n.news_id));
        }
        let vocab = Vocab::build(&corpus.news, 1);
        let table = NewsTable::build(&corpus.news, &vocab, &f, |n| has_cover(n, Some(&images)), 15).unwrap();
        assert_eq!(table.len(), 40);
        assert!(matches!(table.get("nope"), Err(Error::MissingNews(_))));
    }

    #[test]
    fn model_round_trip() {
        let cfg = ModelConfig { vocab_size: 5, d_w: 4, d_h: 4, heads: 2, d_add: 4, d_c: 3, d_g: 3, ..ModelConfig::default() };
        let model = NrmsIm::<f32>::new(cfg.clone(), 1).unwrap();
        let meta = CheckpointMeta {
            model: cfg,
            vocab: Vocab::from_titles(["a b c"], 1),
            extractor: ExtractorSpec::Projection { seed: 3, d_c: 3, d_g: 3 },
            train_users: ["U1".to_string()].into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("m.ckpt");
        save_model(&ckpt, &model, &meta).unwrap();
        assert!(meta_path(&ckpt).ends_with("m.ckpt.meta.json"));
        let (back, m2) = load_model(&ckpt).unwrap();
        assert!(back.params.iter().zip(model.params.iter()).all(|(a, b)| a == b));
        assert_eq!(m2.extractor, meta.extractor);
        assert_eq!(m2.train_users, meta.train_users);
    }
}
