use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::NewsRecord;

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token index with `0 = <pad>` and `1 = <unk>`; real tokens follow in
/// (frequency desc, token asc) order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    freq: Vec<usize>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    freq: Vec<usize>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let index = r.tokens.iter().enumerate().skip(2).map(|(i, t)| (t.clone(), i)).collect();
        Vocab {
            tokens: r.tokens,
            freq: r.freq,
            index,
        }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            tokens: v.tokens,
            freq: v.freq,
        }
    }
}

impl Vocab {
    pub fn build(news: &[NewsRecord], min_freq: usize) -> Self {
        Self::from_titles(news.iter().map(|n| n.title.as_str()), min_freq)
    }

    pub fn from_titles<'a>(titles: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in titles {
            for tok in tokenize(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        let mut freq = vec![0, 0];
        for (t, c) in entries {
            tokens.push(t);
            freq.push(c);
        }
        VocabRepr { tokens, freq }.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn frequency(&self, token: &str) -> usize {
        self.index.get(token).map_or(0, |&i| self.freq[i])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids for a title; an empty title becomes a single `<unk>`.
    pub fn encode(&self, title: &str) -> Vec<usize> {
        let ids: Vec<usize> = tokenize(title).iter().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            vec![OOV]
        } else {
            ids
        }
    }
}
