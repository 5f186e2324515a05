//! Impression-grouped evaluation with user and news slices.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BehaviorRecord;
use crate::dataset::NewsTable;
use crate::error::{Error, Result};
use crate::metrics::{auc, mrr, ndcg_at_k};
use crate::model::{score, NrmsIm};
use crate::tensor::Tensor;

/// One impression with model scores attached.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredImpression {
    pub impression_id: String,
    pub seen: bool,
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
    pub has_cover: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scored {
    pub impressions: Vec<ScoredImpression>,
    /// Impressions dropped because some news id was not in the table.
    pub skipped: usize,
}

/// `e*` for each id, computed in parallel.
pub fn news_vectors(model: &NrmsIm<f32>, table: &NewsTable, ids: &[&str]) -> Result<HashMap<String, Tensor<f32>>> {
    ids.par_iter()
        .map(|&id| Ok((id.to_string(), model.news_vector(&table.get(id)?.input)?)))
        .collect()
}

/// Scores every candidate with `σ(cᵀu)`. Output order follows `behaviors`.
pub fn score_impressions(
    model: &NrmsIm<f32>,
    table: &NewsTable,
    behaviors: &[BehaviorRecord],
    seen_users: &BTreeSet<String>,
) -> Result<Scored> {
    let mut needed = BTreeSet::new();
    for b in behaviors {
        for id in b.history.iter().chain(b.candidates.iter().map(|c| &c.0)) {
            if table.contains(id) {
                needed.insert(id.as_str());
            }
        }
    }
    let ids: Vec<&str> = needed.into_iter().collect();
    let vectors = news_vectors(model, table, &ids)?;
    let per: Vec<Option<ScoredImpression>> = behaviors
        .par_iter()
        .map(|b| {
            let resolvable = b.history.iter().chain(b.candidates.iter().map(|c| &c.0)).all(|id| vectors.contains_key(id));
            if !resolvable {
                return Ok(None);
            }
            let history: Vec<&Tensor<f32>> = b.history.iter().map(|id| &vectors[id]).collect();
            let u = model.user_vector(&history)?;
            let scores = b.candidates.iter().map(|(id, _)| score(u.data(), vectors[id].data())).collect();
            Ok(Some(ScoredImpression {
                impression_id: b.impression_id.clone(),
                seen: seen_users.contains(&b.user_id),
                labels: b.candidates.iter().map(|c| c.1).collect(),
                scores,
                has_cover: b.candidates.iter().map(|(id, _)| table.get(id).map(|e| e.has_cover)).collect::<Result<_>>()?,
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = per.iter().filter(|p| p.is_none()).count();
    Ok(Scored {
        impressions: per.into_iter().flatten().collect(),
        skipped,
    })
}

/// A user filter crossed with a candidate filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Slice {
    /// `Some(true)` keeps seen users, `Some(false)` unseen ones.
    pub seen: Option<bool>,
    /// `Some(true)` keeps candidates with a cover, `Some(false)` blank ones.
    pub cover: Option<bool>,
}

impl Slice {
    pub const ALL: Slice = Slice { seen: None, cover: None };

    /// all, seen, unseen, image, blank and the four user x news products.
    pub fn defaults() -> Vec<Slice> {
        let mut out = vec![Self::ALL];
        for seen in [Some(true), Some(false)] {
            out.push(Slice { seen, cover: None });
        }
        for cover in [Some(true), Some(false)] {
            out.push(Slice { seen: None, cover });
        }
        for seen in [true, false] {
            for cover in [true, false] {
                out.push(Slice {
                    seen: Some(seen),
                    cover: Some(cover),
                });
            }
        }
        out
    }

    /// Parses a comma list; `all` is always present and comes first.
    pub fn parse_list(text: &str) -> Result<Vec<Slice>> {
        let mut out = vec![Self::ALL];
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let s: Slice = part.parse()?;
            if !out.contains(&s) {
                out.push(s);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let user = self.seen.map(|s| if s { "seen" } else { "unseen" });
        let news = self.cover.map(|c| if c { "image" } else { "blank" });
        match (user, news) {
            (None, None) => f.write_str("all"),
            (Some(u), None) => f.write_str(u),
            (None, Some(n)) => f.write_str(n),
            (Some(u), Some(n)) => write!(f, "{u}+{n}"),
        }
    }
}

impl FromStr for Slice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut slice = Slice::ALL;
        for part in s.split('+') {
            match part.trim() {
                "all" => {}
                "seen" if slice.seen.is_none() => slice.seen = Some(true),
                "unseen" if slice.seen.is_none() => slice.seen = Some(false),
                "image" if slice.cover.is_none() => slice.cover = Some(true),
                "blank" if slice.cover.is_none() => slice.cover = Some(false),
                _ => return Err(Error::Config(format!("unknown slice {s:?}"))),
            }
        }
        Ok(slice)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub name: String,
    /// Macro averages; `None` when no impression qualified.
    pub auc: Option<f64>,
    pub ndcg5: Option<f64>,
    pub ndcg10: Option<f64>,
    pub mrr: Option<f64>,
    pub n_impressions: usize,
    /// Impressions in the slice without both a click and a non-click.
    pub n_degenerate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub slices: Vec<SliceReport>,
    pub skipped_impressions: usize,
}

impl EvalReport {
    pub fn slice(&self, name: &str) -> Option<&SliceReport> {
        self.slices.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table, one row per slice.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "slice", "n_imp", "AUC", "MRR", "NDCG@5", "NDCG@10"
        );
        for s in &self.slices {
            let _ = writeln!(
                out,
                "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}",
                s.name,
                s.n_impressions,
                cell(s.auc),
                cell(s.mrr),
                cell(s.ndcg5),
                cell(s.ndcg10)
            );
        }
        out
    }
}

fn slice_report(scored: &[ScoredImpression], slice: Slice) -> SliceReport {
    let mut sums = [0.0f64; 4];
    let mut n = 0;
    let mut degenerate = 0;
    for imp in scored {
        if slice.seen.is_some_and(|s| s != imp.seen) {
            continue;
        }
        let keep: Vec<usize> = (0..imp.labels.len())
            .filter(|&i| slice.cover.is_none_or(|c| c == imp.has_cover[i]))
            .collect();
        if keep.is_empty() {
            continue;
        }
        let scores: Vec<f64> = keep.iter().map(|&i| imp.scores[i]).collect();
        let labels: Vec<u8> = keep.iter().map(|&i| imp.labels[i]).collect();
        let Some(a) = auc(&scores, &labels) else {
            degenerate += 1;
            continue;
        };
        sums[0] += a;
        sums[1] += ndcg_at_k(&scores, &labels, 5);
        sums[2] += ndcg_at_k(&scores, &labels, 10);
        sums[3] += mrr(&scores, &labels).expect("has a positive");
        n += 1;
    }
    let avg = |i: usize| (n > 0).then(|| sums[i] / n as f64);
    SliceReport {
        name: slice.to_string(),
        auc: avg(0),
        ndcg5: avg(1),
        ndcg10: avg(2),
        mrr: avg(3),
        n_impressions: n,
        n_degenerate: degenerate,
    }
}

/// Macro-averaged metrics per slice, accumulated in impression order.
pub fn evaluate_scored(scored: &Scored, slices: &[Slice]) -> EvalReport {
    EvalReport {
        slices: slices.iter().map(|&s| slice_report(&scored.impressions, s)).collect(),
        skipped_impressions: scored.skipped,
    }
}

pub fn evaluate(
    model: &NrmsIm<f32>,
    table: &NewsTable,
    behaviors: &[BehaviorRecord],
    seen_users: &BTreeSet<String>,
    slices: &[Slice],
) -> Result<EvalReport> {
    let scored = score_impressions(model, table, behaviors, seen_users)?;
    Ok(evaluate_scored(&scored, slices))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imp(seen: bool, labels: &[u8], scores: &[f64], cover: &[bool]) -> ScoredImpression {
        ScoredImpression {
            impression_id: "1".into(),
            seen,
            labels: labels.to_vec(),
            scores: scores.to_vec(),
            has_cover: cover.to_vec(),
        }
    }

    #[test]
    fn slice_names_round_trip() {
        for s in Slice::defaults() {
            assert_eq!(s.to_string().parse::<Slice>().unwrap(), s);
        }
        assert!("seen+unseen".parse::<Slice>().is_err());
        assert!("visible".parse::<Slice>().is_err());
        let list = Slice::parse_list("seen,unseen").unwrap();
        let names: Vec<String> = list.iter().map(ToString::to_string).collect();
        assert_eq!(names, ["all", "seen", "unseen"]);
    }

    #[test]
    fn equal_scores_give_half_auc() {
        let s = Scored {
            impressions: vec![imp(true, &[1, 0, 0], &[0.5; 3], &[true; 3])],
            skipped: 0,
        };
        let r = evaluate_scored(&s, &[Slice::ALL]);
        assert_eq!(r.slices[0].auc, Some(0.5));
    }

    #[test]
    fn macro_average_and_partition() {
        let s = Scored {
            impressions: vec![
                imp(true, &[1, 0], &[0.9, 0.1], &[true, false]),
                imp(false, &[1, 0, 1], &[0.9, 0.7, 0.2], &[true, true, false]),
                imp(false, &[0, 0], &[0.9, 0.7], &[true, true]),
            ],
            skipped: 2,
        };
        let r = evaluate_scored(&s, &Slice::defaults());
        let all = r.slice("all").unwrap();
        assert_eq!(all.auc, Some(0.75));
        assert_eq!(all.n_degenerate, 1);
        assert_eq!(r.skipped_impressions, 2);
        let seen = r.slice("seen").unwrap();
        let unseen = r.slice("unseen").unwrap();
        assert_eq!(seen.n_impressions + unseen.n_impressions, all.n_impressions);
        assert_eq!(seen.n_degenerate + unseen.n_degenerate, all.n_degenerate);
        // filtering to covered candidates leaves [1,0] with scores [0.9,0.7] in the second impression
        let img = r.slice("unseen+image").unwrap();
        assert_eq!((img.n_impressions, img.auc), (1, Some(1.0)));
        assert_eq!(r.slice("blank").unwrap().n_impressions, 0);
        assert_eq!(r.slice("blank").unwrap().auc, None);
    }

    #[test]
    fn table_has_a_row_per_slice() {
        let s = Scored {
            impressions: vec![imp(true, &[1, 0], &[0.9, 0.1], &[true, true])],
            skipped: 0,
        };
        let r = evaluate_scored(&s, &Slice::defaults());
        let t = r.to_table();
        assert_eq!(t.lines().count(), 1 + Slice::defaults().len());
        assert!(t.lines().nth(1).unwrap().starts_with("all "));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
