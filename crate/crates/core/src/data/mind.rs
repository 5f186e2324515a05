//! MIND-format `news.tsv` / `behaviors.tsv` parsing and writing.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NewsRecord {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title: String,
    /// Parsed for round-tripping; the model never reads it.
    pub abstract_text: String,
    pub url: String,
    pub title_entities: String,
    pub abstract_entities: String,
    /// Explicit cover file, when known. Otherwise covers are looked up by id.
    pub cover: Option<PathBuf>,
}

impl NewsRecord {
    pub fn has_empty_title(&self) -> bool {
        self.title.trim().is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BehaviorRecord {
    pub impression_id: String,
    pub user_id: String,
    pub timestamp: String,
    /// Clicked news, oldest first.
    pub history: Vec<String>,
    pub candidates: Vec<(String, u8)>,
}

impl BehaviorRecord {
    pub fn positives(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().filter(|c| c.1 == 1).map(|c| c.0.as_str())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().filter(|c| c.1 == 0).map(|c| c.0.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct ParseReport<T> {
    pub records: Vec<T>,
    pub malformed: Vec<MalformedLine>,
    /// News ids whose title field was empty.
    pub empty_titles: Vec<String>,
}

pub fn parse_news_str(text: &str) -> ParseReport<NewsRecord> {
    let mut report = ParseReport {
        records: Vec::new(),
        malformed: Vec::new(),
        empty_titles: Vec::new(),
    };
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 8 {
            report.malformed.push(MalformedLine {
                line: line_no,
                reason: format!("expected 8 tab-separated columns, found {}", cols.len()),
            });
            continue;
        }
        if cols[0].is_empty() {
            report.malformed.push(MalformedLine {
                line: line_no,
                reason: "empty news id".into(),
            });
            continue;
        }
        if !seen.insert(cols[0].to_string()) {
            report.malformed.push(MalformedLine {
                line: line_no,
                reason: format!("duplicate news id {}", cols[0]),
            });
            continue;
        }
        let rec = NewsRecord {
            news_id: cols[0].to_string(),
            category: cols[1].to_string(),
            subcategory: cols[2].to_string(),
            title: cols[3].to_string(),
            abstract_text: cols[4].to_string(),
            url: cols[5].to_string(),
            title_entities: cols[6].to_string(),
            abstract_entities: cols[7].to_string(),
            cover: None,
        };
        if rec.has_empty_title() {
            report.empty_titles.push(rec.news_id.clone());
        }
        report.records.push(rec);
    }
    report
}

pub fn parse_news_tsv(path: &Path) -> Result<ParseReport<NewsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_news_str(&text))
}

fn parse_candidate(tok: &str) -> std::result::Result<(String, u8), String> {
    let (id, label) = tok
        .rsplit_once('-')
        .ok_or_else(|| format!("candidate {tok:?} has no label"))?;
    if id.is_empty() {
        return Err(format!("candidate {tok:?} has no id"));
    }
    match label {
        "0" => Ok((id.to_string(), 0)),
        "1" => Ok((id.to_string(), 1)),
        _ => Err(format!("candidate {tok:?} has non-binary label")),
    }
}

pub fn parse_behaviors_str(text: &str) -> ParseReport<BehaviorRecord> {
    let mut report = ParseReport {
        records: Vec::new(),
        malformed: Vec::new(),
        empty_titles: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            report.malformed.push(MalformedLine {
                line: line_no,
                reason: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
            continue;
        }
        let candidates = cols[4]
            .split_whitespace()
            .map(parse_candidate)
            .collect::<std::result::Result<Vec<_>, _>>();
        let candidates = match candidates {
            Ok(c) if c.is_empty() => Err("no candidates".to_string()),
            other => other,
        };
        match candidates {
            Ok(candidates) => report.records.push(BehaviorRecord {
                impression_id: cols[0].to_string(),
                user_id: cols[1].to_string(),
                timestamp: cols[2].to_string(),
                history: cols[3].split_whitespace().map(str::to_string).collect(),
                candidates,
            }),
            Err(reason) => report.malformed.push(MalformedLine { line: line_no, reason }),
        }
    }
    report
}

pub fn parse_behaviors_tsv(path: &Path) -> Result<ParseReport<BehaviorRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_behaviors_str(&text))
}

pub fn news_to_tsv(records: &[NewsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.news_id, r.category, r.subcategory, r.title, r.abstract_text, r.url, r.title_entities, r.abstract_entities
        );
    }
    out
}

pub fn behaviors_to_tsv(records: &[BehaviorRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let cands: Vec<String> = r.candidates.iter().map(|(id, l)| format!("{id}-{l}")).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.impression_id,
            r.user_id,
            r.timestamp,
            r.history.join(" "),
            cands.join(" ")
        );
    }
    out
}

pub fn write_news_tsv(records: &[NewsRecord], path: &Path) -> Result<()> {
    std::fs::write(path, news_to_tsv(records)).map_err(|e| Error::io(path, e))
}

pub fn write_behaviors_tsv(records: &[BehaviorRecord], path: &Path) -> Result<()> {
    std::fs::write(path, behaviors_to_tsv(records)).map_err(|e| Error::io(path, e))
}
