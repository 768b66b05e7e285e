//! Ranked retrieval lists and the JSON-lines results format shared by all
//! search systems.

use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub utterance_id: usize,
    /// Lower is better.
    pub score: f64,
    pub best_start_frame: usize,
}

/// One keyword's utterances, ascending by score, ties by utterance id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub keyword_id: usize,
    pub entries: Vec<RankEntry>,
}

fn canonical(a: &RankEntry, b: &RankEntry) -> Ordering {
    a.score.total_cmp(&b.score).then(a.utterance_id.cmp(&b.utterance_id))
}

impl RankedList {
    /// Sorts `entries` into canonical order. Scores must be finite.
    pub fn new(keyword_id: usize, mut entries: Vec<RankEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::validation(
                "score",
                format!("keyword {keyword_id} utterance {} has non-finite score", e.utterance_id),
            ));
        }
        entries.sort_by(canonical);
        Ok(Self { keyword_id, entries })
    }

    pub fn utterance_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.utterance_id)
    }

    pub fn is_sorted(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| canonical(&w[0], &w[1]) != Ordering::Greater)
    }
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub system: String,
    pub keyword_id: usize,
    pub utterance_id: usize,
    pub score: f64,
    pub best_start_frame: usize,
    /// 1-based.
    pub rank: usize,
    pub config_hash: String,
    pub tool_version: String,
}

pub fn to_records(system: &str, lists: &[RankedList], config_hash: &str, tool_version: &str) -> Vec<ResultRecord> {
    lists
        .iter()
        .flat_map(|list| {
            list.entries.iter().enumerate().map(move |(i, e)| ResultRecord {
                system: system.to_string(),
                keyword_id: list.keyword_id,
                utterance_id: e.utterance_id,
                score: e.score,
                best_start_frame: e.best_start_frame,
                rank: i + 1,
                config_hash: config_hash.to_string(),
                tool_version: tool_version.to_string(),
            })
        })
        .collect()
}

pub fn write_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::json("results record", e))?;
        buf.push(b'\n');
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

/// Regroups records into per-keyword lists, ordered by keyword id.
pub fn lists_from_records(records: &[ResultRecord]) -> Result<Vec<RankedList>> {
    let mut by_kw: std::collections::BTreeMap<usize, Vec<RankEntry>> = Default::default();
    for r in records {
        by_kw.entry(r.keyword_id).or_default().push(RankEntry {
            utterance_id: r.utterance_id,
            score: r.score,
            best_start_frame: r.best_start_frame,
        });
    }
    by_kw.into_iter().map(|(k, e)| RankedList::new(k, e)).collect()
}
