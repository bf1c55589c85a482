//! Qrels and run files in TREC layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Query id → relevant document ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>) {
        self.map
            .entry(qid.into())
            .or_default()
            .insert(doc_id.into());
    }

    pub fn relevant(&self, qid: &str) -> Option<&BTreeSet<String>> {
        self.map.get(qid)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.map.iter().map(|(q, s)| (q.as_str(), s))
    }

    /// Parses `qid 0 docid rel` lines; only `rel > 0` counts as relevant.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut q = Self::new();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            if cols.len() != 4 {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected `qid 0 docid rel`, found {} columns", cols.len()),
                ));
            }
            let rel: i64 = cols[3]
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad relevance {:?}", cols[3])))?;
            if rel > 0 {
                q.insert(cols[0], cols[2]);
            }
        }
        Ok(q)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, path)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        for (qid, docs) in &self.map {
            for d in docs {
                writeln!(w, "{qid} 0 {d} 1")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked results per query. Rankings are stored in rank order, descending
/// score with ties broken by ascending doc id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    map: BTreeMap<String, Vec<RunEntry>>,
}

fn rank_order(a: &RunEntry, b: &RunEntry) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the ranking of `qid`, sorting `entries` into rank order.
    pub fn insert(&mut self, qid: impl Into<String>, mut entries: Vec<RunEntry>) {
        entries.sort_by(rank_order);
        self.map.insert(qid.into(), entries);
    }

    pub fn ranking(&self, qid: &str) -> Option<&[RunEntry]> {
        self.map.get(qid).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.map.iter().map(|(q, e)| (q.as_str(), e.as_slice()))
    }

    /// Writes `qid Q0 docid rank score tag` lines.
    pub fn write(&self, mut w: impl Write, tag: &str) -> Result<()> {
        for (qid, entries) in &self.map {
            for (r, e) in entries.iter().enumerate() {
                writeln!(w, "{qid} Q0 {} {} {:.9} {tag}", e.doc_id, r + 1, e.score)?;
            }
        }
        Ok(())
    }

    /// Parses a run file, checking that ranks are contiguous from 1 and
    /// scores non-increasing.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let err = |m: String| Error::parse(path, i + 1, m);
            if cols.len() != 6 {
                return Err(err(format!(
                    "expected `qid Q0 docid rank score tag`, found {} columns",
                    cols.len()
                )));
            }
            let rank: usize = cols[3]
                .parse()
                .map_err(|_| err(format!("bad rank {:?}", cols[3])))?;
            let score: f64 = cols[4]
                .parse()
                .map_err(|_| err(format!("bad score {:?}", cols[4])))?;
            if !score.is_finite() {
                return Err(err("score is not finite".into()));
            }
            let list = map.entry(cols[0].to_string()).or_default();
            if rank != list.len() + 1 {
                return Err(err(format!("rank {rank} breaks the contiguous ranking")));
            }
            if list.last().is_some_and(|p| p.score < score) {
                return Err(err("scores must be non-increasing in rank".into()));
            }
            list.push(RunEntry {
                doc_id: cols[2].to_string(),
                score,
            });
        }
        Ok(Self { map })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, path)
    }
}
