//! Rank-based retrieval metrics.

use std::collections::BTreeSet;

use serde::Serialize;

use super::trec::{Qrels, Run, RunEntry};
use crate::error::{Error, Result};

/// A metric averaged over the queries of a qrels set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: f64,
    /// Judged queries (the denominator). Judged queries missing from the run
    /// score 0.
    pub queries: usize,
    /// Run queries without judgements; ignored.
    pub skipped: usize,
}

/// `1/rank` of the first relevant entry within `cutoff`, else 0.
pub fn reciprocal_rank(ranking: &[RunEntry], relevant: &BTreeSet<String>, cutoff: usize) -> f64 {
    ranking
        .iter()
        .take(cutoff)
        .position(|e| relevant.contains(&e.doc_id))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

fn recall(ranking: &[RunEntry], relevant: &BTreeSet<String>, cutoff: usize) -> f64 {
    let hit = ranking
        .iter()
        .take(cutoff)
        .filter(|e| relevant.contains(&e.doc_id))
        .count();
    hit as f64 / relevant.len() as f64
}

fn average(
    run: &Run,
    qrels: &Qrels,
    cutoff: usize,
    f: impl Fn(&[RunEntry], &BTreeSet<String>, usize) -> f64,
) -> Result<MetricValue> {
    if cutoff == 0 {
        return Err(Error::invalid("metric cutoff must be at least 1"));
    }
    let skipped = run
        .iter()
        .filter(|(q, _)| qrels.relevant(q).is_none())
        .count();
    if skipped > 0 {
        log::warn!("{skipped} run queries have no judgements and were skipped");
    }
    let mut total = 0.0;
    let mut queries = 0;
    for (qid, relevant) in qrels.iter() {
        if relevant.is_empty() {
            continue;
        }
        queries += 1;
        if let Some(r) = run.ranking(qid) {
            total += f(r, relevant, cutoff);
        }
    }
    Ok(MetricValue {
        value: if queries == 0 {
            0.0
        } else {
            total / queries as f64
        },
        queries,
        skipped,
    })
}

pub fn mrr_at(run: &Run, qrels: &Qrels, cutoff: usize) -> Result<MetricValue> {
    average(run, qrels, cutoff, reciprocal_rank)
}

pub fn recall_at(run: &Run, qrels: &Qrels, cutoff: usize) -> Result<MetricValue> {
    average(run, qrels, cutoff, recall)
}
