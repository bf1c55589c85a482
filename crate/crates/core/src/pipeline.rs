//! End-to-end helpers: read text collections, encode them, index and
//! retrieve.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::encoder::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::eval::{RerankQuery, RerankSet, Run, RunEntry};
use crate::index::{IndexBuilder, InvertedIndex};
use crate::model::UhdModel;
use crate::sparse::BucketedRepresentation;
use crate::sparsifier::Budget;

/// Reads `id TAB text` lines.
pub fn read_texts(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `id<TAB>text`"))?;
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::parse(
                path,
                i + 1,
                "ids must be nonempty and contain no whitespace",
            ));
        }
        out.push((id.to_string(), body.to_string()));
    }
    Ok(out)
}

/// Encodes `(id, text)` pairs in parallel with the inference budget.
pub fn encode_texts(
    model: &UhdModel,
    items: &[(String, String)],
    is_query: bool,
) -> Result<Vec<(String, BucketedRepresentation)>> {
    items
        .par_iter()
        .map(|(id, text)| {
            let rep = model
                .encode_text(text, is_query, Budget::Infer)
                .map_err(|e| match e {
                    Error::EmptyInput(m) => Error::EmptyInput(format!("{id}: {m}")),
                    other => other,
                })?;
            Ok((id.clone(), rep))
        })
        .collect()
}

/// Encodes precomputed embedding records in parallel.
pub fn encode_records(
    model: &UhdModel,
    records: &[EmbeddingRecord],
) -> Result<Vec<(String, BucketedRepresentation)>> {
    records
        .par_iter()
        .map(|r| Ok((r.id.clone(), model.encode_dense(&r.layers, Budget::Infer)?)))
        .collect()
}

pub fn index_reps(docs: &[(String, BucketedRepresentation)]) -> Result<InvertedIndex> {
    let mut b = IndexBuilder::new();
    for (id, rep) in docs {
        b.add(id.clone(), rep)?;
    }
    Ok(b.finish())
}

/// Top-`k` retrieval for every query; ties in the run break by doc id.
pub fn retrieve(
    index: &InvertedIndex,
    queries: &[(String, BucketedRepresentation)],
    k: usize,
) -> Result<Run> {
    let reps: Vec<BucketedRepresentation> = queries.iter().map(|q| q.1.clone()).collect();
    let results = index.search_batch(&reps, k)?;
    let mut run = Run::new();
    for ((qid, _), res) in queries.iter().zip(results) {
        run.insert(
            qid.clone(),
            res.hits
                .into_iter()
                .map(|h| RunEntry {
                    doc_id: h.doc_id,
                    score: h.score,
                })
                .collect(),
        );
    }
    Ok(run)
}

/// Per-bucket dot products of each query against its candidates in `run`.
pub fn rerank_set(
    run: &Run,
    queries: &[(String, BucketedRepresentation)],
    docs: &[(String, BucketedRepresentation)],
) -> Result<RerankSet> {
    let lookup: std::collections::HashMap<&str, &BucketedRepresentation> =
        docs.iter().map(|(id, r)| (id.as_str(), r)).collect();
    let queries = queries
        .par_iter()
        .map(|(qid, q)| {
            let cands = run.ranking(qid).unwrap_or(&[]);
            let pairs = cands
                .iter()
                .map(|e| {
                    lookup
                        .get(e.doc_id.as_str())
                        .map(|r| (e.doc_id.as_str(), *r))
                        .ok_or_else(|| {
                            Error::InvalidInput(format!("unknown document {}", e.doc_id))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            RerankQuery::from_reps(qid.clone(), q, pairs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RerankSet { queries })
}
