use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::{BucketDescriptor, BucketedRepresentation};

/// Documents holding one dimension, ascending by ordinal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PostingList {
    pub(crate) docs: Vec<u32>,
    pub(crate) weights: Vec<f32>,
}

impl PostingList {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f32)> + '_ {
        self.docs.iter().copied().zip(self.weights.iter().copied())
    }
}

/// The inverted index of one bucket. `dims` is strictly ascending and aligned
/// with `lists`.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketIndex {
    pub(crate) descriptor: BucketDescriptor,
    pub(crate) dims: Vec<u32>,
    pub(crate) lists: Vec<PostingList>,
}

impl BucketIndex {
    pub fn descriptor(&self) -> &BucketDescriptor {
        &self.descriptor
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn posting(&self, dim: u32) -> Option<&PostingList> {
        self.dims.binary_search(&dim).ok().map(|i| &self.lists[i])
    }

    pub fn postings(&self) -> impl Iterator<Item = (u32, &PostingList)> {
        self.dims.iter().copied().zip(&self.lists)
    }

    pub fn total_postings(&self) -> usize {
        self.lists.iter().map(PostingList::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvertedIndex {
    pub(crate) doc_ids: Vec<String>,
    pub(crate) buckets: Vec<BucketIndex>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub doc_id: String,
    pub ordinal: u32,
    pub score: f64,
}

/// Ranked hits, descending score, ties by ascending doc ordinal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn buckets(&self) -> &[BucketIndex] {
        &self.buckets
    }

    pub fn descriptors(&self) -> Vec<BucketDescriptor> {
        self.buckets.iter().map(|b| b.descriptor).collect()
    }

    pub fn total_postings(&self) -> usize {
        self.buckets.iter().map(BucketIndex::total_postings).sum()
    }

    fn check_query(&self, q: &BucketedRepresentation) -> Result<()> {
        let ok = q.len() == self.buckets.len()
            && q.descriptors()
                .zip(&self.buckets)
                .all(|(a, b)| a.same_structure(&b.descriptor));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "query bucket structure does not match the index".into(),
            ))
        }
    }

    /// Exact top-`k` by `Σ_b w_b · dot(q_b, d_b)`, with `w_b` taken from the
    /// query. Term-at-a-time; per-bucket dot products are accumulated in
    /// ascending dimension order so scores equal [`crate::sparse::relevance`]
    /// bit for bit.
    pub fn search(&self, q: &BucketedRepresentation, k: usize) -> Result<SearchResult> {
        if k == 0 {
            return Err(Error::invalid("search: K must be positive"));
        }
        if self.doc_ids.is_empty() {
            return Ok(SearchResult::default());
        }
        self.check_query(q)?;
        let n = self.doc_ids.len();
        let mut total = vec![0.0f64; n];
        let mut seen = vec![false; n];
        let mut touched: Vec<u32> = Vec::new();
        let mut part = vec![0.0f64; n];
        let mut in_part = vec![false; n];
        let mut part_touched: Vec<u32> = Vec::new();
        for ((desc, qv), bucket) in q.buckets().iter().zip(&self.buckets) {
            if desc.weight == 0.0 {
                continue;
            }
            for (dim, qw) in qv.iter() {
                let Some(list) = bucket.posting(dim) else {
                    continue;
                };
                let qw = f64::from(qw);
                for (doc, dw) in list.iter() {
                    let d = doc as usize;
                    if !in_part[d] {
                        in_part[d] = true;
                        part_touched.push(doc);
                    }
                    part[d] += qw * f64::from(dw);
                }
            }
            let w = f64::from(desc.weight);
            for &doc in &part_touched {
                let d = doc as usize;
                if !seen[d] {
                    seen[d] = true;
                    touched.push(doc);
                }
                total[d] += w * part[d];
                part[d] = 0.0;
                in_part[d] = false;
            }
            part_touched.clear();
        }
        let mut scored: Vec<(u32, f64)> = touched.iter().map(|&d| (d, total[d as usize])).collect();
        let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(SearchResult {
            hits: scored
                .into_iter()
                .map(|(ordinal, score)| Hit {
                    doc_id: self.doc_ids[ordinal as usize].clone(),
                    ordinal,
                    score,
                })
                .collect(),
        })
    }

    /// [`InvertedIndex::search`] over many queries in parallel.
    pub fn search_batch(
        &self,
        queries: &[BucketedRepresentation],
        k: usize,
    ) -> Result<Vec<SearchResult>> {
        queries.par_iter().map(|q| self.search(q, k)).collect()
    }
}

/// Accumulates documents into an [`InvertedIndex`].
#[derive(Debug, Default)]
pub struct IndexBuilder {
    doc_ids: Vec<String>,
    seen: HashSet<String>,
    structure: Option<Vec<BucketDescriptor>>,
    postings: Vec<HashMap<u32, PostingList>>,
}

impl IndexBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn add(&mut self, id: impl Into<String>, rep: &BucketedRepresentation) -> Result<()> {
        let id = id.into();
        if self.seen.contains(&id) {
            return Err(Error::InvalidInput(format!("duplicate document id {id:?}")));
        }
        match &self.structure {
            None => {
                self.structure = Some(rep.descriptors().copied().collect());
                self.postings = vec![HashMap::new(); rep.len()];
            }
            Some(s) => {
                let ok = s.len() == rep.len()
                    && s.iter()
                        .zip(rep.descriptors())
                        .all(|(a, b)| a.same_structure(b));
                if !ok {
                    return Err(Error::InvalidInput(format!(
                        "document {id:?} has a different bucket structure"
                    )));
                }
            }
        }
        let ordinal = u32::try_from(self.doc_ids.len())
            .map_err(|_| Error::InvalidInput("too many documents".into()))?;
        for ((_, v), lists) in rep.buckets().iter().zip(&mut self.postings) {
            for (dim, w) in v.iter() {
                let list = lists.entry(dim).or_default();
                list.docs.push(ordinal);
                list.weights.push(w);
            }
        }
        self.seen.insert(id.clone());
        self.doc_ids.push(id);
        Ok(())
    }

    pub fn finish(self) -> InvertedIndex {
        let buckets = self
            .structure
            .unwrap_or_default()
            .into_iter()
            .zip(self.postings)
            .map(|(descriptor, map)| {
                let mut entries: Vec<(u32, PostingList)> = map.into_iter().collect();
                entries.sort_unstable_by_key(|e| e.0);
                let (dims, lists) = entries.into_iter().unzip();
                BucketIndex {
                    descriptor,
                    dims,
                    lists,
                }
            })
            .collect();
        InvertedIndex {
            doc_ids: self.doc_ids,
            buckets,
        }
    }
}

/// Builds an index from `(id, representation)` pairs in stream order.
pub fn build_index<I, S>(docs: I) -> Result<InvertedIndex>
where
    I: IntoIterator<Item = (S, BucketedRepresentation)>,
    S: Into<String>,
{
    let mut b = IndexBuilder::new();
    for (id, rep) in docs {
        b.add(id, &rep)?;
    }
    Ok(b.finish())
}
