use std::collections::BTreeMap;

use serde::Serialize;

use super::inverted::InvertedIndex;
use crate::sparse::BucketDescriptor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketStats {
    pub descriptor: BucketDescriptor,
    pub postings: usize,
    /// Number of non-empty posting lists.
    pub active_dims: usize,
    pub mean_posting_length: f64,
    /// Per-document nnz in this bucket → number of documents.
    pub nnz_histogram: BTreeMap<usize, usize>,
    /// Dimension → number of documents with that dimension nonzero.
    pub activation: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexStats {
    pub docs: usize,
    pub postings: usize,
    pub buckets: Vec<BucketStats>,
}

pub fn index_stats(index: &InvertedIndex) -> IndexStats {
    let docs = index.doc_count();
    let buckets: Vec<BucketStats> = index
        .buckets()
        .iter()
        .map(|b| {
            let mut per_doc = vec![0usize; docs];
            let mut activation = BTreeMap::new();
            for (dim, list) in b.postings() {
                activation.insert(dim, list.len());
                for (doc, _) in list.iter() {
                    per_doc[doc as usize] += 1;
                }
            }
            let mut nnz_histogram = BTreeMap::new();
            for nnz in per_doc {
                *nnz_histogram.entry(nnz).or_insert(0) += 1;
            }
            let postings = b.total_postings();
            let active_dims = b.dims().len();
            BucketStats {
                descriptor: *b.descriptor(),
                postings,
                active_dims,
                mean_posting_length: if active_dims == 0 {
                    0.0
                } else {
                    postings as f64 / active_dims as f64
                },
                nnz_histogram,
                activation,
            }
        })
        .collect();
    IndexStats {
        docs,
        postings: buckets.iter().map(|b| b.postings).sum(),
        buckets,
    }
}
