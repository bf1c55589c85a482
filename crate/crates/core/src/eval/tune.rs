//! Re-ranking with per-bucket weights: grid search and the per-query ideal
//! bucket oracle.

use rayon::prelude::*;
use serde::Serialize;

use super::trec::Qrels;
use crate::error::{Error, Result};
use crate::sparse::{bucket_dots, BucketedRepresentation};

/// Largest number of grid points [`tune_bucket_weights`] will evaluate.
pub const MAX_GRID_POINTS: u128 = 10_000_000;
pub const TUNE_CUTOFF: usize = 10;

/// One query's candidates with their unweighted per-bucket dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankQuery {
    pub qid: String,
    pub doc_ids: Vec<String>,
    /// `scores[c][b]` = `dot(q_b, d_{c,b})`.
    pub scores: Vec<Vec<f64>>,
}

impl RerankQuery {
    pub fn from_reps<'a>(
        qid: impl Into<String>,
        query: &BucketedRepresentation,
        candidates: impl IntoIterator<Item = (&'a str, &'a BucketedRepresentation)>,
    ) -> Result<Self> {
        let mut doc_ids = Vec::new();
        let mut scores = Vec::new();
        for (id, d) in candidates {
            doc_ids.push(id.to_string());
            scores.push(bucket_dots(query, d)?);
        }
        Ok(Self {
            qid: qid.into(),
            doc_ids,
            scores,
        })
    }

    fn reciprocal_rank(
        &self,
        relevant: &std::collections::BTreeSet<String>,
        score: impl Fn(&[f64]) -> f64,
    ) -> f64 {
        let scored: Vec<(f64, &str)> = self
            .scores
            .iter()
            .zip(&self.doc_ids)
            .map(|(s, id)| (score(s), id.as_str()))
            .collect();
        // Rank of the best relevant candidate, counting candidates that
        // precede it under (score desc, doc id asc).
        let best = scored
            .iter()
            .filter(|(_, id)| relevant.contains(*id))
            .min_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let Some(&(bs, bid)) = best else {
            return 0.0;
        };
        let ahead = scored
            .iter()
            .filter(|(s, id)| s.total_cmp(&bs).is_gt() || (*s == bs && *id < bid))
            .count();
        if ahead < TUNE_CUTOFF {
            1.0 / (ahead + 1) as f64
        } else {
            0.0
        }
    }
}

/// Candidate lists for a set of judged queries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RerankSet {
    pub queries: Vec<RerankQuery>,
}

impl RerankSet {
    pub fn bucket_count(&self) -> Option<usize> {
        self.queries
            .iter()
            .flat_map(|q| q.scores.first())
            .map(Vec::len)
            .next()
    }

    fn judged<'a>(
        &'a self,
        qrels: &'a Qrels,
    ) -> Vec<(&'a RerankQuery, &'a std::collections::BTreeSet<String>)> {
        self.queries
            .iter()
            .filter_map(|q| qrels.relevant(&q.qid).map(|r| (q, r)))
            .filter(|(_, r)| !r.is_empty())
            .collect()
    }

    /// MRR@10 of the candidates re-scored by `Σ_b w_b · dot_b`.
    pub fn mrr(&self, qrels: &Qrels, weights: &[f64]) -> f64 {
        let judged = self.judged(qrels);
        if judged.is_empty() {
            return 0.0;
        }
        let total: f64 = judged
            .iter()
            .map(|(q, rel)| q.reciprocal_rank(rel, |s| weighted(s, weights)))
            .sum();
        total / judged.len() as f64
    }

    /// MRR@10 using bucket `b` alone.
    pub fn single_bucket_mrr(&self, qrels: &Qrels, b: usize) -> f64 {
        let judged = self.judged(qrels);
        if judged.is_empty() {
            return 0.0;
        }
        judged
            .iter()
            .map(|(q, rel)| q.reciprocal_rank(rel, |s| s[b]))
            .sum::<f64>()
            / judged.len() as f64
    }
}

fn weighted(s: &[f64], w: &[f64]) -> f64 {
    s.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Candidate weights per bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightGrid {
    candidates: Vec<Vec<f64>>,
}

impl WeightGrid {
    /// Candidates are sorted ascending and deduplicated.
    pub fn new(mut candidates: Vec<Vec<f64>>) -> Result<Self> {
        if candidates.is_empty() || candidates.iter().any(Vec::is_empty) {
            return Err(Error::invalid(
                "every bucket needs at least one candidate weight",
            ));
        }
        for c in &mut candidates {
            if c.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::invalid(
                    "grid weights must be finite and nonnegative",
                ));
            }
            c.sort_by(f64::total_cmp);
            c.dedup();
        }
        if candidates.iter().all(|c| c.iter().all(|&w| w == 0.0)) {
            return Err(Error::invalid("grid has no nonzero weight combination"));
        }
        Ok(Self { candidates })
    }

    pub fn uniform(buckets: usize, values: &[f64]) -> Result<Self> {
        Self::new(vec![values.to_vec(); buckets])
    }

    /// `{0, 1/3, 2/3, 1}` for every bucket.
    pub fn thirds(buckets: usize) -> Result<Self> {
        Self::uniform(buckets, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    }

    pub fn buckets(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    pub fn size(&self) -> u128 {
        self.candidates.iter().map(|c| c.len() as u128).product()
    }

    /// The `i`-th point in lexicographic order.
    fn point(&self, mut i: u128) -> Vec<f64> {
        let mut out = vec![0.0; self.candidates.len()];
        for (slot, c) in out.iter_mut().zip(&self.candidates).rev() {
            let len = c.len() as u128;
            *slot = c[(i % len) as usize];
            i /= len;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub weights: Vec<f64>,
    pub mrr: f64,
    pub evaluated: u128,
}

/// Exhaustive grid search for the weights maximizing MRR@10 on `set`. Ties
/// go to the lexicographically smallest weight vector.
pub fn tune_bucket_weights(
    set: &RerankSet,
    qrels: &Qrels,
    grid: &WeightGrid,
) -> Result<TuneResult> {
    let size = grid.size();
    if size > MAX_GRID_POINTS {
        return Err(Error::invalid(format!(
            "grid has {size} points, more than the limit of {MAX_GRID_POINTS}"
        )));
    }
    if let Some(b) = set.bucket_count() {
        if b != grid.buckets() {
            return Err(Error::invalid(format!(
                "grid covers {} buckets, candidates have {b}",
                grid.buckets()
            )));
        }
    }
    let (best, mrr) = (0..size as u64)
        .into_par_iter()
        .map(|i| (i, set.mrr(qrels, &grid.point(u128::from(i)))))
        .reduce(
            || (u64::MAX, f64::NEG_INFINITY),
            |a, b| {
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );
    Ok(TuneResult {
        weights: grid.point(u128::from(best)),
        mrr,
        evaluated: size,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub mrr: f64,
    /// Per judged query, the bucket whose ranking scored best (lowest index on
    /// ties).
    pub chosen: Vec<(String, usize)>,
    pub single_bucket_mrr: Vec<f64>,
}

/// Picks, for every query, the single bucket that ranks its relevant
/// documents best, and reports the resulting MRR@10.
pub fn ideal_layer_oracle(set: &RerankSet, qrels: &Qrels) -> Result<OracleResult> {
    let buckets = set.bucket_count().unwrap_or(0);
    if buckets < 2 {
        return Err(Error::invalid(
            "the ideal-layer oracle needs at least 2 buckets",
        ));
    }
    let judged = set.judged(qrels);
    let mut chosen = Vec::with_capacity(judged.len());
    let mut total = 0.0;
    for (q, rel) in &judged {
        let (b, rr) = (0..buckets)
            .map(|b| (b, q.reciprocal_rank(rel, |s| s[b])))
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            );
        chosen.push((q.qid.clone(), b));
        total += rr;
    }
    Ok(OracleResult {
        mrr: if judged.is_empty() {
            0.0
        } else {
            total / judged.len() as f64
        },
        chosen,
        single_bucket_mrr: (0..buckets)
            .map(|b| set.single_bucket_mrr(qrels, b))
            .collect(),
    })
}
