//! Hinge ranking loss with in-batch negatives.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::{relevance, BucketedRepresentation};

/// Margin of the ranking hinge.
pub const MARGIN: f64 = 1.0;

/// `max(0, 1 − pos + neg)`.
pub fn hinge_loss(pos: f64, neg: f64) -> f64 {
    (MARGIN - pos + neg).max(0.0)
}

/// Summary of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchLossReport {
    /// Mean hinge over all `(query, negative)` pairs.
    pub mean_loss: f64,
    /// Pairs with a strictly positive hinge.
    pub active_pairs: usize,
    pub pairs: usize,
    pub mean_pos: f64,
    pub mean_neg: f64,
}

/// Scores for a batch. `pos[i]` = Rel(q_i, d_i^+); `neg[i]` lists
/// `(column, Rel(q_i, ·))` for each negative of query `i`.
pub(crate) struct ScoreTable {
    pub pos: Vec<f64>,
    pub neg: Vec<Vec<(usize, f64)>>,
}

/// Loss report plus `∂L/∂pos[i]` and `∂L/∂neg[i][c]` (same layout).
pub(crate) struct LossGrads {
    pub pos: Vec<f64>,
    pub neg: Vec<Vec<f64>>,
}

pub(crate) fn loss_from_scores(scores: &ScoreTable) -> (BatchLossReport, LossGrads) {
    let pairs: usize = scores.neg.iter().map(Vec::len).sum();
    let mut total = 0.0;
    let mut active = 0;
    let mut neg_sum = 0.0;
    let scale = 1.0 / pairs.max(1) as f64;
    let mut grads = LossGrads {
        pos: vec![0.0; scores.pos.len()],
        neg: scores.neg.iter().map(|n| vec![0.0; n.len()]).collect(),
    };
    for (i, (&pos, negs)) in scores.pos.iter().zip(&scores.neg).enumerate() {
        for (c, &(_, neg)) in negs.iter().enumerate() {
            let l = hinge_loss(pos, neg);
            total += l;
            neg_sum += neg;
            if l > 0.0 {
                active += 1;
                grads.pos[i] -= scale;
                grads.neg[i][c] += scale;
            }
        }
    }
    let report = BatchLossReport {
        mean_loss: total * scale,
        active_pairs: active,
        pairs,
        mean_pos: scores.pos.iter().sum::<f64>() / scores.pos.len().max(1) as f64,
        mean_neg: neg_sum * scale,
    };
    (report, grads)
}

/// In-batch negatives: query `i` is contrasted against every `d_j^+`, `j ≠ i`.
pub(crate) fn in_batch_scores(rel: impl Fn(usize, usize) -> f64, b: usize) -> ScoreTable {
    ScoreTable {
        pos: (0..b).map(|i| rel(i, i)).collect(),
        neg: (0..b)
            .map(|i| (0..b).filter(|&j| j != i).map(|j| (j, rel(i, j))).collect())
            .collect(),
    }
}

/// Mean hinge over the `B(B−1)` in-batch pairs of `queries[i]` against
/// `positives[i]` and every other positive.
pub fn batch_loss(
    queries: &[BucketedRepresentation],
    positives: &[BucketedRepresentation],
) -> Result<BatchLossReport> {
    if queries.len() != positives.len() {
        return Err(Error::invalid(format!(
            "{} queries but {} positives",
            queries.len(),
            positives.len()
        )));
    }
    if queries.len() < 2 {
        return Err(Error::invalid(
            "in-batch negatives need a batch of at least 2",
        ));
    }
    let b = queries.len();
    let mut rel = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            rel[i * b + j] = relevance(&queries[i], &positives[j])?;
        }
    }
    Ok(loss_from_scores(&in_batch_scores(|i, j| rel[i * b + j], b)).0)
}
