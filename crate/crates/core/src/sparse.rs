//! Exact sparse-vector arithmetic shared by the sparsifier, the index and the
//! evaluation code.
//!
//! A [`SparseVector`] keeps its entries sorted by dimension and never stores an
//! exact zero. Weights are stored in single precision; every reduction (dot
//! products, norms) accumulates in `f64`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted `(dim, weight)` pairs in an `n`-dimensional space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    n: u32,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl SparseVector {
    pub fn empty(n: u32) -> Self {
        Self {
            n,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from already sorted entries. Exact zeros are dropped;
    /// unsorted, duplicate or out-of-range dims are rejected.
    pub fn new(n: u32, indices: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid(
                "sparse vector dimensionality must be positive",
            ));
        }
        if indices.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid(format!(
                    "dims must be strictly ascending, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::invalid(format!("dim {last} out of range for n={n}")));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite weight {v}")));
        }
        let mut v = Self { n, indices, values };
        v.drop_zeros();
        Ok(v)
    }

    /// Builds a vector from unordered pairs. Duplicate dims are rejected.
    pub fn from_pairs(n: u32, pairs: impl IntoIterator<Item = (u32, f32)>) -> Result<Self> {
        let mut pairs: Vec<(u32, f32)> = pairs.into_iter().collect();
        pairs.sort_by_key(|p| p.0);
        let (indices, values) = pairs.into_iter().unzip();
        Self::new(n, indices, values)
    }

    /// Trusted constructor for callers that already uphold the invariants.
    pub(crate) fn from_sorted_unchecked(n: u32, indices: Vec<u32>, values: Vec<f32>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(indices.last().is_none_or(|&d| d < n));
        debug_assert!(values.iter().all(|&v| v != 0.0));
        Self { n, indices, values }
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut keep = 0;
        for i in 0..self.indices.len() {
            if self.values[i] != 0.0 {
                self.indices[keep] = self.indices[i];
                self.values[keep] = self.values[i];
                keep += 1;
            }
        }
        self.indices.truncate(keep);
        self.values.truncate(keep);
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f32)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn get(&self, dim: u32) -> Option<f32> {
        self.indices
            .binary_search(&dim)
            .ok()
            .map(|i| self.values[i])
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Fraction of dimensions that are nonzero.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / f64::from(self.n)
    }

    /// Multiplies every weight by `c`, accumulating in `f64`.
    pub fn scaled(&self, c: f64) -> SparseVector {
        let values: Vec<f32> = self
            .values
            .iter()
            .map(|&v| (f64::from(v) * c) as f32)
            .collect();
        let mut out = Self {
            n: self.n,
            indices: self.indices.clone(),
            values,
        };
        out.drop_zeros();
        out
    }
}

/// Orders candidates by descending value, then ascending dimension.
pub(crate) fn winner_order<T: PartialOrd>(a: &(u32, T), b: &(u32, T)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Keeps the `k` best candidates under [`winner_order`] and returns them sorted
/// by dimension.
pub(crate) fn select_top_k<T: PartialOrd + Copy>(candidates: &mut Vec<(u32, T)>, k: usize) {
    if candidates.len() > k {
        if k == 0 {
            candidates.clear();
            return;
        }
        candidates.select_nth_unstable_by(k - 1, winner_order);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by_key(|c| c.0);
}

/// Sum of products over shared dimensions, accumulated in `f64`.
pub fn dot(a: &SparseVector, b: &SparseVector) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::invalid(format!(
            "dot: dimensionality mismatch ({} vs {})",
            a.n, b.n
        )));
    }
    Ok(dot_unchecked(a, b))
}

pub(crate) fn dot_unchecked(a: &SparseVector, b: &SparseVector) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0f64;
    while i < a.indices.len() && j < b.indices.len() {
        match a.indices[i].cmp(&b.indices[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                acc += f64::from(a.values[i]) * f64::from(b.values[j]);
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Element-wise maximum with absent entries counting as `0.0`. Dimensions whose
/// maximum is not positive are dropped, so negative-only dims vanish.
pub fn max_pool(vectors: &[SparseVector]) -> Result<SparseVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("max_pool: empty input list"))?;
    let n = first.n;
    if let Some(bad) = vectors.iter().find(|v| v.n != n) {
        return Err(Error::invalid(format!(
            "max_pool: dimensionality mismatch ({} vs {})",
            n, bad.n
        )));
    }
    let mut merged: Vec<(u32, f32)> = vectors.iter().flat_map(|v| v.iter()).collect();
    merged.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
    merged.dedup_by_key(|e| e.0);
    let (indices, values): (Vec<u32>, Vec<f32>) =
        merged.into_iter().filter(|&(_, w)| w > 0.0).unzip();
    Ok(SparseVector::from_sorted_unchecked(n, indices, values))
}

/// Divides every weight by the Euclidean norm. The empty vector is returned
/// unchanged.
pub fn l2_normalize(v: &SparseVector) -> SparseVector {
    let norm = v.norm();
    if v.is_empty() || norm == 0.0 {
        return v.clone();
    }
    let values = v
        .values
        .iter()
        .map(|&w| (f64::from(w) / norm) as f32)
        .collect();
    let mut out = SparseVector {
        n: v.n,
        indices: v.indices.clone(),
        values,
    };
    // Subnormal weights can underflow to zero after division.
    out.drop_zeros();
    out
}

/// Keeps the `k_prime` largest weights (signed; ties go to the lower dim).
pub fn truncate_top_k(v: &SparseVector, k_prime: usize) -> Result<SparseVector> {
    if k_prime == 0 {
        return Err(Error::invalid("truncate_top_k: k' must be positive"));
    }
    if v.nnz() <= k_prime {
        return Ok(v.clone());
    }
    let mut entries: Vec<(u32, f32)> = v.iter().collect();
    select_top_k(&mut entries, k_prime);
    let (indices, values) = entries.into_iter().unzip();
    Ok(SparseVector::from_sorted_unchecked(v.n, indices, values))
}

/// Identifies one bucket: source encoder layer `j`, aspect `m`, its
/// dimensionality and the query-time weight applied to its dot product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketDescriptor {
    pub layer: u32,
    pub aspect: u32,
    pub dim: u32,
    pub weight: f32,
}

impl BucketDescriptor {
    pub fn new(layer: u32, aspect: u32, dim: u32) -> Self {
        Self {
            layer,
            aspect,
            dim,
            weight: 1.0,
        }
    }

    /// Equality ignoring the weight.
    pub fn same_structure(&self, other: &BucketDescriptor) -> bool {
        self.layer == other.layer && self.aspect == other.aspect && self.dim == other.dim
    }
}

/// An ordered list of buckets making up one query or document representation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BucketedRepresentation {
    buckets: Vec<(BucketDescriptor, SparseVector)>,
}

impl BucketedRepresentation {
    pub fn new(buckets: Vec<(BucketDescriptor, SparseVector)>) -> Result<Self> {
        for (i, (d, v)) in buckets.iter().enumerate() {
            if d.layer == 0 || d.aspect == 0 {
                return Err(Error::invalid(format!(
                    "bucket {i}: layer and aspect indices start at 1"
                )));
            }
            if d.dim != v.n() {
                return Err(Error::invalid(format!(
                    "bucket {i}: descriptor dim {} but vector n {}",
                    d.dim,
                    v.n()
                )));
            }
            if !(d.weight >= 0.0 && d.weight.is_finite()) {
                return Err(Error::invalid(format!(
                    "bucket {i}: weight must be nonnegative and finite"
                )));
            }
            if buckets[..i]
                .iter()
                .any(|(o, _)| o.layer == d.layer && o.aspect == d.aspect)
            {
                return Err(Error::invalid(format!(
                    "bucket {i}: duplicate (layer {}, aspect {})",
                    d.layer, d.aspect
                )));
            }
        }
        Ok(Self { buckets })
    }

    pub fn buckets(&self) -> &[(BucketDescriptor, SparseVector)] {
        &self.buckets
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &BucketDescriptor> {
        self.buckets.iter().map(|(d, _)| d)
    }

    pub fn vectors(&self) -> impl Iterator<Item = &SparseVector> {
        self.buckets.iter().map(|(_, v)| v)
    }

    pub fn total_nnz(&self) -> usize {
        self.vectors().map(SparseVector::nnz).sum()
    }

    pub fn total_dim(&self) -> u64 {
        self.descriptors().map(|d| u64::from(d.dim)).sum()
    }

    /// Summed nnz over summed dimensionality.
    pub fn density(&self) -> f64 {
        let total = self.total_dim();
        if total == 0 {
            0.0
        } else {
            self.total_nnz() as f64 / total as f64
        }
    }

    pub fn same_structure(&self, other: &BucketedRepresentation) -> bool {
        self.buckets.len() == other.buckets.len()
            && self
                .descriptors()
                .zip(other.descriptors())
                .all(|(a, b)| a.same_structure(b))
    }

    /// Replaces the per-bucket weights.
    pub fn set_weights(&mut self, weights: &[f32]) -> Result<()> {
        if weights.len() != self.buckets.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} buckets",
                weights.len(),
                self.buckets.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid(
                "bucket weights must be nonnegative and finite",
            ));
        }
        for ((d, _), &w) in self.buckets.iter_mut().zip(weights) {
            d.weight = w;
        }
        Ok(())
    }

    pub fn with_weights(mut self, weights: &[f32]) -> Result<Self> {
        self.set_weights(weights)?;
        Ok(self)
    }

    pub fn weights(&self) -> Vec<f32> {
        self.descriptors().map(|d| d.weight).collect()
    }

    /// Keeps only the buckets whose positions are listed.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        let buckets = positions
            .iter()
            .map(|&p| {
                self.buckets
                    .get(p)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no bucket at position {p}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { buckets })
    }
}

/// `Σ_b w_b · dot(q_b, d_b)` with weights taken from the query.
pub fn relevance(q: &BucketedRepresentation, d: &BucketedRepresentation) -> Result<f64> {
    if !q.same_structure(d) {
        return Err(Error::invalid(
            "relevance: query and document bucket structures differ",
        ));
    }
    Ok(q.buckets
        .iter()
        .zip(&d.buckets)
        .map(|((qd, qv), (_, dv))| f64::from(qd.weight) * dot_unchecked(qv, dv))
        .sum())
}

/// Per-bucket dot products (unweighted).
pub fn bucket_dots(q: &BucketedRepresentation, d: &BucketedRepresentation) -> Result<Vec<f64>> {
    if !q.same_structure(d) {
        return Err(Error::invalid(
            "bucket_dots: query and document bucket structures differ",
        ));
    }
    Ok(q.vectors()
        .zip(d.vectors())
        .map(|(a, b)| dot_unchecked(a, b))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(n: u32, pairs: &[(u32, f32)]) -> SparseVector {
        SparseVector::from_pairs(n, pairs.iter().copied()).unwrap()
    }

    #[test]
    fn dot_examples() {
        let a = sv(10, &[(1, 0.6), (2, 0.8)]);
        let b = sv(10, &[(2, 0.5), (3, 1.0)]);
        assert!((dot(&a, &b).unwrap() - 0.4).abs() < 1e-7);

        let c = sv(10, &[(4, 1.0)]);
        assert_eq!(dot(&a, &c).unwrap(), 0.0);

        let e = sv(10, &[(5, 3.0), (9, 4.0)]);
        assert_eq!(dot(&e, &e).unwrap(), 25.0);
    }

    #[test]
    fn dot_rejects_dim_mismatch() {
        let a = sv(10, &[(1, 1.0)]);
        let b = sv(11, &[(1, 1.0)]);
        assert!(matches!(dot(&a, &b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constructor_validates() {
        assert!(SparseVector::new(4, vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseVector::new(4, vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseVector::new(4, vec![4], vec![1.0]).is_err());
        let v = SparseVector::new(4, vec![0, 3], vec![0.0, 2.0]).unwrap();
        assert_eq!(v.indices(), &[3]);
    }

    #[test]
    fn max_pool_examples() {
        let p = max_pool(&[sv(8, &[(1, 0.5)]), sv(8, &[(1, 0.3), (7, 0.2)])]).unwrap();
        assert_eq!(p, sv(8, &[(1, 0.5), (7, 0.2)]));

        // Single vector: negatives lose against the implicit zero.
        let p = max_pool(&[sv(8, &[(0, -1.0), (3, 2.0)])]).unwrap();
        assert_eq!(p, sv(8, &[(3, 2.0)]));

        let p = max_pool(&[sv(8, &[(0, 1.0)]), sv(8, &[(5, 2.0)])]).unwrap();
        assert_eq!(p, sv(8, &[(0, 1.0), (5, 2.0)]));

        assert!(max_pool(&[]).is_err());
        assert!(max_pool(&[sv(8, &[]), sv(9, &[])]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&sv(4, &[(1, 3.0), (2, 4.0)]));
        assert_eq!(v, sv(4, &[(1, 0.6), (2, 0.8)]));
        assert!(l2_normalize(&sv(4, &[])).is_empty());
        assert_eq!(l2_normalize(&sv(9, &[(7, 1.0)])), sv(9, &[(7, 1.0)]));
    }

    #[test]
    fn truncate_examples() {
        let v = sv(10, &[(1, 0.2), (4, 0.9), (8, 0.5)]);
        assert_eq!(
            truncate_top_k(&v, 2).unwrap(),
            sv(10, &[(4, 0.9), (8, 0.5)])
        );
        assert_eq!(truncate_top_k(&v, 3).unwrap(), v);
        assert_eq!(truncate_top_k(&v, 30).unwrap(), v);
        let tie = sv(10, &[(1, 0.5), (2, 0.5)]);
        assert_eq!(truncate_top_k(&tie, 1).unwrap(), sv(10, &[(1, 0.5)]));
        assert!(truncate_top_k(&v, 0).is_err());
    }

    #[test]
    fn relevance_examples() {
        let d = BucketDescriptor::new(1, 1, 10);
        let q = BucketedRepresentation::new(vec![(d, sv(10, &[(1, 0.6), (2, 0.8)]))]).unwrap();
        let doc = BucketedRepresentation::new(vec![(d, sv(10, &[(2, 0.5), (3, 1.0)]))]).unwrap();
        assert!((relevance(&q, &doc).unwrap() - 0.4).abs() < 1e-7);
        let q0 = q.clone().with_weights(&[0.0]).unwrap();
        assert_eq!(relevance(&q0, &doc).unwrap(), 0.0);

        // Two buckets with dots 0.4 and 0.25, weights 1.0 and 0.5.
        let d2 = BucketDescriptor::new(2, 1, 10);
        let q = BucketedRepresentation::new(vec![
            (d, sv(10, &[(1, 0.6), (2, 0.8)])),
            (d2, sv(10, &[(0, 0.5)])),
        ])
        .unwrap()
        .with_weights(&[1.0, 0.5])
        .unwrap();
        let doc = BucketedRepresentation::new(vec![
            (d, sv(10, &[(2, 0.5), (3, 1.0)])),
            (d2, sv(10, &[(0, 0.5)])),
        ])
        .unwrap();
        assert!((relevance(&q, &doc).unwrap() - 0.525).abs() < 1e-7);
    }

    #[test]
    fn relevance_rejects_structure_mismatch() {
        let q = BucketedRepresentation::new(vec![(BucketDescriptor::new(1, 1, 10), sv(10, &[]))])
            .unwrap();
        let d = BucketedRepresentation::new(vec![(BucketDescriptor::new(2, 1, 10), sv(10, &[]))])
            .unwrap();
        assert!(relevance(&q, &d).is_err());
    }

    #[test]
    fn representation_rejects_duplicate_buckets() {
        let d = BucketDescriptor::new(1, 1, 4);
        assert!(BucketedRepresentation::new(vec![(d, sv(4, &[])), (d, sv(4, &[]))]).is_err());
        let bad = BucketDescriptor::new(1, 1, 5);
        assert!(BucketedRepresentation::new(vec![(bad, sv(4, &[]))]).is_err());
    }

    fn arb_vec(n: u32) -> impl Strategy<Value = SparseVector> {
        proptest::collection::btree_map(0..n, -4.0f32..4.0, 0..24)
            .prop_map(move |m| SparseVector::from_pairs(n, m).unwrap())
    }

    fn arb_positive_vec(n: u32) -> impl Strategy<Value = SparseVector> {
        proptest::collection::btree_map(0..n, 0.01f32..4.0, 0..24)
            .prop_map(move |m| SparseVector::from_pairs(n, m).unwrap())
    }

    proptest! {
        #[test]
        fn max_pool_support_is_within_union(vs in proptest::collection::vec(arb_vec(64), 1..6)) {
            let p = max_pool(&vs).unwrap();
            for d in p.indices() {
                prop_assert!(vs.iter().any(|v| v.get(*d).is_some()));
            }
        }

        #[test]
        fn max_pool_support_equals_union_when_positive(vs in proptest::collection::vec(arb_positive_vec(64), 1..6)) {
            let p = max_pool(&vs).unwrap();
            let mut union: Vec<u32> = vs.iter().flat_map(|v| v.indices().to_vec()).collect();
            union.sort_unstable();
            union.dedup();
            prop_assert_eq!(p.indices(), &union[..]);
        }

        #[test]
        fn dot_symmetric_and_homogeneous(a in arb_vec(64), b in arb_vec(64), e in -3i32..4) {
            let ab = dot(&a, &b).unwrap();
            prop_assert_eq!(ab, dot(&b, &a).unwrap());
            // Powers of two scale f32 weights exactly, isolating the accumulation.
            let c = -(2f64.powi(e));
            let scaled = dot(&a.scaled(c), &b).unwrap();
            prop_assert!((scaled - c * ab).abs() <= 1e-12 * (c * ab).abs().max(1e-12));
        }

        #[test]
        fn truncate_nesting(v in arb_vec(64), k1 in 1usize..12, extra in 0usize..12) {
            let k2 = k1 + extra;
            let small = truncate_top_k(&v, k1).unwrap();
            let large = truncate_top_k(&v, k2).unwrap();
            for d in small.indices() {
                prop_assert!(large.get(*d).is_some());
            }
        }

        #[test]
        fn normalize_idempotent(v in arb_vec(64)) {
            let once = l2_normalize(&v);
            let twice = l2_normalize(&once);
            prop_assert_eq!(once.indices(), v.indices());
            prop_assert_eq!(twice.indices(), v.indices());
            if !v.is_empty() {
                prop_assert!((once.norm() - 1.0).abs() < 1e-6);
            }
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((f64::from(*a) - f64::from(*b)).abs() < 1e-6);
            }
        }
    }
}
