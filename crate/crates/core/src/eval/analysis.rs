//! Density, activation and dimension-interpretation analyses.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::sparse::BucketedRepresentation;

pub const DEFAULT_MIN_TERM_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityRow {
    pub count: usize,
    pub mean_density: f64,
}

/// Mean representation density (total nnz over total dimensions) per token
/// length.
pub fn density_profile<'a>(
    items: impl IntoIterator<Item = (usize, &'a BucketedRepresentation)>,
) -> BTreeMap<usize, DensityRow> {
    let mut acc: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (len, rep) in items {
        let e = acc.entry(len).or_default();
        e.0 += 1;
        e.1 += rep.density();
    }
    acc.into_iter()
        .map(|(len, (count, sum))| {
            (
                len,
                DensityRow {
                    count,
                    mean_density: sum / count as f64,
                },
            )
        })
        .collect()
}

/// Dimension → number of representations with that dimension nonzero in
/// bucket `bucket`.
pub fn activation_frequency<'a>(
    reps: impl IntoIterator<Item = &'a BucketedRepresentation>,
    bucket: usize,
) -> BTreeMap<u32, usize> {
    let mut out = BTreeMap::new();
    for rep in reps {
        if let Some((_, v)) = rep.buckets().get(bucket) {
            for &d in v.indices() {
                *out.entry(d).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Terms co-occurring with each activated dimension.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DimensionTerms {
    /// Dimension → `(term, query count)` by descending count, then term.
    pub dims: BTreeMap<u32, Vec<(String, usize)>>,
}

impl DimensionTerms {
    pub fn terms(&self, dim: u32) -> &[(String, usize)] {
        self.dims.get(&dim).map_or(&[], Vec::as_slice)
    }
}

/// For every dimension of bucket `bucket`, counts how many queries that
/// activate it contain each term, keeping terms seen at least `min_count`
/// times.
pub fn interpret_dimensions<'a>(
    queries: impl IntoIterator<Item = (&'a [String], &'a BucketedRepresentation)>,
    bucket: usize,
    min_count: usize,
) -> DimensionTerms {
    let mut counts: HashMap<u32, HashMap<&'a str, usize>> = HashMap::new();
    for (terms, rep) in queries {
        let Some((_, v)) = rep.buckets().get(bucket) else {
            continue;
        };
        let distinct: BTreeSet<&str> = terms.iter().map(String::as_str).collect();
        for &d in v.indices() {
            let c = counts.entry(d).or_default();
            for t in &distinct {
                *c.entry(t).or_insert(0) += 1;
            }
        }
    }
    let dims = counts
        .into_iter()
        .filter_map(|(d, c)| {
            let mut list: Vec<(String, usize)> = c
                .into_iter()
                .filter(|&(_, n)| n >= min_count)
                .map(|(t, n)| (t.to_string(), n))
                .collect();
            list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            (!list.is_empty()).then_some((d, list))
        })
        .collect();
    DimensionTerms { dims }
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
