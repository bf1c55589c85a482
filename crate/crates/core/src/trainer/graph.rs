//! Double-precision forward/backward through encoder → WTA → max-pool →
//! L2 normalization, as used by training and the gradient audit.

use crate::encoder::{EncoderGrads, EncoderTrace};
use crate::error::{Error, Result};
use crate::model::UhdModel;
use crate::sparsifier::{Budget, WtaGrads, WtaTrace};

/// A bucket after max-pooling and normalization. Only positive pooled
/// dimensions are kept; `source[p]` is the token whose activation won dim
/// `dims[p]` (lowest token index on ties).
#[derive(Debug, Clone)]
pub(crate) struct PooledBucket {
    pub tokens: Vec<WtaTrace>,
    pub dims: Vec<u32>,
    pub source: Vec<u32>,
    pub norm: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct TextGraph {
    pub encoder: EncoderTrace,
    pub buckets: Vec<PooledBucket>,
}

/// Gradients for every trainable tensor of a model.
#[derive(Debug, Clone)]
pub(crate) struct ModelGrads {
    pub encoder: EncoderGrads,
    pub buckets: Vec<WtaGrads>,
}

impl ModelGrads {
    pub fn zeros(model: &UhdModel) -> Result<Self> {
        let enc = model
            .encoder
            .as_ref()
            .ok_or_else(|| Error::Usage("training requires the built-in encoder".into()))?;
        Ok(Self {
            encoder: enc.zero_grads(),
            buckets: model
                .plan
                .entries()
                .iter()
                .map(|e| WtaGrads::zeros(&e.wta))
                .collect(),
        })
    }

    /// Same order as [`model_params_mut`].
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = self.encoder.tensors();
        for b in &self.buckets {
            out.push(&b.weight);
            out.push(&b.bias);
        }
        out
    }
}

pub(crate) fn model_params_mut(model: &mut UhdModel) -> Vec<&mut Vec<f64>> {
    let mut out = match &mut model.encoder {
        Some(enc) => enc.params_mut(),
        None => Vec::new(),
    };
    for e in model.plan.entries_mut() {
        let [w, b] = e.wta.params_mut();
        out.push(w);
        out.push(b);
    }
    out
}

pub(crate) fn model_params(model: &UhdModel) -> Vec<&Vec<f64>> {
    let mut out = match &model.encoder {
        Some(enc) => enc.params(),
        None => Vec::new(),
    };
    for e in model.plan.entries() {
        let [w, b] = e.wta.params();
        out.push(w);
        out.push(b);
    }
    out
}

fn pool(tokens: Vec<WtaTrace>) -> PooledBucket {
    let mut cand: Vec<(u32, f64, u32)> = tokens
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| {
            tr.winners()
                .iter()
                .filter(|w| w.1 > 0.0)
                .map(move |&(d, v)| (d, v, t as u32))
        })
        .collect();
    // Highest value first within a dim, lowest token on ties.
    cand.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    cand.dedup_by_key(|c| c.0);
    let norm = cand.iter().map(|c| c.1 * c.1).sum::<f64>().sqrt();
    let values = cand.iter().map(|c| c.1 / norm).collect();
    PooledBucket {
        tokens,
        dims: cand.iter().map(|c| c.0).collect(),
        source: cand.iter().map(|c| c.2).collect(),
        norm,
        values,
    }
}

pub(crate) fn forward_text(model: &UhdModel, ids: &[u32], budget: Budget) -> Result<TextGraph> {
    let enc = model
        .encoder
        .as_ref()
        .ok_or_else(|| Error::Usage("training requires the built-in encoder".into()))?;
    let h = enc.hidden();
    let trace = enc.forward(ids)?;
    let buckets = model
        .plan
        .entries()
        .iter()
        .map(|entry| {
            let x = &trace.outputs[entry.layer as usize];
            let k = entry.k(budget);
            let tokens = (0..ids.len())
                .map(|t| entry.wta.forward_traced(&x[t * h..(t + 1) * h], k))
                .collect::<Result<Vec<_>>>()?;
            Ok(pool(tokens))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TextGraph {
        encoder: trace,
        buckets,
    })
}

fn bucket_dot(a: &PooledBucket, b: &PooledBucket) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    while i < a.dims.len() && j < b.dims.len() {
        match a.dims[i].cmp(&b.dims[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a.values[i] * b.values[j];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Unweighted `Σ_b q_b · d_b`.
pub(crate) fn graph_relevance(q: &TextGraph, d: &TextGraph) -> f64 {
    q.buckets
        .iter()
        .zip(&d.buckets)
        .map(|(a, b)| bucket_dot(a, b))
        .sum()
}

/// `∂L/∂y` per bucket, aligned with each bucket's `dims`.
pub(crate) struct OutputGrad {
    pub buckets: Vec<Vec<f64>>,
}

impl OutputGrad {
    pub fn zeros(g: &TextGraph) -> Self {
        Self {
            buckets: g.buckets.iter().map(|b| vec![0.0; b.dims.len()]).collect(),
        }
    }
}

/// Adds `coeff · ∂Rel(q,d)/∂q` into `gq` and `coeff · ∂Rel(q,d)/∂d` into `gd`.
pub(crate) fn accumulate_relevance_grad(
    q: &TextGraph,
    d: &TextGraph,
    coeff: f64,
    gq: &mut OutputGrad,
    gd: &mut OutputGrad,
) {
    for (b, (qb, db)) in q.buckets.iter().zip(&d.buckets).enumerate() {
        let (mut i, mut j) = (0, 0);
        while i < qb.dims.len() && j < db.dims.len() {
            match qb.dims[i].cmp(&db.dims[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    gq.buckets[b][i] += coeff * db.values[j];
                    gd.buckets[b][j] += coeff * qb.values[i];
                    i += 1;
                    j += 1;
                }
            }
        }
    }
}

/// Backpropagates `∂L/∂y` through normalization, max-pool, WTA and the
/// encoder, accumulating into `grads`.
pub(crate) fn backward_text(
    model: &UhdModel,
    graph: &TextGraph,
    out: &OutputGrad,
    grads: &mut ModelGrads,
) -> Result<()> {
    let enc = model
        .encoder
        .as_ref()
        .ok_or_else(|| Error::Usage("training requires the built-in encoder".into()))?;
    let h = enc.hidden();
    let t = graph.encoder.tokens.len();
    let mut layer_grads: Vec<Option<Vec<f64>>> = vec![None; enc.depth()];
    for (b, (entry, bucket)) in model.plan.entries().iter().zip(&graph.buckets).enumerate() {
        let gy = &out.buckets[b];
        if bucket.dims.is_empty() || gy.iter().all(|&g| g == 0.0) {
            continue;
        }
        // y = x/‖x‖  ⇒  ∂L/∂x = (g − y (y·g)) / ‖x‖
        let yg: f64 = bucket.values.iter().zip(gy).map(|(y, g)| y * g).sum();
        let mut per_token: Vec<Vec<(u32, f64)>> = vec![Vec::new(); t];
        for p in 0..bucket.dims.len() {
            let gx = (gy[p] - bucket.values[p] * yg) / bucket.norm;
            per_token[bucket.source[p] as usize].push((bucket.dims[p], gx));
        }
        let lg = layer_grads[entry.layer as usize - 1].get_or_insert_with(|| vec![0.0; t * h]);
        for (tok, up) in per_token.iter().enumerate() {
            if up.is_empty() {
                continue;
            }
            let ge = entry
                .wta
                .backward_into(&bucket.tokens[tok], up, &mut grads.buckets[b])?;
            for (dst, g) in lg[tok * h..(tok + 1) * h].iter_mut().zip(&ge) {
                *dst += g;
            }
        }
    }
    enc.backward(&graph.encoder, layer_grads, &mut grads.encoder);
    Ok(())
}

/// Discrete state of a forward pass: winner sets and pooled routing. Two
/// passes with equal signatures lie on the same smooth piece of the loss.
pub(crate) fn signature(g: &TextGraph, out: &mut Vec<u32>) {
    for b in &g.buckets {
        out.push(u32::MAX);
        for tr in &b.tokens {
            out.extend(tr.winners().iter().map(|w| w.0));
            out.push(u32::MAX - 1);
        }
        out.extend(b.dims.iter().copied());
        out.extend(b.source.iter().copied());
    }
}
