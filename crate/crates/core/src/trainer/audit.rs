//! Central-difference check of the analytic training gradients on tiny
//! random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{
    forward_text, model_params, model_params_mut, signature, ModelGrads, TextGraph,
};
use super::loss::{loss_from_scores, MARGIN};
use super::train::{batch_step, score_batch, TokenizedTriple};
use crate::encoder::{EncoderInit, Nonlinearity, ToyEncoder};
use crate::error::{Error, Result};
use crate::model::UhdModel;
use crate::sparsifier::{BucketPlan, Budget, PlanMode, PlanSpec};

pub const FD_STEP: f64 = 1e-4;
/// Gradients at or below this magnitude are left out of the ratio.
pub const GRAD_FLOOR: f64 = 1e-8;
pub const KINK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSize {
    pub hidden: usize,
    pub dim: usize,
    /// Maximum tokens per text.
    pub tokens: usize,
    pub k: usize,
    pub vocab: usize,
    pub depth: usize,
    pub nonlinearity: Nonlinearity,
}

impl Default for AuditSize {
    fn default() -> Self {
        Self {
            hidden: 6,
            dim: 24,
            tokens: 4,
            k: 4,
            vocab: 7,
            depth: 2,
            nonlinearity: Nonlinearity::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditReport {
    /// Worst `|a − f| / max(|a|, |f|)` over compared parameters.
    pub max_rel_error: f64,
    pub compared: usize,
    /// Parameters whose perturbation changed a winner set, pooled routing or
    /// the active hinge set.
    pub skipped_nonsmooth: usize,
    /// Largest `|∂L/∂W|`, `|∂L/∂b|` over columns that never won.
    pub loser_grad_max: f64,
    pub loser_columns: usize,
    /// Largest `|∂L/∂W|` over severed connections.
    pub masked_grad_max: f64,
    pub masked_entries: usize,
}

fn random_model(rng: &mut ChaCha8Rng, size: &AuditSize) -> Result<UhdModel> {
    let encoder = ToyEncoder::random(
        size.vocab,
        size.hidden,
        EncoderInit {
            depth: size.depth,
            window: 3,
            mixing_noise: 0.8,
            nonlinearity: size.nonlinearity,
        },
        rng,
    )?;
    let mut plan = BucketPlan::random(
        &PlanSpec {
            mode: PlanMode::Vertical,
            layers: (1..=size.depth as u32).collect(),
            aspects: 1,
            hidden: size.hidden,
            dim: size.dim,
            k: size.k,
            sparsity: 0.3,
        },
        rng,
    )?;
    // Random biases make the bias path non-trivial.
    for e in plan.entries_mut() {
        let [_, b] = e.wta.params_mut();
        b.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
    }
    UhdModel::new(None, Some(encoder), plan)
}

fn evaluate(model: &UhdModel, batch: &[TokenizedTriple]) -> Result<(f64, Vec<u32>)> {
    let texts = batch
        .iter()
        .map(|t| &t.query)
        .chain(batch.iter().map(|t| &t.positive));
    let graphs: Vec<TextGraph> = texts
        .map(|ids| forward_text(model, ids, Budget::Train))
        .collect::<Result<_>>()?;
    let table = score_batch(&graphs, batch.len(), false);
    let (report, _) = loss_from_scores(&table);
    let mut sig = Vec::new();
    for g in &graphs {
        signature(g, &mut sig);
    }
    for (pos, negs) in table.pos.iter().zip(&table.neg) {
        for (_, neg) in negs {
            let margin = MARGIN - pos + neg;
            sig.push(u32::from(margin > 0.0));
            sig.push(u32::from(margin.abs() < KINK_TOLERANCE));
        }
    }
    Ok((report.mean_loss, sig))
}

/// Compares every parameter's analytic gradient to central differences on
/// one random instance (`B = 2`). Requires `hidden ≤ 8`, `dim ≤ 32`,
/// `tokens ≤ 4`.
pub fn finite_difference_audit(seed: u64, size: &AuditSize) -> Result<AuditReport> {
    if size.hidden > 8 || size.dim > 32 || size.tokens > 4 || size.tokens == 0 {
        return Err(Error::invalid(
            "audit instances need hidden ≤ 8, dim ≤ 32 and 1..=4 tokens",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = random_model(&mut rng, size)?;
    let text = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let len = rng.gen_range(1..=size.tokens);
        (0..len)
            .map(|_| rng.gen_range(0..size.vocab as u32))
            .collect()
    };
    let batch: Vec<TokenizedTriple> = (0..2)
        .map(|_| TokenizedTriple {
            query: text(&mut rng),
            positive: text(&mut rng),
            negative: None,
        })
        .collect();
    let refs: Vec<&TokenizedTriple> = batch.iter().collect();

    let mut grads = ModelGrads::zeros(&model)?;
    batch_step(&model, &refs, &mut grads)?;
    let (_, base_sig) = evaluate(&model, &batch)?;

    let mut report = AuditReport {
        max_rel_error: 0.0,
        compared: 0,
        skipped_nonsmooth: 0,
        loser_grad_max: 0.0,
        loser_columns: 0,
        masked_grad_max: 0.0,
        masked_entries: 0,
    };

    // Winner-only and mask rules.
    let texts: Vec<&Vec<u32>> = batch.iter().flat_map(|t| [&t.query, &t.positive]).collect();
    for (b, entry) in model.plan.entries().iter().enumerate() {
        let n = entry.wta.output_size();
        let mut won = vec![false; n];
        for ids in &texts {
            let g = forward_text(&model, ids, Budget::Train)?;
            for tr in &g.buckets[b].tokens {
                for &(d, _) in tr.winners() {
                    won[d as usize] = true;
                }
            }
        }
        let gw = &grads.buckets[b].weight;
        let gb = &grads.buckets[b].bias;
        for d in (0..n).filter(|&d| !won[d]) {
            report.loser_columns += 1;
            report.loser_grad_max = report.loser_grad_max.max(gb[d].abs());
            for i in 0..entry.wta.input_size() {
                report.loser_grad_max = report.loser_grad_max.max(gw[i * n + d].abs());
            }
        }
        for (g, &kept) in gw.iter().zip(entry.wta.mask()) {
            if !kept {
                report.masked_entries += 1;
                report.masked_grad_max = report.masked_grad_max.max(g.abs());
            }
        }
    }

    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().cloned().collect();
    // Severed weights are constants, not parameters.
    let mut frozen: Vec<Vec<bool>> = model_params(&model)
        .iter()
        .map(|p| vec![false; p.len()])
        .collect();
    let first_bucket = frozen.len() - 2 * model.plan.len();
    for (b, entry) in model.plan.entries().iter().enumerate() {
        frozen[first_bucket + 2 * b] = entry.wta.mask().iter().map(|&m| !m).collect();
    }
    for (t, skip) in frozen.iter().enumerate() {
        for i in (0..skip.len()).filter(|&i| !skip[i]) {
            let orig = model_params(&model)[t][i];
            model_params_mut(&mut model)[t][i] = orig + FD_STEP;
            let (plus, sig_plus) = evaluate(&model, &batch)?;
            model_params_mut(&mut model)[t][i] = orig - FD_STEP;
            let (minus, sig_minus) = evaluate(&model, &batch)?;
            model_params_mut(&mut model)[t][i] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped_nonsmooth += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[t][i];
            let scale = a.abs().max(fd.abs());
            if scale <= GRAD_FLOOR {
                continue;
            }
            report.compared += 1;
            report.max_rel_error = report.max_rel_error.max((a - fd).abs() / scale);
        }
    }
    Ok(report)
}
