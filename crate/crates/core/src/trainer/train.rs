//! Training configuration, triple input and the training loop.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{
    accumulate_relevance_grad, backward_text, forward_text, graph_relevance, model_params_mut,
    ModelGrads, OutputGrad, TextGraph,
};
use super::loss::{loss_from_scores, BatchLossReport, ScoreTable};
use super::optim::{Adam, AdamConfig, LrSchedule};
use crate::encoder::{EncoderInit, Nonlinearity, TokenizerConfig, ToyEncoder};
use crate::error::{Error, Result};
use crate::model::UhdModel;
use crate::sparsifier::{BucketPlan, Budget, PlanMode, PlanSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTriple {
    pub query: String,
    pub positive: String,
    pub negative: String,
    /// 1-based source line, for error messages.
    pub line: usize,
}

fn default_aspects() -> usize {
    6
}
fn default_depth() -> usize {
    6
}
fn default_window() -> usize {
    3
}
fn default_mixing_noise() -> f64 {
    0.5
}
fn default_vocab() -> usize {
    30_000
}
fn default_true() -> bool {
    true
}
fn default_max_query() -> usize {
    crate::encoder::DEFAULT_MAX_QUERY_TOKENS
}
fn default_max_doc() -> usize {
    crate::encoder::DEFAULT_MAX_DOC_TOKENS
}

/// Training hyperparameters, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Encoder hidden size.
    pub h: usize,
    /// Dimensions per bucket.
    pub n: usize,
    /// Winners per token during training.
    pub k: usize,
    pub weight_sparsity: f32,
    pub layers: Vec<u32>,
    pub mode: PlanMode,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub warmup_steps: u64,
    pub seed: u64,
    #[serde(default = "default_aspects")]
    pub aspects: usize,
    #[serde(default = "default_depth")]
    pub encoder_depth: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_mixing_noise")]
    pub mixing_noise: f64,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    /// Vocabulary size including the unknown token.
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_true")]
    pub lowercase: bool,
    #[serde(default = "default_max_query")]
    pub max_query_tokens: usize,
    #[serde(default = "default_max_doc")]
    pub max_doc_tokens: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Adds each triple's negative passage to its query's negatives.
    #[serde(default)]
    pub explicit_negatives: bool,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("training config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "batch_size must be at least 2 for in-batch negatives",
            ));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::invalid(format!(
                "k={} must be in 1..={}",
                self.k, self.n
            )));
        }
        if !(0.0..1.0).contains(&self.weight_sparsity) {
            return Err(Error::invalid("weight_sparsity must be in [0, 1)"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("lr must be positive"));
        }
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocab_size must be at least 2"));
        }
        Ok(())
    }

    fn plan_spec(&self) -> PlanSpec {
        PlanSpec {
            mode: self.mode,
            layers: self.layers.clone(),
            aspects: self.aspects,
            hidden: self.h,
            dim: self.n,
            k: self.k,
            sparsity: self.weight_sparsity,
        }
    }
}

/// Reads `query TAB positive TAB negative` lines.
pub fn read_triples(path: impl AsRef<Path>) -> Result<Vec<TrainingTriple>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].trim().is_empty() || cols[1].trim().is_empty() {
            return Err(Error::parse(
                path,
                line_no,
                "query and positive must be nonempty",
            ));
        }
        out.push(TrainingTriple {
            query: cols[0].to_string(),
            positive: cols[1].to_string(),
            negative: cols[2].to_string(),
            line: line_no,
        });
    }
    Ok(out)
}

/// Fresh model for `config`, with the vocabulary built from `triples`.
pub fn init_model(triples: &[TrainingTriple], config: &TrainConfig) -> Result<UhdModel> {
    config.validate()?;
    let texts = triples.iter().flat_map(|t| {
        let neg = config.explicit_negatives.then_some(t.negative.as_str());
        [t.query.as_str(), t.positive.as_str()]
            .into_iter()
            .chain(neg)
    });
    let tokenizer = TokenizerConfig::build(texts, config.vocab_size - 1, config.lowercase)?
        .with_limits(config.max_query_tokens, config.max_doc_tokens)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let depth = config
        .encoder_depth
        .max(config.layers.iter().copied().max().unwrap_or(1) as usize);
    let encoder = ToyEncoder::random(
        tokenizer.vocab_size(),
        config.h,
        EncoderInit {
            depth,
            window: config.window,
            mixing_noise: config.mixing_noise,
            nonlinearity: config.nonlinearity,
        },
        &mut rng,
    )?;
    let plan = BucketPlan::random(&config.plan_spec(), &mut rng)?;
    UhdModel::new(Some(tokenizer), Some(encoder), plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossLogEntry {
    pub step: u64,
    pub report: BatchLossReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: UhdModel,
    /// One entry per optimizer step, measured before that step's update.
    pub log: Vec<LossLogEntry>,
}

pub(crate) struct TokenizedTriple {
    pub query: Vec<u32>,
    pub positive: Vec<u32>,
    pub negative: Option<Vec<u32>>,
}

fn tokenize_all(
    model: &UhdModel,
    triples: &[TrainingTriple],
    explicit: bool,
) -> Result<Vec<TokenizedTriple>> {
    triples
        .iter()
        .map(|t| {
            let at = |e: Error| Error::Data(format!("triple on line {}: {e}", t.line));
            Ok(TokenizedTriple {
                query: model.tokenize(&t.query, true).map_err(at)?,
                positive: model.tokenize(&t.positive, false).map_err(at)?,
                negative: if explicit {
                    Some(model.tokenize(&t.negative, false).map_err(at)?)
                } else {
                    None
                },
            })
        })
        .collect()
}

/// In-batch scores over graphs laid out as queries, positives, then
/// explicit negatives (when `explicit`).
pub(crate) fn score_batch(graphs: &[TextGraph], b: usize, explicit: bool) -> ScoreTable {
    let mut table = ScoreTable {
        pos: Vec::with_capacity(b),
        neg: Vec::with_capacity(b),
    };
    for i in 0..b {
        table.pos.push(graph_relevance(&graphs[i], &graphs[b + i]));
        let mut negs: Vec<(usize, f64)> = (0..b)
            .filter(|&j| j != i)
            .map(|j| (b + j, graph_relevance(&graphs[i], &graphs[b + j])))
            .collect();
        if explicit {
            negs.push((2 * b + i, graph_relevance(&graphs[i], &graphs[2 * b + i])));
        }
        table.neg.push(negs);
    }
    table
}

/// Loss and gradients of one batch. Graphs are laid out as queries, then
/// positives, then explicit negatives (when present).
pub(crate) fn batch_step(
    model: &UhdModel,
    batch: &[&TokenizedTriple],
    grads: &mut ModelGrads,
) -> Result<BatchLossReport> {
    let b = batch.len();
    let texts: Vec<&[u32]> = batch
        .iter()
        .map(|t| t.query.as_slice())
        .chain(batch.iter().map(|t| t.positive.as_slice()))
        .chain(batch.iter().filter_map(|t| t.negative.as_deref()))
        .collect();
    let explicit = texts.len() == 3 * b;
    let graphs: Vec<TextGraph> = texts
        .par_iter()
        .map(|ids| forward_text(model, ids, Budget::Train))
        .collect::<Result<_>>()?;

    let table = score_batch(&graphs, b, explicit);
    let (report, lg) = loss_from_scores(&table);

    let mut out: Vec<OutputGrad> = graphs.iter().map(OutputGrad::zeros).collect();
    for i in 0..b {
        let pair = |col: usize, coeff: f64, out: &mut Vec<OutputGrad>| {
            if coeff == 0.0 {
                return;
            }
            let (lo, hi) = out.split_at_mut(col);
            accumulate_relevance_grad(&graphs[i], &graphs[col], coeff, &mut lo[i], &mut hi[0]);
        };
        pair(b + i, lg.pos[i], &mut out);
        for (c, &(col, _)) in table.neg[i].iter().enumerate() {
            pair(col, lg.neg[i][c], &mut out);
        }
    }
    for (g, o) in graphs.iter().zip(&out) {
        backward_text(model, g, o, grads)?;
    }
    Ok(report)
}

pub(crate) fn zero(grads: &mut ModelGrads) {
    grads.encoder.embedding.fill(0.0);
    for l in &mut grads.encoder.layers {
        l.weight.fill(0.0);
        l.bias.fill(0.0);
    }
    for b in &mut grads.buckets {
        b.weight.fill(0.0);
        b.bias.fill(0.0);
    }
}

/// Trains a fresh model on `triples`. `on_step` sees every loss report as it
/// is produced.
pub fn train(
    triples: &[TrainingTriple],
    config: &TrainConfig,
    mut on_step: impl FnMut(&LossLogEntry),
) -> Result<TrainOutcome> {
    let mut model = init_model(triples, config)?;
    let mut log = Vec::new();
    if config.steps == 0 {
        return Ok(TrainOutcome { model, log });
    }
    if triples.len() < 2 {
        return Err(Error::EmptyInput(
            "training needs at least 2 triples to form a batch".into(),
        ));
    }
    let data = tokenize_all(&model, triples, config.explicit_negatives)?;
    let mut grads = ModelGrads::zeros(&model)?;
    let shapes: Vec<usize> = grads.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(config.adam, &shapes);
    let schedule = LrSchedule {
        base: config.lr,
        warmup: config.warmup_steps,
        total: config.steps,
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);
    let bsz = config.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut step = 0u64;
    while step < config.steps {
        if cursor + bsz > order.len() {
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        let batch: Vec<&TokenizedTriple> = order[cursor..cursor + bsz]
            .iter()
            .map(|&i| &data[i])
            .collect();
        cursor += bsz;
        zero(&mut grads);
        // Token ids are validated up front, so a data error here can only be
        // an overflowing activation.
        let report = batch_step(&model, &batch, &mut grads).map_err(|e| match e {
            Error::Data(_) => Error::Diverged {
                step,
                loss: f64::NAN,
            },
            other => other,
        })?;
        if !report.mean_loss.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: report.mean_loss,
            });
        }
        let entry = LossLogEntry { step, report };
        on_step(&entry);
        log.push(entry);
        step += 1;
        let lr = schedule.at(step);
        adam.step(model_params_mut(&mut model), &grads.tensors(), lr);
        for e in model.plan.entries_mut() {
            e.wta.enforce_mask();
        }
        if model_params_mut(&mut model)
            .iter()
            .any(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged {
                step,
                loss: f64::NAN,
            });
        }
    }
    model.round_to_f32();
    Ok(TrainOutcome { model, log })
}

/// Writes the loss log as CSV `step,mean_loss,mean_pos,mean_neg`.
pub fn write_loss_log(mut w: impl Write, log: &[LossLogEntry]) -> Result<()> {
    writeln!(w, "step,mean_loss,mean_pos,mean_neg")?;
    for e in log {
        writeln!(
            w,
            "{},{},{},{}",
            e.step, e.report.mean_loss, e.report.mean_pos, e.report.mean_neg
        )?;
    }
    Ok(())
}
