//! A complete text-to-representation model: tokenizer, toy encoder and the
//! bucket plan of WTA layers.

use crate::encoder::{DenseTokenMatrix, TokenizerConfig, ToyEncoder};
use crate::error::{Error, Result};
use crate::sparse::BucketedRepresentation;
use crate::sparsifier::{encode_representation, BucketPlan, Budget};

#[derive(Debug, Clone, PartialEq)]
pub struct UhdModel {
    pub tokenizer: Option<TokenizerConfig>,
    pub encoder: Option<ToyEncoder>,
    pub plan: BucketPlan,
}

impl UhdModel {
    pub fn new(
        tokenizer: Option<TokenizerConfig>,
        encoder: Option<ToyEncoder>,
        plan: BucketPlan,
    ) -> Result<Self> {
        if let Some(enc) = &encoder {
            if enc.hidden() != plan.hidden() {
                return Err(Error::invalid(format!(
                    "encoder hidden size {} differs from WTA input size {}",
                    enc.hidden(),
                    plan.hidden()
                )));
            }
            if (enc.depth() as u32) < plan.max_layer() {
                return Err(Error::invalid(format!(
                    "plan reads layer {} but the encoder has {} layers",
                    plan.max_layer(),
                    enc.depth()
                )));
            }
            if let Some(tok) = &tokenizer {
                if tok.vocab_size() != enc.vocab_size() {
                    return Err(Error::invalid(format!(
                        "tokenizer has {} entries, encoder embeds {}",
                        tok.vocab_size(),
                        enc.vocab_size()
                    )));
                }
            }
        }
        Ok(Self {
            tokenizer,
            encoder,
            plan,
        })
    }

    fn parts(&self) -> Result<(&TokenizerConfig, &ToyEncoder)> {
        match (&self.tokenizer, &self.encoder) {
            (Some(t), Some(e)) => Ok((t, e)),
            _ => Err(Error::Usage(
                "model has no built-in encoder; supply precomputed embeddings".into(),
            )),
        }
    }

    pub fn has_text_encoder(&self) -> bool {
        self.tokenizer.is_some() && self.encoder.is_some()
    }

    pub fn tokenize(&self, text: &str, is_query: bool) -> Result<Vec<u32>> {
        self.parts()?.0.tokenize(text, is_query)
    }

    pub fn encode_tokens(&self, ids: &[u32], budget: Budget) -> Result<BucketedRepresentation> {
        let (_, enc) = self.parts()?;
        let layers = enc.encode_layers(ids)?;
        encode_representation(&layers, &self.plan, budget)
    }

    pub fn encode_text(
        &self,
        text: &str,
        is_query: bool,
        budget: Budget,
    ) -> Result<BucketedRepresentation> {
        let ids = self.tokenize(text, is_query)?;
        self.encode_tokens(&ids, budget)
    }

    /// Encodes externally produced per-layer embeddings.
    pub fn encode_dense(
        &self,
        layers: &[DenseTokenMatrix],
        budget: Budget,
    ) -> Result<BucketedRepresentation> {
        if let Some(m) = layers.first() {
            if m.hidden() != self.plan.hidden() {
                return Err(Error::InvalidInput(format!(
                    "embeddings have hidden size {}, model expects {}",
                    m.hidden(),
                    self.plan.hidden()
                )));
            }
        }
        encode_representation(layers, &self.plan, budget)
    }

    pub fn set_infer_k(&mut self, k: usize) -> Result<()> {
        self.plan.set_infer_k(k)
    }

    /// Rounds every parameter to single precision, the checkpoint storage
    /// precision.
    pub fn round_to_f32(&mut self) {
        for e in self.plan.entries_mut() {
            for p in e.wta.params_mut() {
                p.iter_mut().for_each(|v| *v = f64::from(*v as f32));
            }
        }
        if let Some(enc) = &mut self.encoder {
            for p in enc.params_mut() {
                p.iter_mut().for_each(|v| *v = f64::from(*v as f32));
            }
        }
    }
}
