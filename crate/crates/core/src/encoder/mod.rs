//! Dense per-layer token embeddings: tokenizer, toy contextual encoder and the
//! UHDE import format.

mod tokenizer;
mod toy;
mod uhde;

pub use tokenizer::{
    split_words, TokenizerConfig, DEFAULT_MAX_DOC_TOKENS, DEFAULT_MAX_QUERY_TOKENS, UNK_TOKEN,
};
pub use toy::{DenseTokenMatrix, EncoderInit, MixingLayer, Nonlinearity, ToyEncoder};
pub(crate) use toy::{EncoderGrads, EncoderTrace};
pub use uhde::{
    read_embedding_file, EmbeddingHeader, EmbeddingReader, EmbeddingRecord, EmbeddingWriter,
    UHDE_MAGIC, UHDE_VERSION,
};
