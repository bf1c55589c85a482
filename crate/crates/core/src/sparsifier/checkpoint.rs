//! UHDW model checkpoints.
//!
//! ```text
//! "UHDW" | u32 version
//! u32 bucket_count, then per bucket: u32 j | u32 m | u32 h | u32 n | u32 train_k | f32 s
//! per bucket: mask bitset (⌈h·n/8⌉ bytes, bit i·n+d, LSB first, 1 = kept)
//!             W f32 h×n row-major | b f32 n
//! u8 encoder flag; when 1:
//!   u32 vocab | u32 h | embedding f32 vocab×h | u8 nonlinearity | u32 depth
//!   per layer: u32 window | u32 rows | u32 cols | W f32 | u32 len | b f32
//! u8 tokenizer flag; when 1:
//!   u8 lowercase | u32 max_query_tokens | u32 max_doc_tokens | u32 count | count × (u32 len, bytes)
//! ```

use std::fs;
use std::path::Path;

use super::plan::{BucketPlan, PlanEntry};
use super::wta::WtaLayer;
use crate::bytes::{ByteReader, PutLe, Truncated};
use crate::encoder::{MixingLayer, Nonlinearity, TokenizerConfig, ToyEncoder};
use crate::error::{Error, Result};
use crate::model::UhdModel;

pub const UHDW_MAGIC: &[u8; 4] = b"UHDW";
pub const UHDW_VERSION: u32 = 1;

fn put_f64s_as_f32(out: &mut Vec<u8>, vals: &[f64]) {
    out.reserve(vals.len() * 4);
    for &v in vals {
        out.put_f32(v as f32);
    }
}

pub fn checkpoint_bytes(model: &UhdModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(UHDW_MAGIC);
    out.put_u32(UHDW_VERSION);
    let entries = model.plan.entries();
    out.put_u32(entries.len() as u32);
    for e in entries {
        out.put_u32(e.layer);
        out.put_u32(e.aspect);
        out.put_u32(e.wta.input_size() as u32);
        out.put_u32(e.wta.output_size() as u32);
        out.put_u32(e.wta.train_k() as u32);
        out.put_f32(e.wta.sparsity());
    }
    for e in entries {
        let mask = e.wta.mask();
        let mut bits = vec![0u8; mask.len().div_ceil(8)];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
        put_f64s_as_f32(&mut out, e.wta.weight());
        put_f64s_as_f32(&mut out, e.wta.bias());
    }
    match &model.encoder {
        None => out.put_u8(0),
        Some(enc) => {
            out.put_u8(1);
            out.put_u32(enc.vocab_size() as u32);
            out.put_u32(enc.hidden() as u32);
            put_f64s_as_f32(&mut out, &enc.embedding);
            out.put_u8(enc.nonlinearity.code());
            out.put_u32(enc.depth() as u32);
            for l in &enc.layers {
                out.put_u32(l.window as u32);
                out.put_u32(enc.hidden() as u32);
                out.put_u32(enc.hidden() as u32);
                put_f64s_as_f32(&mut out, &l.weight);
                out.put_u32(l.bias.len() as u32);
                put_f64s_as_f32(&mut out, &l.bias);
            }
        }
    }
    match &model.tokenizer {
        None => out.put_u8(0),
        Some(tok) => {
            out.put_u8(1);
            out.put_u8(u8::from(tok.lowercase));
            out.put_u32(tok.max_query_tokens as u32);
            out.put_u32(tok.max_doc_tokens as u32);
            out.put_u32(tok.vocab_size() as u32);
            for w in tok.vocab() {
                out.put_str(w);
            }
        }
    }
    out
}

pub fn write_checkpoint(model: &UhdModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<UhdModel> {
    parse_checkpoint(&fs::read(path)?)
}

fn widen(v: Vec<f32>) -> Vec<f64> {
    v.into_iter().map(f64::from).collect()
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<UhdModel> {
    if bytes.len() < 8 || &bytes[..4] != UHDW_MAGIC {
        return Err(Error::Format("bad magic, not a UHDW checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != UHDW_VERSION {
        return Err(Error::Format(format!("unsupported UHDW version {version}")));
    }
    let corrupt = |_: Truncated| Error::Corrupt("truncated UHDW checkpoint".into());
    let mut r = ByteReader::new(&bytes[8..]);
    let count = r.u32().map_err(corrupt)? as usize;
    let mut heads = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let j = r.u32().map_err(corrupt)?;
        let m = r.u32().map_err(corrupt)?;
        let h = r.u32().map_err(corrupt)? as usize;
        let n = r.u32().map_err(corrupt)? as usize;
        let k = r.u32().map_err(corrupt)? as usize;
        let s = r.f32().map_err(corrupt)?;
        heads.push((j, m, h, n, k, s));
    }
    let mut entries = Vec::with_capacity(count);
    for (layer, aspect, h, n, k, s) in heads {
        let cells = h
            .checked_mul(n)
            .ok_or_else(|| Error::Corrupt("bucket shape overflow".into()))?;
        let bits = r.bytes(cells.div_ceil(8)).map_err(corrupt)?;
        let mask: Vec<bool> = (0..cells)
            .map(|i| bits[i / 8] >> (i % 8) & 1 == 1)
            .collect();
        let weight = widen(r.f32s(cells).map_err(corrupt)?);
        let bias = widen(r.f32s(n).map_err(corrupt)?);
        let wta = WtaLayer::from_parts(h, n, weight, bias, mask, k, s)
            .map_err(|e| Error::Corrupt(format!("bucket ({layer},{aspect}): {e}")))?;
        entries.push(PlanEntry { layer, aspect, wta });
    }
    let mode = BucketPlan::infer_mode(&entries);
    let plan = BucketPlan::new(mode, entries).map_err(|e| Error::Corrupt(e.to_string()))?;

    let encoder = match r.u8().map_err(corrupt)? {
        0 => None,
        1 => {
            let vocab = r.u32().map_err(corrupt)? as usize;
            let h = r.u32().map_err(corrupt)? as usize;
            let embedding = widen(r.f32s(vocab * h).map_err(corrupt)?);
            let nl = Nonlinearity::from_code(r.u8().map_err(corrupt)?)
                .ok_or_else(|| Error::Corrupt("unknown nonlinearity code".into()))?;
            let depth = r.u32().map_err(corrupt)? as usize;
            let mut layers = Vec::with_capacity(depth.min(1024));
            for _ in 0..depth {
                let window = r.u32().map_err(corrupt)? as usize;
                let rows = r.u32().map_err(corrupt)? as usize;
                let cols = r.u32().map_err(corrupt)? as usize;
                let weight = widen(r.f32s(rows * cols).map_err(corrupt)?);
                let blen = r.u32().map_err(corrupt)? as usize;
                let bias = widen(r.f32s(blen).map_err(corrupt)?);
                layers.push(MixingLayer {
                    window,
                    weight,
                    bias,
                });
            }
            Some(
                ToyEncoder::from_parts(vocab, h, embedding, layers, nl)
                    .map_err(|e| Error::Corrupt(format!("encoder: {e}")))?,
            )
        }
        f => return Err(Error::Corrupt(format!("bad encoder flag {f}"))),
    };

    let tokenizer = match r.u8().map_err(corrupt)? {
        0 => None,
        1 => {
            let lowercase = r.u8().map_err(corrupt)? != 0;
            let max_q = r.u32().map_err(corrupt)? as usize;
            let max_d = r.u32().map_err(corrupt)? as usize;
            let count = r.u32().map_err(corrupt)? as usize;
            let mut vocab = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let len = r.u32().map_err(corrupt)? as usize;
                let w = r.bytes(len).map_err(corrupt)?;
                vocab.push(
                    String::from_utf8(w.to_vec())
                        .map_err(|_| Error::Corrupt("vocabulary entry is not UTF-8".into()))?,
                );
            }
            Some(
                TokenizerConfig::new(vocab, lowercase)
                    .and_then(|t| t.with_limits(max_q, max_d))
                    .map_err(|e| Error::Corrupt(format!("tokenizer: {e}")))?,
            )
        }
        f => return Err(Error::Corrupt(format!("bad tokenizer flag {f}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after checkpoint",
            r.remaining()
        )));
    }
    UhdModel::new(tokenizer, encoder, plan).map_err(|e| Error::Corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderInit;
    use crate::sparsifier::{PlanMode, PlanSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(with_encoder: bool) -> UhdModel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tok = TokenizerConfig::new(vec!["alpha".into(), "beta".into()], true).unwrap();
        let enc = ToyEncoder::random(
            3,
            6,
            EncoderInit {
                depth: 3,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let plan = BucketPlan::random(
            &PlanSpec {
                mode: PlanMode::Vertical,
                layers: vec![1, 3],
                aspects: 1,
                hidden: 6,
                dim: 37,
                k: 4,
                sparsity: 0.3,
            },
            &mut rng,
        )
        .unwrap();
        if with_encoder {
            UhdModel::new(Some(tok), Some(enc), plan).unwrap()
        } else {
            UhdModel::new(None, None, plan).unwrap()
        }
    }

    #[test]
    fn round_trip_preserves_f32_parameters() {
        for with_encoder in [true, false] {
            let m = model(with_encoder);
            let bytes = checkpoint_bytes(&m);
            let back = parse_checkpoint(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(checkpoint_bytes(&back), bytes);
        }
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = checkpoint_bytes(&model(true));
        for cut in [9, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(parse_checkpoint(&bytes[..cut]), Err(Error::Corrupt(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(parse_checkpoint(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(parse_checkpoint(&bad), Err(Error::Format(_))));
    }
}
