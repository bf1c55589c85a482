//! UHDI index files.
//!
//! ```text
//! "UHDI" | u32 version | u32 bucket_count
//! u32 doc_count, per doc: u32 id_len | id bytes
//! per bucket: u32 j | u32 m | u32 n | f32 w_b | u32 dim_count
//!             per dim: u32 dim | u32 len | len × (u32 ordinal, f32 weight)
//! u64 CRC-64/XZ of everything above
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use super::inverted::{BucketIndex, InvertedIndex, PostingList};
use crate::bytes::{ByteReader, PutLe, Truncated};
use crate::error::{Error, Result};
use crate::sparse::BucketDescriptor;

pub const UHDI_MAGIC: &[u8; 4] = b"UHDI";
pub const UHDI_VERSION: u32 = 1;

static CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn index_bytes(index: &InvertedIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(UHDI_MAGIC);
    out.put_u32(UHDI_VERSION);
    out.put_u32(index.buckets.len() as u32);
    out.put_u32(index.doc_ids.len() as u32);
    for id in &index.doc_ids {
        out.put_str(id);
    }
    for b in &index.buckets {
        out.put_u32(b.descriptor.layer);
        out.put_u32(b.descriptor.aspect);
        out.put_u32(b.descriptor.dim);
        out.put_f32(b.descriptor.weight);
        out.put_u32(b.dims.len() as u32);
        for (dim, list) in b.postings() {
            out.put_u32(dim);
            out.put_u32(list.len() as u32);
            for (doc, w) in list.iter() {
                out.put_u32(doc);
                out.put_f32(w);
            }
        }
    }
    let sum = CRC64.checksum(&out);
    out.put_u64(sum);
    out
}

pub fn write_index(index: &InvertedIndex, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&index_bytes(index))?;
    w.flush()?;
    Ok(())
}

pub fn read_index(path: impl AsRef<Path>) -> Result<InvertedIndex> {
    parse_index(&fs::read(path)?)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptIndex(msg.into())
}

/// Parses and validates a UHDI image. Nothing is returned unless the whole
/// file checks out.
pub fn parse_index(bytes: &[u8]) -> Result<InvertedIndex> {
    if bytes.len() < 8 {
        return Err(corrupt("file too short for a UHDI header"));
    }
    if &bytes[..4] != UHDI_MAGIC {
        return Err(Error::Format("bad magic, not a UHDI index".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != UHDI_VERSION {
        return Err(Error::Format(format!("unsupported UHDI version {version}")));
    }
    if bytes.len() < 8 + 4 + 4 + 8 {
        return Err(corrupt("truncated UHDI index"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if CRC64.checksum(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }

    let trunc = |_: Truncated| corrupt("truncated UHDI index");
    let mut r = ByteReader::new(&body[8..]);
    let bucket_count = r.u32().map_err(trunc)? as usize;
    let doc_count = r.u32().map_err(trunc)? as usize;
    let mut doc_ids = Vec::with_capacity(doc_count.min(1 << 24));
    for _ in 0..doc_count {
        let len = r.u32().map_err(trunc)? as usize;
        let id = r.bytes(len).map_err(trunc)?;
        doc_ids
            .push(String::from_utf8(id.to_vec()).map_err(|_| corrupt("document id is not UTF-8"))?);
    }
    let mut buckets = Vec::with_capacity(bucket_count.min(1024));
    for bi in 0..bucket_count {
        let descriptor = BucketDescriptor {
            layer: r.u32().map_err(trunc)?,
            aspect: r.u32().map_err(trunc)?,
            dim: r.u32().map_err(trunc)?,
            weight: r.f32().map_err(trunc)?,
        };
        let dim_count = r.u32().map_err(trunc)? as usize;
        let mut dims = Vec::with_capacity(dim_count.min(1 << 24));
        let mut lists = Vec::with_capacity(dim_count.min(1 << 24));
        for _ in 0..dim_count {
            let dim = r.u32().map_err(trunc)?;
            if dim >= descriptor.dim || dims.last().is_some_and(|&p| p >= dim) {
                return Err(corrupt(format!(
                    "bucket {bi}: dimension {dim} out of order or range"
                )));
            }
            let len = r.u32().map_err(trunc)? as usize;
            let mut list = PostingList {
                docs: Vec::with_capacity(len.min(1 << 24)),
                weights: Vec::with_capacity(len.min(1 << 24)),
            };
            for _ in 0..len {
                let doc = r.u32().map_err(trunc)?;
                let w = r.f32().map_err(trunc)?;
                if doc as usize >= doc_count || list.docs.last().is_some_and(|&p| p >= doc) {
                    return Err(corrupt(format!(
                        "bucket {bi}, dim {dim}: bad doc ordinal {doc}"
                    )));
                }
                if w == 0.0 || !w.is_finite() {
                    return Err(corrupt(format!("bucket {bi}, dim {dim}: bad weight")));
                }
                list.docs.push(doc);
                list.weights.push(w);
            }
            dims.push(dim);
            lists.push(list);
        }
        buckets.push(BucketIndex {
            descriptor,
            dims,
            lists,
        });
    }
    if r.remaining() != 0 {
        return Err(corrupt(format!(
            "{} unexpected bytes before checksum",
            r.remaining()
        )));
    }
    Ok(InvertedIndex { doc_ids, buckets })
}
