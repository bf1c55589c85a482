//! Reader and writer for UHDE per-layer token embedding files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "UHDE" | u32 version=1 | u32 layer_count V | u32 hidden_size h
//! repeated records:
//!   u32 id_byte_len | id bytes (UTF-8) | u32 token_count
//!   V × token_count × h f32, layer-major then token-major
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::toy::DenseTokenMatrix;
use crate::error::{Error, Result};

pub const UHDE_MAGIC: &[u8; 4] = b"UHDE";
pub const UHDE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub layers: u32,
    pub hidden: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    /// One matrix per layer, layer indices `1..=V`.
    pub layers: Vec<DenseTokenMatrix>,
}

pub struct EmbeddingReader<R> {
    inner: R,
    header: EmbeddingHeader,
    record: usize,
    done: bool,
}

impl EmbeddingReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

/// Reads the whole file into memory.
pub fn read_embedding_file(
    path: impl AsRef<Path>,
) -> Result<(EmbeddingHeader, Vec<EmbeddingRecord>)> {
    let reader = EmbeddingReader::open(path)?;
    let header = reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

/// Fills `buf` completely; `Ok(false)` on clean EOF before the first byte.
fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return if filled == 0 {
                    Ok(false)
                } else {
                    Err(io::ErrorKind::UnexpectedEof.into())
                }
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut head = [0u8; 16];
        match read_exact_or_eof(&mut inner, &mut head) {
            Ok(true) => {}
            Ok(false) | Err(_) => return Err(Error::Format("missing UHDE header".into())),
        }
        if &head[..4] != UHDE_MAGIC {
            return Err(Error::Format("bad magic, not a UHDE file".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != UHDE_VERSION {
            return Err(Error::Format(format!("unsupported UHDE version {version}")));
        }
        let layers = u32::from_le_bytes(head[8..12].try_into().unwrap());
        let hidden = u32::from_le_bytes(head[12..16].try_into().unwrap());
        if layers == 0 || hidden == 0 {
            return Err(Error::Format(
                "layer count and hidden size must be positive".into(),
            ));
        }
        Ok(Self {
            inner,
            header: EmbeddingHeader { layers, hidden },
            record: 0,
            done: false,
        })
    }

    pub fn header(&self) -> EmbeddingHeader {
        self.header
    }

    fn corrupt(&self, what: &str) -> Error {
        Error::Corrupt(format!("UHDE record {}: {what}", self.record))
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| self.corrupt(&format!("truncated {what}")))?;
        Ok(u32::from_le_bytes(b))
    }

    fn next_record(&mut self) -> Result<Option<EmbeddingRecord>> {
        let mut len_buf = [0u8; 4];
        match read_exact_or_eof(&mut self.inner, &mut len_buf) {
            Ok(false) => return Ok(None),
            Ok(true) => {}
            Err(_) => return Err(self.corrupt("truncated id length")),
        }
        let id_len = u32::from_le_bytes(len_buf) as usize;
        let mut id = vec![0u8; id_len];
        self.inner
            .read_exact(&mut id)
            .map_err(|_| self.corrupt("truncated id"))?;
        let id = String::from_utf8(id).map_err(|_| self.corrupt("id is not UTF-8"))?;
        let tokens = self.read_u32("token count")? as usize;
        if tokens == 0 {
            return Err(Error::Data(format!("UHDE record {id:?}: zero tokens")));
        }
        let h = self.header.hidden as usize;
        let per_layer = tokens
            .checked_mul(h)
            .ok_or_else(|| self.corrupt("token count overflow"))?;
        let mut layers = Vec::with_capacity(self.header.layers as usize);
        let mut bytes = vec![0u8; per_layer * 4];
        for j in 0..self.header.layers {
            self.inner
                .read_exact(&mut bytes)
                .map_err(|_| self.corrupt(&format!("truncated values in layer {}", j + 1)))?;
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "UHDE record {id:?}: non-finite value in layer {}",
                    j + 1
                )));
            }
            layers.push(DenseTokenMatrix::new(j + 1, tokens, h, values)?);
        }
        self.record += 1;
        Ok(Some(EmbeddingRecord { id, layers }))
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub struct EmbeddingWriter<W: Write> {
    inner: W,
    header: EmbeddingHeader,
}

impl EmbeddingWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: EmbeddingHeader) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> EmbeddingWriter<W> {
    pub fn new(mut inner: W, header: EmbeddingHeader) -> Result<Self> {
        if header.layers == 0 || header.hidden == 0 {
            return Err(Error::invalid(
                "layer count and hidden size must be positive",
            ));
        }
        inner.write_all(UHDE_MAGIC)?;
        inner.write_all(&UHDE_VERSION.to_le_bytes())?;
        inner.write_all(&header.layers.to_le_bytes())?;
        inner.write_all(&header.hidden.to_le_bytes())?;
        Ok(Self { inner, header })
    }

    pub fn write_record(&mut self, id: &str, layers: &[DenseTokenMatrix]) -> Result<()> {
        if layers.len() != self.header.layers as usize {
            return Err(Error::invalid(format!(
                "record {id:?}: {} layers, header says {}",
                layers.len(),
                self.header.layers
            )));
        }
        let tokens = layers[0].tokens();
        for m in layers {
            if m.hidden() != self.header.hidden as usize || m.tokens() != tokens {
                return Err(Error::invalid(format!(
                    "record {id:?}: inconsistent shapes"
                )));
            }
        }
        self.inner.write_all(&(id.len() as u32).to_le_bytes())?;
        self.inner.write_all(id.as_bytes())?;
        self.inner.write_all(&(tokens as u32).to_le_bytes())?;
        for m in layers {
            for v in m.values() {
                self.inner.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}
