//! Named-tensor checkpoint container, little-endian:
//!
//! ```text
//! magic "ECKP" | version u16
//! layers u32 | hidden_dim u32 | heads u32 | ffn_dim u32 | vocab u32 | max_seq u32 | seed u64
//! tensor_count u32
//! per tensor: name_len u16 + UTF-8 name | ndims u8 | dims u32 × ndims
//!             | payload f32 × Π dims | CRC32 of payload u32
//! ```
//!
//! Tensors appear in layout order; the reader checks names and shapes against
//! the layout implied by the header.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::weights::{layout, Weights};
use super::{ToyModelConfig, ToyTransformer};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ECKP";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint(model: &ToyTransformer, mut sink: impl Write) -> Result<()> {
    let c = model.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.layers, c.hidden_dim, c.heads, c.ffn_dim, c.vocab, c.max_seq] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.seed.to_le_bytes());
    let tensors = model.weights().tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(2);
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        let start = buf.len();
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf[start..]);
        buf.extend_from_slice(&crc.to_le_bytes());
    }
    sink.write_all(&buf)
        .and_then(|_| sink.flush())
        .map_err(|source| Error::Io { offset: 0, source })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corruption {
                offset: self.pos as u64,
                reason: format!("checkpoint truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(mut source: impl Read) -> Result<ToyTransformer> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|source| Error::Io { offset: 0, source })?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = cur.u32("config")? as usize;
    }
    let seed = u64::from_le_bytes(cur.take(8, "seed")?.try_into().unwrap());
    let config = ToyModelConfig {
        layers: dims[0],
        hidden_dim: dims[1],
        heads: dims[2],
        ffn_dim: dims[3],
        vocab: dims[4],
        max_seq: dims[5],
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let specs = layout(&config);
    let count = cur.u32("tensor count")? as usize;
    if count != specs.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, the configured model needs {}",
            specs.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for spec in &specs {
        let name_len = u16::from_le_bytes(cur.take(2, "name length")?.try_into().unwrap());
        let name = std::str::from_utf8(cur.take(name_len as usize, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if name != spec.name {
            return Err(Error::Format(format!(
                "expected tensor {}, found {name}",
                spec.name
            )));
        }
        let ndims = cur.take(1, "rank")?[0];
        let shape = (0..ndims)
            .map(|_| cur.u32("dims").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != [spec.rows, spec.cols] {
            return Err(Error::Format(format!(
                "tensor {name} has shape {shape:?}, expected [{}, {}]",
                spec.rows, spec.cols
            )));
        }
        let payload_at = cur.pos as u64;
        let payload = cur.take(4 * spec.rows * spec.cols, "tensor payload")?;
        let crc = cur.u32("checksum")?;
        if crc32fast::hash(payload) != crc {
            return Err(Error::Corruption {
                offset: payload_at,
                reason: format!("checksum mismatch in tensor {name}"),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(
            Matrix::from_vec(spec.rows, spec.cols, data)
                .map_err(|_| Error::Format(format!("tensor {name} contains non-finite values")))?,
        );
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corruption {
            offset: cur.pos as u64,
            reason: "trailing bytes after the last tensor".into(),
        });
    }
    ToyTransformer::from_weights(config, Weights::from_tensors(&config, tensors)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyTransformer {
        ToyTransformer::init(ToyModelConfig {
            layers: 2,
            hidden_dim: 8,
            heads: 2,
            ffn_dim: 12,
            vocab: 10,
            max_seq: 6,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), m);
    }

    #[test]
    fn detects_corruption_and_truncation() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let mut flipped = buf.clone();
        let last = flipped.len() - 10;
        flipped[last] ^= 0x10;
        assert!(matches!(read_checkpoint(&flipped[..]), Err(Error::Corruption { .. })));
        assert!(matches!(
            read_checkpoint(&buf[..buf.len() - 3]),
            Err(Error::Corruption { .. })
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(_))));
    }
}
