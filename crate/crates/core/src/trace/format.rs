//! ETRC v1: little-endian activation-trace container.
//!
//! ```text
//! magic "ETRC" | version u16 | hidden_dim u32 | token_count u32
//! | snapshot_count u32 | seed u64 | source_len u16 | source (UTF-8)
//! then per snapshot:
//!   layer_index u32 | position u8 | payload f32[token_count * hidden_dim]
//!   | crc32(payload) u32
//! ```

use std::io::{Read, Write};

use super::{ActivationTrace, Position, Snapshot, SnapshotLabel};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"ETRC";
pub const FORMAT_VERSION: u16 = 1;

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|source| Error::Io {
            offset: self.written,
            source,
        })?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Serialises `trace` to `sink`, returning the number of bytes written.
pub fn write_trace<W: Write>(trace: &ActivationTrace, sink: W) -> Result<u64> {
    if trace.snapshots().is_empty() {
        return Err(Error::contract("cannot write a trace without snapshots"));
    }
    let mut w = CountingWriter {
        inner: sink,
        written: 0,
    };
    let source = trace.source().as_bytes();
    w.put(MAGIC)?;
    w.put(&FORMAT_VERSION.to_le_bytes())?;
    w.put(&(trace.hidden_dim() as u32).to_le_bytes())?;
    w.put(&(trace.token_count() as u32).to_le_bytes())?;
    w.put(&(trace.snapshots().len() as u32).to_le_bytes())?;
    w.put(&trace.seed().to_le_bytes())?;
    w.put(&(source.len() as u16).to_le_bytes())?;
    w.put(source)?;

    let mut payload = Vec::with_capacity(trace.token_count() * trace.hidden_dim() * 4);
    for snap in trace.snapshots() {
        w.put(&snap.label.layer_index.to_le_bytes())?;
        w.put(&[snap.label.position.code()])?;
        payload.clear();
        for v in snap.data.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.put(&payload)?;
        w.put(&crc32fast::hash(&payload).to_le_bytes())?;
    }
    w.inner.flush().map_err(|source| Error::Io {
        offset: w.written,
        source,
    })?;
    Ok(w.written)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corruption {
                offset: self.pos as u64,
                reason: format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses an ETRC stream, validating magic, version, checksums and the
/// trace invariants.
pub fn read_trace<R: Read>(mut source: R) -> Result<ActivationTrace> {
    let mut buf = Vec::new();
    source
        .read_to_end(&mut buf)
        .map_err(|e| Error::Io {
            offset: buf.len() as u64,
            source: e,
        })?;
    parse(&buf)
}

fn parse(buf: &[u8]) -> Result<ActivationTrace> {
    let mut c = Cursor { buf, pos: 0 };
    if buf.len() < MAGIC.len() || &buf[..4] != MAGIC {
        return Err(Error::Format("missing ETRC magic".into()));
    }
    c.pos = 4;
    let version = c.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let hidden_dim = c.u32("hidden_dim")? as usize;
    let token_count = c.u32("token_count")? as usize;
    let snapshot_count = c.u32("snapshot_count")? as usize;
    let seed = c.u64("seed")?;
    let source_len = c.u16("source length")? as usize;
    let source_at = c.pos;
    let source = std::str::from_utf8(c.take(source_len, "source")?)
        .map_err(|e| Error::Corruption {
            offset: source_at as u64 + e.valid_up_to() as u64,
            reason: "source is not valid UTF-8".into(),
        })?
        .to_owned();
    if snapshot_count == 0 {
        return Err(Error::Format("trace declares zero snapshots".into()));
    }
    if hidden_dim == 0 {
        return Err(Error::Format("trace declares hidden_dim 0".into()));
    }
    let values = token_count
        .checked_mul(hidden_dim)
        .ok_or_else(|| Error::Format("token_count x hidden_dim overflows".into()))?;
    let payload_len = values
        .checked_mul(4)
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;

    let mut snapshots = Vec::with_capacity(snapshot_count.min(1 << 16));
    for index in 0..snapshot_count {
        let layer_index = c.u32("layer_index")?;
        let pos_at = c.pos;
        let code = c.u8("position")?;
        let position = Position::from_code(code).ok_or_else(|| Error::Corruption {
            offset: pos_at as u64,
            reason: format!("snapshot {index} has unknown position code {code}"),
        })?;
        let payload_at = c.pos;
        let payload = c.take(payload_len, "payload")?;
        let stored = c.u32("payload checksum")?;
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(Error::Corruption {
                offset: payload_at as u64,
                reason: format!(
                    "checksum mismatch in snapshot {index}: stored {stored:08x}, computed {actual:08x}"
                ),
            });
        }
        let label = SnapshotLabel::new(layer_index, position);
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                snapshot: index,
                label: label.to_string(),
            });
        }
        let data = Matrix::from_vec(token_count, hidden_dim, data)?;
        snapshots.push(Snapshot { label, data });
    }
    if c.pos != buf.len() {
        return Err(Error::Corruption {
            offset: c.pos as u64,
            reason: format!("{} trailing bytes after last snapshot", buf.len() - c.pos),
        });
    }
    ActivationTrace::new(snapshots, source, seed).map_err(|e| match e {
        Error::Contract(msg) => Error::Format(msg),
        other => other,
    })
}

/// Serialises to an in-memory buffer.
pub fn to_bytes(trace: &ActivationTrace) -> Vec<u8> {
    let mut out = Vec::new();
    write_trace(trace, &mut out).expect("writing to a Vec cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io;

    pub(crate) fn minimal_trace() -> ActivationTrace {
        let m = |vals: [f32; 4]| Matrix::from_vec(2, 2, vals.to_vec()).unwrap();
        ActivationTrace::new(
            vec![
                Snapshot {
                    label: SnapshotLabel::EMBEDDING,
                    data: m([1.0, -2.0, 0.5, 0.25]),
                },
                Snapshot {
                    label: SnapshotLabel::new(0, Position::PostAttention),
                    data: m([1.5, -2.0, 0.5, 1.25]),
                },
                Snapshot {
                    label: SnapshotLabel::new(0, Position::PostMlp),
                    data: m([3.0, -1.0, -0.75, 2.0]),
                },
            ],
            "golden",
            42,
        )
        .unwrap()
    }

    const GOLDEN: &[u8] = include_bytes!("../../tests/golden/minimal.etrc");

    #[test]
    fn writer_matches_golden_bytes() {
        assert_eq!(to_bytes(&minimal_trace()), GOLDEN);
    }

    #[test]
    fn golden_reads_back() {
        assert_eq!(read_trace(GOLDEN).unwrap(), minimal_trace());
    }

    #[test]
    fn flipped_payload_bit_is_detected() {
        let mut bytes = GOLDEN.to_vec();
        // first payload byte: 4+2+4+4+4+8+2+"golden".len() header, then 5 label bytes
        let first_payload = 28 + 6 + 5;
        bytes[first_payload] ^= 0x01;
        match read_trace(bytes.as_slice()) {
            Err(Error::Corruption { offset, reason }) => {
                assert_eq!(offset, first_payload as u64);
                assert!(reason.contains("checksum"));
            }
            other => panic!("expected corruption, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = GOLDEN.to_vec();
        bytes[4..6].copy_from_slice(&99u16.to_le_bytes());
        assert!(matches!(
            read_trace(bytes.as_slice()),
            Err(Error::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = GOLDEN.to_vec();
        bytes[0] = b'X';
        assert!(matches!(read_trace(bytes.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_reports_offset() {
        let cut = GOLDEN.len() - 3;
        match read_trace(&GOLDEN[..cut]) {
            Err(Error::Corruption { offset, reason }) => {
                assert!(reason.contains("truncated"));
                assert!(offset as usize <= cut);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_payload_names_snapshot() {
        let mut bytes = GOLDEN.to_vec();
        // second snapshot payload, first value -> NaN, with a recomputed checksum
        let snap_len = 5 + 16 + 4;
        let second = 34 + snap_len + 5;
        bytes[second..second + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let crc = crc32fast::hash(&bytes[second..second + 16]);
        bytes[second + 16..second + 20].copy_from_slice(&crc.to_le_bytes());
        match read_trace(bytes.as_slice()) {
            Err(Error::NonFinite { snapshot, .. }) => assert_eq!(snapshot, 1),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    struct FailingSink {
        budget: usize,
    }

    impl Write for FailingSink {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            if self.budget < buf.len() {
                return Err(io::Error::new(io::ErrorKind::Other, "disk full"));
            }
            self.budget -= buf.len();
            Ok(buf.len())
        }

        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn sink_failure_reports_position() {
        match write_trace(&minimal_trace(), FailingSink { budget: 30 }) {
            Err(Error::Io { offset, .. }) => assert_eq!(offset, 28),
            other => panic!("expected I/O error, got {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numerics::Rng;

        proptest! {
            #[test]
            fn round_trip_is_bit_exact(seed in any::<u64>(), layers in 0usize..4,
                                       tokens in 1usize..6, dim in 1usize..5) {
                let mut rng = Rng::new(seed);
                let snapshots = SnapshotLabel::sequence(layers)
                    .into_iter()
                    .map(|label| Snapshot {
                        label,
                        data: Matrix::from_fn(tokens, dim, |_, _| (rng.normal() * 1e3) as f32),
                    })
                    .collect();
                let trace = ActivationTrace::new(snapshots, format!("prop {seed}"), seed).unwrap();
                let bytes = to_bytes(&trace);
                let back = read_trace(bytes.as_slice()).unwrap();
                prop_assert_eq!(to_bytes(&back), bytes);
                prop_assert_eq!(back, trace);
            }
        }
    }
}
