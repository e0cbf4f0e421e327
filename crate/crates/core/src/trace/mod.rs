//! Activation traces: the residual-stream snapshots captured at every block
//! boundary during a calibration run, plus the ETRC binary format that
//! carries them between the model, the exporter and the analysis tools.
//!
//! An `L`-layer model produces `2L + 1` snapshots: the embedding output
//! (labelled layer 0, [`Position::PreAttention`]) followed by a
//! [`Position::PostAttention`] and a [`Position::PostMlp`] snapshot per layer.
//! The input of every block is the snapshot before it, so the sequence is
//! stored once rather than as (input, output) pairs.

mod format;
mod sample;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use format::{read_trace, to_bytes, write_trace, FORMAT_VERSION, MAGIC};
pub use sample::{subsample, SamplePolicy, TokenScope};

/// Where in a layer a snapshot was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Position {
    PreAttention = 0,
    PostAttention = 1,
    PostMlp = 2,
}

impl Position {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Position::PreAttention),
            1 => Some(Position::PostAttention),
            2 => Some(Position::PostMlp),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnapshotLabel {
    pub layer_index: u32,
    pub position: Position,
}

impl SnapshotLabel {
    pub const EMBEDDING: SnapshotLabel = SnapshotLabel {
        layer_index: 0,
        position: Position::PreAttention,
    };

    pub fn new(layer_index: u32, position: Position) -> Self {
        Self {
            layer_index,
            position,
        }
    }

    /// The full label sequence for a model with `layers` layers.
    pub fn sequence(layers: usize) -> Vec<SnapshotLabel> {
        let mut out = Vec::with_capacity(2 * layers + 1);
        out.push(Self::EMBEDDING);
        for l in 0..layers as u32 {
            out.push(Self::new(l, Position::PostAttention));
            out.push(Self::new(l, Position::PostMlp));
        }
        out
    }
}

impl fmt::Display for SnapshotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pos = match self.position {
            Position::PreAttention if self.layer_index == 0 => return f.write_str("embedding"),
            Position::PreAttention => "pre-attention",
            Position::PostAttention => "post-attention",
            Position::PostMlp => "post-mlp",
        };
        write!(f, "layer {} {}", self.layer_index, pos)
    }
}

/// One labelled residual-stream snapshot: `token_count × hidden_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub label: SnapshotLabel,
    pub data: Matrix,
}

/// Ordered residual-stream snapshots for one calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    hidden_dim: usize,
    token_count: usize,
    snapshots: Vec<Snapshot>,
    source: String,
    seed: u64,
}

impl ActivationTrace {
    /// Validates shapes, ordering and finiteness.
    pub fn new(snapshots: Vec<Snapshot>, source: impl Into<String>, seed: u64) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::contract("a trace needs at least one snapshot"))?;
        let token_count = first.data.rows();
        let hidden_dim = first.data.cols();
        if hidden_dim == 0 {
            return Err(Error::contract("hidden_dim must be positive"));
        }
        for (i, snap) in snapshots.iter().enumerate() {
            if snap.data.rows() != token_count || snap.data.cols() != hidden_dim {
                return Err(Error::Dimension {
                    op: "ActivationTrace::new",
                    expected: format!("{token_count}x{hidden_dim}"),
                    actual: format!("snapshot {i} is {}x{}", snap.data.rows(), snap.data.cols()),
                });
            }
            if !snap.data.is_finite() {
                return Err(Error::NonFinite {
                    snapshot: i,
                    label: snap.label.to_string(),
                });
            }
        }
        for (i, pair) in snapshots.windows(2).enumerate() {
            if pair[0].label >= pair[1].label {
                return Err(Error::contract(format!(
                    "snapshots out of order at index {}: {} then {}",
                    i + 1,
                    pair[0].label,
                    pair[1].label
                )));
            }
        }
        let source = source.into();
        if source.len() > u16::MAX as usize {
            return Err(Error::contract("source string longer than 65535 bytes"));
        }
        Ok(Self {
            hidden_dim,
            token_count,
            snapshots,
            source,
            seed,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of layers, if the snapshot sequence is the complete `2L + 1`
    /// layout; otherwise a structural error naming the first gap.
    pub fn layer_count(&self) -> Result<usize> {
        let n = self.snapshots.len();
        if n % 2 == 0 {
            return Err(Error::Structural(format!(
                "{n} snapshots cannot form a 2L+1 sequence"
            )));
        }
        let layers = (n - 1) / 2;
        for (i, (have, want)) in self
            .snapshots
            .iter()
            .map(|s| s.label)
            .zip(SnapshotLabel::sequence(layers))
            .enumerate()
        {
            if have != want {
                return Err(Error::Structural(format!(
                    "snapshot {i} is {have}, expected {want}"
                )));
            }
        }
        Ok(layers)
    }

    /// Applies `f` to every snapshot matrix, keeping labels and metadata.
    pub(crate) fn map_snapshots(&self, f: impl Fn(&Matrix) -> Matrix) -> ActivationTrace {
        let snapshots: Vec<Snapshot> = self
            .snapshots
            .iter()
            .map(|s| Snapshot {
                label: s.label,
                data: f(&s.data),
            })
            .collect();
        let token_count = snapshots[0].data.rows();
        ActivationTrace {
            hidden_dim: self.hidden_dim,
            token_count,
            snapshots,
            source: self.source.clone(),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(layer: u32, pos: Position, v: f32) -> Snapshot {
        Snapshot {
            label: SnapshotLabel::new(layer, pos),
            data: Matrix::from_vec(2, 2, vec![v; 4]).unwrap(),
        }
    }

    #[test]
    fn label_sequence_has_2l_plus_1_entries() {
        let seq = SnapshotLabel::sequence(3);
        assert_eq!(seq.len(), 7);
        assert!(seq.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_empty_and_unordered() {
        assert!(ActivationTrace::new(vec![], "x", 0).is_err());
        let out_of_order = vec![
            snap(0, Position::PostAttention, 1.0),
            snap(0, Position::PreAttention, 1.0),
        ];
        assert!(ActivationTrace::new(out_of_order, "x", 0).is_err());
    }

    #[test]
    fn layer_count_names_the_gap() {
        let t = ActivationTrace::new(
            vec![
                snap(0, Position::PreAttention, 0.0),
                snap(0, Position::PostAttention, 0.0),
                snap(1, Position::PostAttention, 0.0),
            ],
            "gap",
            0,
        )
        .unwrap();
        let err = t.layer_count().unwrap_err().to_string();
        assert!(err.contains("snapshot 2"), "{err}");
    }
}
