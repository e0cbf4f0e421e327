//! A small pre-LN decoder-only transformer used to produce traces, check
//! pruning decisions against perplexity, and time inference.
//!
//! Every layer is `x += Attn(LN1(x)); x += MLP(LN2(x))` with causal
//! multi-head attention and a ReLU feed-forward block. Each attention or MLP
//! block can be skipped independently through a [`BlockMask`]; a skipped block
//! does no work and leaves the residual stream untouched.

mod bench;
mod checkpoint;
mod corpus;
mod forward;
mod train;
mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{Granularity, PruningPlan};

pub use bench::{bench_inference, TimingRow};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use corpus::{read_corpus, write_corpus, CorpusGenerator, SyntheticCorpus};
pub use forward::{capture_trace, perplexity, Decoder, ForwardOutput, LN_EPS};
pub use train::{train_briefly, ParameterSet, TrainConfig, TrainOutcome};
pub use weights::{LayerWeights, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            hidden_dim: 64,
            heads: 4,
            ffn_dim: 256,
            vocab: 256,
            max_seq: 128,
            seed: 42,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("layers", self.layers),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab", self.vocab),
            ("max_seq", self.max_seq),
        ] {
            if value == 0 {
                return Err(Error::contract(format!("{name} must be at least 1")));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::contract(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.vocab > u32::MAX as usize {
            return Err(Error::contract("vocab does not fit in 32-bit token ids"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

/// Which attention and MLP blocks to skip, per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMask {
    pub skip_attention: Vec<bool>,
    pub skip_mlp: Vec<bool>,
}

impl BlockMask {
    /// Runs every block.
    pub fn none(layers: usize) -> Self {
        Self {
            skip_attention: vec![false; layers],
            skip_mlp: vec![false; layers],
        }
    }

    /// Skips every block.
    pub fn all(layers: usize) -> Self {
        Self {
            skip_attention: vec![true; layers],
            skip_mlp: vec![true; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.skip_attention.len()
    }

    /// Marks block `block` (1-based) of the given granularity as skipped.
    pub fn skip(&mut self, granularity: Granularity, block: usize) -> Result<()> {
        if block == 0 || block > self.layers() {
            return Err(Error::contract(format!(
                "block {block} is outside 1..={}",
                self.layers()
            )));
        }
        let l = block - 1;
        match granularity {
            Granularity::FullLayer => {
                self.skip_attention[l] = true;
                self.skip_mlp[l] = true;
            }
            Granularity::AttentionBlock => self.skip_attention[l] = true,
            Granularity::MlpBlock => self.skip_mlp[l] = true,
        }
        Ok(())
    }

    /// Mask removing `blocks` of one granularity from an `layers`-layer model.
    pub fn from_blocks(layers: usize, granularity: Granularity, blocks: &[usize]) -> Result<Self> {
        let mut mask = Self::none(layers);
        for &b in blocks {
            mask.skip(granularity, b)?;
        }
        Ok(mask)
    }

    /// Mask for the first `k` entries of a plan's ranking.
    pub fn from_plan_prefix(plan: &PruningPlan, layers: usize, k: usize) -> Result<Self> {
        if plan.block_count != layers {
            return Err(Error::Domain(format!(
                "plan covers {} blocks but the model has {layers} layers",
                plan.block_count
            )));
        }
        if k > plan.ranked.len() {
            return Err(Error::Capacity {
                requested: k,
                eligible: plan.ranked.len(),
            });
        }
        let blocks: Vec<usize> = plan.ranked[..k].iter().map(|r| r.block).collect();
        Self::from_blocks(layers, plan.granularity, &blocks)
    }

    /// Mask for a plan's prune set.
    pub fn from_plan(plan: &PruningPlan, layers: usize) -> Result<Self> {
        Self::from_plan_prefix(plan, layers, plan.prune_set.len())
    }

    pub fn skipped_count(&self) -> usize {
        self.skip_attention.iter().chain(&self.skip_mlp).filter(|&&s| s).count()
    }

    pub(crate) fn check_layers(&self, layers: usize) -> Result<()> {
        if self.skip_attention.len() != layers || self.skip_mlp.len() != layers {
            return Err(Error::Dimension {
                op: "BlockMask",
                expected: format!("{layers} layers"),
                actual: format!(
                    "{} attention / {} mlp flags",
                    self.skip_attention.len(),
                    self.skip_mlp.len()
                ),
            });
        }
        Ok(())
    }
}

/// Configuration plus weights. Immutable during forward passes; training
/// produces a new instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    config: ToyModelConfig,
    weights: Weights,
}

impl ToyTransformer {
    /// Draws all weights from the config's seed.
    pub fn init(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let weights = Weights::init(&config);
        Ok(Self { config, weights })
    }

    pub fn from_weights(config: ToyModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights {
        &mut self.weights
    }

    /// CRC-32 over every tensor's little-endian bytes in layout order.
    pub fn weight_checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for (_, tensor) in self.weights.tensors() {
            for v in tensor.data() {
                hasher.update(&v.to_le_bytes());
            }
        }
        hasher.finalize()
    }

    /// Multiplies attention layer `layer`'s (0-based) output projection by
    /// `factor`, shrinking that block's contribution to the residual stream.
    pub fn scale_attention_output(&mut self, layer: usize, factor: f32) -> Result<()> {
        let lw = self
            .weights
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::contract(format!("layer {layer} does not exist")))?;
        lw.wo.scale(factor);
        Ok(())
    }

    pub fn forward(&self, tokens: &[u32], mask: &BlockMask, capture: bool) -> Result<ForwardOutput> {
        forward::forward(self, tokens, mask, capture)
    }
}
