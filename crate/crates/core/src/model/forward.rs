use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{dot, layer_norm, layer_norm_row, matmul, vecmat, Matrix};
use crate::trace::{ActivationTrace, Position, Snapshot, SnapshotLabel};

use super::corpus::SyntheticCorpus;
use super::weights::LayerWeights;
use super::{BlockMask, ToyModelConfig, ToyTransformer};

pub const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `tokens × vocab`
    pub logits: Matrix,
    pub trace: Option<ActivationTrace>,
}

pub(crate) fn check_tokens(config: &ToyModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::contract("token sequence is empty"));
    }
    if tokens.len() > config.max_seq {
        return Err(Error::contract(format!(
            "sequence of {} tokens exceeds max_seq {}",
            tokens.len(),
            config.max_seq
        )));
    }
    if let Some((i, &t)) = tokens
        .iter()
        .enumerate()
        .find(|(_, &t)| t as usize >= config.vocab)
    {
        return Err(Error::Input(format!(
            "token {t} at position {i} is outside the vocabulary of {}",
            config.vocab
        )));
    }
    Ok(())
}

fn relu(v: f32) -> f32 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Causal attention of one query against the first `len` cached key and
/// value rows, written head by head into `out`.
fn attend(q: &[f32], keys: &[f32], values: &[f32], len: usize, heads: usize, out: &mut [f32]) {
    let d = q.len();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut scores = vec![0.0f64; len];
    let mut acc = vec![0.0f64; dk];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        let qh = &q[cols.clone()];
        let mut max = f64::NEG_INFINITY;
        for (s, slot) in scores.iter_mut().enumerate() {
            *slot = dot(qh, &keys[s * d..][cols.clone()]) * scale;
            max = max.max(*slot);
        }
        let mut total = 0.0;
        for slot in scores.iter_mut() {
            *slot = (*slot - max).exp();
            total += *slot;
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (s, &w) in scores.iter().enumerate() {
            let p = w / total;
            for (a, &v) in acc.iter_mut().zip(&values[s * d..][cols.clone()]) {
                *a += p * f64::from(v);
            }
        }
        for (o, &a) in out[cols].iter_mut().zip(&acc) {
            *o = a as f32;
        }
    }
}

fn attention_block(lw: &LayerWeights, x: &Matrix, heads: usize) -> Result<Matrix> {
    let n = layer_norm(x, lw.ln1_gain.data(), lw.ln1_bias.data(), LN_EPS)?;
    let q = matmul(&n, &lw.wq)?;
    let k = matmul(&n, &lw.wk)?;
    let v = matmul(&n, &lw.wv)?;
    let mut o = Matrix::zeros(x.rows(), x.cols());
    for t in 0..x.rows() {
        attend(q.row(t), k.data(), v.data(), t + 1, heads, o.row_mut(t));
    }
    matmul(&o, &lw.wo)
}

fn mlp_block(lw: &LayerWeights, x: &Matrix) -> Result<Matrix> {
    let n = layer_norm(x, lw.ln2_gain.data(), lw.ln2_bias.data(), LN_EPS)?;
    let mut h = matmul(&n, &lw.w1)?;
    h.add_row_vector(lw.b1.data())?;
    h.map_inplace(relu);
    let mut m = matmul(&h, &lw.w2)?;
    m.add_row_vector(lw.b2.data())?;
    Ok(m)
}

pub(crate) fn forward(
    model: &ToyTransformer,
    tokens: &[u32],
    mask: &BlockMask,
    capture: bool,
) -> Result<ForwardOutput> {
    let config = model.config();
    check_tokens(config, tokens)?;
    mask.check_layers(config.layers)?;
    let w = model.weights();
    let mut x = Matrix::from_fn(tokens.len(), config.hidden_dim, |t, c| {
        w.token_embedding.get(tokens[t] as usize, c) + w.position_embedding.get(t, c)
    });
    let mut snapshots = Vec::new();
    let mut keep = |label: SnapshotLabel, x: &Matrix| {
        if capture {
            snapshots.push(Snapshot {
                label,
                data: x.clone(),
            });
        }
    };
    keep(SnapshotLabel::EMBEDDING, &x);
    for (l, lw) in w.layers.iter().enumerate() {
        if !mask.skip_attention[l] {
            x.add_assign(&attention_block(lw, &x, config.heads)?)?;
        }
        keep(SnapshotLabel::new(l as u32, Position::PostAttention), &x);
        if !mask.skip_mlp[l] {
            x.add_assign(&mlp_block(lw, &x)?)?;
        }
        keep(SnapshotLabel::new(l as u32, Position::PostMlp), &x);
    }
    let n = layer_norm(&x, w.final_gain.data(), w.final_bias.data(), LN_EPS)?;
    let logits = matmul(&n, &w.unembedding)?;
    let trace = if capture {
        Some(ActivationTrace::new(snapshots, source_name(config), config.seed)?)
    } else {
        None
    };
    Ok(ForwardOutput { logits, trace })
}

fn source_name(config: &ToyModelConfig) -> String {
    format!(
        "toy-transformer layers={} d={} heads={} ffn={} vocab={}",
        config.layers, config.hidden_dim, config.heads, config.ffn_dim, config.vocab
    )
}

/// Incremental decoding with a key/value cache. Produces the same logits, to
/// the bit, as a full forward pass over the tokens seen so far.
pub struct Decoder<'a> {
    model: &'a ToyTransformer,
    mask: BlockMask,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    position: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(model: &'a ToyTransformer, mask: &BlockMask) -> Result<Self> {
        let layers = model.config().layers;
        mask.check_layers(layers)?;
        Ok(Self {
            model,
            mask: mask.clone(),
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            position: 0,
        })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Feeds one token and returns the next-token logits.
    pub fn step(&mut self, token: u32) -> Result<Vec<f32>> {
        let config = self.model.config();
        if self.position >= config.max_seq {
            return Err(Error::contract(format!(
                "decoder is full at max_seq {}",
                config.max_seq
            )));
        }
        if token as usize >= config.vocab {
            return Err(Error::Input(format!(
                "token {token} is outside the vocabulary of {}",
                config.vocab
            )));
        }
        let w = self.model.weights();
        let d = config.hidden_dim;
        let pos = self.position;
        let mut x: Vec<f32> = w
            .token_embedding
            .row(token as usize)
            .iter()
            .zip(w.position_embedding.row(pos))
            .map(|(a, b)| a + b)
            .collect();
        let mut n = vec![0.0f32; d];
        for (l, lw) in w.layers.iter().enumerate() {
            if !self.mask.skip_attention[l] {
                layer_norm_row(&x, lw.ln1_gain.data(), lw.ln1_bias.data(), LN_EPS, &mut n);
                let q = vecmat(&n, &lw.wq)?;
                self.keys[l].extend(vecmat(&n, &lw.wk)?);
                self.values[l].extend(vecmat(&n, &lw.wv)?);
                let mut o = vec![0.0f32; d];
                attend(&q, &self.keys[l], &self.values[l], pos + 1, config.heads, &mut o);
                for (xi, a) in x.iter_mut().zip(vecmat(&o, &lw.wo)?) {
                    *xi += a;
                }
            }
            if !self.mask.skip_mlp[l] {
                layer_norm_row(&x, lw.ln2_gain.data(), lw.ln2_bias.data(), LN_EPS, &mut n);
                let mut h = vecmat(&n, &lw.w1)?;
                for (hi, b) in h.iter_mut().zip(lw.b1.data()) {
                    *hi = relu(*hi + b);
                }
                let m = vecmat(&h, &lw.w2)?;
                for ((xi, mi), b) in x.iter_mut().zip(m).zip(lw.b2.data()) {
                    *xi += mi + b;
                }
            }
        }
        layer_norm_row(&x, w.final_gain.data(), w.final_bias.data(), LN_EPS, &mut n);
        self.position += 1;
        vecmat(&n, &w.unembedding)
    }

    /// Feeds `prompt`, then greedily generates `count` tokens.
    pub fn generate(&mut self, prompt: &[u32], count: usize) -> Result<Vec<u32>> {
        if prompt.is_empty() {
            return Err(Error::contract("generation needs a non-empty prompt"));
        }
        let mut logits = Vec::new();
        for &t in prompt {
            logits = self.step(t)?;
        }
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let next = argmax(&logits);
            out.push(next);
            if i + 1 < count {
                logits = self.step(next)?;
            }
        }
        Ok(out)
    }
}

fn argmax(v: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Summed next-token negative log-likelihood of one sequence and the number
/// of predicted positions.
fn sequence_nll(model: &ToyTransformer, tokens: &[u32], mask: &BlockMask) -> Result<(f64, usize)> {
    let out = model.forward(tokens, mask, false)?;
    let mut total = 0.0;
    for t in 0..tokens.len() - 1 {
        let row = out.logits.row(t);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max + row.iter().map(|&v| (f64::from(v) - max).exp()).sum::<f64>().ln();
        total += lse - f64::from(row[tokens[t + 1] as usize]);
    }
    Ok((total, tokens.len() - 1))
}

/// `exp` of the mean next-token cross-entropy over every position of every
/// sequence.
pub fn perplexity(model: &ToyTransformer, corpus: &SyntheticCorpus, mask: &BlockMask) -> Result<f64> {
    let parts: Vec<Result<(f64, usize)>> = corpus
        .sequences()
        .par_iter()
        .map(|seq| {
            if seq.len() < 2 {
                Ok((0.0, 0))
            } else {
                sequence_nll(model, seq, mask)
            }
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0;
    for part in parts {
        let (nll, n) = part?;
        total += nll;
        count += n;
    }
    if count == 0 {
        return Err(Error::contract(
            "corpus has no sequence with a next token to predict",
        ));
    }
    Ok((total / count as f64).exp())
}

/// Runs every corpus sequence through the model and stacks the snapshots of
/// all positions of all sequences into one trace.
pub fn capture_trace(
    model: &ToyTransformer,
    corpus: &SyntheticCorpus,
    mask: &BlockMask,
) -> Result<ActivationTrace> {
    if corpus.sequences().is_empty() {
        return Err(Error::contract("calibration corpus is empty"));
    }
    let traces: Vec<Result<ActivationTrace>> = corpus
        .sequences()
        .par_iter()
        .map(|seq| {
            model
                .forward(seq, mask, true)
                .map(|out| out.trace.expect("capture requested"))
        })
        .collect();
    let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;
    let d = model.config().hidden_dim;
    let snapshot_count = traces[0].snapshots().len();
    let snapshots = (0..snapshot_count)
        .map(|i| {
            let mut data = Vec::new();
            for t in &traces {
                data.extend_from_slice(t.snapshots()[i].data.data());
            }
            Ok(Snapshot {
                label: traces[0].snapshots()[i].label,
                data: Matrix::from_vec(data.len() / d, d, data)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ActivationTrace::new(snapshots, traces[0].source(), traces[0].seed())
}
