//! Training in 64-bit floats with a hand-written backward pass.
//!
//! Parameters are held as one flat `Vec<f64>` per tensor in layout order, so
//! gradients, finite-difference probes and SGD updates all index the same way.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

use super::corpus::SyntheticCorpus;
use super::forward::{check_tokens, LN_EPS};
use super::weights::Weights;
use super::{ToyModelConfig, ToyTransformer};

const TOK: usize = 0;
const POS: usize = 1;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WO: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const W1: usize = 8;
const B1: usize = 9;
const W2: usize = 10;
const B2: usize = 11;
const PER_LAYER: usize = 12;

fn layer_base(l: usize) -> usize {
    2 + PER_LAYER * l
}

/// `a (n×k) · b (k×m)`
fn mm(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let a_ip = a[i * k + p];
            for (o, &b_pj) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += a_ip * b_pj;
            }
        }
    }
    out
}

/// `out (k×m) += aᵀ · b` for `a (n×k)`, `b (n×m)`.
fn mm_tn_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let b_row = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let a_ip = a[i * k + p];
            for (o, &b_ij) in out[p * m..(p + 1) * m].iter_mut().zip(b_row) {
                *o += a_ip * b_ij;
            }
        }
    }
}

/// `a (n×m) · bᵀ` for `b (k×m)`.
fn mm_nt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let a_row = &a[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] = a_row.iter().zip(&b[p * m..(p + 1) * m]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn ln_forward(x: &[f64], rows: usize, d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, NormCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + f64::from(LN_EPS)).sqrt();
        rstd[r] = s;
        for c in 0..d {
            let h = (row[c] - mean) * s;
            xhat[r * d + c] = h;
            y[r * d + c] = h * gain[c] + bias[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn ln_backward(
    dy: &[f64],
    cache: &NormCache,
    d: usize,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let rows = cache.rstd.len();
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        for c in 0..d {
            dgain[c] += g[c] * xh[c];
            dbias[c] += g[c];
            dxhat[c] = g[c] * gain[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[r * d + c] = cache.rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

struct LayerCache {
    ln1: NormCache,
    n1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads × T × T`, row `t` holding the weights over positions `0..=t`.
    probs: Vec<f64>,
    o: Vec<f64>,
    ln2: NormCache,
    n2: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
}

struct SequenceCache {
    layers: Vec<LayerCache>,
    lnf: NormCache,
    nf: Vec<f64>,
    /// Softmax of the logits, `T × vocab`.
    probs: Vec<f64>,
}

/// Model parameters in 64-bit floats, one flat vector per tensor in layout
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    config: ToyModelConfig,
    tensors: Vec<Vec<f64>>,
}

impl ParameterSet {
    pub fn from_model(model: &ToyTransformer) -> Self {
        let tensors = model
            .weights()
            .tensors()
            .into_iter()
            .map(|(_, t)| t.data().iter().map(|&v| f64::from(v)).collect())
            .collect();
        Self {
            config: *model.config(),
            tensors,
        }
    }

    /// Rounds back to 32-bit weights.
    pub fn to_model(&self) -> Result<ToyTransformer> {
        let shapes: Vec<(usize, usize)> = super::weights::layout(&self.config)
            .iter()
            .map(|s| (s.rows, s.cols))
            .collect();
        let mats = self
            .tensors
            .iter()
            .zip(shapes)
            .map(|(t, (r, c))| Matrix::from_vec(r, c, t.iter().map(|&v| v as f32).collect()))
            .collect::<Result<Vec<_>>>()?;
        let weights = Weights::from_tensors(&self.config, mats)?;
        ToyTransformer::from_weights(self.config, weights)
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    /// Mean next-token cross-entropy over all predicted positions.
    pub fn loss(&self, sequences: &[&[u32]]) -> Result<f64> {
        let count = self.check(sequences)?;
        let total: f64 = sequences
            .iter()
            .map(|s| self.forward_sequence(s).0)
            .sum();
        Ok(total / count as f64)
    }

    /// Mean loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, sequences: &[&[u32]]) -> Result<(f64, Vec<Vec<f64>>)> {
        let count = self.check(sequences)?;
        let scale = 1.0 / count as f64;
        let parts: Vec<(f64, Vec<Vec<f64>>)> = sequences
            .par_iter()
            .map(|s| {
                let (loss, cache) = self.forward_sequence(s);
                (loss, self.backward_sequence(s, &cache, scale))
            })
            .collect();
        let mut grads: Vec<Vec<f64>> = self.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut total = 0.0;
        for (loss, g) in parts {
            total += loss;
            for (acc, part) in grads.iter_mut().zip(&g) {
                add_into(acc, part);
            }
        }
        Ok((total * scale, grads))
    }

    fn check(&self, sequences: &[&[u32]]) -> Result<usize> {
        let mut count = 0;
        for s in sequences {
            check_tokens(&self.config, s)?;
            count += s.len() - 1;
        }
        if count == 0 {
            return Err(Error::contract("no next-token targets in the batch"));
        }
        Ok(count)
    }

    fn forward_sequence(&self, tokens: &[u32]) -> (f64, SequenceCache) {
        let cfg = &self.config;
        let (t_len, d, f, v) = (tokens.len(), cfg.hidden_dim, cfg.ffn_dim, cfg.vocab);
        let (heads, dk) = (cfg.heads, cfg.head_dim());
        let p = &self.tensors;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut x = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            for c in 0..d {
                x[t * d + c] = p[TOK][tok as usize * d + c] + p[POS][t * d + c];
            }
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let b = layer_base(l);
            let (n1, ln1) = ln_forward(&x, t_len, d, &p[b + LN1_G], &p[b + LN1_B]);
            let q = mm(&n1, &p[b + WQ], t_len, d, d);
            let k = mm(&n1, &p[b + WK], t_len, d, d);
            let vv = mm(&n1, &p[b + WV], t_len, d, d);
            let mut probs = vec![0.0; heads * t_len * t_len];
            let mut o = vec![0.0; t_len * d];
            for h in 0..heads {
                let off = h * dk;
                for t in 0..t_len {
                    let row = &mut probs[(h * t_len + t) * t_len..][..t_len];
                    let mut max = f64::NEG_INFINITY;
                    for s in 0..=t {
                        let dot: f64 = (0..dk).map(|c| q[t * d + off + c] * k[s * d + off + c]).sum();
                        row[s] = dot * scale;
                        max = max.max(row[s]);
                    }
                    let mut total = 0.0;
                    for w in &mut row[..=t] {
                        *w = (*w - max).exp();
                        total += *w;
                    }
                    for s in 0..=t {
                        row[s] /= total;
                        for c in 0..dk {
                            o[t * d + off + c] += row[s] * vv[s * d + off + c];
                        }
                    }
                }
            }
            add_into(&mut x, &mm(&o, &p[b + WO], t_len, d, d));
            let (n2, ln2) = ln_forward(&x, t_len, d, &p[b + LN2_G], &p[b + LN2_B]);
            let mut hpre = mm(&n2, &p[b + W1], t_len, d, f);
            for row in hpre.chunks_exact_mut(f) {
                add_into(row, &p[b + B1]);
            }
            let hact: Vec<f64> = hpre.iter().map(|&z| z.max(0.0)).collect();
            let mut m = mm(&hact, &p[b + W2], t_len, f, d);
            for row in m.chunks_exact_mut(d) {
                add_into(row, &p[b + B2]);
            }
            add_into(&mut x, &m);
            layers.push(LayerCache {
                ln1,
                n1,
                q,
                k,
                v: vv,
                probs,
                o,
                ln2,
                n2,
                hpre,
                hact,
            });
        }
        let fb = layer_base(cfg.layers);
        let (nf, lnf) = ln_forward(&x, t_len, d, &p[fb], &p[fb + 1]);
        let mut probs = mm(&nf, &p[fb + 2], t_len, d, v);
        let mut loss = 0.0;
        for (t, row) in probs.chunks_exact_mut(v).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for z in row.iter_mut() {
                *z = (*z - max).exp();
                total += *z;
            }
            for z in row.iter_mut() {
                *z /= total;
            }
            if t + 1 < t_len {
                loss -= row[tokens[t + 1] as usize].ln();
            }
        }
        (
            loss,
            SequenceCache {
                layers,
                lnf,
                nf,
                probs,
            },
        )
    }

    fn backward_sequence(&self, tokens: &[u32], cache: &SequenceCache, scale: f64) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        let (t_len, d, f, v) = (tokens.len(), cfg.hidden_dim, cfg.ffn_dim, cfg.vocab);
        let (heads, dk) = (cfg.heads, cfg.head_dim());
        let p = &self.tensors;
        let att_scale = 1.0 / (dk as f64).sqrt();
        let mut g: Vec<Vec<f64>> = p.iter().map(|t| vec![0.0; t.len()]).collect();

        let mut dlogits = cache.probs.clone();
        for t in 0..t_len {
            let row = &mut dlogits[t * v..(t + 1) * v];
            if t + 1 < t_len {
                row[tokens[t + 1] as usize] -= 1.0;
                row.iter_mut().for_each(|z| *z *= scale);
            } else {
                row.iter_mut().for_each(|z| *z = 0.0);
            }
        }
        let fb = layer_base(cfg.layers);
        mm_tn_acc(&cache.nf, &dlogits, t_len, d, v, &mut g[fb + 2]);
        let dnf = mm_nt(&dlogits, &p[fb + 2], t_len, v, d);
        let (gf, rest) = g[fb..].split_at_mut(1);
        let mut dx = ln_backward(&dnf, &cache.lnf, d, &p[fb], &mut gf[0], &mut rest[0]);

        for l in (0..cfg.layers).rev() {
            let b = layer_base(l);
            let c = &cache.layers[l];
            // MLP block: x += relu(n2·W1 + b1)·W2 + b2
            for row in dx.chunks_exact(d) {
                add_into(&mut g[b + B2], row);
            }
            mm_tn_acc(&c.hact, &dx, t_len, f, d, &mut g[b + W2]);
            let mut dh = mm_nt(&dx, &p[b + W2], t_len, d, f);
            for (z, &pre) in dh.iter_mut().zip(&c.hpre) {
                if pre <= 0.0 {
                    *z = 0.0;
                }
            }
            for row in dh.chunks_exact(f) {
                add_into(&mut g[b + B1], row);
            }
            mm_tn_acc(&c.n2, &dh, t_len, d, f, &mut g[b + W1]);
            let dn2 = mm_nt(&dh, &p[b + W1], t_len, f, d);
            let (g2, rest) = g[b + LN2_G..].split_at_mut(1);
            add_into(&mut dx, &ln_backward(&dn2, &c.ln2, d, &p[b + LN2_G], &mut g2[0], &mut rest[0]));

            // Attention block: x += attn(n1)·Wo
            mm_tn_acc(&c.o, &dx, t_len, d, d, &mut g[b + WO]);
            let d_o = mm_nt(&dx, &p[b + WO], t_len, d, d);
            let mut dq = vec![0.0; t_len * d];
            let mut dk_ = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            let mut dp = vec![0.0; t_len];
            for h in 0..heads {
                let off = h * dk;
                for t in 0..t_len {
                    let probs = &c.probs[(h * t_len + t) * t_len..][..t_len];
                    let mut dot_sum = 0.0;
                    for s in 0..=t {
                        let mut acc = 0.0;
                        for cc in 0..dk {
                            acc += d_o[t * d + off + cc] * c.v[s * d + off + cc];
                            dv[s * d + off + cc] += probs[s] * d_o[t * d + off + cc];
                        }
                        dp[s] = acc;
                        dot_sum += probs[s] * acc;
                    }
                    for s in 0..=t {
                        let ds = probs[s] * (dp[s] - dot_sum) * att_scale;
                        for cc in 0..dk {
                            dq[t * d + off + cc] += ds * c.k[s * d + off + cc];
                            dk_[s * d + off + cc] += ds * c.q[t * d + off + cc];
                        }
                    }
                }
            }
            mm_tn_acc(&c.n1, &dq, t_len, d, d, &mut g[b + WQ]);
            mm_tn_acc(&c.n1, &dk_, t_len, d, d, &mut g[b + WK]);
            mm_tn_acc(&c.n1, &dv, t_len, d, d, &mut g[b + WV]);
            let mut dn1 = mm_nt(&dq, &p[b + WQ], t_len, d, d);
            add_into(&mut dn1, &mm_nt(&dk_, &p[b + WK], t_len, d, d));
            add_into(&mut dn1, &mm_nt(&dv, &p[b + WV], t_len, d, d));
            let (g1, rest) = g[b + LN1_G..].split_at_mut(1);
            add_into(&mut dx, &ln_backward(&dn1, &c.ln1, d, &p[b + LN1_G], &mut g1[0], &mut rest[0]));
        }

        for (t, &tok) in tokens.iter().enumerate() {
            let row = &dx[t * d..(t + 1) * d];
            add_into(&mut g[TOK][tok as usize * d..(tok as usize + 1) * d], row);
            add_into(&mut g[POS][t * d..(t + 1) * d], row);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Sequences per step; at or above the corpus size every step is full-batch.
    pub batch_size: usize,
    /// Seeds the batch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.1,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyTransformer,
    /// Batch loss before each step's update.
    pub losses: Vec<f64>,
}

/// Plain stochastic gradient descent on next-token cross-entropy. Batches are
/// drawn without replacement from a seeded shuffle of the corpus, reshuffled
/// each epoch.
pub fn train_briefly(
    model: &ToyTransformer,
    corpus: &SyntheticCorpus,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if config.steps == 0 {
        return Err(Error::contract("training needs at least one step"));
    }
    if config.batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    if !config.lr.is_finite() || config.lr < 0.0 {
        return Err(Error::contract(format!("learning rate {} is invalid", config.lr)));
    }
    let n = corpus.sequences().len();
    if n == 0 {
        return Err(Error::contract("training corpus is empty"));
    }
    let mut params = ParameterSet::from_model(model);
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let batch = config.batch_size.min(n);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == n {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            picked.push(corpus.sequences()[order[cursor]].as_slice());
            cursor += 1;
        }
        let (loss, grads) = params.loss_and_gradient(&picked)?;
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Training { step, loss });
        }
        losses.push(loss);
        for (w, g) in params.tensors.iter_mut().zip(&grads) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= config.lr * gi;
            }
        }
    }
    let model = params.to_model().map_err(|_| Error::Training {
        step: config.steps,
        loss: f64::NAN,
    })?;
    Ok(TrainOutcome { model, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockMask, CorpusGenerator};

    fn tiny() -> ToyTransformer {
        ToyTransformer::init(ToyModelConfig {
            layers: 2,
            hidden_dim: 8,
            heads: 2,
            ffn_dim: 16,
            vocab: 13,
            max_seq: 12,
            seed: 42,
        })
        .unwrap()
    }

    #[test]
    fn f64_loss_matches_f32_forward() {
        let m = tiny();
        let toks: Vec<u32> = vec![3, 1, 4, 1, 5, 9, 2, 6, 5, 3];
        let params = ParameterSet::from_model(&m);
        let loss = params.loss(&[&toks]).unwrap();
        let corpus = SyntheticCorpus::from_sequences(13, vec![toks.clone()]).unwrap();
        let ppl = crate::model::perplexity(&m, &corpus, &BlockMask::none(2)).unwrap();
        assert!((loss.exp() - ppl).abs() / ppl < 1e-5, "{} vs {ppl}", loss.exp());
    }

    #[test]
    fn round_trip_through_f64_is_exact() {
        let m = tiny();
        assert_eq!(ParameterSet::from_model(&m).to_model().unwrap(), m);
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let m = tiny();
        let corpus = SyntheticCorpus::generate(
            CorpusGenerator::Repetition {
                period: 3,
                noise: 0.0,
                seed: 1,
            },
            13,
            4,
            12,
        )
        .unwrap();
        let cfg = TrainConfig {
            steps: 3,
            lr: 0.0,
            batch_size: 2,
            seed: 0,
        };
        let out = train_briefly(&m, &corpus, &cfg).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.losses.len(), 3);
    }

    #[test]
    fn divergence_names_the_step() {
        let m = tiny();
        let corpus = SyntheticCorpus::generate(CorpusGenerator::Markov { order: 0, seed: 1 }, 13, 4, 12)
            .unwrap();
        let cfg = TrainConfig {
            steps: 50,
            lr: 1e300,
            batch_size: 4,
            seed: 0,
        };
        match train_briefly(&m, &corpus, &cfg) {
            Err(Error::Training { step, .. }) => assert!(step >= 1),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_zero_steps() {
        let corpus = SyntheticCorpus::from_sequences(13, vec![vec![1, 2]]).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_briefly(&tiny(), &corpus, &cfg), Err(Error::Contract(_))));
    }
}
