use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::forward::Decoder;
use super::{BlockMask, ToyTransformer};

/// Wall-clock statistics of one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub skipped_blocks: usize,
    pub mean_ms: f64,
    /// Sample standard deviation; 0 for a single repeat.
    pub std_ms: f64,
    pub samples_ms: Vec<f64>,
}

/// Times greedy generation with a key/value cache: a `seq_len`-token prompt
/// followed by `gen_len` generated tokens, `repeats` times per mask after one
/// untimed warm-up run. Runs are strictly sequential.
pub fn bench_inference(
    model: &ToyTransformer,
    masks: &[BlockMask],
    seq_len: usize,
    gen_len: usize,
    repeats: usize,
    prompt_seed: u64,
) -> Result<Vec<TimingRow>> {
    let config = model.config();
    if repeats == 0 {
        return Err(Error::contract("repeats must be at least 1"));
    }
    if seq_len == 0 {
        return Err(Error::contract("seq_len must be at least 1"));
    }
    if seq_len + gen_len > config.max_seq + 1 {
        return Err(Error::contract(format!(
            "prompt {seq_len} + generated {gen_len} tokens exceed max_seq {}",
            config.max_seq
        )));
    }
    let mut rng = Rng::new(prompt_seed);
    let prompt: Vec<u32> = (0..seq_len)
        .map(|_| rng.below(config.vocab as u64) as u32)
        .collect();
    let run = |mask: &BlockMask| -> Result<f64> {
        let start = Instant::now();
        let mut decoder = Decoder::new(model, mask)?;
        let out = decoder.generate(&prompt, gen_len)?;
        std::hint::black_box(out);
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    masks
        .iter()
        .map(|mask| {
            run(mask)?;
            let samples = (0..repeats).map(|_| run(mask)).collect::<Result<Vec<_>>>()?;
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let std = if samples.len() > 1 {
                (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(TimingRow {
                skipped_blocks: mask.skipped_count(),
                mean_ms: mean,
                std_ms: std,
                samples_ms: samples,
            })
        })
        .collect()
}
